use crate::body::{BodyGradient, PosedBody};
use crate::geometry::Vec3;

use super::state::SceneState;
use super::terms::{box_point, collision_cells};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxGradient {
    pub centroid: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl BoxGradient {
    pub fn zeros() -> Self {
        Self::default()
    }

    fn add_scaled(&mut self, o: &BoxGradient, s: f64) {
        self.centroid += o.centroid * s;
        self.size += o.size * s;
        self.yaw += o.yaw * s;
    }
}

/// Gradient with respect to every optimizable quantity of a [`SceneState`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradient {
    /// `[pitch, roll]`
    pub camera: [f64; 2],
    pub objects: Vec<BoxGradient>,
    pub layout: BoxGradient,
    pub body: Option<BodyGradient>,
}

impl SceneGradient {
    pub fn zeros(state: &SceneState) -> Self {
        Self {
            camera: [0.0; 2],
            objects: vec![BoxGradient::zeros(); state.objects.len()],
            layout: BoxGradient::zeros(),
            body: state
                .human
                .as_ref()
                .map(|h| BodyGradient::zeros(h.template.joint_count())),
        }
    }

    pub fn add_scaled(&mut self, o: &SceneGradient, s: f64) {
        self.camera[0] += o.camera[0] * s;
        self.camera[1] += o.camera[1] * s;
        for (a, b) in self.objects.iter_mut().zip(&o.objects) {
            a.add_scaled(b, s);
        }
        self.layout.add_scaled(&o.layout, s);
        if let (Some(a), Some(b)) = (self.body.as_mut(), o.body.as_ref()) {
            a.add_scaled(b, s);
        }
    }
}

/// Discrete choices frozen for the duration of one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// Per contact vertex: `(object, vertex)` of the nearest scene vertex.
    pub contact: Vec<(usize, usize)>,
    /// Index of the lowest posed body vertex.
    pub lowest_vertex: Option<usize>,
    /// Per object, collision cells left out of the sum (empty: none).
    pub excluded_cells: Vec<Vec<bool>>,
    /// Body vertices left out of the penetration sum (empty: none).
    pub excluded_vertices: Vec<bool>,
}

impl Linearization {
    pub fn at(state: &SceneState) -> Self {
        let posed = state.human.as_ref().map(|h| h.template.pose(&h.params));
        Self::with_posed(state, posed.as_ref())
    }

    pub(crate) fn with_posed(state: &SceneState, posed: Option<&PosedBody>) -> Self {
        let (Some(h), Some(posed)) = (state.human.as_ref(), posed) else {
            return Self::empty();
        };
        let placed: Vec<Vec<Vec3>> = state
            .objects
            .iter()
            .map(|o| o.placed_mesh().vertices().to_vec())
            .collect();
        let contact = h
            .template
            .contact_vertices()
            .iter()
            .map(|&c| nearest_scene_vertex(&posed.vertices[c], &placed))
            .collect();
        Self {
            contact,
            lowest_vertex: lowest_vertex(&posed.vertices),
            ..Self::empty()
        }
    }

    pub(crate) fn empty() -> Self {
        Self {
            contact: Vec::new(),
            lowest_vertex: None,
            excluded_cells: Vec::new(),
            excluded_vertices: Vec::new(),
        }
    }

    /// Leave out every field query point of `state` that lies within `cells` cells of a sign
    /// change of its field, where the sampled field is least smooth.
    pub fn exclude_near_sign_changes(&mut self, state: &SceneState, cells: usize) {
        let lattice = collision_cells(state.fields.resolution);
        self.excluded_cells = state
            .objects
            .iter()
            .zip(&state.fields.per_object)
            .map(|(o, grid)| {
                lattice
                    .iter()
                    .map(|u| grid.near_sign_change(&box_point(&o.bbox, u), cells))
                    .collect()
            })
            .collect();
        self.excluded_vertices = match (state.body_mesh(), state.fields.body_union.as_ref()) {
            (Some(m), Some(grid)) => m.vertices().iter().map(|v| grid.near_sign_change(v, cells)).collect(),
            _ => Vec::new(),
        };
    }

    /// Number of excluded query points.
    pub fn excluded_count(&self) -> usize {
        self.excluded_cells.iter().flatten().filter(|e| **e).count()
            + self.excluded_vertices.iter().filter(|e| **e).count()
    }
}

/// Brute-force nearest vertex over every object; ties go to the lowest `(object, vertex)`.
pub(crate) fn nearest_scene_vertex(p: &Vec3, placed: &[Vec<Vec3>]) -> (usize, usize) {
    let mut best = (f64::INFINITY, (0, 0));
    for (o, verts) in placed.iter().enumerate() {
        for (v, q) in verts.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.0 {
                best = (d2, (o, v));
            }
        }
    }
    best.1
}

pub(crate) fn lowest_vertex(vertices: &[Vec3]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, v) in vertices.iter().enumerate() {
        if best.map_or(true, |(y, _)| v.y < y) {
            best = Some((v.y, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Adjoints collected while evaluating terms; body adjoints are pulled back through posing once.
pub(crate) struct Accumulator {
    pub scene: SceneGradient,
    pub d_vertices: Vec<Vec3>,
    pub d_joints: Vec<Vec3>,
}

impl Accumulator {
    pub fn new(state: &SceneState) -> Self {
        let (nv, nj) = state
            .human
            .as_ref()
            .map(|h| (h.template.mesh().vertices().len(), h.template.joint_count()))
            .unwrap_or((0, 0));
        Self {
            scene: SceneGradient::zeros(state),
            d_vertices: vec![Vec3::zeros(); nv],
            d_joints: vec![Vec3::zeros(); nj],
        }
    }

    pub fn body(&mut self) -> &mut BodyGradient {
        self.scene.body.as_mut().expect("body gradient requires a human")
    }

    pub fn finish(mut self, state: &SceneState, posed: Option<&PosedBody>) -> SceneGradient {
        if let (Some(h), Some(posed)) = (state.human.as_ref(), posed) {
            let pulled = h
                .template
                .pose_vjp(&h.params, posed, &self.d_vertices, &self.d_joints);
            self.body().add_scaled(&pulled, 1.0);
        }
        self.scene
    }
}
