use std::sync::Arc;

use crate::body::{BodyParams, BodyTemplate};
use crate::error::{Error, Result};
use crate::geometry::{BBox3D, CameraPose, Intrinsics, Rect2D, RoomLayout, Vec2, Vec3};
use crate::mesh::{place_mesh, MeshIndex, SdfGrid, TriMesh};

/// Margin around the posed body covered by the body-penetration field, meters.
pub const BODY_FIELD_PADDING: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub label: String,
    pub bbox: BBox3D,
    /// Mesh normalized to the unit cube centered at the origin.
    pub mesh: Arc<TriMesh>,
    pub detection: Rect2D,
}

impl SceneObject {
    pub fn placed_mesh(&self) -> TriMesh {
        place_mesh(&self.mesh, &self.bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub pixel: Vec2,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct HumanState {
    pub template: Arc<BodyTemplate>,
    pub params: BodyParams,
    pub keypoints: Vec<Keypoint>,
}

/// Signed distance fields frozen between rebuilds.
#[derive(Debug, Clone, Default)]
pub struct SceneFields {
    /// Field `i` covers object `i`'s box and measures the union of every other object.
    pub per_object: Vec<Arc<SdfGrid>>,
    /// Union of all objects around the posed body.
    pub body_union: Option<Arc<SdfGrid>>,
    pub resolution: usize,
}

impl SceneFields {
    pub fn build(objects: &[SceneObject], body_vertices: Option<&[Vec3]>, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!(
                "SDF resolution must be at least 2, got {resolution}"
            )));
        }
        let indices = objects
            .iter()
            .map(|o| MeshIndex::new(o.placed_mesh()))
            .collect::<Result<Vec<_>>>()?;
        let dims = [resolution; 3];
        let per_object = objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let others: Vec<MeshIndex> = indices
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, m)| m.clone())
                    .collect();
                let (lo, hi) = o.bbox.aabb();
                Arc::new(SdfGrid::sample_region(&others, lo, hi, dims))
            })
            .collect();
        let body_union = body_vertices.filter(|v| !v.is_empty()).map(|verts| {
            let mut lo = verts[0];
            let mut hi = verts[0];
            for v in verts {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let pad = Vec3::repeat(BODY_FIELD_PADDING);
            Arc::new(SdfGrid::sample_region(&indices, lo - pad, hi + pad, dims))
        });
        Ok(Self {
            per_object,
            body_union,
            resolution,
        })
    }
}

/// Everything the energy terms read.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub intrinsics: Intrinsics,
    pub camera: CameraPose,
    pub layout: RoomLayout,
    pub objects: Vec<SceneObject>,
    pub human: Option<HumanState>,
    pub fields: SceneFields,
}

impl SceneState {
    /// Assemble a state and build its fields.
    pub fn new(
        intrinsics: Intrinsics,
        camera: CameraPose,
        layout: RoomLayout,
        objects: Vec<SceneObject>,
        human: Option<HumanState>,
        sdf_resolution: usize,
    ) -> Result<Self> {
        if let Some(h) = &human {
            let want = h.template.keypoint_map().len();
            if h.keypoints.len() != want {
                return Err(Error::LengthMismatch {
                    left: h.keypoints.len(),
                    right: want,
                });
            }
            if h.params.pose.len() != h.template.joint_count() {
                return Err(Error::LengthMismatch {
                    left: h.params.pose.len(),
                    right: h.template.joint_count(),
                });
            }
        }
        let mut state = Self {
            intrinsics,
            camera,
            layout,
            objects,
            human,
            fields: SceneFields::default(),
        };
        state.rebuild_fields(sdf_resolution)?;
        Ok(state)
    }

    /// Rebuild every signed distance field from the current boxes and body pose.
    pub fn rebuild_fields(&mut self, resolution: usize) -> Result<()> {
        let body = self
            .human
            .as_ref()
            .map(|h| h.template.pose(&h.params).vertices);
        self.fields = SceneFields::build(&self.objects, body.as_deref(), resolution)?;
        Ok(())
    }

    pub fn floor_height(&self) -> f64 {
        self.layout.floor_height()
    }

    /// Posed body mesh, if a human is present.
    pub fn body_mesh(&self) -> Option<TriMesh> {
        self.human
            .as_ref()
            .map(|h| crate::body::body_forward(&h.template, &h.params))
    }
}
