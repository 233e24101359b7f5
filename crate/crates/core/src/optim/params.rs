use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{BBox3D, Vec3};
use crate::losses::{BoxGradient, SceneGradient, SceneState};

/// Boxes never shrink below this edge length when unpacked, meters.
pub const MIN_BOX_SIZE: f64 = 1e-3;

/// One named group of scalars in a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    CameraPitch,
    CameraRoll,
    ObjectCentroid(usize),
    ObjectSize(usize),
    ObjectYaw(usize),
    LayoutCentroid,
    LayoutSize,
    LayoutYaw,
    BodyTranslation,
    BodyGlobalRotation,
    BodyPose(usize),
    BodyShape,
}

impl ParamKind {
    pub fn len(self) -> usize {
        match self {
            ParamKind::CameraPitch | ParamKind::CameraRoll | ParamKind::ObjectYaw(_) | ParamKind::LayoutYaw => 1,
            _ => 3,
        }
    }

    pub fn is_body(self) -> bool {
        matches!(
            self,
            ParamKind::BodyTranslation | ParamKind::BodyGlobalRotation | ParamKind::BodyPose(_) | ParamKind::BodyShape
        )
    }

    pub fn is_camera(self) -> bool {
        matches!(self, ParamKind::CameraPitch | ParamKind::CameraRoll)
    }

    pub fn is_object(self) -> bool {
        matches!(self, ParamKind::ObjectCentroid(_) | ParamKind::ObjectSize(_) | ParamKind::ObjectYaw(_))
    }

    pub fn is_layout(self) -> bool {
        matches!(self, ParamKind::LayoutCentroid | ParamKind::LayoutSize | ParamKind::LayoutYaw)
    }

    pub fn is_yaw(self) -> bool {
        matches!(self, ParamKind::ObjectYaw(_) | ParamKind::LayoutYaw)
    }

    pub fn is_size(self) -> bool {
        matches!(self, ParamKind::ObjectSize(_) | ParamKind::LayoutSize)
    }

    pub fn is_centroid(self) -> bool {
        matches!(self, ParamKind::ObjectCentroid(_) | ParamKind::LayoutCentroid)
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKind::CameraPitch => write!(f, "camera.pitch"),
            ParamKind::CameraRoll => write!(f, "camera.roll"),
            ParamKind::ObjectCentroid(i) => write!(f, "objects[{i}].centroid"),
            ParamKind::ObjectSize(i) => write!(f, "objects[{i}].size"),
            ParamKind::ObjectYaw(i) => write!(f, "objects[{i}].yaw"),
            ParamKind::LayoutCentroid => write!(f, "layout.centroid"),
            ParamKind::LayoutSize => write!(f, "layout.size"),
            ParamKind::LayoutYaw => write!(f, "layout.yaw"),
            ParamKind::BodyTranslation => write!(f, "body.translation"),
            ParamKind::BodyGlobalRotation => write!(f, "body.global_rotation"),
            ParamKind::BodyPose(j) => write!(f, "body.pose[{j}]"),
            ParamKind::BodyShape => write!(f, "body.shape_scale"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub kind: ParamKind,
    pub start: usize,
    pub len: usize,
}

/// Ordered, disjoint slices covering a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<Slot>,
    len: usize,
}

impl ParamLayout {
    /// Camera, then each object, then the layout, then the body.
    pub fn for_state(state: &SceneState) -> Self {
        let mut kinds = vec![ParamKind::CameraPitch, ParamKind::CameraRoll];
        for i in 0..state.objects.len() {
            kinds.extend([ParamKind::ObjectCentroid(i), ParamKind::ObjectSize(i), ParamKind::ObjectYaw(i)]);
        }
        kinds.extend([ParamKind::LayoutCentroid, ParamKind::LayoutSize, ParamKind::LayoutYaw]);
        if let Some(h) = &state.human {
            kinds.extend([ParamKind::BodyTranslation, ParamKind::BodyGlobalRotation]);
            kinds.extend((0..h.template.joint_count()).map(ParamKind::BodyPose));
            kinds.push(ParamKind::BodyShape);
        }
        let mut start = 0;
        let slots = kinds
            .into_iter()
            .map(|kind| {
                let s = Slot {
                    kind,
                    start,
                    len: kind.len(),
                };
                start += s.len;
                s
            })
            .collect();
        Self { slots, len: start }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Slot holding scalar `i`.
    pub fn slot_of(&self, i: usize) -> &Slot {
        let k = self.slots.partition_point(|s| s.start + s.len <= i);
        &self.slots[k]
    }

    /// Dotted name of scalar `i`, e.g. `objects[1].centroid.y`.
    pub fn scalar_name(&self, i: usize) -> String {
        let s = self.slot_of(i);
        if s.len == 1 {
            s.kind.to_string()
        } else {
            format!("{}.{}", s.kind, ["x", "y", "z"][i - s.start])
        }
    }
}

/// Flat parameter values with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<ParamLayout>,
}

fn put(values: &mut [f64], slot: &Slot, v: &[f64]) {
    values[slot.start..slot.start + slot.len].copy_from_slice(v);
}

fn vec3_at(values: &[f64], slot: &Slot) -> Vec3 {
    Vec3::from_column_slice(&values[slot.start..slot.start + 3])
}

impl ParamVector {
    pub fn pack(state: &SceneState) -> Self {
        let layout = Arc::new(ParamLayout::for_state(state));
        let mut values = vec![0.0; layout.len()];
        for slot in layout.slots() {
            let v: Vec<f64> = match slot.kind {
                ParamKind::CameraPitch => vec![state.camera.pitch],
                ParamKind::CameraRoll => vec![state.camera.roll],
                ParamKind::ObjectCentroid(i) => state.objects[i].bbox.centroid().as_slice().to_vec(),
                ParamKind::ObjectSize(i) => state.objects[i].bbox.size().as_slice().to_vec(),
                ParamKind::ObjectYaw(i) => vec![state.objects[i].bbox.yaw()],
                ParamKind::LayoutCentroid => state.layout.bbox.centroid().as_slice().to_vec(),
                ParamKind::LayoutSize => state.layout.bbox.size().as_slice().to_vec(),
                ParamKind::LayoutYaw => vec![state.layout.bbox.yaw()],
                ParamKind::BodyTranslation => human(state).params.translation.as_slice().to_vec(),
                ParamKind::BodyGlobalRotation => human(state).params.global_rotation.as_slice().to_vec(),
                ParamKind::BodyPose(j) => human(state).params.pose[j].as_slice().to_vec(),
                ParamKind::BodyShape => human(state).params.shape_scale.as_slice().to_vec(),
            };
            put(&mut values, slot, &v);
        }
        Self { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Write the values into `state`. Box sizes are clamped to [`MIN_BOX_SIZE`] and yaws wrapped;
    /// the vector itself is left untouched so repeated unpacking never drifts.
    pub fn unpack_into(&self, state: &mut SceneState) -> Result<()> {
        self.check_layout(state)?;
        let v = &self.values;
        for slot in self.layout.slots() {
            match slot.kind {
                ParamKind::CameraPitch => state.camera.pitch = v[slot.start],
                ParamKind::CameraRoll => state.camera.roll = v[slot.start],
                ParamKind::ObjectCentroid(i) => {
                    let b = &mut state.objects[i].bbox;
                    *b = BBox3D::new(vec3_at(v, slot), b.size(), b.yaw())?;
                }
                ParamKind::ObjectSize(i) => {
                    let b = &mut state.objects[i].bbox;
                    *b = BBox3D::new(b.centroid(), clamp_size(vec3_at(v, slot)), b.yaw())?;
                }
                ParamKind::ObjectYaw(i) => {
                    let b = &mut state.objects[i].bbox;
                    *b = BBox3D::new(b.centroid(), b.size(), v[slot.start])?;
                }
                ParamKind::LayoutCentroid => {
                    let b = &mut state.layout.bbox;
                    *b = BBox3D::new(vec3_at(v, slot), b.size(), b.yaw())?;
                }
                ParamKind::LayoutSize => {
                    let b = &mut state.layout.bbox;
                    *b = BBox3D::new(b.centroid(), clamp_size(vec3_at(v, slot)), b.yaw())?;
                }
                ParamKind::LayoutYaw => {
                    let b = &mut state.layout.bbox;
                    *b = BBox3D::new(b.centroid(), b.size(), v[slot.start])?;
                }
                ParamKind::BodyTranslation => human_mut(state).params.translation = vec3_at(v, slot),
                ParamKind::BodyGlobalRotation => human_mut(state).params.global_rotation = vec3_at(v, slot),
                ParamKind::BodyPose(j) => human_mut(state).params.pose[j] = vec3_at(v, slot),
                ParamKind::BodyShape => human_mut(state).params.shape_scale = vec3_at(v, slot),
            }
        }
        Ok(())
    }

    /// A copy of `base` carrying these values (fields are shared, not rebuilt).
    pub fn unpack(&self, base: &SceneState) -> Result<SceneState> {
        let mut s = base.clone();
        self.unpack_into(&mut s)?;
        Ok(s)
    }

    fn check_layout(&self, state: &SceneState) -> Result<()> {
        let want = ParamLayout::for_state(state);
        if *self.layout != want {
            return Err(Error::LengthMismatch {
                left: self.layout.len(),
                right: want.len(),
            });
        }
        Ok(())
    }

    /// Flatten an analytic gradient into this layout.
    pub fn flatten_gradient(layout: &ParamLayout, g: &SceneGradient) -> Vec<f64> {
        let mut out = vec![0.0; layout.len()];
        let box_part = |b: &BoxGradient, kind: ParamKind| -> Vec<f64> {
            match kind {
                ParamKind::ObjectCentroid(_) | ParamKind::LayoutCentroid => b.centroid.as_slice().to_vec(),
                ParamKind::ObjectSize(_) | ParamKind::LayoutSize => b.size.as_slice().to_vec(),
                _ => vec![b.yaw],
            }
        };
        for slot in layout.slots() {
            let v: Vec<f64> = match slot.kind {
                ParamKind::CameraPitch => vec![g.camera[0]],
                ParamKind::CameraRoll => vec![g.camera[1]],
                k @ (ParamKind::ObjectCentroid(i) | ParamKind::ObjectSize(i) | ParamKind::ObjectYaw(i)) => {
                    box_part(&g.objects[i], k)
                }
                k @ (ParamKind::LayoutCentroid | ParamKind::LayoutSize | ParamKind::LayoutYaw) => box_part(&g.layout, k),
                ParamKind::BodyTranslation => body_grad(g).translation.as_slice().to_vec(),
                ParamKind::BodyGlobalRotation => body_grad(g).global_rotation.as_slice().to_vec(),
                ParamKind::BodyPose(j) => body_grad(g).pose[j].as_slice().to_vec(),
                ParamKind::BodyShape => body_grad(g).shape.as_slice().to_vec(),
            };
            put(&mut out, slot, &v);
        }
        out
    }
}

fn clamp_size(s: Vec3) -> Vec3 {
    s.map(|v| if v.is_nan() { v } else { v.max(MIN_BOX_SIZE) })
}

fn human(state: &SceneState) -> &crate::losses::HumanState {
    state.human.as_ref().expect("layout has body slots only when a human is present")
}

fn human_mut(state: &mut SceneState) -> &mut crate::losses::HumanState {
    state.human.as_mut().expect("layout has body slots only when a human is present")
}

fn body_grad(g: &SceneGradient) -> &crate::body::BodyGradient {
    g.body.as_ref().expect("layout has body slots only when a human is present")
}

/// Which slots of a [`ParamLayout`] are held fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    frozen: Vec<bool>,
    layout: Arc<ParamLayout>,
}

impl FreezeMask {
    /// Nothing frozen.
    pub fn none(layout: Arc<ParamLayout>) -> Self {
        Self {
            frozen: vec![false; layout.slots().len()],
            layout,
        }
    }

    /// Everything frozen.
    pub fn all(layout: Arc<ParamLayout>) -> Self {
        Self {
            frozen: vec![true; layout.slots().len()],
            layout,
        }
    }

    /// Free exactly the slots for which `free` holds.
    pub fn only(layout: Arc<ParamLayout>, free: impl Fn(ParamKind) -> bool) -> Self {
        let frozen = layout.slots().iter().map(|s| !free(s.kind)).collect();
        Self { frozen, layout }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn is_frozen(&self, slot: usize) -> bool {
        self.frozen[slot]
    }

    pub fn set(&mut self, slot: usize, frozen: bool) {
        self.frozen[slot] = frozen;
    }

    /// Also freeze every slot for which `pred` holds.
    pub fn freeze_where(mut self, pred: impl Fn(ParamKind) -> bool) -> Self {
        for (f, s) in self.frozen.iter_mut().zip(self.layout.slots()) {
            *f |= pred(s.kind);
        }
        self
    }

    /// Per-scalar view.
    pub fn scalars(&self) -> Vec<bool> {
        let mut out = vec![false; self.layout.len()];
        for (s, &f) in self.layout.slots().iter().zip(&self.frozen) {
            out[s.start..s.start + s.len].fill(f);
        }
        out
    }

    pub fn free_count(&self) -> usize {
        self.scalars().iter().filter(|f| !**f).count()
    }
}
