//! Energy terms over the scene and body state, their weighted combination and analytic
//! gradients.
//!
//! Every public `loss_*` function returns the raw (unweighted) term. [`evaluate`] combines the
//! terms an [`Objective`] selects and can also return the gradient with respect to every
//! optimizable parameter.

mod gradient;
mod state;
mod terms;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gradient::{BoxGradient, Linearization, SceneGradient};
pub use state::{HumanState, Keypoint, SceneFields, SceneObject, SceneState, BODY_FIELD_PADDING};
pub use terms::{
    collision_cells, geman_mcclure, loss_body_ground, loss_body_penetration, loss_body_total,
    loss_contact, loss_keypoint_reprojection, loss_obj_ground, loss_scene_collision,
    loss_scene_reprojection, smooth_l1,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// λ1, detection reprojection of the boxes.
    pub lambda_reprojection: f64,
    /// λ2, object-object collision.
    pub lambda_collision: f64,
    /// λ3, boxes resting on the floor.
    pub lambda_object_ground: f64,
    /// λ4, body resting on the floor.
    pub lambda_body_ground: f64,
    /// λ5, body contact vertices near the scene.
    pub lambda_contact: f64,
    /// λ6, body-scene interpenetration.
    pub lambda_body_penetration: f64,
    pub w_keypoint: f64,
    pub w_pose_prior: f64,
    pub w_bend: f64,
    pub w_selfpen: f64,
    /// Pixels.
    pub sigma_keypoint: f64,
    /// Meters.
    pub sigma_contact: f64,
    /// Pixels.
    pub smooth_l1_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_reprojection: 1.0,
            lambda_collision: 0.1,
            lambda_object_ground: 10.0,
            lambda_body_ground: 20.0,
            lambda_contact: 1e3,
            lambda_body_penetration: 1e2,
            w_keypoint: 1.0,
            w_pose_prior: 1.0,
            w_bend: 1.0,
            w_selfpen: 1e2,
            sigma_keypoint: 100.0,
            sigma_contact: 0.05,
            smooth_l1_beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda_reprojection", self.lambda_reprojection),
            ("lambda_collision", self.lambda_collision),
            ("lambda_object_ground", self.lambda_object_ground),
            ("lambda_body_ground", self.lambda_body_ground),
            ("lambda_contact", self.lambda_contact),
            ("lambda_body_penetration", self.lambda_body_penetration),
            ("w_keypoint", self.w_keypoint),
            ("w_pose_prior", self.w_pose_prior),
            ("w_bend", self.w_bend),
            ("w_selfpen", self.w_selfpen),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("weight {name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("sigma_keypoint", self.sigma_keypoint),
            ("sigma_contact", self.sigma_contact),
            ("smooth_l1_beta", self.smooth_l1_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One energy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    Keypoint,
    PosePrior,
    Bending,
    SelfPenetration,
    SceneReprojection,
    SceneCollision,
    ObjectGround,
    BodyGround,
    Contact,
    BodyPenetration,
}

impl Term {
    pub const ALL: [Term; 10] = [
        Term::Keypoint,
        Term::PosePrior,
        Term::Bending,
        Term::SelfPenetration,
        Term::SceneReprojection,
        Term::SceneCollision,
        Term::ObjectGround,
        Term::BodyGround,
        Term::Contact,
        Term::BodyPenetration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Keypoint => "keypoint",
            Term::PosePrior => "pose-prior",
            Term::Bending => "bending",
            Term::SelfPenetration => "self-penetration",
            Term::SceneReprojection => "scene-reprojection",
            Term::SceneCollision => "scene-collision",
            Term::ObjectGround => "object-ground",
            Term::BodyGround => "body-ground",
            Term::Contact => "contact",
            Term::BodyPenetration => "body-penetration",
        }
    }

    /// Reads the body parameters.
    pub fn uses_body(self) -> bool {
        !matches!(self, Term::SceneReprojection | Term::SceneCollision | Term::ObjectGround)
    }

    /// Reads the camera pose.
    pub fn uses_camera(self) -> bool {
        matches!(self, Term::Keypoint | Term::SceneReprojection)
    }

    /// Reads the object boxes.
    pub fn uses_objects(self) -> bool {
        matches!(
            self,
            Term::SceneReprojection | Term::SceneCollision | Term::ObjectGround | Term::Contact | Term::BodyPenetration
        )
    }

    /// Reads the room layout.
    pub fn uses_layout(self) -> bool {
        matches!(self, Term::ObjectGround | Term::BodyGround)
    }

    /// Depends on a frozen signed distance field.
    pub fn uses_field(self) -> bool {
        matches!(self, Term::SceneCollision | Term::BodyPenetration)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown loss term `{s}`")))
    }
}

/// Which combination of terms is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Keypoint reprojection alone.
    Keypoints,
    /// Keypoint reprojection plus the within-body priors.
    Body,
    /// Box reprojection plus object collision.
    Scene,
    /// Every term.
    Total,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    /// Terms whose weight is forced to zero (they are still evaluated and reported).
    pub disabled: Vec<Term>,
}

impl Objective {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            disabled: Vec::new(),
        }
    }

    pub fn with_disabled(mut self, disabled: &[Term]) -> Self {
        self.disabled.extend_from_slice(disabled);
        self
    }

    pub fn terms(&self) -> &'static [Term] {
        match self.kind {
            ObjectiveKind::Keypoints => &[Term::Keypoint],
            ObjectiveKind::Body => &[Term::Keypoint, Term::PosePrior, Term::Bending, Term::SelfPenetration],
            ObjectiveKind::Scene => &[Term::SceneReprojection, Term::SceneCollision],
            ObjectiveKind::Total => &Term::ALL,
        }
    }

    /// Multiplier of `term` in the objective.
    pub fn factor(&self, term: Term, w: &LossWeights) -> f64 {
        if self.disabled.contains(&term) || !self.terms().contains(&term) {
            return 0.0;
        }
        match term {
            Term::Keypoint => 1.0,
            Term::PosePrior => w.w_pose_prior,
            Term::Bending => w.w_bend,
            Term::SelfPenetration => w.w_selfpen,
            Term::SceneReprojection => w.lambda_reprojection,
            Term::SceneCollision => w.lambda_collision,
            Term::ObjectGround => w.lambda_object_ground,
            Term::BodyGround => w.lambda_body_ground,
            Term::Contact => w.lambda_contact,
            Term::BodyPenetration => w.lambda_body_penetration,
        }
    }
}

/// Raw term values and their weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: BTreeMap<Term, f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, term: Term) -> f64 {
        self.terms.get(&term).copied().unwrap_or(0.0)
    }

    /// Recombine the raw values with the objective's factors.
    pub fn recombine(&self, objective: &Objective, w: &LossWeights) -> f64 {
        Term::ALL
            .iter()
            .filter_map(|t| self.terms.get(t).map(|v| objective.factor(*t, w) * v))
            .sum()
    }
}

/// Evaluate an objective and, when `with_gradient` is set, its analytic gradient.
///
/// `linearization` fixes the discrete choices (nearest contact vertices, lowest body vertex);
/// when absent they are taken at the current state.
pub fn evaluate(
    state: &SceneState,
    w: &LossWeights,
    objective: &Objective,
    linearization: Option<&Linearization>,
    with_gradient: bool,
) -> Result<(LossBreakdown, Option<SceneGradient>)> {
    terms::evaluate(state, w, objective, linearization, with_gradient)
}

/// Every term with the default λ-weighted combination.
pub fn loss_total(state: &SceneState, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(evaluate(state, w, &Objective::new(ObjectiveKind::Total), None, false)?.0)
}

#[cfg(test)]
mod tests;
