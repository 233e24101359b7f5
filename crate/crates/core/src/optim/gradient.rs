use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{evaluate, Linearization, LossBreakdown, LossWeights, Objective, SceneState, Term};

use super::params::{FreezeMask, ParamKind, ParamLayout, ParamVector};

/// Finite-difference step for a parameter at value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Central,
    Forward,
}

/// Central-difference gradient with the default step rule; frozen entries are exactly zero.
///
/// Probes run in parallel and are gathered in index order, so the result does not depend on
/// the thread count.
pub fn fd_gradient<F>(f: F, x: &[f64], frozen: &[bool], name: impl Fn(usize) -> String + Sync) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    fd_gradient_with(f, x, frozen, name, FdScheme::Central, fd_step)
}

/// Gradient by finite differences with an explicit scheme and step rule.
///
/// `f(i, x)` evaluates the loss at `x` when probing coordinate `i`, letting callers skip terms
/// that do not depend on it. The forward scheme also evaluates `f(i, x)` at the base point.
pub fn fd_gradient_with<F>(
    f: F,
    x: &[f64],
    frozen: &[bool],
    name: impl Fn(usize) -> String + Sync,
    scheme: FdScheme,
    step: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    if frozen.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: frozen.len(),
            right: x.len(),
        });
    }
    let probe = |i: usize, v: f64| -> Result<f64> {
        let mut p = x.to_vec();
        p[i] = v;
        match f(i, &p) {
            Ok(l) if l.is_finite() => Ok(l),
            Ok(_) | Err(Error::NonFiniteLoss { .. }) => Err(Error::NonFiniteLoss { param: name(i), value: v }),
            Err(e) => Err(e),
        }
    };
    let parts: Vec<Result<f64>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            if frozen[i] {
                return Ok(0.0);
            }
            let h = step(x[i]);
            match scheme {
                FdScheme::Central => Ok((probe(i, x[i] + h)? - probe(i, x[i] - h)?) / (2.0 * h)),
                FdScheme::Forward => Ok((probe(i, x[i] + h)? - probe(i, x[i])?) / h),
            }
        })
        .collect();
    parts.into_iter().collect()
}

/// How gradients of scene objectives are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientEngine {
    /// Central finite differences, one probe pair per free scalar.
    #[default]
    FiniteDifference,
    /// Reverse-mode derivatives of every term.
    Analytic,
}

impl FromStr for GradientEngine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-difference" | "fd" => Ok(Self::FiniteDifference),
            "analytic" => Ok(Self::Analytic),
            _ => Err(Error::InvalidInput(format!("unknown gradient engine `{s}`"))),
        }
    }
}

fn depends(term: Term, kind: ParamKind) -> bool {
    if kind.is_camera() {
        term.uses_camera()
    } else if kind.is_object() {
        term.uses_objects()
    } else if kind.is_layout() {
        term.uses_layout()
    } else {
        term.uses_body()
    }
}

/// An objective over the flat parameters of one scene, with fields and discrete choices frozen.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub base: &'a SceneState,
    pub weights: LossWeights,
    pub objective: Objective,
    pub linearization: Linearization,
    pub layout: Arc<ParamLayout>,
}

impl<'a> Problem<'a> {
    /// Freeze the linearization at `base`.
    pub fn new(base: &'a SceneState, weights: LossWeights, objective: Objective) -> Self {
        Self {
            linearization: Linearization::at(base),
            layout: Arc::new(ParamLayout::for_state(base)),
            base,
            weights,
            objective,
        }
    }

    pub fn pack(&self) -> ParamVector {
        ParamVector::pack(self.base)
    }

    fn state_at(&self, x: &[f64]) -> Result<SceneState> {
        ParamVector {
            values: x.to_vec(),
            layout: self.layout.clone(),
        }
        .unpack(self.base)
    }

    pub fn breakdown(&self, x: &[f64]) -> Result<LossBreakdown> {
        let s = self.state_at(x)?;
        Ok(evaluate(&s, &self.weights, &self.objective, Some(&self.linearization), false)?.0)
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.breakdown(x)?.total)
    }

    /// Objective restricted to the terms that read parameters of `kind`.
    fn restricted(&self, kind: ParamKind) -> Objective {
        let off: Vec<Term> = Term::ALL.into_iter().filter(|t| !depends(*t, kind)).collect();
        self.objective.clone().with_disabled(&off)
    }

    /// Central differences with the default step rule.
    pub fn fd_gradient(&self, x: &[f64], mask: &FreezeMask) -> Result<Vec<f64>> {
        self.fd_gradient_with(x, mask, FdScheme::Central, fd_step)
    }

    pub fn fd_gradient_with(
        &self,
        x: &[f64],
        mask: &FreezeMask,
        scheme: FdScheme,
        step: impl Fn(f64) -> f64 + Sync,
    ) -> Result<Vec<f64>> {
        let restricted: Vec<Objective> = self.layout.slots().iter().map(|s| self.restricted(s.kind)).collect();
        let layout = &self.layout;
        let slot_index = |i: usize| layout.slots().partition_point(|s| s.start + s.len <= i);
        fd_gradient_with(
            |i, p| {
                let s = self.state_at(p)?;
                let obj = &restricted[slot_index(i)];
                Ok(evaluate(&s, &self.weights, obj, Some(&self.linearization), false)?.0.total)
            },
            x,
            &mask.scalars(),
            |i| layout.scalar_name(i),
            scheme,
            step,
        )
    }

    /// Value and analytic gradient; frozen entries are exactly zero.
    pub fn analytic(&self, x: &[f64], mask: &FreezeMask) -> Result<(LossBreakdown, Vec<f64>)> {
        let s = self.state_at(x)?;
        let (b, g) = evaluate(&s, &self.weights, &self.objective, Some(&self.linearization), true)?;
        let mut flat = ParamVector::flatten_gradient(&self.layout, &g.expect("gradient requested"));
        for (v, f) in flat.iter_mut().zip(mask.scalars()) {
            if f {
                *v = 0.0;
            }
        }
        Ok((b, flat))
    }

    pub fn gradient(&self, x: &[f64], mask: &FreezeMask, engine: GradientEngine) -> Result<Vec<f64>> {
        match engine {
            GradientEngine::FiniteDifference => self.fd_gradient(x, mask),
            GradientEngine::Analytic => Ok(self.analytic(x, mask)?.1),
        }
    }

    pub fn value_and_gradient(&self, x: &[f64], mask: &FreezeMask, engine: GradientEngine) -> Result<(f64, Vec<f64>)> {
        match engine {
            GradientEngine::FiniteDifference => Ok((self.loss(x)?, self.fd_gradient(x, mask)?)),
            GradientEngine::Analytic => {
                let (b, g) = self.analytic(x, mask)?;
                Ok((b.total, g))
            }
        }
    }
}
