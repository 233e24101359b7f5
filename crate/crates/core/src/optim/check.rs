//! Per-term comparison of the analytic gradient against central differences.

use serde::{Deserialize, Serialize};

use super::gradient::{FdScheme, Problem};
use super::params::FreezeMask;
use crate::error::Result;
use crate::losses::{LossWeights, Objective, ObjectiveKind, SceneState, Term};

/// Outcome of checking one term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: Term,
    pub value: f64,
    pub max_relative_error: f64,
    /// Scalar parameter with the largest error.
    pub worst_parameter: Option<String>,
    /// Field query points dropped for lying near a sign change.
    pub excluded_points: usize,
}

/// `|a − b| / max(|b|, 1e-3·‖b‖∞, 1e-8)` per entry, where `b` is the reference.
///
/// The floor keeps entries that are zero in the reference from dividing by noise.
pub fn relative_errors(engine: &[f64], reference: &[f64]) -> Vec<f64> {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    engine
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3 * scale).max(1e-8))
        .collect()
}

/// Compare the analytic gradient of every term with central differences of step `h`.
///
/// Field query points with a sign change of the sampled distance within `exclude_cells` grid
/// cells are dropped from both sides, since trilinear interpolation is not differentiable
/// across cell faces there.
pub fn gradcheck(state: &SceneState, w: &LossWeights, exclude_cells: usize, h: f64) -> Result<Vec<TermCheck>> {
    let mut out = Vec::with_capacity(Term::ALL.len());
    for term in Term::ALL {
        let off: Vec<Term> = Term::ALL.into_iter().filter(|t| *t != term).collect();
        let mut p = Problem::new(state, *w, Objective::new(ObjectiveKind::Total).with_disabled(&off));
        if term.uses_field() {
            p.linearization.exclude_near_sign_changes(state, exclude_cells);
        }
        let x = p.pack().values;
        let mask = FreezeMask::none(p.layout.clone());
        let (b, analytic) = p.analytic(&x, &mask)?;
        let fd = p.fd_gradient_with(&x, &mask, FdScheme::Central, |_| h)?;
        let errs = relative_errors(&analytic, &fd);
        let (worst, max) = errs
            .iter()
            .enumerate()
            .fold((None, 0.0f64), |(wi, m), (i, &e)| if e > m { (Some(i), e) } else { (wi, m) });
        out.push(TermCheck {
            term,
            value: b.get(term),
            max_relative_error: max,
            worst_parameter: worst.map(|i| p.layout.scalar_name(i)),
            excluded_points: p.linearization.excluded_count(),
        });
    }
    Ok(out)
}
