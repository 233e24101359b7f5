use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations per line search.
    pub max_trials: usize,
    /// A step is skipped as converged when every gradient entry is at most this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            max_trials: 20,
            gradient_tolerance: 1e-12,
        }
    }
}

/// Curvature pairs plus the value and gradient at the current iterate.
#[derive(Debug, Clone, Default)]
pub struct LbfgsHistory {
    pub config: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    current: Option<(Vec<f64>, f64, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOutcome {
    /// Loss at the returned iterate.
    pub loss: f64,
    /// Accepted step length along the search direction (0 when converged).
    pub step: f64,
    pub evaluations: usize,
    /// Steepest descent with the base learning rate was used.
    pub fallback: bool,
    /// The gradient was already below tolerance; nothing moved.
    pub converged: bool,
}

impl LbfgsHistory {
    pub fn new(config: LbfgsConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Drop curvature pairs and the cached iterate (call when the objective changes).
    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.current = None;
    }

    /// Forget the cached value and gradient but keep curvature pairs.
    pub fn invalidate(&mut self) {
        self.current = None;
    }

    /// `−H·g` by the two-loop recursion.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let k = self.s.len();
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.y[i], &self.s[i])).collect();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = rho[i] * dot(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if dot(&s, &y) > 1e-10 {
            if self.s.len() == self.config.history {
                self.s.pop_front();
                self.y.pop_front();
            }
            self.s.push_back(s);
            self.y.push_back(y);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Minimizer of the cubic through two points with slopes, restricted to `[lo, hi]`.
fn cubic_min(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    if ![x1, f1, g1, x2, f2, g2].iter().all(|v| v.is_finite()) {
        return mid;
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let sq = d1 * d1 - g1 * g2;
    if sq < 0.0 {
        return mid;
    }
    let d2 = (x2 - x1).signum() * sq.sqrt();
    let t = x2 - (x2 - x1) * (g2 + d2 - d1) / (g2 - g1 + 2.0 * d2);
    if t.is_finite() {
        t.clamp(lo, hi)
    } else {
        mid
    }
}

struct Trial {
    t: f64,
    f: f64,
    g: Vec<f64>,
    d: f64,
}

/// Evaluate with domain failures (non-finite loss, points behind the camera) read as `+∞`.
fn eval_trial<F>(fg: &mut F, x: &[f64], dir: &[f64], t: f64, evals: &mut usize) -> Result<Trial>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    *evals += 1;
    let p: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + t * b).collect();
    match fg(&p) {
        Ok((f, g)) if f.is_finite() => {
            let d = dot(&g, dir);
            Ok(Trial { t, f, g, d })
        }
        Ok(_) => Ok(Trial {
            t,
            f: f64::INFINITY,
            g: vec![f64::NAN; x.len()],
            d: f64::NAN,
        }),
        Err(e) if e.is_optimization_failure() => Ok(Trial {
            t,
            f: f64::INFINITY,
            g: vec![f64::NAN; x.len()],
            d: f64::NAN,
        }),
        Err(e) => Err(e),
    }
}

/// Strong-Wolfe line search. Returns a point satisfying both conditions, or failing that the
/// best trial with sufficient decrease.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    fg: &mut F,
    x: &[f64],
    dir: &[f64],
    f0: f64,
    d0: f64,
    t0: f64,
    cfg: &LbfgsConfig,
    evals: &mut usize,
) -> Result<Option<Trial>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let armijo = |t: f64, f: f64| f <= f0 + cfg.c1 * t * d0;
    let mut best: Option<Trial> = None;
    let keep = |tr: &Trial, best: &mut Option<Trial>| {
        if armijo(tr.t, tr.f) && tr.f < f0 && best.as_ref().map_or(true, |b| tr.f < b.f) {
            *best = Some(Trial {
                t: tr.t,
                f: tr.f,
                g: tr.g.clone(),
                d: tr.d,
            });
        }
    };

    let mut prev = Trial {
        t: 0.0,
        f: f0,
        g: Vec::new(),
        d: d0,
    };
    let mut t = t0;
    let mut trials = 0;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        if trials >= cfg.max_trials {
            return Ok(best);
        }
        let cur = eval_trial(fg, x, dir, t, evals)?;
        trials += 1;
        keep(&cur, &mut best);
        if !armijo(cur.t, cur.f) || (trials > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if cur.d.abs() <= -cfg.c2 * d0 {
            return Ok(Some(cur));
        }
        if cur.d >= 0.0 {
            break (cur, prev);
        }
        let min_step = cur.t + 0.01 * (cur.t - prev.t);
        let max_step = cur.t * 10.0;
        t = cubic_min(prev.t, prev.f, prev.d, cur.t, cur.f, cur.d, min_step, max_step);
        prev = cur;
    };

    // zoom phase: `lo` satisfies sufficient decrease and has the lower value
    while trials < cfg.max_trials {
        let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
        let width = b - a;
        if width * dir.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-16 {
            break;
        }
        let t = cubic_min(lo.t, lo.f, lo.d, hi.t, hi.f, hi.d, a + 0.1 * width, b - 0.1 * width);
        let cur = eval_trial(fg, x, dir, t, evals)?;
        trials += 1;
        keep(&cur, &mut best);
        if !armijo(cur.t, cur.f) || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -cfg.c2 * d0 {
                return Ok(Some(cur));
            }
            if cur.d * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    Ok(best)
}

/// One L-BFGS iteration on `x` in place.
///
/// `fg` returns the loss and its gradient (frozen entries must already be zero there; they are
/// zeroed again here). The first trial step is `lr`, scaled by `min(1, 1/‖g‖₁)` on the very
/// first iteration. If no acceptable point is found along the quasi-Newton direction, the
/// history is cleared and steepest descent with step `lr` is tried with backtracking.
pub fn lbfgs_step<F>(history: &mut LbfgsHistory, x: &mut [f64], mut fg: F, frozen: &[bool], lr: f64) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if frozen.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: frozen.len(),
            right: x.len(),
        });
    }
    let mask = |mut g: Vec<f64>| {
        for (v, &f) in g.iter_mut().zip(frozen) {
            if f {
                *v = 0.0;
            }
        }
        g
    };
    let mut fg = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (f, g) = fg(p)?;
        Ok((f, mask(g)))
    };
    let mut evals = 0;
    let (f0, g0) = match history.current.take() {
        Some((cx, f, g)) if cx.as_slice() == &*x => (f, g),
        _ => {
            evals += 1;
            let (f, g) = fg(x)?;
            if !f.is_finite() {
                return Err(Error::NonFiniteLoss {
                    param: "initial iterate".into(),
                    value: f,
                });
            }
            (f, g)
        }
    };
    let gmax = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax <= history.config.gradient_tolerance {
        history.current = Some((x.to_vec(), f0, g0));
        return Ok(LbfgsOutcome {
            loss: f0,
            step: 0.0,
            evaluations: evals,
            fallback: false,
            converged: true,
        });
    }

    let first = history.is_empty();
    let mut dir = history.direction(&g0);
    for (v, &f) in dir.iter_mut().zip(frozen) {
        if f {
            *v = 0.0;
        }
    }
    let mut d0 = dot(&g0, &dir);
    if !(d0 < 0.0) {
        history.reset();
        dir = g0.iter().map(|v| -v).collect();
        d0 = dot(&g0, &dir);
    }
    debug_assert!(d0 < 0.0, "search direction must descend");
    let t0 = if first {
        lr * (1.0 / g0.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
    } else {
        lr
    };

    let cfg = history.config;
    let found = strong_wolfe(&mut fg, x, &dir, f0, d0, t0, &cfg, &mut evals)?;
    let (trial, fallback) = match found {
        Some(tr) => (tr, false),
        None => {
            history.reset();
            let sd: Vec<f64> = g0.iter().map(|v| -v).collect();
            let mut t = lr;
            let mut accepted = None;
            for _ in 0..cfg.max_trials {
                let tr = eval_trial(&mut fg, x, &sd, t, &mut evals)?;
                if tr.f < f0 {
                    accepted = Some(tr);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(tr) => {
                    dir = sd;
                    (tr, true)
                }
                None => {
                    history.current = Some((x.to_vec(), f0, g0));
                    return Err(Error::LineSearchFailed(format!(
                        "no decrease from loss {f0:.6e} along the quasi-Newton or steepest-descent direction"
                    )));
                }
            }
        }
    };

    let s: Vec<f64> = dir.iter().map(|d| trial.t * d).collect();
    let mut new_x = x.to_vec();
    for i in 0..x.len() {
        if !frozen[i] {
            new_x[i] = x[i] + s[i];
        }
    }
    let s: Vec<f64> = new_x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = trial.g.iter().zip(&g0).map(|(a, b)| a - b).collect();
    history.push(s, y);
    x.copy_from_slice(&new_x);
    history.current = Some((new_x, trial.f, trial.g));
    Ok(LbfgsOutcome {
        loss: trial.f,
        step: trial.t,
        evaluations: evals,
        fallback,
        converged: false,
    })
}
