use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights, Objective, ObjectiveKind, SceneState, Term};

use super::adam::{Adam, AdamConfig};
use super::gradient::{GradientEngine, Problem};
use super::lbfgs::{lbfgs_step, LbfgsConfig, LbfgsHistory};
use super::params::{FreezeMask, ParamKind, ParamLayout, ParamVector};

/// Length and angle units of the Adam search space.
///
/// Adam moves each coordinate by roughly `lr` per step in the space it optimizes. Scene
/// parameters are optimized as `z = (x − x₀)/scale`, so a step moves a centroid by about
/// `lr·centroid` meters. Weight decay shrinks `z`, pulling toward the stage's starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamScales {
    /// Meters per unit for box and layout centroids.
    pub centroid: f64,
    /// Meters per unit for box and layout sizes.
    pub size: f64,
    /// Radians per unit for yaws.
    pub yaw: f64,
    /// Radians per unit for camera pitch and roll.
    pub camera: f64,
}

impl Default for AdamScales {
    fn default() -> Self {
        Self {
            centroid: 200.0,
            size: 0.5,
            yaw: 10.0,
            camera: 0.1,
        }
    }
}

impl AdamScales {
    fn of(&self, kind: ParamKind) -> f64 {
        if kind.is_centroid() {
            self.centroid
        } else if kind.is_size() {
            self.size
        } else if kind.is_yaw() {
            self.yaw
        } else if kind.is_camera() {
            self.camera
        } else {
            1.0
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("centroid", self.centroid),
            ("size", self.size),
            ("yaw", self.yaw),
            ("camera", self.camera),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("adam scale {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub stage1_body_translation_iters: usize,
    pub stage1_body_full_iters: usize,
    pub stage1_scene_iters: usize,
    pub stage2_alternations: usize,
    /// L-BFGS steps on the body per alternation.
    pub stage2_body_steps: usize,
    /// Adam steps on the scene per alternation.
    pub stage2_scene_steps: usize,
    pub lr_body_stage1: f64,
    pub lr_scene_stage1: f64,
    pub weight_decay_scene: f64,
    pub lr_body_stage2: f64,
    pub lr_scene_stage2: f64,
    /// Rebuild signed distance fields every this many outer iterations.
    pub sdf_rebuild_every: usize,
    pub gradient: GradientEngine,
    pub adam_scales: AdamScales,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    /// Terms whose weight is forced to zero everywhere (ablation).
    pub disabled_terms: Vec<Term>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            stage1_body_translation_iters: 20,
            stage1_body_full_iters: 80,
            stage1_scene_iters: 150,
            stage2_alternations: 20,
            stage2_body_steps: 1,
            stage2_scene_steps: 5,
            lr_body_stage1: 1e-3,
            lr_scene_stage1: 1e-4,
            weight_decay_scene: 1e-4,
            lr_body_stage2: 1e-4,
            lr_scene_stage2: 5e-5,
            sdf_rebuild_every: 1,
            gradient: GradientEngine::Analytic,
            adam_scales: AdamScales::default(),
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            disabled_terms: Vec::new(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_body_stage1", self.lr_body_stage1),
            ("lr_scene_stage1", self.lr_scene_stage1),
            ("lr_body_stage2", self.lr_body_stage2),
            ("lr_scene_stage2", self.lr_scene_stage2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay_scene >= 0.0 && self.weight_decay_scene.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "weight_decay_scene must be non-negative, got {}",
                self.weight_decay_scene
            )));
        }
        if self.sdf_rebuild_every == 0 {
            return Err(Error::InvalidInput("sdf_rebuild_every must be at least 1".into()));
        }
        if self.lbfgs.history == 0 || self.lbfgs.max_trials == 0 {
            return Err(Error::InvalidInput("L-BFGS history and max_trials must be at least 1".into()));
        }
        if !(0.0 < self.lbfgs.c1 && self.lbfgs.c1 < self.lbfgs.c2 && self.lbfgs.c2 < 1.0) {
            return Err(Error::InvalidInput("L-BFGS constants must satisfy 0 < c1 < c2 < 1".into()));
        }
        self.adam_scales.validate()
    }

    fn objective(&self, kind: ObjectiveKind) -> Objective {
        Objective::new(kind).with_disabled(&self.disabled_terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Stage1BodyTranslation,
    Stage1BodyFull,
    Stage1Scene,
    Stage2Body,
    Stage2Scene,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub stage: Phase,
    pub iteration: usize,
    pub terms: BTreeMap<Term, f64>,
    pub total: f64,
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    fn push(&mut self, stage: Phase, iteration: usize, b: &LossBreakdown, step: f64, note: Option<String>) {
        self.records.push(TrajectoryRecord {
            stage,
            iteration,
            terms: b.terms.clone(),
            total: b.total,
            step,
            note,
        });
    }

    pub fn phase(&self, stage: Phase) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn extend(&mut self, other: Trajectory) {
        self.records.extend(other.records);
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trajectory records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn rebuild(state: &mut SceneState) -> Result<()> {
    let r = state.fields.resolution.max(2);
    state.rebuild_fields(r)
}

fn write_back(state: &mut SceneState, layout: &std::sync::Arc<ParamLayout>, x: &[f64]) -> Result<()> {
    ParamVector {
        values: x.to_vec(),
        layout: layout.clone(),
    }
    .unpack_into(state)
}

/// Plain L-BFGS run over the slots selected by `free`. Fields are not rebuilt.
#[allow(clippy::too_many_arguments)]
fn lbfgs_phase(
    state: &mut SceneState,
    phase: Phase,
    objective: Objective,
    free: impl Fn(ParamKind) -> bool,
    iters: usize,
    lr: f64,
    cfg: &ScheduleConfig,
    w: &LossWeights,
    log: &mut Trajectory,
) -> Result<()> {
    if iters == 0 {
        return Ok(());
    }
    let problem = Problem::new(state, *w, objective);
    let layout = problem.layout.clone();
    let mask = FreezeMask::only(layout.clone(), free);
    let frozen = mask.scalars();
    let mut x = problem.pack().values;
    let mut history = LbfgsHistory::new(cfg.lbfgs);
    log.push(phase, 0, &problem.breakdown(&x)?, 0.0, None);
    for it in 1..=iters {
        let out = lbfgs_step(
            &mut history,
            &mut x,
            |p| problem.value_and_gradient(p, &mask, cfg.gradient),
            &frozen,
            lr,
        );
        match out {
            Ok(o) if o.converged => {
                log.push(phase, it, &problem.breakdown(&x)?, 0.0, Some("converged".into()));
                break;
            }
            Ok(o) => {
                let note = o.fallback.then(|| "steepest-descent fallback".to_string());
                log.push(phase, it, &problem.breakdown(&x)?, o.step, note);
            }
            Err(Error::LineSearchFailed(msg)) => {
                log.push(phase, it, &problem.breakdown(&x)?, 0.0, Some(format!("stopped: {msg}")));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    drop(problem);
    write_back(state, &layout, &x)
}

/// Adam in the rescaled space of [`AdamScales`].
struct ScaledAdam {
    x0: Vec<f64>,
    z: Vec<f64>,
    scale: Vec<f64>,
    frozen: Vec<bool>,
    adam: Adam,
}

impl ScaledAdam {
    fn new(x0: Vec<f64>, layout: &ParamLayout, mask: &FreezeMask, cfg: &ScheduleConfig) -> Self {
        let mut scale = vec![1.0; x0.len()];
        for s in layout.slots() {
            scale[s.start..s.start + s.len].fill(cfg.adam_scales.of(s.kind));
        }
        Self {
            z: vec![0.0; x0.len()],
            adam: Adam::with_config(x0.len(), cfg.adam),
            frozen: mask.scalars(),
            scale,
            x0,
        }
    }

    /// Step from `x` (which must agree with the internal iterate on free entries) and return
    /// the new iterate and the largest parameter change.
    fn step(&mut self, x: &[f64], g: &[f64], lr: f64, wd: f64) -> (Vec<f64>, f64) {
        let gz: Vec<f64> = g.iter().zip(&self.scale).map(|(g, s)| g * s).collect();
        self.adam.step(&mut self.z, &gz, lr, wd, &self.frozen);
        let mut out = x.to_vec();
        let mut moved = 0.0f64;
        for i in 0..out.len() {
            if !self.frozen[i] {
                out[i] = self.x0[i] + self.scale[i] * self.z[i];
                moved = moved.max((out[i] - x[i]).abs());
            }
        }
        (out, moved)
    }
}

/// Stage I: the body against its own energies, then the scene against box reprojection and
/// object collision. Returns the refined state and the trajectory.
pub fn run_stage1(mut state: SceneState, cfg: &ScheduleConfig, w: &LossWeights) -> Result<(SceneState, Trajectory)> {
    cfg.validate()?;
    w.validate()?;
    let mut log = Trajectory::default();
    if state.human.is_some() {
        lbfgs_phase(
            &mut state,
            Phase::Stage1BodyTranslation,
            cfg.objective(ObjectiveKind::Keypoints),
            |k| k == ParamKind::BodyTranslation,
            cfg.stage1_body_translation_iters,
            cfg.lr_body_stage1,
            cfg,
            w,
            &mut log,
        )?;
        lbfgs_phase(
            &mut state,
            Phase::Stage1BodyFull,
            cfg.objective(ObjectiveKind::Body),
            ParamKind::is_body,
            cfg.stage1_body_full_iters,
            cfg.lr_body_stage1,
            cfg,
            w,
            &mut log,
        )?;
        rebuild(&mut state)?;
    }
    if !state.objects.is_empty() && cfg.stage1_scene_iters > 0 {
        stage1_scene(&mut state, cfg, w, &mut log)?;
    }
    Ok((state, log))
}

fn stage1_scene(state: &mut SceneState, cfg: &ScheduleConfig, w: &LossWeights, log: &mut Trajectory) -> Result<()> {
    let objective = cfg.objective(ObjectiveKind::Scene);
    let start = ParamVector::pack(state);
    let layout = start.layout.clone();
    let mask = FreezeMask::only(layout.clone(), |k| !k.is_body());
    let mut opt = ScaledAdam::new(start.values.clone(), &layout, &mask, cfg);
    let mut x = start.values;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_step = 0.0;
    for it in 0..=cfg.stage1_scene_iters {
        if it > 0 && it % cfg.sdf_rebuild_every == 0 {
            write_back(state, &layout, &x)?;
            rebuild(state)?;
        }
        let problem = Problem::new(state, *w, objective.clone());
        let done = it == cfg.stage1_scene_iters;
        let (b, g) = if done {
            (problem.breakdown(&x)?, Vec::new())
        } else {
            let g = problem.gradient(&x, &mask, cfg.gradient)?;
            (problem.breakdown(&x)?, g)
        };
        log.push(Phase::Stage1Scene, it, &b, last_step, None);
        if best.as_ref().map_or(true, |(f, _)| b.total < *f) {
            best = Some((b.total, x.clone()));
        }
        if done {
            break;
        }
        let (nx, moved) = opt.step(&x, &g, cfg.lr_scene_stage1, cfg.weight_decay_scene);
        x = nx;
        last_step = moved;
    }
    let (_, bx) = best.expect("at least one iterate");
    write_back(state, &layout, &bx)?;
    rebuild(state)
}

/// Stage II: alternate one body update and one scene update on the full energy, with camera
/// and every yaw held fixed.
pub fn run_stage2(mut state: SceneState, cfg: &ScheduleConfig, w: &LossWeights) -> Result<(SceneState, Trajectory)> {
    cfg.validate()?;
    w.validate()?;
    let mut log = Trajectory::default();
    let objective = cfg.objective(ObjectiveKind::Total);
    let start = ParamVector::pack(&state);
    let layout = start.layout.clone();
    let body_mask = FreezeMask::only(layout.clone(), ParamKind::is_body);
    let body_frozen = body_mask.scalars();
    let scene_mask = FreezeMask::only(layout.clone(), |k| k.is_centroid() || k.is_size());
    let mut opt = ScaledAdam::new(start.values.clone(), &layout, &scene_mask, cfg);
    let mut history = LbfgsHistory::new(cfg.lbfgs);
    let mut x = start.values;
    let has_body = state.human.is_some();
    let has_scene = scene_mask.free_count() > 0;

    rebuild(&mut state)?;
    log.push(
        Phase::Stage2Scene,
        0,
        &Problem::new(&state, *w, objective.clone()).breakdown(&x)?,
        0.0,
        Some("initial".into()),
    );
    for a in 1..=cfg.stage2_alternations {
        if (a - 1) % cfg.sdf_rebuild_every == 0 {
            write_back(&mut state, &layout, &x)?;
            rebuild(&mut state)?;
        }
        let problem = Problem::new(&state, *w, objective.clone());
        history.invalidate();
        if has_body {
            let mut note = None;
            let mut step = 0.0;
            for _ in 0..cfg.stage2_body_steps {
                match lbfgs_step(
                    &mut history,
                    &mut x,
                    |p| problem.value_and_gradient(p, &body_mask, cfg.gradient),
                    &body_frozen,
                    cfg.lr_body_stage2,
                ) {
                    Ok(o) => {
                        step = o.step;
                        if o.converged {
                            note = Some("converged".to_string());
                            break;
                        }
                        if o.fallback {
                            note = Some("steepest-descent fallback".to_string());
                        }
                    }
                    Err(Error::LineSearchFailed(msg)) => {
                        note = Some(format!("no body step: {msg}"));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            log.push(Phase::Stage2Body, a, &problem.breakdown(&x)?, step, note);
        }
        if has_scene {
            let mut moved = 0.0;
            for _ in 0..cfg.stage2_scene_steps {
                let g = problem.gradient(&x, &scene_mask, cfg.gradient)?;
                let (nx, m) = opt.step(&x, &g, cfg.lr_scene_stage2, cfg.weight_decay_scene);
                x = nx;
                moved = m;
            }
            log.push(Phase::Stage2Scene, a, &problem.breakdown(&x)?, moved, None);
        }
    }
    write_back(&mut state, &layout, &x)?;
    rebuild(&mut state)?;
    Ok((state, log))
}

/// Stage I followed by Stage II (unless `stage1_only`).
pub fn optimize(
    state: SceneState,
    cfg: &ScheduleConfig,
    w: &LossWeights,
    stage1_only: bool,
) -> Result<(SceneState, Trajectory)> {
    let (state, mut log) = run_stage1(state, cfg, w)?;
    if stage1_only {
        return Ok((state, log));
    }
    let (state, log2) = run_stage2(state, cfg, w)?;
    log.extend(log2);
    Ok((state, log))
}
