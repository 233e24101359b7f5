//! Command-line surface: `optimize`, `evaluate`, `gradcheck` and `synth`.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 when optimization fails or a
//! gradient check exceeds its tolerance.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    export_meshes, load_config, load_scene, load_synth_spec, save_scene, synth_scene, RunConfig, Scene, SynthSpec,
};
use crate::losses::{loss_total, LossBreakdown};
use crate::metrics::{evaluate_states, procrustes_align, GREEDY_MATCH_THRESHOLD};
use crate::mesh::save_obj;
use crate::optim::{gradcheck, optimize, TermCheck};

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "SCENEFIT_THREADS";

/// Field resolution used when a state is only needed for evaluation.
const EVAL_SDF_RESOLUTION: usize = 2;

#[derive(Debug, Parser)]
#[command(name = "scenefit", version, about = "Joint body and scene refinement under physical-plausibility losses")]
pub struct Cli {
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the two-stage refinement on a scene document.
    Optimize {
        #[arg(long)]
        scene: PathBuf,
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write OBJ meshes of the refined scene here.
        #[arg(long)]
        export_meshes: Option<PathBuf>,
        /// Stop after the independent body and scene fits.
        #[arg(long)]
        stage1_only: bool,
    },
    /// Compare a predicted scene document against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON `{"pairs": [[pred, gt], ...]}` matching boxes.
        #[arg(long, conflicts_with = "auto_match")]
        matching: Option<PathBuf>,
        /// Match boxes greedily by 3D IoU instead of reading a matching file.
        #[arg(long)]
        auto_match: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the predicted body mesh after similarity alignment to the ground truth.
        #[arg(long)]
        aligned_mesh: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences for every loss term.
    Gradcheck {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Skip field samples within this many cells of a sign change.
        #[arg(long, default_value_t = 2)]
        exclude_cells: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Generate a perturbed starting scene and its ground truth.
    Synth {
        #[arg(long)]
        seed: u64,
        /// Generator settings JSON; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_init: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
    },
}

/// Box matching file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingFile {
    pub pairs: Vec<(usize, usize)>,
}

/// Initial and final loss breakdowns written by `optimize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub initial: LossBreakdown,
    #[serde(rename = "final")]
    pub final_: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub exclude_cells: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub terms: Vec<TermCheck>,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_optimization_failure() {
        2
    } else {
        1
    }
}

fn report_error(e: &Error, json: bool) {
    let mut err = std::io::stderr().lock();
    if json {
        let v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
        let _ = writeln!(err, "{v}");
    } else {
        let _ = writeln!(err, "error: {e}");
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        // a second call in the same process (tests) finds the pool already built
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_optimize(
    scene: &Path,
    config: Option<&Path>,
    out: &Path,
    meshes: Option<&Path>,
    stage1_only: bool,
) -> Result<()> {
    let cfg = config_or_default(config)?;
    let scene = load_scene(scene)?;
    let state = scene.to_state(cfg.sdf_resolution)?;
    let initial = loss_total(&state, &cfg.weights)?;
    let (refined, trajectory) = optimize(state, &cfg.schedule, &cfg.weights, stage1_only)?;
    let final_ = loss_total(&refined, &cfg.weights)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_scene(&scene, &refined, out.join(&cfg.outputs.scene))?;
    trajectory.write_jsonl(out.join(&cfg.outputs.trajectory))?;
    write_json(&LossSummary { initial: initial.clone(), final_: final_.clone() }, &out.join(&cfg.outputs.losses))?;
    if let Some(dir) = meshes {
        export_meshes(&refined, dir)?;
    }
    println!("total loss {:.6e} -> {:.6e}", initial.total, final_.total);
    Ok(())
}

fn eval_state(path: &Path) -> Result<(Scene, crate::losses::SceneState)> {
    let scene = load_scene(path)?;
    let state = scene.to_state(EVAL_SDF_RESOLUTION)?;
    Ok((scene, state))
}

fn run_evaluate(
    pred: &Path,
    gt: &Path,
    matching: Option<&Path>,
    auto_match: bool,
    out: Option<&Path>,
    aligned_mesh: Option<&Path>,
) -> Result<()> {
    let pairs = match (matching, auto_match) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let m: MatchingFile = crate::io::from_json(&text, p)?;
            Some(m.pairs)
        }
        (None, true) => None,
        (None, false) => {
            return Err(Error::InvalidInput(format!(
                "pass --matching FILE or --auto-match (greedy 3D IoU >= {GREEDY_MATCH_THRESHOLD})"
            )))
        }
    };
    let (_, p) = eval_state(pred)?;
    let (_, g) = eval_state(gt)?;
    let report = evaluate_states(&p, &g, pairs.as_deref())?;
    match out {
        Some(path) => write_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    if let Some(path) = aligned_mesh {
        let (pm, gm) = match (p.body_mesh(), g.body_mesh()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidInput("--aligned-mesh needs a human in both documents".into())),
        };
        let al = procrustes_align(pm.vertices(), gm.vertices())?;
        save_obj(&pm.with_vertices(al.aligned), path)?;
    }
    Ok(())
}

fn run_gradcheck(scene: &Path, config: Option<&Path>, step: f64, exclude_cells: usize, tolerance: f64) -> Result<bool> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("--step must be positive, got {step}")));
    }
    let cfg = config_or_default(config)?;
    let state = load_scene(scene)?.to_state(cfg.sdf_resolution)?;
    let terms = gradcheck(&state, &cfg.weights, exclude_cells, step)?;
    let passed = terms.iter().all(|t| t.max_relative_error < tolerance);
    let report = GradcheckReport {
        step,
        exclude_cells,
        tolerance,
        passed,
        terms,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(passed)
}

fn run_synth(seed: u64, spec: Option<&Path>, out_init: &Path, out_gt: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => load_synth_spec(p)?,
        None => SynthSpec::default(),
    };
    let (init, gt) = synth_scene(seed, &spec)?;
    for (doc, path) in [(init, out_init), (gt, out_gt)] {
        // builtin meshes only, so the base directory is irrelevant
        Scene::from_document(doc, ".")?.save(path)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    configure_threads()?;
    match &cli.command {
        Command::Optimize {
            scene,
            config,
            out,
            export_meshes,
            stage1_only,
        } => run_optimize(scene, config.as_deref(), out, export_meshes.as_deref(), *stage1_only).map(|_| 0),
        Command::Evaluate {
            pred,
            gt,
            matching,
            auto_match,
            out,
            aligned_mesh,
        } => run_evaluate(pred, gt, matching.as_deref(), *auto_match, out.as_deref(), aligned_mesh.as_deref()).map(|_| 0),
        Command::Gradcheck {
            scene,
            config,
            step,
            exclude_cells,
            tolerance,
        } => run_gradcheck(scene, config.as_deref(), *step, *exclude_cells, *tolerance).map(|ok| if ok { 0 } else { 2 }),
        Command::Synth {
            seed,
            spec,
            out_init,
            out_gt,
        } => run_synth(*seed, spec.as_deref(), out_init, out_gt).map(|_| 0),
    }
}

/// Parse `args` (including the program name) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            if args.iter().any(|a| a == "--json") {
                let v = serde_json::json!({ "error": "UsageError", "message": e.kind().to_string() });
                eprintln!("{v}");
            }
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            report_error(&e, cli.json);
            exit_code(&e)
        }
    }
}
