//! C ABI over `scenefit`.
//!
//! Every entry point returns a [`ScenefitStatus`]. On failure the message is kept per thread
//! and can be copied out with [`scenefit_last_error_message`]. Scenes are opaque handles
//! released with [`scenefit_scene_free`]. Panics never cross the boundary; they surface as
//! [`ScenefitStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use scenefit::io::{load_config, load_scene, load_synth_spec, synth_scene, RunConfig, Scene, SynthSpec};
use scenefit::losses::{loss_total, SceneState, Term};
use scenefit::metrics::evaluate_states;
use scenefit::optim::optimize;
use scenefit::Error;

/// Number of loss terms written by [`scenefit_scene_losses`].
pub const SCENEFIT_TERM_COUNT: usize = 10;

const _: () = assert!(Term::ALL.len() == SCENEFIT_TERM_COUNT);

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenefitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Schema = 5,
    InvalidInput = 6,
    /// Degenerate, empty or non-watertight mesh.
    Mesh = 7,
    /// Non-finite loss, failed line search or a point behind the camera.
    Optimization = 8,
    /// Empty matching, length mismatch or degenerate alignment.
    Evaluation = 9,
    PlacementFailed = 10,
    Panic = 11,
}

/// Loaded scene, its current optimization state and run configuration.
pub struct ScenefitScene {
    scene: Scene,
    state: SceneState,
    config: RunConfig,
}

/// Evaluation of a predicted scene against ground truth. Measures that do not apply (no
/// matched boxes, no human) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScenefitEvalReport {
    pub mean_iou3d: f64,
    pub mean_iou2d: f64,
    /// Meters.
    pub pje3d_m: f64,
    /// Pixels.
    pub pje2d_px: f64,
    pub v2v_mm: f64,
    pub pje_mm: f64,
    pub p_v2v_mm: f64,
    pub p_pje_mm: f64,
    /// Number of matched box pairs.
    pub matched: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ScenefitStatus {
    match e {
        Error::Io { .. } => ScenefitStatus::Io,
        Error::Parse { .. } => ScenefitStatus::Parse,
        Error::Schema { .. } => ScenefitStatus::Schema,
        Error::DegenerateFace { .. } | Error::EmptyMesh | Error::NotWatertight { .. } => ScenefitStatus::Mesh,
        Error::NonPositiveDepth { .. } | Error::NonFiniteLoss { .. } | Error::LineSearchFailed(_) => {
            ScenefitStatus::Optimization
        }
        Error::EmptyMatching | Error::LengthMismatch { .. } | Error::DegenerateConfiguration(_) => {
            ScenefitStatus::Evaluation
        }
        Error::PlacementFailed { .. } => ScenefitStatus::PlacementFailed,
        Error::BadJointIndex { .. } | Error::NoObjects | Error::InvalidInput(_) => ScenefitStatus::InvalidInput,
    }
}

struct Failure(ScenefitStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Outcome) -> ScenefitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            ScenefitStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            ScenefitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScenefitStatus::NullArgument, format!("`{what}` is null"))
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> std::result::Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(ScenefitStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn optional_path(p: *const c_char, what: &str) -> std::result::Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

/// # Safety
/// `h` is null or a live handle.
unsafe fn scene_ref<'a>(h: *const ScenefitScene, what: &str) -> std::result::Result<&'a ScenefitScene, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

fn into_handle(scene: Scene, config: RunConfig) -> std::result::Result<*mut ScenefitScene, Failure> {
    let state = scene.to_state(config.sdf_resolution)?;
    Ok(Box::into_raw(Box::new(ScenefitScene { scene, state, config })))
}

/// Load a scene document. `config_path` may be null for the default run configuration.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_load(
    scene_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut ScenefitScene,
) -> ScenefitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(scene_path, "scene_path")?;
        let config = match optional_path(config_path, "config_path")? {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        *out = into_handle(load_scene(path)?, config)?;
        Ok(())
    })
}

/// Generate a perturbed starting scene and its ground truth. `spec_path` may be null for the
/// default generator settings. Both handles use the default run configuration.
///
/// # Safety
/// `spec_path` is null or NUL-terminated; `out_init` and `out_gt` are valid pointers.
#[no_mangle]
pub unsafe extern "C" fn scenefit_synth(
    seed: u64,
    spec_path: *const c_char,
    out_init: *mut *mut ScenefitScene,
    out_gt: *mut *mut ScenefitScene,
) -> ScenefitStatus {
    guard(|| {
        if out_init.is_null() {
            return Err(null("out_init"));
        }
        if out_gt.is_null() {
            return Err(null("out_gt"));
        }
        *out_init = ptr::null_mut();
        *out_gt = ptr::null_mut();
        let spec = match optional_path(spec_path, "spec_path")? {
            Some(p) => load_synth_spec(p)?,
            None => SynthSpec::default(),
        };
        let (init, gt) = synth_scene(seed, &spec)?;
        let init = into_handle(Scene::from_document(init, ".")?, RunConfig::default())?;
        match Scene::from_document(gt, ".").map_err(Failure::from).and_then(|s| into_handle(s, RunConfig::default())) {
            Ok(gt) => {
                *out_init = init;
                *out_gt = gt;
                Ok(())
            }
            Err(e) => {
                drop(Box::from_raw(init));
                Err(e)
            }
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `scene` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_free(scene: *mut ScenefitScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Write the weighted total loss of the current state.
///
/// # Safety
/// `scene` is a live handle; `out_total` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_loss(scene: *const ScenefitScene, out_total: *mut f64) -> ScenefitStatus {
    guard(|| {
        let s = scene_ref(scene, "scene")?;
        let out = out_total.as_mut().ok_or_else(|| null("out_total"))?;
        *out = loss_total(&s.state, &s.config.weights)?.total;
        Ok(())
    })
}

/// Write the unweighted value of every loss term in this order: keypoints, pose prior,
/// bending, self-penetration, scene reprojection, collision, object-ground, body-ground,
/// contact, body penetration. `len` must be at least [`SCENEFIT_TERM_COUNT`].
///
/// # Safety
/// `scene` is a live handle; `out` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_losses(scene: *const ScenefitScene, out: *mut f64, len: usize) -> ScenefitStatus {
    guard(|| {
        let s = scene_ref(scene, "scene")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < SCENEFIT_TERM_COUNT {
            return Err(Failure(
                ScenefitStatus::InvalidInput,
                format!("buffer holds {len} values, {SCENEFIT_TERM_COUNT} needed"),
            ));
        }
        let b = loss_total(&s.state, &s.config.weights)?;
        let dst = std::slice::from_raw_parts_mut(out, SCENEFIT_TERM_COUNT);
        for (d, t) in dst.iter_mut().zip(Term::ALL) {
            *d = b.get(t);
        }
        Ok(())
    })
}

/// Refine the scene in place. With `stage1_only` the joint stage is skipped.
///
/// # Safety
/// `scene` is a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_optimize(scene: *mut ScenefitScene, stage1_only: bool) -> ScenefitStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| null("scene"))?;
        let (refined, _) = optimize(s.state.clone(), &s.config.schedule, &s.config.weights, stage1_only)?;
        s.state = refined;
        Ok(())
    })
}

/// Write the current state as a scene document.
///
/// # Safety
/// `scene` is a live handle; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_save(scene: *const ScenefitScene, path: *const c_char) -> ScenefitStatus {
    guard(|| {
        let s = scene_ref(scene, "scene")?;
        let path = path_arg(path, "path")?;
        s.scene.with_state(&s.state)?.save(path)?;
        Ok(())
    })
}

/// Number of objects in the scene.
///
/// # Safety
/// `scene` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_object_count(scene: *const ScenefitScene, out: *mut usize) -> ScenefitStatus {
    guard(|| {
        let s = scene_ref(scene, "scene")?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.state.objects.len();
        Ok(())
    })
}

/// Current box of object `index`: centroid and size in meters, yaw in radians.
///
/// # Safety
/// `scene` is a live handle; `centroid` and `size` point to 3 doubles; `yaw` is valid.
#[no_mangle]
pub unsafe extern "C" fn scenefit_scene_object_box(
    scene: *const ScenefitScene,
    index: usize,
    centroid: *mut f64,
    size: *mut f64,
    yaw: *mut f64,
) -> ScenefitStatus {
    guard(|| {
        let s = scene_ref(scene, "scene")?;
        if centroid.is_null() || size.is_null() || yaw.is_null() {
            return Err(null("centroid/size/yaw"));
        }
        let o = s.state.objects.get(index).ok_or_else(|| {
            Failure(
                ScenefitStatus::InvalidInput,
                format!("object {index} out of range for {} objects", s.state.objects.len()),
            )
        })?;
        let c = o.bbox.centroid();
        let z = o.bbox.size();
        std::slice::from_raw_parts_mut(centroid, 3).copy_from_slice(c.as_slice());
        std::slice::from_raw_parts_mut(size, 3).copy_from_slice(z.as_slice());
        *yaw = o.bbox.yaw();
        Ok(())
    })
}

/// Compare `pred` against `gt`, matching boxes greedily by 3D IoU.
///
/// # Safety
/// Both handles are live; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenefit_evaluate(
    pred: *const ScenefitScene,
    gt: *const ScenefitScene,
    out: *mut ScenefitEvalReport,
) -> ScenefitStatus {
    guard(|| {
        let p = scene_ref(pred, "pred")?;
        let g = scene_ref(gt, "gt")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate_states(&p.state, &g.state, None)?;
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = ScenefitEvalReport {
            mean_iou3d: v(r.mean_iou3d),
            mean_iou2d: v(r.mean_iou2d),
            pje3d_m: v(r.pje3d_m),
            pje2d_px: v(r.pje2d_px),
            v2v_mm: v(r.v2v_mm),
            pje_mm: v(r.pje_mm),
            p_v2v_mm: v(r.p_v2v_mm),
            p_pje_mm: v(r.p_pje_mm),
            matched: r.matching.len(),
        };
        Ok(())
    })
}

/// Copy the calling thread's last error message into `buf` (truncated, always
/// NUL-terminated when `len > 0`). Returns the full message length in bytes, excluding the
/// terminator; 0 when the last call succeeded.
///
/// # Safety
/// `buf` is null or points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn scenefit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scenefit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
