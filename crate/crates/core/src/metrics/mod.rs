//! Box IoUs, joint and vertex errors, and similarity (Procrustes) alignment.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::body::body_joints3d;
use crate::error::{Error, Result};
use crate::geometry::{iou_box3d, iou_rect, project_box_to_rect, project_point, BBox3D, CameraPose, Intrinsics, Mat3, Vec2, Vec3};
use crate::losses::SceneState;
use crate::mesh::TriMesh;

/// Minimum 3D IoU for a greedy match.
pub const GREEDY_MATCH_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_iou3d: Option<f64>,
    pub mean_iou2d: Option<f64>,
    /// Meters.
    pub pje3d_m: Option<f64>,
    /// Pixels.
    pub pje2d_px: Option<f64>,
    pub v2v_mm: Option<f64>,
    pub pje_mm: Option<f64>,
    pub p_v2v_mm: Option<f64>,
    pub p_pje_mm: Option<f64>,
    /// `(pred, gt)` box pairs the IoUs were averaged over.
    pub matching: Vec<(usize, usize)>,
}

fn check_pairs(matching: &[(usize, usize)], np: usize, ng: usize) -> Result<()> {
    if matching.is_empty() {
        return Err(Error::EmptyMatching);
    }
    for &(p, g) in matching {
        if p >= np || g >= ng {
            return Err(Error::InvalidInput(format!(
                "matching pair ({p}, {g}) out of range for {np} predicted and {ng} ground-truth boxes"
            )));
        }
    }
    Ok(())
}

pub fn mean_iou3d(pred: &[BBox3D], gt: &[BBox3D], matching: &[(usize, usize)]) -> Result<f64> {
    check_pairs(matching, pred.len(), gt.len())?;
    Ok(matching.iter().map(|&(p, g)| iou_box3d(&pred[p], &gt[g])).sum::<f64>() / matching.len() as f64)
}

/// Mean IoU of the image rectangles of matched boxes, each projected with its own camera.
#[allow(clippy::too_many_arguments)]
pub fn mean_iou2d(
    pred: &[BBox3D],
    pred_cam: &CameraPose,
    gt: &[BBox3D],
    gt_cam: &CameraPose,
    k: &Intrinsics,
    matching: &[(usize, usize)],
) -> Result<f64> {
    check_pairs(matching, pred.len(), gt.len())?;
    let mut total = 0.0;
    for &(p, g) in matching {
        let a = project_box_to_rect(&pred[p], pred_cam, k).map_err(|e| e.with_context(format!("predicted box {p}")))?;
        let b = project_box_to_rect(&gt[g], gt_cam, k).map_err(|e| e.with_context(format!("ground-truth box {g}")))?;
        total += iou_rect(&a, &b);
    }
    Ok(total / matching.len() as f64)
}

/// Greedy one-to-one matching by descending 3D IoU, keeping pairs at or above `threshold`.
/// Ties go to the lower `(pred, gt)` pair.
pub fn greedy_match(pred: &[BBox3D], gt: &[BBox3D], threshold: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = iou_box3d(p, g);
            if v >= threshold {
                cand.push((v, i, j));
            }
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("no points to compare".into()));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

/// Mean per-joint Euclidean distance, in the input units.
pub fn pje(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    mean_distance(pred, gt)
}

/// Mean pixel distance between projected predicted joints and 2D ground truth.
pub fn pje2d(pred: &[Vec3], gt: &[Vec2], cam: &CameraPose, k: &Intrinsics) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no joints to compare".into()));
    }
    let mut total = 0.0;
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let px = project_point(&cam.world_to_camera(p), k).map_err(|e| e.with_context(format!("joint {i}")))?;
        total += (px - g).norm();
    }
    Ok(total / pred.len() as f64)
}

/// Mean vertex-to-vertex distance in millimeters (meshes must share vertex order).
pub fn v2v(pred: &TriMesh, gt: &TriMesh) -> Result<f64> {
    Ok(1000.0 * mean_distance(pred.vertices(), gt.vertices())?)
}

/// Best similarity transform taking `src` onto `dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub aligned: Vec<Vec3>,
}

impl Procrustes {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form least-squares similarity alignment with `det R = +1`.
pub fn procrustes_align(src: &[Vec3], dst: &[Vec3]) -> Result<Procrustes> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vec3>() / nf;
    let mu_d = dst.iter().sum::<Vec3>() / nf;
    let mut cov = Mat3::zeros();
    let mut spread = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let x = s - mu_s;
        let y = d - mu_d;
        cov += y * x.transpose();
        spread += x * x.transpose();
        var_s += x.norm_squared();
    }
    cov /= nf;
    var_s /= nf;
    // collinear or coincident sources leave the rotation about their line undetermined
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration("source points are collinear or coincident".into()));
    }
    let svd = SVD::new(cov, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = svd.singular_values;
    let mut s = Vec3::repeat(1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s.z = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&s) * v_t;
    let scale = (d.component_mul(&s)).sum() / var_s;
    let translation = mu_d - rotation * mu_s * scale;
    let aligned = src.iter().map(|p| rotation * p * scale + translation).collect();
    Ok(Procrustes {
        scale,
        rotation,
        translation,
        aligned,
    })
}

/// Every measure that applies to a predicted and a ground-truth state.
///
/// Body measures need a human in both. Box IoUs use `matching`, or greedy IoU matching when it
/// is `None`; they are absent when no pair is available.
pub fn evaluate_states(pred: &SceneState, gt: &SceneState, matching: Option<&[(usize, usize)]>) -> Result<EvalReport> {
    let pb: Vec<BBox3D> = pred.objects.iter().map(|o| o.bbox).collect();
    let gb: Vec<BBox3D> = gt.objects.iter().map(|o| o.bbox).collect();
    let pairs = match matching {
        Some(m) => m.to_vec(),
        None => greedy_match(&pb, &gb, GREEDY_MATCH_THRESHOLD),
    };
    let (mean_iou3d, mean_iou2d) = if pairs.is_empty() {
        if matching.is_some() {
            return Err(Error::EmptyMatching);
        }
        (None, None)
    } else {
        (
            Some(mean_iou3d(&pb, &gb, &pairs)?),
            Some(mean_iou2d(&pb, &pred.camera, &gb, &gt.camera, &gt.intrinsics, &pairs)?),
        )
    };
    let mut report = EvalReport {
        mean_iou3d,
        mean_iou2d,
        pje3d_m: None,
        pje2d_px: None,
        v2v_mm: None,
        pje_mm: None,
        p_v2v_mm: None,
        p_pje_mm: None,
        matching: pairs,
    };
    if let (Some(ph), Some(gh)) = (&pred.human, &gt.human) {
        let pj = body_joints3d(&ph.template, &ph.params);
        let gj = body_joints3d(&gh.template, &gh.params);
        let e = pje(&pj, &gj)?;
        report.pje3d_m = Some(e);
        report.pje_mm = Some(1000.0 * e);
        report.p_pje_mm = Some(1000.0 * pje(&procrustes_align(&pj, &gj)?.aligned, &gj)?);
        let kp: Vec<Vec3> = ph.template.keypoint_map().iter().map(|&j| pj[j]).collect();
        let gt2d: Vec<Vec2> = gh.keypoints.iter().map(|k| k.pixel).collect();
        report.pje2d_px = Some(pje2d(&kp, &gt2d, &pred.camera, &pred.intrinsics)?);
        let pm = pred.body_mesh().expect("human present");
        let gm = gt.body_mesh().expect("human present");
        report.v2v_mm = Some(v2v(&pm, &gm)?);
        let al = procrustes_align(pm.vertices(), gm.vertices())?;
        report.p_v2v_mm = Some(1000.0 * mean_distance(&al.aligned, gm.vertices())?);
    }
    Ok(report)
}
