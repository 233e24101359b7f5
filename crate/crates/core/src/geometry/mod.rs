//! Oriented boxes, the pitch/roll camera, pinhole projection and overlap measures.
//!
//! Conventions used throughout the crate:
//!
//! * World frame is right-handed with `+y` up; the floor is the lowest face of the room box.
//! * The camera sits at the world origin. Its orientation is `R = R_roll(z) * R_pitch(x)` and
//!   `world_to_camera(p) = Rᵀ p`. With zero pitch and roll the two frames coincide.
//! * The camera looks down `+z`. Pixels are `(fx * x / z + cx, fy * y / z + cy)`, so the image
//!   `v` coordinate grows with camera `+y`.
//! * Boxes rotate about world `+y` only (yaw).

mod iou;

use serde::{Deserialize, Serialize};

pub use iou::{iou_box3d, iou_rect, polygon_area, clip_convex_polygon};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Minimum camera depth accepted by [`project_point`].
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a + PI) / two_pi).floor();
    // floor() rounding can land exactly on +π
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

/// Rotation about world `+y`.
pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`yaw_matrix`] with respect to the angle.
pub fn yaw_matrix_derivative(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Oriented 3D box: centroid, full extents and a yaw about `+y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BBox3DRepr", into = "BBox3DRepr")]
pub struct BBox3D {
    centroid: Vec3,
    size: Vec3,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BBox3DRepr {
    centroid: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

impl TryFrom<BBox3DRepr> for BBox3D {
    type Error = Error;
    fn try_from(r: BBox3DRepr) -> Result<Self> {
        BBox3D::new(Vec3::from(r.centroid), Vec3::from(r.size), r.yaw)
    }
}

impl From<BBox3D> for BBox3DRepr {
    fn from(b: BBox3D) -> Self {
        BBox3DRepr {
            centroid: b.centroid.into(),
            size: b.size.into(),
            yaw: b.yaw,
        }
    }
}

impl BBox3D {
    pub fn new(centroid: Vec3, size: Vec3, yaw: f64) -> Result<Self> {
        if !centroid.iter().all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidInput("box has non-finite centroid or yaw".into()));
        }
        if !size.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box size must be strictly positive, got ({}, {}, {})",
                size.x, size.y, size.z
            )));
        }
        Ok(Self {
            centroid,
            size,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn axis_aligned(centroid: Vec3, size: Vec3) -> Result<Self> {
        Self::new(centroid, size, 0.0)
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn rotation(&self) -> Mat3 {
        yaw_matrix(self.yaw)
    }

    /// The eight corners. Corner `k` uses sign `+` on x when bit 0 of `k` is set, on y for
    /// bit 1 and on z for bit 2: `corner_k = centroid + R_yaw * (±sx/2, ±sy/2, ±sz/2)`.
    pub fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation();
        let half = self.size * 0.5;
        std::array::from_fn(|k| {
            let local = Vec3::new(
                if k & 1 != 0 { half.x } else { -half.x },
                if k & 2 != 0 { half.y } else { -half.y },
                if k & 4 != 0 { half.z } else { -half.z },
            );
            self.centroid + r * local
        })
    }

    /// Lowest y over the corners. Yaw leaves the vertical extent untouched.
    pub fn min_y(&self) -> f64 {
        self.centroid.y - 0.5 * self.size.y
    }

    pub fn max_y(&self) -> f64 {
        self.centroid.y + 0.5 * self.size.y
    }

    /// Axis-aligned bounds `(min, max)` of the corners.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let c = self.corners();
        let mut lo = c[0];
        let mut hi = c[0];
        for p in &c[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Footprint on the floor plane as `(x, z)` points in counter-clockwise order.
    pub fn footprint(&self) -> [Vec2; 4] {
        let c = self.corners();
        // corners 0,1,5,4 walk the y=- face around its perimeter
        let ring = [c[0], c[1], c[5], c[4]];
        let mut poly = ring.map(|p| Vec2::new(p.x, p.z));
        if polygon_area_signed(&poly) < 0.0 {
            poly.reverse();
        }
        poly
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Refit a box from eight corners given the yaw: centroid is the mean, size the extents
    /// measured in the yaw frame.
    pub fn refit(corners: &[Vec3; 8], yaw: f64) -> Result<Self> {
        let centroid = corners.iter().fold(Vec3::zeros(), |a, p| a + p) / 8.0;
        let rt = yaw_matrix(yaw).transpose();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in corners {
            let l = rt * (p - centroid);
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
        Self::new(centroid, hi - lo, yaw)
    }

    pub fn with_centroid(&self, centroid: Vec3) -> Result<Self> {
        Self::new(centroid, self.size, self.yaw)
    }
}

pub(crate) fn polygon_area_signed(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// `box_corners` as a free function.
pub fn box_corners(b: &BBox3D) -> [Vec3; 8] {
    b.corners()
}

/// The cuboid room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoomLayout {
    pub bbox: BBox3D,
}

impl RoomLayout {
    pub fn new(bbox: BBox3D) -> Self {
        Self { bbox }
    }

    pub fn floor_height(&self) -> f64 {
        self.bbox.min_y()
    }
}

/// Camera orientation relative to the world.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub pitch: f64,
    pub roll: f64,
}

impl CameraPose {
    pub fn new(pitch: f64, roll: f64) -> Self {
        Self { pitch, roll }
    }

    /// `R = R_roll(z) * R_pitch(x)`; maps camera coordinates to world coordinates.
    pub fn rotation(&self) -> Mat3 {
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let r_pitch = Mat3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
        let r_roll = Mat3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
        r_roll * r_pitch
    }

    /// `(∂R/∂pitch, ∂R/∂roll)`.
    pub fn rotation_derivatives(&self) -> (Mat3, Mat3) {
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let r_pitch = Mat3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
        let r_roll = Mat3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
        let d_pitch = Mat3::new(0.0, 0.0, 0.0, 0.0, -sp, -cp, 0.0, cp, -sp);
        let d_roll = Mat3::new(-sr, -cr, 0.0, cr, -sr, 0.0, 0.0, 0.0, 0.0);
        (r_roll * d_pitch, d_roll * r_pitch)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * p
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p
    }
}

pub fn world_to_camera(p: &Vec3, cam: &CameraPose) -> Vec3 {
    cam.world_to_camera(p)
}

pub fn camera_to_world(p: &Vec3, cam: &CameraPose) -> Vec3 {
    cam.camera_to_world(p)
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsRepr> for Intrinsics {
    type Error = Error;
    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<Intrinsics> for IntrinsicsRepr {
    fn from(k: Intrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput("principal point must be finite".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// Project a camera-frame point.
pub fn project_point(p: &Vec3, k: &Intrinsics) -> Result<Vec2> {
    if !(p.z > DEPTH_EPSILON) {
        return Err(Error::NonPositiveDepth {
            depth: p.z,
            context: None,
        });
    }
    Ok(Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Axis-aligned image rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect2D {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl TryFrom<[f64; 4]> for Rect2D {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        Rect2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect2D> for [f64; 4] {
    fn from(r: Rect2D) -> Self {
        [r.xmin, r.ymin, r.xmax, r.ymax]
    }
}

impl Rect2D {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::InvalidInput(format!(
                "rect must satisfy xmin < xmax and ymin < ymax, got [{xmin}, {ymin}, {xmax}, {ymax}]"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// Corners in the order (min,min), (max,min), (max,max), (min,max).
    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.xmin, self.ymin),
            Vec2::new(self.xmax, self.ymin),
            Vec2::new(self.xmax, self.ymax),
            Vec2::new(self.xmin, self.ymax),
        ]
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }
}

/// Pixel positions of the eight box corners.
pub fn project_box_corners(b: &BBox3D, cam: &CameraPose, k: &Intrinsics) -> Result<[Vec2; 8]> {
    let corners = b.corners();
    let rt = cam.rotation().transpose();
    let mut out = [Vec2::zeros(); 8];
    for (o, c) in out.iter_mut().zip(corners.iter()) {
        *o = project_point(&(rt * c), k)?;
    }
    Ok(out)
}

/// Bounding rectangle of the projected corners.
pub fn project_box_to_rect(b: &BBox3D, cam: &CameraPose, k: &Intrinsics) -> Result<Rect2D> {
    let px = project_box_corners(b, cam, k)?;
    let mut r = Rect2D {
        xmin: f64::INFINITY,
        ymin: f64::INFINITY,
        xmax: f64::NEG_INFINITY,
        ymax: f64::NEG_INFINITY,
    };
    for p in &px {
        r.xmin = r.xmin.min(p.x);
        r.ymin = r.ymin.min(p.y);
        r.xmax = r.xmax.max(p.x);
        r.ymax = r.ymax.max(p.y);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sorted(mut pts: Vec<Vec3>) -> Vec<Vec3> {
        pts.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.partial_cmp(y).unwrap())
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        pts
    }

    fn round(p: Vec3) -> Vec3 {
        p.map(|v| (v * 1e9).round() / 1e9)
    }

    #[test]
    fn unit_cube_corners() {
        let b = BBox3D::new(Vec3::zeros(), Vec3::repeat(2.0), 0.0).unwrap();
        let c = b.corners();
        for p in &c {
            assert!(p.iter().all(|v| (v.abs() - 1.0).abs() < 1e-15));
        }
        let mean = c.iter().fold(Vec3::zeros(), |a, p| a + p) / 8.0;
        assert!(mean.norm() < 1e-15);
    }

    #[test]
    fn half_turn_keeps_corner_set() {
        let a = BBox3D::new(Vec3::new(0.3, -1.0, 2.0), Vec3::new(1.0, 2.0, 3.0), 0.0).unwrap();
        let b = BBox3D::new(a.centroid(), a.size(), PI).unwrap();
        let ca = sorted(a.corners().iter().map(|p| round(*p)).collect());
        let cb = sorted(b.corners().iter().map(|p| round(*p)).collect());
        assert_eq!(ca, cb);
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = BBox3D::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(2.0, 4.0, 6.0), FRAC_PI_2).unwrap();
        let (lo, hi) = b.aabb();
        assert!((lo.x - (1.0 - 3.0)).abs() < 1e-12 && (hi.x - 4.0).abs() < 1e-12);
        assert!((lo.z - 2.0).abs() < 1e-12 && (hi.z - 4.0).abs() < 1e-12);
        assert!((lo.y - 0.0).abs() < 1e-12 && (hi.y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_is_wrapped() {
        let b = BBox3D::new(Vec3::zeros(), Vec3::repeat(1.0), 3.0 * PI).unwrap();
        assert!((b.yaw() + PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), -PI);
        assert!(wrap_angle(-PI) == -PI);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_size() {
        assert!(BBox3D::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(BBox3D::new(Vec3::zeros(), Vec3::new(1.0, -1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn identity_camera() {
        let cam = CameraPose::default();
        let p = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(cam.world_to_camera(&p), p);
    }

    #[test]
    fn pitch_quarter_turn_by_hand() {
        // Rᵀ for pitch π/2 is [[1,0,0],[0,c,s],[0,-s,c]] with c=0, s=1
        let cam = CameraPose::new(FRAC_PI_2, 0.0);
        let q = cam.world_to_camera(&Vec3::new(0.0, 0.0, 1.0));
        assert!((q - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotation_is_proper() {
        for &(p, r) in &[(0.3, -0.2), (1.4, 2.0), (-0.7, 0.05)] {
            let m = CameraPose::new(p, r).rotation();
            assert!((m.transpose() * m - Mat3::identity()).norm() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            let x = Vec3::new(0.4, -1.0, 2.5);
            let cam = CameraPose::new(p, r);
            assert!((cam.camera_to_world(&cam.world_to_camera(&x)) - x).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        assert_eq!(project_point(&Vec3::new(0.0, 0.0, 1.0), &k).unwrap(), Vec2::zeros());
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let px = project_point(&Vec3::new(0.5, -0.25, 2.0), &k).unwrap();
        assert!((px - Vec2::new(445.0, 177.5)).norm() < 1e-12);
        assert!(matches!(
            project_point(&Vec3::new(0.0, 0.0, 0.0), &k),
            Err(Error::NonPositiveDepth { .. })
        ));
        assert!(project_point(&Vec3::new(0.0, 0.0, -1.0), &k).is_err());
    }

    #[test]
    fn centered_box_projects_symmetric() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let b = BBox3D::axis_aligned(Vec3::new(0.0, 0.0, 10.0), Vec3::repeat(1.0)).unwrap();
        let r = project_box_to_rect(&b, &CameraPose::default(), &k).unwrap();
        assert!((r.center() - Vec2::new(320.0, 240.0)).norm() < 1e-9);
        assert!(((r.xmax - 320.0) - (320.0 - r.xmin)).abs() < 1e-9);
    }

    #[test]
    fn translated_box_rect_moves_with_centroid() {
        // derived by projecting the corners of both boxes explicitly
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let cam = CameraPose::new(0.1, -0.05);
        let a = BBox3D::new(Vec3::new(0.2, -0.5, 6.0), Vec3::new(0.4, 0.6, 0.5), 0.3).unwrap();
        let d = Vec3::new(0.01, -0.02, 0.0);
        let b = a.with_centroid(a.centroid() + d).unwrap();
        let ra = project_box_to_rect(&a, &cam, &k).unwrap();
        let rb = project_box_to_rect(&b, &cam, &k).unwrap();
        let ca = project_point(&cam.world_to_camera(&a.centroid()), &k).unwrap();
        let cb = project_point(&cam.world_to_camera(&b.centroid()), &k).unwrap();
        let shift = cb - ca;
        let rshift = rb.center() - ra.center();
        assert!((shift - rshift).norm() < 0.05 * shift.norm());
    }

    #[test]
    fn rect_contains_projected_centroid() {
        let k = Intrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap();
        let cam = CameraPose::new(0.2, 0.03);
        let b = BBox3D::new(Vec3::new(-0.7, -1.0, 4.0), Vec3::new(1.5, 0.8, 0.9), -1.1).unwrap();
        let r = project_box_to_rect(&b, &cam, &k).unwrap();
        let c = project_point(&cam.world_to_camera(&b.centroid()), &k).unwrap();
        assert!(r.contains(&c));
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        let cam = CameraPose::new(0.3, -0.2);
        let (dp, dr) = cam.rotation_derivatives();
        let h = 1e-6;
        let fd_p = (CameraPose::new(0.3 + h, -0.2).rotation() - CameraPose::new(0.3 - h, -0.2).rotation()) / (2.0 * h);
        let fd_r = (CameraPose::new(0.3, -0.2 + h).rotation() - CameraPose::new(0.3, -0.2 - h).rotation()) / (2.0 * h);
        assert!((fd_p - dp).norm() < 1e-9);
        assert!((fd_r - dr).norm() < 1e-9);
        let fd_y = (yaw_matrix(0.7 + h) - yaw_matrix(0.7 - h)) / (2.0 * h);
        assert!((fd_y - yaw_matrix_derivative(0.7)).norm() < 1e-9);
    }
}
