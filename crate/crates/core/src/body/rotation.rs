use nalgebra::Rotation3;

use crate::geometry::{Mat3, Vec3};

/// Below this angle the derivative uses a second-order series.
const SMALL_ANGLE: f64 = 1e-6;

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector.
pub fn axis_angle_matrix(v: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*v).into_inner()
}

/// `∂R/∂v_i` for `i = 0, 1, 2`.
pub fn axis_angle_derivatives(v: &Vec3) -> [Mat3; 3] {
    let theta2 = v.norm_squared();
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let vx = skew(v);
        return e.map(|ei| {
            let ex = skew(&ei);
            ex + (ex * vx + vx * ex) * 0.5
        });
    }
    let r = axis_angle_matrix(v);
    let vx = skew(v);
    let i_minus_r = Mat3::identity() - r;
    e.map(|ei| (vx * v.dot(&ei) + skew(&v.cross(&(i_minus_r * ei)))) * r / theta2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_matches_finite_differences() {
        for v in [
            Vec3::new(0.3, -0.7, 1.1),
            Vec3::new(1e-8, 0.0, -2e-8),
            Vec3::zeros(),
            Vec3::new(0.0, 3.0, 0.0),
        ] {
            let d = axis_angle_derivatives(&v);
            for i in 0..3 {
                let h = 1e-6;
                let mut vp = v;
                let mut vm = v;
                vp[i] += h;
                vm[i] -= h;
                let fd = (axis_angle_matrix(&vp) - axis_angle_matrix(&vm)) / (2.0 * h);
                assert!((fd - d[i]).norm() < 1e-8, "v={v:?} i={i}: {}", (fd - d[i]).norm());
            }
        }
    }
}
