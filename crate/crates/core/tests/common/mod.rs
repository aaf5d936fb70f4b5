//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use vine_teleop::kinematics::{Pose, Segment};

/// Body-frame angular velocity per unit length of a bent segment.
fn omega(kappa: f64, phi: f64) -> Matrix3<f64> {
    let w = Vector3::new(-phi.sin(), phi.cos(), 0.0) * kappa;
    w.cross_matrix()
}

/// RK4 integration of `p' = R e_z`, `R' = R [w]x` over `length` in `steps`
/// equal steps, starting from `(p, r)`.
pub fn integrate_arc(
    p: Vector3<f64>,
    r: Matrix3<f64>,
    kappa: f64,
    phi: f64,
    length: f64,
    steps: usize,
) -> (Vector3<f64>, Matrix3<f64>) {
    let w = omega(kappa, phi);
    let h = length / steps as f64;
    let ez = Vector3::z();
    let (mut p, mut r) = (p, r);
    for _ in 0..steps {
        let k1r = r * w;
        let k1p = r * ez;
        let r2 = r + k1r * (h / 2.0);
        let k2r = r2 * w;
        let k2p = r2 * ez;
        let r3 = r + k2r * (h / 2.0);
        let k3r = r3 * w;
        let k3p = r3 * ez;
        let r4 = r + k3r * h;
        let k4r = r4 * w;
        let k4p = r4 * ez;
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
    }
    (p, r)
}

/// Oracle pose at arc length `s` along a chain of segments from `base`.
pub fn integrate_chain(base: &Pose, segments: &[Segment], s: f64, steps_per_meter: f64) -> Pose {
    let mut p = base.position;
    let mut r = *base.orientation.to_rotation_matrix().matrix();
    let mut remaining = s;
    for seg in segments {
        if remaining <= 0.0 {
            break;
        }
        let l = seg.length.min(remaining);
        let steps = ((l * steps_per_meter).ceil() as usize).max(16);
        (p, r) = integrate_arc(p, r, seg.kappa, seg.phi, l, steps);
        remaining -= l;
    }
    Pose::new(p, to_unit(&r))
}

pub fn to_unit(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(r))
}

/// Position and orientation distance between two poses.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    ((a.position - b.position).norm(), a.orientation.angle_to(&b.orientation))
}
