//! Synthetic rigid-head data with known ground truth.
//!
//! Each sample rotates the fixed face template by `R = Rz(roll)·Ry(yaw)·Rx(pitch)`
//! (angles in degrees) and adds isotropic Gaussian noise whose standard
//! deviation is `noise_std` times the template's largest axis range. Because
//! the pose that generated a sample is stored with it, this data gives the
//! whole pipeline an oracle that real datasets cannot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{PoseAngles, RawLandmarkSet};
use crate::error::{Error, Result};
use crate::template::FACE_TEMPLATE;

pub type Mat3 = [[f64; 3]; 3];

/// Rotation composed as `Rz(roll)·Ry(yaw)·Rx(pitch)`, angles in degrees.
pub fn rotation_matrix(pose: &PoseAngles) -> Mat3 {
    let (p, y, r) = (
        pose.pitch.to_radians(),
        pose.yaw.to_radians(),
        pose.roll.to_radians(),
    );
    let (sp, cp) = p.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sr, cr) = r.sin_cos();
    [
        [cy * cr, sp * sy * cr - cp * sr, cp * sy * cr + sp * sr],
        [cy * sr, sp * sy * sr + cp * cr, cp * sy * sr - sp * cr],
        [-sy, sp * cy, cp * cy],
    ]
}

/// Recovers degrees from a `Rz(roll)·Ry(yaw)·Rx(pitch)` rotation.
/// Valid away from the gimbal lock at |yaw| = 90°.
pub fn euler_from_rotation(r: &Mat3) -> PoseAngles {
    let yaw = (-r[2][0]).clamp(-1.0, 1.0).asin();
    let pitch = r[2][1].atan2(r[2][2]);
    let roll = r[1][0].atan2(r[0][0]);
    PoseAngles::new(yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
}

pub fn apply_rotation(r: &Mat3, p: &[f64; 3]) -> [f64; 3] {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

pub fn transpose(r: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = r[j][i];
        }
    }
    t
}

/// Largest per-axis coordinate range of the template; the noise unit.
pub fn template_extent() -> f64 {
    let mut extent: f64 = 0.0;
    for axis in 0..3 {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for p in &FACE_TEMPLATE {
            mn = mn.min(p[axis]);
            mx = mx.max(p[axis]);
        }
        extent = extent.max(mx - mn);
    }
    extent
}

/// Draws `n` rotated-template samples with uniform angles in
/// `[-max_angle, max_angle]` degrees per axis.
pub fn generate_synthetic(
    n: usize,
    max_angle: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<RawLandmarkSet>> {
    if !(max_angle > 0.0 && max_angle <= 60.0) {
        return Err(Error::Precondition(format!(
            "max_angle must be in (0, 60] degrees, got {max_angle}"
        )));
    }
    if noise_std < 0.0 {
        return Err(Error::Precondition(format!(
            "noise_std must be nonnegative, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = noise_std * template_extent();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pose = PoseAngles::new(
            rng.gen_range(-max_angle..=max_angle),
            rng.gen_range(-max_angle..=max_angle),
            rng.gen_range(-max_angle..=max_angle),
        );
        let rot = rotation_matrix(&pose);
        let points: Vec<[f64; 3]> = FACE_TEMPLATE
            .iter()
            .map(|p| {
                let mut q = apply_rotation(&rot, p);
                if sigma > 0.0 {
                    for v in &mut q {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += sigma * z;
                    }
                }
                q
            })
            .collect();
        out.push(RawLandmarkSet {
            sample_id: format!("synth-{i:06}"),
            points,
            pose,
            image_ref: None,
            image: None,
        });
    }
    Ok(out)
}
