use rand::Rng;

use super::gripper::ToyGripper;
use super::object::{random_rotation, ToyObject};
use super::oracle::{oracle_label, OracleConfig};
use crate::error::{Error, Result};
use crate::grasp::Grasp;

/// Percentage of grasps the oracle labels successful.
pub fn success_rate(grasps: &[Grasp], object: &ToyObject, gripper: &ToyGripper, cfg: &OracleConfig) -> Result<f64> {
    if grasps.is_empty() {
        return Err(Error::EmptyList);
    }
    let ok = grasps.iter().filter(|g| oracle_label(g, object, gripper, cfg)).count();
    Ok(100.0 * ok as f64 / grasps.len() as f64)
}

/// Mean and population standard deviation across joints of the Shannon
/// entropy (nats) of each joint's histogram over `[lo, hi]`.
pub fn diversity_entropy(grasps: &[Grasp], lo: &[f64], hi: &[f64], bins: usize) -> Result<(f64, f64)> {
    if grasps.len() < 2 {
        return Err(Error::TooFewGrasps(grasps.len()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let dof = lo.len();
    if hi.len() != dof {
        return Err(Error::DimensionMismatch { expected: dof, got: hi.len() });
    }
    if let Some(g) = grasps.iter().find(|g| g.dof() != dof) {
        return Err(Error::DimensionMismatch { expected: dof, got: g.dof() });
    }
    let n = grasps.len() as f64;
    let entropies: Vec<f64> = (0..dof)
        .map(|j| {
            let mut counts = vec![0usize; bins];
            for g in grasps {
                let u = (g.q[j] - lo[j]) / (hi[j] - lo[j]);
                let b = ((u * bins as f64).floor().max(0.0) as usize).min(bins - 1);
                counts[b] += 1;
            }
            counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).map(|p| p * (1.0 / p).ln()).sum()
        })
        .collect();
    let mean = entropies.iter().sum::<f64>() / dof as f64;
    let var = entropies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / dof as f64;
    Ok((mean, var.sqrt()))
}

/// Uniform palm position in a cube of half-width `half_width` around
/// `center`, uniform rotation and uniform joints.
pub fn random_grasp(gripper: &ToyGripper, center: [f64; 3], half_width: f64, rng: &mut impl Rng) -> Grasp {
    let p = center.map(|c| c + rng.random_range(-half_width..=half_width));
    let rot = random_rotation(rng);
    let q = (0..gripper.dof()).map(|_| rng.random_range(gripper.q_lo..=gripper.q_hi)).collect();
    Grasp::from_pose(p.into(), &rot, q)
}
