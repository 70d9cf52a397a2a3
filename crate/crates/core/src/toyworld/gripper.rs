use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::{Grasp, NormalizationStats};

/// Position scale of the toy normalization, in meters.
pub const TOY_P_SCALE: f64 = 0.1;

/// Palm with fingers spaced evenly on a circle. Each finger is a planar chain
/// of revolute joints that curl toward the palm axis; with all joints at zero
/// every finger points straight along the palm approach axis (local +z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGripper {
    pub fingers: usize,
    /// Finger base distance from the palm center.
    pub base_radius: f64,
    /// Link lengths from base to tip, shared by all fingers.
    pub links: Vec<f64>,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl Default for ToyGripper {
    fn default() -> Self {
        Self { fingers: 4, base_radius: 0.035, links: vec![0.035, 0.03, 0.025, 0.02], q_lo: 0.0, q_hi: FRAC_PI_2 }
    }
}

impl ToyGripper {
    pub fn joints_per_finger(&self) -> usize {
        self.links.len()
    }

    pub fn dof(&self) -> usize {
        self.fingers * self.links.len()
    }

    pub fn finger_length(&self) -> f64 {
        self.links.iter().sum()
    }

    pub fn limits(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.q_lo; self.dof()], vec![self.q_hi; self.dof()])
    }

    /// Normalization for object-centered views: palm offsets of about a
    /// decimeter scaled to O(1), joints mapped from their limits to `[-1, 1]`.
    pub fn normalization(&self) -> NormalizationStats {
        let (lo, hi) = self.limits();
        NormalizationStats::new([0.0; 3], TOY_P_SCALE, lo, hi).expect("gripper limits are valid")
    }

    /// Unit direction from the palm center to finger `i`, in the palm frame.
    pub fn finger_direction(&self, i: usize) -> Vector3<f64> {
        let a = std::f64::consts::TAU * i as f64 / self.fingers as f64;
        Vector3::new(a.cos(), a.sin(), 0.0)
    }

    pub fn check_joints(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        for (joint, &value) in q.iter().enumerate() {
            if !(self.q_lo..=self.q_hi).contains(&value) {
                return Err(Error::JointLimit { joint, value, lo: self.q_lo, hi: self.q_hi });
            }
        }
        Ok(())
    }

    /// Tip of finger `i` in the palm frame.
    pub fn finger_tip_local(&self, i: usize, q: &[f64]) -> Vector3<f64> {
        let u = self.finger_direction(i);
        let z = Vector3::z();
        let mut x = u * self.base_radius;
        let mut theta = 0.0;
        for (l, angle) in self.links.iter().zip(q) {
            theta += angle;
            x += (z * theta.cos() - u * theta.sin()) * *l;
        }
        x
    }

    /// Fingertips in the world frame for a palm at `p` with orientation `rot`.
    pub fn tips_with_pose(&self, p: &Vector3<f64>, rot: &Matrix3<f64>, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.check_joints(q)?;
        let j = self.joints_per_finger();
        Ok((0..self.fingers).map(|i| p + rot * self.finger_tip_local(i, &q[i * j..(i + 1) * j])).collect())
    }
}

/// One fingertip per finger, in the world frame.
pub fn fingertip_fk(g: &Grasp, gripper: &ToyGripper) -> Result<Vec<Vector3<f64>>> {
    gripper.check_joints(&g.q)?;
    gripper.tips_with_pose(&g.position(), &g.rotation()?, &g.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::object::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn total_finger_length_is_bounded() {
        let g = ToyGripper::default();
        assert_eq!(g.dof(), 16);
        assert!(g.finger_length() <= 0.12);
    }

    #[test]
    fn straight_fingers_point_along_the_approach_axis() {
        let gripper = ToyGripper::default();
        let g = Grasp::new([0.1, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![0.0; 16]);
        let tips = fingertip_fk(&g, &gripper).unwrap();
        let expected = [[0.135, 0.0, 0.11], [0.1, 0.035, 0.11], [0.065, 0.0, 0.11], [0.1, -0.035, 0.11]];
        for (t, e) in tips.iter().zip(expected) {
            assert!((t - Vector3::from(e)).norm() < 1e-12, "{t:?} vs {e:?}");
        }
    }

    #[test]
    fn full_curl_of_first_joint() {
        // first joint at 90 degrees folds the whole finger inward along -u
        let gripper = ToyGripper::default();
        let mut q = vec![0.0; 16];
        q[0] = FRAC_PI_2;
        let tip = gripper.finger_tip_local(0, &q[..4]);
        assert!((tip - Vector3::new(0.035 - 0.11, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn joint_limits_are_enforced() {
        let gripper = ToyGripper::default();
        let mut g = Grasp::new([0.0; 3], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![0.0; 16]);
        g.q[5] = -0.01;
        assert!(matches!(fingertip_fk(&g, &gripper), Err(Error::JointLimit { joint: 5, .. })));
        g.q = vec![0.0; 15];
        assert!(matches!(fingertip_fk(&g, &gripper), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matches_stepwise_transform_chain() {
        // homogeneous transforms: rotate about the finger's bending axis, then
        // translate along the link
        let gripper = ToyGripper::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let rot = random_rotation(&mut rng);
            let p = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let q: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..FRAC_PI_2)).collect();
            let g = Grasp::from_pose(p, &rot, q.clone());
            let tips = fingertip_fk(&g, &gripper).unwrap();
            for (i, tip) in tips.iter().enumerate() {
                let u = gripper.finger_direction(i);
                let bend_axis = u.cross(&Vector3::z());
                let mut frame = Matrix3::identity();
                let mut pos = u * gripper.base_radius;
                for j in 0..4 {
                    let step = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(bend_axis), q[i * 4 + j]);
                    frame *= step.matrix();
                    pos += frame * Vector3::z() * gripper.links[j];
                }
                let world = p + rot * pos;
                assert!((world - tip).norm() < 1e-12);
            }
        }
    }
}
