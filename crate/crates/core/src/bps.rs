//! Basis point set encoding.
//!
//! A fixed random set of basis points is sampled once inside a ball. A cloud
//! is summarized by the distance from every basis point to its nearest cloud
//! point, giving a fixed-length, permutation-invariant feature vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::PointCloud;

/// Basis size used by the desk-scale configuration.
pub const DEFAULT_BASIS_SIZE: usize = 1024;
/// Basis size of the full-scale configuration.
pub const FULL_BASIS_SIZE: usize = 4096;
pub const DEFAULT_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub basis: Vec<[f64; 3]>,
    pub seed: u64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpsEncoding {
    pub distances: Vec<f64>,
}

impl BasisSet {
    /// Draws `count` points uniformly from the ball of the given radius.
    pub fn sample(count: usize, radius: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("basis size must be at least 1".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("basis radius must be positive, got {radius}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
        let basis = (0..count)
            .map(|_| {
                let d: [f64; 3] = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(f64::MIN_POSITIVE);
                // radius ~ R * U^(1/3) gives a uniform density in the ball
                let s = radius * unit.sample(&mut rng).cbrt() / n;
                [d[0] * s, d[1] * s, d[2] * s]
            })
            .collect();
        Ok(Self { basis, seed, radius })
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<BpsEncoding> {
        encode(cloud, self)
    }
}

pub fn encode(cloud: &PointCloud, basis: &BasisSet) -> Result<BpsEncoding> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::build(cloud.points());
    let distances = basis.basis.iter().map(|b| tree.nearest_sq(b).sqrt()).collect();
    Ok(BpsEncoding { distances })
}

/// Encodes many clouds against one basis, in parallel, preserving order.
pub fn encode_many(clouds: &[PointCloud], basis: &BasisSet) -> Result<Vec<BpsEncoding>> {
    clouds.par_iter().map(|c| encode(c, basis)).collect()
}

/// O(B·N) reference encoder.
pub fn encode_brute_force(cloud: &PointCloud, basis: &BasisSet) -> Result<BpsEncoding> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let distances = basis
        .basis
        .iter()
        .map(|b| cloud.points().iter().map(|p| dist_sq(p, b)).fold(f64::INFINITY, f64::min).sqrt())
        .collect();
    Ok(BpsEncoding { distances })
}

#[inline]
fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Static 3-d tree stored as an implicit balanced layout over a permuted
/// copy of the points.
struct KdTree {
    points: Vec<[f64; 3]>,
}

impl KdTree {
    fn build(points: &[[f64; 3]]) -> Self {
        let mut points = points.to_vec();
        Self::partition(&mut points, 0);
        Self { points }
    }

    fn partition(pts: &mut [[f64; 3]], depth: usize) {
        if pts.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        let (left, right) = pts.split_at_mut(mid);
        Self::partition(left, depth + 1);
        Self::partition(&mut right[1..], depth + 1);
    }

    fn nearest_sq(&self, query: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        Self::search(&self.points, query, 0, &mut best);
        best
    }

    fn search(pts: &[[f64; 3]], query: &[f64; 3], depth: usize, best: &mut f64) {
        if pts.is_empty() {
            return;
        }
        let mid = pts.len() / 2;
        let node = &pts[mid];
        let d = dist_sq(node, query);
        if d < *best {
            *best = d;
        }
        if pts.len() == 1 {
            return;
        }
        let axis = depth % 3;
        let delta = query[axis] - node[axis];
        let (near, far) = if delta < 0.0 { (&pts[..mid], &pts[mid + 1..]) } else { (&pts[mid + 1..], &pts[..mid]) };
        Self::search(near, query, depth + 1, best);
        if delta * delta < *best {
            Self::search(far, query, depth + 1, best);
        }
    }
}
