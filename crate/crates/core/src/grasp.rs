//! Grasp representation shared by every stage of the pipeline.
//!
//! A grasp is a palm position `p`, a continuous 6-d rotation `r` (the first
//! two columns of the palm rotation matrix, not necessarily normalized) and a
//! joint vector `q`. Networks see the flattened `[p, r, q]` vector after
//! [`NormalizationStats::normalize`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a 6-d rotation column is considered degenerate.
pub const ROT6D_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub p: [f64; 3],
    pub r: [f64; 6],
    pub q: Vec<f64>,
}

impl Grasp {
    pub fn new(p: [f64; 3], r: [f64; 6], q: Vec<f64>) -> Self {
        Self { p, r, q }
    }

    pub fn from_pose(p: Vector3<f64>, rot: &Matrix3<f64>, q: Vec<f64>) -> Self {
        Self { p: [p.x, p.y, p.z], r: matrix_to_rot6d_unchecked(rot), q }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn dim(&self) -> usize {
        9 + self.q.len()
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.p)
    }

    pub fn rotation(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(&self.r)
    }

    /// Flattened `[p, r, q]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.p);
        out.extend_from_slice(&self.r);
        out.extend_from_slice(&self.q);
        out
    }

    pub fn unflatten(v: &[f64]) -> Result<Self> {
        if v.len() < 10 {
            return Err(Error::DimensionMismatch { expected: 10, got: v.len() });
        }
        let mut p = [0.0; 3];
        let mut r = [0.0; 6];
        p.copy_from_slice(&v[..3]);
        r.copy_from_slice(&v[3..9]);
        Ok(Self { p, r, q: v[9..].to_vec() })
    }
}

/// Gram-Schmidt map from the 6-d representation to a rotation matrix whose
/// columns are `b1`, `b2` and `b1 x b2`.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > ROT6D_EPS) {
        return Err(Error::DegenerateRotation("first column has vanishing norm"));
    }
    let b1 = a1 / n1;
    let resid = a2 - b1 * b1.dot(&a2);
    let n2 = resid.norm();
    if !(n2 > ROT6D_EPS) {
        return Err(Error::DegenerateRotation("second column is parallel to the first"));
    }
    let b2 = resid / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns of `rot`, after checking `RᵀR = I` within 1e-4.
pub fn matrix_to_rot6d(rot: &Matrix3<f64>) -> Result<[f64; 6]> {
    let resid = (rot.transpose() * rot - Matrix3::identity()).abs().max();
    if !(resid <= 1e-4) {
        return Err(Error::NotARotation(resid));
    }
    Ok(matrix_to_rot6d_unchecked(rot))
}

fn matrix_to_rot6d_unchecked(rot: &Matrix3<f64>) -> [f64; 6] {
    [rot[(0, 0)], rot[(1, 0)], rot[(2, 0)], rot[(0, 1)], rot[(1, 1)], rot[(2, 1)]]
}

/// Affine maps between metric grasps and the network's model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub p_center: [f64; 3],
    pub p_scale: f64,
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Set when some joint lay outside `[q_lo, q_hi]` and was clamped.
    pub clamped: bool,
}

impl NormalizationStats {
    pub fn new(p_center: [f64; 3], p_scale: f64, q_lo: Vec<f64>, q_hi: Vec<f64>) -> Result<Self> {
        let stats = Self { p_center, p_scale, q_lo, q_hi };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_scale > 0.0 && self.p_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("p_scale must be positive, got {}", self.p_scale)));
        }
        if self.q_lo.len() != self.q_hi.len() || self.q_lo.is_empty() {
            return Err(Error::InvalidArgument("joint limit vectors must be nonempty and equal length".into()));
        }
        if let Some(j) = (0..self.q_lo.len()).find(|&j| !(self.q_lo[j] < self.q_hi[j])) {
            return Err(Error::InvalidArgument(format!("joint {j}: q_lo must be below q_hi")));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.q_lo.len()
    }

    pub fn dim(&self) -> usize {
        9 + self.dof()
    }

    pub fn normalize(&self, g: &Grasp) -> Result<Normalized> {
        if g.dof() != self.dof() {
            return Err(Error::DimensionMismatch { expected: self.dof(), got: g.dof() });
        }
        let mut values = Vec::with_capacity(self.dim());
        for i in 0..3 {
            values.push((g.p[i] - self.p_center[i]) / self.p_scale);
        }
        values.extend_from_slice(&g.r);
        let mut clamped = false;
        for (j, &q) in g.q.iter().enumerate() {
            let (lo, hi) = (self.q_lo[j], self.q_hi[j]);
            let qc = q.clamp(lo, hi);
            clamped |= qc != q;
            values.push(2.0 * (qc - lo) / (hi - lo) - 1.0);
        }
        Ok(Normalized { values, clamped })
    }

    /// Inverse of [`normalize`](Self::normalize). Joints outside `[-1, 1]` in
    /// model space are clamped to the limits.
    pub fn denormalize(&self, v: &[f64]) -> Result<Grasp> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = v[i] * self.p_scale + self.p_center[i];
        }
        let mut r = [0.0; 6];
        r.copy_from_slice(&v[3..9]);
        let q = v[9..]
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let (lo, hi) = (self.q_lo[j], self.q_hi[j]);
                (lo + (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)).clamp(lo, hi)
            })
            .collect();
        Ok(Grasp { p, r, q })
    }
}

/// `N x 3` cloud of finite points, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteValue("point cloud coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        c.map(|x| x / self.points.len() as f64)
    }

    pub fn translated(&self, v: [f64; 3]) -> Self {
        let points = self.points.iter().map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]]).collect();
        Self { points }
    }

    /// Shift so the centroid sits at the origin; returns the shift applied.
    pub fn centered(&self) -> (Self, [f64; 3]) {
        let c = self.centroid();
        let shift = [-c[0], -c[1], -c[2]];
        (self.translated(shift), shift)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.points.len() * 48);
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::format("point cloud", format!("line {}: {e}", lineno + 1)))?;
            if coords.len() != 3 {
                return Err(Error::format("point cloud", format!("line {}: expected 3 values", lineno + 1)));
            }
            points.push([coords[0], coords[1], coords[2]]);
        }
        Self::new(points)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(Error::io(path))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::io(path))?;
        Ok(())
    }
}

pub fn grasps_to_json(grasps: &[Grasp]) -> Result<String> {
    Ok(serde_json::to_string_pretty(grasps)?)
}

pub fn grasps_from_json(text: &str) -> Result<Vec<Grasp>> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_grasps(path: &Path) -> Result<Vec<Grasp>> {
    grasps_from_json(&std::fs::read_to_string(path).map_err(Error::io(path))?)
}

pub fn write_grasps(path: &Path, grasps: &[Grasp]) -> Result<()> {
    std::fs::write(path, grasps_to_json(grasps)?).map_err(Error::io(path))?;
    Ok(())
}
