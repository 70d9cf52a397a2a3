//! Primitive objects with analytic signed distance functions and
//! area-uniform surface sampling.

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::PointCloud;

pub const MIN_SIZE: f64 = 0.03;
pub const MAX_SIZE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Axis along the local z direction.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    fn sizes(&self) -> Vec<f64> {
        match *self {
            Shape::Sphere { radius } => vec![radius],
            Shape::Box { half_extents } => half_extents.to_vec(),
            Shape::Cylinder { radius, half_height } => vec![radius, half_height],
        }
    }

    fn sdf_local(&self, x: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { radius } => x.norm() - radius,
            Shape::Box { half_extents: h } => {
                let q = Vector3::new(x.x.abs() - h[0], x.y.abs() - h[1], x.z.abs() - h[2]);
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Shape::Cylinder { radius, half_height } => {
                let d0 = (x.x * x.x + x.y * x.y).sqrt() - radius;
                let d1 = x.z.abs() - half_height;
                d0.max(d1).min(0.0) + (d0.max(0.0).powi(2) + d1.max(0.0).powi(2)).sqrt()
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: h } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Shape::Cylinder { radius, half_height } => 2.0 * PI * radius * (2.0 * half_height) + 2.0 * PI * radius * radius,
        }
    }

    /// Uniform surface point and its outward normal, in the local frame.
    fn sample_local(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Shape::Sphere { radius } => {
                let n = random_unit(rng);
                (n * radius, n)
            }
            Shape::Box { half_extents: h } => {
                // faces normal to axis i have area 4 h_j h_k
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = Vector3::zeros();
                for i in 0..3 {
                    p[i] = if i == axis { sign * h[i] } else { rng.random_range(-h[i]..=h[i]) };
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (p, n)
            }
            Shape::Cylinder { radius, half_height } => {
                let side = 2.0 * PI * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                if rng.random::<f64>() * (side + 2.0 * cap) < side {
                    let th = rng.random_range(0.0..2.0 * PI);
                    let z = rng.random_range(-half_height..=half_height);
                    let n = Vector3::new(th.cos(), th.sin(), 0.0);
                    (Vector3::new(radius * n.x, radius * n.y, z), n)
                } else {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let rr = radius * rng.random::<f64>().sqrt();
                    let th = rng.random_range(0.0..2.0 * PI);
                    (Vector3::new(rr * th.cos(), rr * th.sin(), sign * half_height), Vector3::new(0.0, 0.0, sign))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyObject {
    pub shape: Shape,
    /// Local-to-world rotation.
    pub rotation: Matrix3<f64>,
    pub translation: [f64; 3],
}

/// Surface samples with outward normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCloud {
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

impl SurfaceCloud {
    pub fn to_point_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.points.clone())
    }
}

impl ToyObject {
    pub fn new(shape: Shape, rotation: Matrix3<f64>, translation: [f64; 3]) -> Result<Self> {
        if shape.sizes().iter().any(|s| !(MIN_SIZE..=MAX_SIZE).contains(s)) {
            return Err(Error::InvalidArgument(format!("object sizes {:?} outside [{MIN_SIZE}, {MAX_SIZE}]", shape.sizes())));
        }
        Ok(Self { shape, rotation, translation })
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn translated(&self, v: [f64; 3]) -> Self {
        let mut o = self.clone();
        for i in 0..3 {
            o.translation[i] += v[i];
        }
        o
    }

    pub fn sdf(&self, x: &Vector3<f64>) -> f64 {
        self.shape.sdf_local(&(self.rotation.transpose() * (x - self.center())))
    }

    pub fn sample_surface(&self, count: usize, rng: &mut impl Rng) -> SurfaceCloud {
        let c = self.center();
        let (points, normals) = (0..count)
            .map(|_| {
                let (p, n) = self.shape.sample_local(rng);
                let p = self.rotation * p + c;
                let n = self.rotation * n;
                ([p.x, p.y, p.z], [n.x, n.y, n.z])
            })
            .unzip();
        SurfaceCloud { points, normals }
    }

    /// Random primitive of a random kind with sizes in `[lo, hi]`, a uniform
    /// random orientation and its center at the origin.
    pub fn random(lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        let kind = rng.random_range(0..3);
        let mut size = || rng.random_range(lo..=hi);
        let shape = match kind {
            0 => Shape::Sphere { radius: size() },
            1 => Shape::Box { half_extents: [size(), size(), size()] },
            _ => Shape::Cylinder { radius: size(), half_height: size() },
        };
        Self::new(shape, random_rotation(rng), [0.0; 3])
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniformly distributed rotation via a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let v: Vector4<f64> = Vector4::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-12 {
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(v));
            return q.to_rotation_matrix().into_inner();
        }
    }
}
