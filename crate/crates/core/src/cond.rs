//! Object conditioning shared by the denoiser and the evaluator.

use serde::{Deserialize, Serialize};

use crate::bps::{BasisSet, BpsEncoding};
use crate::error::{Error, Result};
use crate::grasp::NormalizationStats;
use crate::nn::Mat;

/// BPS features for a batch of grasps: one row per distinct cloud and, for
/// each grasp, the row it is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct CondBatch {
    pub features: Mat,
    pub index: Vec<usize>,
}

impl CondBatch {
    pub fn new(features: Mat, index: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = index.iter().find(|&&i| i >= features.nrows()) {
            return Err(Error::shape("cond", format!("index {bad} with {} feature rows", features.nrows())));
        }
        Ok(Self { features, index })
    }

    /// `n` grasps, all conditioned on one encoding.
    pub fn repeat(encoding: &BpsEncoding, n: usize) -> Self {
        let features = Mat::from_shape_vec((1, encoding.distances.len()), encoding.distances.clone()).expect("shape");
        Self { features, index: vec![0; n] }
    }

    pub fn from_encodings(encodings: &[BpsEncoding], index: Vec<usize>) -> Result<Self> {
        Self::new(features_matrix(encodings)?, index)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Keeps only the feature rows the selected grasps refer to.
    pub fn select(&self, rows: &[usize]) -> Self {
        select_features(&self.features, rows.iter().map(|&r| self.index[r]))
    }
}

/// Builds a compact batch from global cloud indices, copying each referenced
/// feature row once.
pub fn select_features(all: &Mat, clouds: impl Iterator<Item = usize>) -> CondBatch {
    let mut local = std::collections::HashMap::new();
    let mut order = Vec::new();
    let index = clouds
        .map(|c| {
            *local.entry(c).or_insert_with(|| {
                order.push(c);
                order.len() - 1
            })
        })
        .collect();
    CondBatch { features: all.select(ndarray::Axis(0), &order), index }
}

pub fn features_matrix(encodings: &[BpsEncoding]) -> Result<Mat> {
    let Some(first) = encodings.first() else {
        return Ok(Mat::zeros((0, 0)));
    };
    let dim = first.distances.len();
    if encodings.iter().any(|e| e.distances.len() != dim) {
        return Err(Error::shape("features", "encodings differ in length"));
    }
    let data = encodings.iter().flat_map(|e| e.distances.iter().copied()).collect();
    Ok(Mat::from_shape_vec((encodings.len(), dim), data).expect("shape"))
}

/// Preprocessing a trained model depends on: the basis its features were
/// computed with and the grasp normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContext {
    pub basis: BasisSet,
    pub stats: NormalizationStats,
}

impl ModelContext {
    pub fn ensure_compatible(&self, other: &ModelContext) -> Result<()> {
        if self.basis != other.basis {
            return Err(Error::ModelMismatch("basis set"));
        }
        if self.stats != other.stats {
            return Err(Error::ModelMismatch("normalization stats"));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.stats.dof()
    }

    pub fn dim(&self) -> usize {
        self.stats.dim()
    }
}

/// Stacks grasp vectors into a `[n, dim]` matrix.
pub fn rows_to_mat(rows: &[Vec<f64>], dim: usize) -> Result<Mat> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
    }
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Mat::from_shape_vec((rows.len(), dim), data).expect("shape"))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
