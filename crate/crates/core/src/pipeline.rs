//! Glue between toy datasets, BPS features, training and benchmarking.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bps::{encode_many, BasisSet};
use crate::cond::{features_matrix, select_features, CondBatch, ModelContext};
use crate::error::{Error, Result};
use crate::evaluator::{EvaluatorDataset, EvaluatorModel};
use crate::grasp::Grasp;
use crate::nn::Mat;
use crate::refine::{refine_batch, ProposalConfig, RefineMethod};
use crate::sampler::{Denoiser, SamplerDataset};
use crate::toyworld::{diversity_entropy, oracle_label, random_grasp, Split, ToyDataset};

/// BPS features of every view. Row `scene * views_per_object + view` holds
/// view `view` of `dataset.scenes[scene]`.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub features: Mat,
    pub views_per_object: usize,
    /// Object id of each feature row.
    pub cloud_object: Vec<usize>,
}

impl ViewFeatures {
    pub fn row(&self, scene: usize, view: usize) -> usize {
        scene * self.views_per_object + view
    }
}

pub fn encode_views(data: &ToyDataset, basis: &BasisSet) -> Result<ViewFeatures> {
    let clouds: Vec<_> = data.scenes.iter().flat_map(|s| s.views.iter().map(|v| v.cloud().clone())).collect();
    let encodings = encode_many(&clouds, basis)?;
    Ok(ViewFeatures {
        features: features_matrix(&encodings)?,
        views_per_object: data.config.views_per_object,
        cloud_object: data.scenes.iter().flat_map(|s| std::iter::repeat_n(s.id, s.views.len())).collect(),
    })
}

/// Basis plus the gripper's normalization.
pub fn model_context(data: &ToyDataset, basis: BasisSet) -> ModelContext {
    ModelContext { basis, stats: data.config.gripper.normalization() }
}

/// Successful grasps of the objects in `split`.
pub fn sampler_dataset(data: &ToyDataset, feats: &ViewFeatures, split: Split) -> SamplerDataset {
    let examples = data
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == split)
        .flat_map(|(i, s)| s.grasps.iter().filter(|g| g.success).map(move |g| (feats.row(i, g.view), g.grasp.clone())))
        .collect();
    SamplerDataset { features: feats.features.clone(), examples }
}

/// Every labeled grasp of the objects in `split`.
pub fn evaluator_dataset(data: &ToyDataset, feats: &ViewFeatures, split: Split) -> EvaluatorDataset {
    let examples = data
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == split)
        .flat_map(|(i, s)| s.grasps.iter().map(move |g| (feats.row(i, g.view), g.grasp.clone(), g.success)))
        .collect();
    EvaluatorDataset { features: feats.features.clone(), cloud_object: feats.cloud_object.clone(), examples }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<RefineMethod>,
    /// Grasps drawn per test view.
    pub grasps_per_view: usize,
    pub lambda: f64,
    pub proposal: ProposalConfig,
    pub bins: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { methods: RefineMethod::ALL.to_vec(), grasps_per_view: 20, lambda: 0.5, proposal: ProposalConfig::default(), bins: 10 }
    }
}

/// One report row per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: RefineMethod,
    pub grasps: usize,
    pub success_rate: f64,
    pub mean_score: f64,
    pub diversity_mean: f64,
    pub diversity_std: f64,
    pub ms_per_grasp: f64,
}

/// Runs every method on every view of the test objects and scores the
/// results with the oracle of the matching view.
pub fn bench(
    data: &ToyDataset,
    feats: &ViewFeatures,
    denoiser: &Denoiser,
    evaluator: &EvaluatorModel,
    cfg: &BenchConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MethodResult>> {
    let views: Vec<(usize, usize)> = data
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Test)
        .flat_map(|(i, s)| (0..s.views.len()).map(move |v| (i, v)))
        .collect();
    if views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (lo, hi) = data.config.gripper.limits();
    cfg.methods
        .iter()
        .map(|&method| {
            let rows: Vec<usize> = views.iter().flat_map(|&(i, v)| std::iter::repeat_n(feats.row(i, v), cfg.grasps_per_view)).collect();
            let cond = select_rows(&feats.features, &rows)?;
            let start = Instant::now();
            let (grasps, report) = refine_batch(method, denoiser, evaluator, &cond, cfg.lambda, &cfg.proposal, rng)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let ok = oracle_labels(data, feats, &grasps, &rows).into_iter().filter(|&b| b).count();
            let (diversity_mean, diversity_std) = diversity_entropy(&grasps, &lo, &hi, cfg.bins)?;
            Ok(MethodResult {
                method,
                grasps: grasps.len(),
                success_rate: 100.0 * ok as f64 / grasps.len().max(1) as f64,
                mean_score: report.score_after,
                diversity_mean,
                diversity_std,
                ms_per_grasp: ms / grasps.len().max(1) as f64,
            })
        })
        .collect()
}

fn select_rows(features: &Mat, rows: &[usize]) -> Result<CondBatch> {
    if let Some(&r) = rows.iter().find(|&&r| r >= features.nrows()) {
        return Err(Error::InvalidArgument(format!("feature row {r} out of range")));
    }
    Ok(select_features(features, rows.iter().copied()))
}

/// Oracle labels of `grasps`, each checked against the view its row names.
pub fn oracle_labels(data: &ToyDataset, feats: &ViewFeatures, grasps: &[Grasp], rows: &[usize]) -> Vec<bool> {
    grasps
        .iter()
        .zip(rows)
        .map(|(g, &row)| {
            let (i, v) = (row / feats.views_per_object, row % feats.views_per_object);
            oracle_label(g, &data.scenes[i].views[v].object, &data.config.gripper, &data.config.oracle)
        })
        .collect()
}

/// Oracle success of uniform random grasps on the test views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub trials: usize,
    pub successes: usize,
}

impl Baseline {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }

    /// Measured rate, or the rule-of-three 95% upper bound `3 / trials`
    /// when no draw succeeded. A zero baseline would make any ratio against
    /// it vacuous.
    pub fn conservative_rate(&self) -> f64 {
        if self.successes == 0 {
            3.0 / self.trials.max(1) as f64
        } else {
            self.rate()
        }
    }
}

/// Draws `per_view` random grasps around each test view's object center.
pub fn random_baseline(data: &ToyDataset, per_view: usize, rng: &mut impl Rng) -> Result<Baseline> {
    let cfg = &data.config;
    let mut b = Baseline { trials: 0, successes: 0 };
    for scene in data.scenes.iter().filter(|s| s.split == Split::Test) {
        for view in &scene.views {
            for _ in 0..per_view {
                let g = random_grasp(&cfg.gripper, [0.0; 3], cfg.random_half_width, rng);
                b.trials += 1;
                b.successes += oracle_label(&g, &view.object, &cfg.gripper, &cfg.oracle) as usize;
            }
        }
    }
    if b.trials == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(b)
}

pub fn bench_markdown(rows: &[MethodResult]) -> String {
    let mut s = String::from(
        "| Method | Success (%) | Mean score | Diversity mean | Diversity std | Time (ms/grasp) |\n|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let name = if r.method == RefineMethod::Sampler { "sampler".to_string() } else { format!("sampler+{}", r.method) };
        s.push_str(&format!(
            "| {name} | {:.2} | {:.4} | {:.4} | {:.4} | {:.3} |\n",
            r.success_rate, r.mean_score, r.diversity_mean, r.diversity_std, r.ms_per_grasp
        ));
    }
    s
}
