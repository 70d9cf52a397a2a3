use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserConfig};
use super::normal_mat;
use crate::cond::{select_features, ModelContext};
use crate::error::{Error, Result};
use crate::grasp::Grasp;
use crate::nn::{AdamConfig, ExponentialLr, Mat, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerHyper {
    pub lr: f64,
    /// Per-epoch exponential decay of the learning rate.
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SamplerHyper {
    /// Full-scale values: batch 16384, 200 epochs, lr 1e-4 decayed by 0.9
    /// per epoch.
    pub fn full() -> Self {
        Self { lr: 1e-4, gamma: 0.9, batch_size: 16384, epochs: 200, seed: 0 }
    }

    /// Desk-scale values for toy datasets of a few thousand positives.
    pub fn desk() -> Self {
        Self { lr: 1e-3, gamma: 0.99, batch_size: 256, epochs: 200, seed: 0 }
    }
}

impl Default for SamplerHyper {
    fn default() -> Self {
        Self::desk()
    }
}

/// Successful grasps with the cloud each was observed on. `features` holds
/// one BPS encoding per cloud.
#[derive(Debug, Clone)]
pub struct SamplerDataset {
    pub features: Mat,
    pub examples: Vec<(usize, Grasp)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub steps: u64,
    pub hyper: SamplerHyper,
}

/// Fits the denoiser with the noise-prediction loss `‖ε̂ - ε‖²` (averaged
/// over components) at a uniformly drawn step per example.
pub fn train_sampler(
    data: &SamplerDataset,
    config: DenoiserConfig,
    context: ModelContext,
    hyper: &SamplerHyper,
) -> Result<(Denoiser, SamplerReport)> {
    if data.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = Denoiser::new(config, context, hyper.seed)?;
    let dim = model.dim();
    let targets: Vec<Vec<f64>> = data
        .examples
        .iter()
        .map(|(_, g)| model.context.stats.normalize(g).map(|n| n.values))
        .collect::<Result<_>>()?;
    if let Some(&(c, _)) = data.examples.iter().find(|(c, _)| *c >= data.features.nrows()) {
        return Err(Error::shape("train_sampler", format!("cloud index {c} out of range")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_5a3b_1e5d_0001);
    let lr_sched = ExponentialLr { base: hyper.lr, gamma: hyper.gamma };
    let steps = model.schedule.steps();
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut report = SamplerReport { loss_history: Vec::new(), lr_history: Vec::new(), steps: 0, hyper: hyper.clone() };

    for epoch in 0..hyper.epochs {
        let adam = AdamConfig::with_lr(lr_sched.lr(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let n = chunk.len();
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(1..=steps)).collect();
            let eps = normal_mat(n, dim, &mut rng);
            let mut g_t = Mat::zeros((n, dim));
            for (i, &ex) in chunk.iter().enumerate() {
                let row = model.schedule.q_sample(&targets[ex], t[i], eps.row(i).as_slice().expect("row"))?;
                g_t.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            }
            let cond = select_features(&data.features, chunk.iter().map(|&ex| data.examples[ex].0));

            let mut tape = Tape::new();
            let g = tape.leaf(g_t)?;
            let pred = model.forward(&mut tape, g, &t, &cond)?;
            let loss = tape.mse(pred, eps).map_err(|e| non_finite(epoch, step, e))?;
            let value = tape.value(loss)[(0, 0)];
            let grads = tape.backward(loss, Mat::ones((1, 1))).map_err(|e| non_finite(epoch, step, e))?;
            model.store.adam_step(&grads.param_grads(&model.store), &adam)?;
            total += value * n as f64;
        }
        report.loss_history.push(total / data.examples.len() as f64);
        report.lr_history.push(adam.lr);
    }
    report.steps = model.store.step();
    model.store.round_to_f32();
    model.trained = true;
    Ok((model, report))
}

fn non_finite(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteValue(detail) => Error::NonFiniteLoss { epoch, step, detail },
        other => other,
    }
}
