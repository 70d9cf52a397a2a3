use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvaluatorConfig, EvaluatorModel};
use crate::cond::{select_features, ModelContext};
use crate::error::{Error, Result};
use crate::grasp::Grasp;
use crate::nn::{AdamConfig, Mat, PlateauLr, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before the rate is halved.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Fraction of objects held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl EvaluatorHyper {
    /// Full-scale values: batch 25600, 20 epochs, lr 1e-4 with a plateau
    /// scheduler.
    pub fn full() -> Self {
        Self { lr: 1e-4, batch_size: 25_600, epochs: 20, plateau_patience: 3, plateau_factor: 0.5, val_fraction: 0.1, seed: 0 }
    }

    pub fn desk() -> Self {
        Self { lr: 1e-3, batch_size: 256, epochs: 30, plateau_patience: 3, plateau_factor: 0.5, val_fraction: 0.1, seed: 0 }
    }
}

impl Default for EvaluatorHyper {
    fn default() -> Self {
        Self::desk()
    }
}

/// Labeled grasps. `features` has one row per cloud and `cloud_object` maps a
/// cloud to the object it was rendered from.
#[derive(Debug, Clone)]
pub struct EvaluatorDataset {
    pub features: Mat,
    pub cloud_object: Vec<usize>,
    pub examples: Vec<(usize, Grasp, bool)>,
}

impl EvaluatorDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.2).count()
    }

    /// Examples whose object satisfies `keep`.
    pub fn filter_objects(&self, keep: impl Fn(usize) -> bool) -> Self {
        let examples = self.examples.iter().filter(|(c, _, _)| keep(self.cloud_object[*c])).cloned().collect();
        Self { features: self.features.clone(), cloud_object: self.cloud_object.clone(), examples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub val_objects: Vec<usize>,
    pub hyper: EvaluatorHyper,
}

/// Trains with binary cross-entropy. Validation objects are drawn by object
/// identity, so none of their grasps are seen during training.
pub fn train_evaluator(
    data: &EvaluatorDataset,
    config: EvaluatorConfig,
    context: ModelContext,
    hyper: &EvaluatorHyper,
) -> Result<(EvaluatorModel, EvaluatorReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pos = data.positives();
    if pos == 0 || pos == data.len() {
        return Err(Error::SingleClassDataset);
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = EvaluatorModel::new(config, context, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0xe7a1_0a70_2bce_0002);

    let mut objects: Vec<usize> = data.examples.iter().map(|(c, _, _)| data.cloud_object[*c]).collect();
    objects.sort_unstable();
    objects.dedup();
    objects.shuffle(&mut rng);
    let n_val = if objects.len() > 1 { ((objects.len() as f64 * hyper.val_fraction).round() as usize).min(objects.len() - 1) } else { 0 };
    let mut val_objects = objects[..n_val].to_vec();
    val_objects.sort_unstable();

    let inputs = model.normalize_all(&data.examples.iter().map(|e| e.1.clone()).collect::<Vec<_>>())?;
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (i, (c, _, _)) in data.examples.iter().enumerate() {
        if val_objects.binary_search(&data.cloud_object[*c]).is_ok() {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let mut plateau = PlateauLr::new(hyper.lr, hyper.plateau_factor, hyper.plateau_patience);
    let mut report = EvaluatorReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        lr_history: Vec::new(),
        val_objects,
        hyper: hyper.clone(),
    };
    for epoch in 0..hyper.epochs {
        let adam = AdamConfig::with_lr(plateau.lr());
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in train_idx.chunks(hyper.batch_size).enumerate() {
            let g = inputs.select(ndarray::Axis(0), chunk);
            let labels: Vec<f64> = chunk.iter().map(|&i| if data.examples[i].2 { 1.0 } else { 0.0 }).collect();
            let cond = select_features(&data.features, chunk.iter().map(|&i| data.examples[i].0));
            let mut tape = Tape::new();
            let gv = tape.leaf(g)?;
            let z = model.forward(&mut tape, gv, &cond)?;
            let loss = tape.bce(z, &labels).map_err(|e| non_finite(epoch, step, e))?;
            total += tape.value(loss)[(0, 0)] * chunk.len() as f64;
            let grads = tape.backward(loss, Mat::ones((1, 1))).map_err(|e| non_finite(epoch, step, e))?;
            model.store.adam_step(&grads.param_grads(&model.store), &adam)?;
        }
        let train_loss = total / train_idx.len().max(1) as f64;
        report.train_loss.push(train_loss);
        report.lr_history.push(adam.lr);
        let monitor = if val_idx.is_empty() {
            train_loss
        } else {
            let (loss, acc) = evaluate_subset(&model, data, &inputs, &val_idx, hyper.batch_size.max(1024))?;
            report.val_loss.push(loss);
            report.val_accuracy.push(acc);
            loss
        };
        plateau.observe(monitor);
    }
    model.store.round_to_f32();
    model.trained = true;
    Ok((model, report))
}

fn evaluate_subset(
    model: &EvaluatorModel,
    data: &EvaluatorDataset,
    inputs: &Mat,
    idx: &[usize],
    chunk: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    for part in idx.chunks(chunk) {
        let g = inputs.select(ndarray::Axis(0), part);
        let cond = select_features(&data.features, part.iter().map(|&i| data.examples[i].0));
        let probs = model.score_model_space(&g, &cond)?;
        for (&i, p) in part.iter().zip(probs) {
            let y = data.examples[i].2;
            loss += super::bce_loss(if y { 1.0 } else { 0.0 }, p);
            correct += usize::from((p >= 0.5) == y);
        }
    }
    Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
}

fn non_finite(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteValue(detail) => Error::NonFiniteLoss { epoch, step, detail },
        other => other,
    }
}
