//! Grasp success classifier over frequency-encoded grasps and BPS features.

mod ablation;
mod train;

pub use ablation::{ablation_markdown, ablation_report, AblationRow, Confusion};
pub use train::{train_evaluator, EvaluatorDataset, EvaluatorHyper, EvaluatorReport};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cond::{CondBatch, ModelContext};
use crate::error::{Error, Result};
use crate::grasp::Grasp;
use crate::nn::tape::freq_encode_scalar;
use crate::nn::{Dense, Mat, ParamStore, Tape, Var, WeightsFile};

pub use crate::nn::bce_loss;

pub const WEIGHTS_KIND: &str = "evaluator";

/// Number of sinusoid pairs per scalar for position, rotation and joints.
/// Zero means the raw value is passed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqConfig {
    pub p: usize,
    pub r: usize,
    pub q: usize,
}

impl FreqConfig {
    pub const fn new(p: usize, r: usize, q: usize) -> Self {
        Self { p, r, q }
    }

    /// Width of one encoded scalar.
    pub fn width(freqs: usize) -> usize {
        if freqs == 0 {
            1
        } else {
            2 * freqs
        }
    }

    /// Encoded grasp width for `dof` joints.
    pub fn encoded_len(&self, dof: usize) -> usize {
        3 * Self::width(self.p) + 6 * Self::width(self.r) + dof * Self::width(self.q)
    }
}

impl Default for FreqConfig {
    fn default() -> Self {
        Self::new(10, 4, 0)
    }
}

impl std::fmt::Display for FreqConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.r, self.q)
    }
}

/// `[sin(2^0 πx), cos(2^0 πx), …, sin(2^{F-1} πx), cos(2^{F-1} πx)]` per
/// scalar, or the raw scalars when `freqs == 0`.
pub fn freq_encode(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * FreqConfig::width(freqs));
    for &v in x {
        freq_encode_scalar(v, freqs, &mut out);
    }
    out
}

/// Encodes a model-space grasp vector part by part.
pub fn encode_grasp(g: &[f64], cfg: FreqConfig) -> Vec<f64> {
    let mut out = freq_encode(&g[..3], cfg.p);
    out.extend(freq_encode(&g[3..9], cfg.r));
    out.extend(freq_encode(&g[9..], cfg.q));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub freq: FreqConfig,
    /// Width the BPS features are projected to.
    pub object_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self { freq: FreqConfig::default(), object_dim: 256, hidden: vec![512, 256, 64] }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluatorModel {
    pub config: EvaluatorConfig,
    pub context: ModelContext,
    pub store: ParamStore,
    pub trained: bool,
    object: Dense,
    trunk: Vec<Dense>,
    head: Dense,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EvaluatorConfig,
    context: ModelContext,
    trained: bool,
}

impl EvaluatorModel {
    pub fn new(config: EvaluatorConfig, context: ModelContext, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let object = Dense::new(&mut store, "object", context.basis.len(), config.object_dim, &mut rng);
        let mut width = config.freq.encoded_len(context.dof()) + config.object_dim;
        let mut trunk = Vec::new();
        for (i, &h) in config.hidden.iter().enumerate() {
            trunk.push(Dense::new(&mut store, &format!("trunk{i}"), width, h, &mut rng));
            width = h;
        }
        let head = Dense::new(&mut store, "head", width, 1, &mut rng);
        store.round_to_f32();
        Ok(Self { config, context, store, trained: false, object, trunk, head })
    }

    pub fn dim(&self) -> usize {
        self.context.dim()
    }

    /// Success logit for model-space grasps `g` of shape `[n, 9 + k]`.
    pub fn forward(&self, tape: &mut Tape, g: Var, cond: &CondBatch) -> Result<Var> {
        let (n, dim) = tape.value(g).dim();
        if dim != self.dim() {
            return Err(Error::shape("evaluator", format!("grasp width {dim}, expected {}", self.dim())));
        }
        if cond.len() != n || cond.feature_dim() != self.context.basis.len() {
            return Err(Error::shape("evaluator", format!("{n} grasps vs {} conditions", cond.len())));
        }
        let s = &self.store;
        let f = self.config.freq;
        let p = tape.slice_cols(g, 0, 3)?;
        let r = tape.slice_cols(g, 3, 6)?;
        let q = tape.slice_cols(g, 9, dim - 9)?;
        let ep = tape.freq_encode(p, f.p)?;
        let er = tape.freq_encode(r, f.r)?;
        let eq = tape.freq_encode(q, f.q)?;
        let feats = tape.leaf(cond.features.clone())?;
        let obj = self.object.forward(tape, s, feats)?;
        let obj = tape.gather_rows(obj, &cond.index)?;
        let mut x = tape.concat(&[ep, er, eq, obj])?;
        for layer in &self.trunk {
            let h = layer.forward(tape, s, x)?;
            x = tape.gelu(h)?;
        }
        self.head.forward(tape, s, x)
    }

    /// Success probabilities for model-space grasps.
    pub fn score_model_space(&self, g: &Mat, cond: &CondBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let gv = tape.leaf(g.clone())?;
        let z = self.forward(&mut tape, gv, cond)?;
        let p = tape.sigmoid(z)?;
        Ok(tape.value(p).iter().copied().collect())
    }

    /// Success probabilities for metric grasps.
    pub fn score(&self, grasps: &[Grasp], cond: &CondBatch) -> Result<Vec<f64>> {
        let g = self.normalize_all(grasps)?;
        self.score_model_space(&g, cond)
    }

    pub fn normalize_all(&self, grasps: &[Grasp]) -> Result<Mat> {
        let mut m = Mat::zeros((grasps.len(), self.dim()));
        for (i, g) in grasps.iter().enumerate() {
            let v = self.context.stats.normalize(g)?.values;
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(m)
    }

    /// `∇_g log D(S = 1 | g, f_O)` per row, taken in model space.
    pub fn grad_log_score(&self, g: &Mat, cond: &CondBatch) -> Result<Mat> {
        let mut tape = Tape::new();
        let gv = tape.leaf(g.clone())?;
        let z = self.forward(&mut tape, gv, cond)?;
        let logp = tape.log_sigmoid(z)?;
        let total = tape.sum(logp)?;
        let grads = tape.backward(total, Mat::ones((1, 1)))?;
        Ok(grads.wrt_or_zero(&tape, gv))
    }

    pub fn to_weights(&self) -> Result<WeightsFile> {
        let header = serde_json::to_string(&Header {
            config: self.config.clone(),
            context: self.context.clone(),
            trained: self.trained,
        })?;
        let mut file = WeightsFile::new(WEIGHTS_KIND, header);
        file.push_store(&self.store);
        Ok(file)
    }

    pub fn from_weights(file: &WeightsFile) -> Result<Self> {
        if file.kind != WEIGHTS_KIND {
            return Err(Error::format("weights", format!("expected {WEIGHTS_KIND}, found {}", file.kind)));
        }
        let header: Header = serde_json::from_str(&file.header)?;
        let mut model = Self::new(header.config, header.context, 0)?;
        file.load_store(&mut model.store)?;
        model.trained = header.trained;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weights()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weights(&WeightsFile::load(path)?)
    }
}

/// Single-grasp convenience around [`EvaluatorModel::score`].
pub fn evaluate(model: &EvaluatorModel, g: &Grasp, cond_features: &crate::bps::BpsEncoding) -> Result<f64> {
    Ok(model.score(std::slice::from_ref(g), &CondBatch::repeat(cond_features, 1))?[0])
}
