//! Noise-prediction network.
//!
//! The grasp is split into position, rotation and joint tokens, each embedded
//! by its own dense layer, plus a sinusoidal time token. The four tokens run
//! through self-attention blocks and then cross-attention blocks that query
//! object tokens obtained by projecting the BPS feature vector. A two-layer
//! head maps the concatenated tokens back to a noise estimate.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::cond::{CondBatch, ModelContext};
use crate::error::{Error, Result};
use crate::nn::{AttentionBlock, Dense, LayerNorm, Mat, ParamStore, Tape, Var, WeightsFile};

pub const WEIGHTS_KIND: &str = "denoiser";
const GRASP_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub width: usize,
    pub heads: usize,
    pub object_tokens: usize,
    pub self_layers: usize,
    pub cross_layers: usize,
    pub head_hidden: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 128,
            heads: 4,
            object_tokens: 32,
            self_layers: 2,
            cross_layers: 2,
            head_hidden: 256,
            steps: super::schedule::DEFAULT_STEPS,
            beta_start: super::schedule::DEFAULT_BETA_START,
            beta_end: super::schedule::DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone)]
struct Layers {
    embed_p: Dense,
    embed_r: Dense,
    embed_q: Dense,
    embed_t: Dense,
    object: Dense,
    self_blocks: Vec<AttentionBlock>,
    cross_blocks: Vec<AttentionBlock>,
    norm_out: LayerNorm,
    head_in: Dense,
    head_out: Dense,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub context: ModelContext,
    pub schedule: NoiseSchedule,
    pub store: ParamStore,
    pub trained: bool,
    layers: Layers,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    context: ModelContext,
    trained: bool,
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

impl Denoiser {
    /// Freshly initialized (untrained) model.
    pub fn new(config: DenoiserConfig, context: ModelContext, seed: u64) -> Result<Self> {
        if config.width == 0 || config.heads == 0 || config.width % config.heads != 0 {
            return Err(Error::InvalidArgument(format!("width {} must be a multiple of heads {}", config.width, config.heads)));
        }
        if config.object_tokens == 0 {
            return Err(Error::InvalidArgument("need at least one object token".into()));
        }
        let schedule = NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (w, k, b) = (config.width, context.dof(), context.basis.len());
        let s = &mut store;
        let layers = Layers {
            embed_p: Dense::new(s, "embed_p", 3, w, &mut rng),
            embed_r: Dense::new(s, "embed_r", 6, w, &mut rng),
            embed_q: Dense::new(s, "embed_q", k, w, &mut rng),
            embed_t: Dense::new(s, "embed_t", w, w, &mut rng),
            object: Dense::new(s, "object", b, config.object_tokens * w, &mut rng),
            self_blocks: (0..config.self_layers)
                .map(|i| AttentionBlock::new(s, &format!("self{i}"), w, config.heads, false, &mut rng))
                .collect(),
            cross_blocks: (0..config.cross_layers)
                .map(|i| AttentionBlock::new(s, &format!("cross{i}"), w, config.heads, true, &mut rng))
                .collect(),
            norm_out: LayerNorm::new(s, "norm_out", w),
            head_in: Dense::new(s, "head1", GRASP_TOKENS * w, config.head_hidden, &mut rng),
            head_out: Dense::new(s, "head2", config.head_hidden, 9 + k, &mut rng),
        };
        store.round_to_f32();
        Ok(Self { config, context, schedule, store, trained: false, layers })
    }

    pub fn dim(&self) -> usize {
        self.context.dim()
    }

    /// Builds `ε_θ(g_t, t, f_O)` on the tape. `g` is `[n, 9 + k]`.
    pub fn forward(&self, tape: &mut Tape, g: Var, t: &[usize], cond: &CondBatch) -> Result<Var> {
        let (n, dim) = tape.value(g).dim();
        if dim != self.dim() {
            return Err(Error::shape("denoiser", format!("grasp width {dim}, expected {}", self.dim())));
        }
        if t.len() != n || cond.len() != n {
            return Err(Error::shape("denoiser", format!("{n} grasps, {} steps, {} conditions", t.len(), cond.len())));
        }
        if cond.feature_dim() != self.context.basis.len() {
            return Err(Error::shape("denoiser", format!("feature width {}", cond.feature_dim())));
        }
        let (w, m, s, l) = (self.config.width, self.config.object_tokens, &self.store, &self.layers);

        let p = tape.slice_cols(g, 0, 3)?;
        let r = tape.slice_cols(g, 3, 6)?;
        let q = tape.slice_cols(g, 9, dim - 9)?;
        let tp = l.embed_p.forward(tape, s, p)?;
        let tr = l.embed_r.forward(tape, s, r)?;
        let tq = l.embed_q.forward(tape, s, q)?;
        let temb: Vec<f64> = t.iter().flat_map(|&ti| time_embedding(ti, w)).collect();
        let temb = tape.leaf(Mat::from_shape_vec((n, w), temb).expect("shape"))?;
        let tt = l.embed_t.forward(tape, s, temb)?;
        let tt = tape.gelu(tt)?;
        let tokens = tape.concat(&[tp, tr, tq, tt])?;
        let mut x = tape.reshape(tokens, n * GRASP_TOKENS, w)?;

        for block in &l.self_blocks {
            x = block.forward(tape, s, x, None, GRASP_TOKENS)?;
        }

        let feats = tape.leaf(cond.features.clone())?;
        let obj = l.object.forward(tape, s, feats)?;
        let obj = tape.gather_rows(obj, &cond.index)?;
        let obj = tape.reshape(obj, n * m, w)?;
        for block in &l.cross_blocks {
            x = block.forward(tape, s, x, Some((obj, m)), GRASP_TOKENS)?;
        }

        let x = l.norm_out.forward(tape, s, x)?;
        let x = tape.reshape(x, n, GRASP_TOKENS * w)?;
        let h = l.head_in.forward(tape, s, x)?;
        let h = tape.gelu(h)?;
        l.head_out.forward(tape, s, h)
    }

    /// Noise estimate for a batch of model-space grasps.
    pub fn predict_noise(&self, g_t: &Mat, t: &[usize], cond: &CondBatch) -> Result<Mat> {
        let mut tape = Tape::new();
        let g = tape.leaf(g_t.clone())?;
        let out = self.forward(&mut tape, g, t, cond)?;
        Ok(tape.value(out).clone())
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
