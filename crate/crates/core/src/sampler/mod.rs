//! Conditional DDPM grasp sampler: schedule, denoiser, training and
//! ancestral sampling.

mod denoiser;
mod schedule;
mod train;

pub use denoiser::{time_embedding, Denoiser, DenoiserConfig, WEIGHTS_KIND};
pub use schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
pub use train::{train_sampler, SamplerDataset, SamplerHyper, SamplerReport};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cond::CondBatch;
use crate::error::{Error, Result};
use crate::grasp::Grasp;
use crate::nn::Mat;

/// Standard-normal `[rows, cols]` matrix drawn in row-major order.
pub fn normal_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// One ancestral step given a noise estimate: `μ̂ + shift + σ_t z`, with no
/// noise at `t = 1`. `shift` is an optional mean adjustment.
pub fn reverse_step_with(
    schedule: &NoiseSchedule,
    g_t: &Mat,
    t: usize,
    eps_hat: &Mat,
    shift: Option<&Mat>,
    rng: &mut impl Rng,
) -> Result<Mat> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", schedule.steps())));
    }
    if eps_hat.dim() != g_t.dim() || shift.is_some_and(|s| s.dim() != g_t.dim()) {
        return Err(Error::shape("reverse_step", "noise estimate or shift differs from the grasp batch"));
    }
    let c = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / schedule.alpha(t).sqrt();
    let mut mean = (g_t - &(eps_hat * c)) * inv;
    if let Some(s) = shift {
        mean += s;
    }
    if t > 1 {
        let sigma = schedule.posterior_variance(t).sqrt();
        let (n, d) = g_t.dim();
        mean += &(normal_mat(n, d, rng) * sigma);
    }
    Ok(mean)
}

/// `g_{t-1}` from `g_t` with the model's noise estimate.
pub fn reverse_step(model: &Denoiser, g_t: &Mat, t: usize, cond: &CondBatch, rng: &mut impl Rng) -> Result<Mat> {
    let eps = model.predict_noise(g_t, &vec![t; g_t.nrows()], cond)?;
    reverse_step_with(&model.schedule, g_t, t, &eps, None, rng)
}

/// Mean adjustment applied at every reverse step; receives `g_t` and `t`.
/// Returning `None` leaves the step untouched.
pub type Guidance<'a> = dyn FnMut(&Mat, usize) -> Result<Option<Mat>> + 'a;

/// Runs the full reverse chain from `g_T ~ N(0, I)` and returns model-space
/// grasps, one row per entry of `cond`.
pub fn sample_chain(
    model: &Denoiser,
    cond: &CondBatch,
    rng: &mut impl Rng,
    mut guidance: Option<&mut Guidance<'_>>,
) -> Result<Mat> {
    let n = cond.len();
    let mut g = normal_mat(n, model.dim(), rng);
    if n == 0 {
        return Ok(g);
    }
    for t in (1..=model.schedule.steps()).rev() {
        let eps = model.predict_noise(&g, &vec![t; n], cond)?;
        let shift = match guidance.as_mut() {
            Some(f) => f(&g, t)?,
            None => None,
        };
        g = reverse_step_with(&model.schedule, &g, t, &eps, shift.as_ref(), rng)?;
    }
    Ok(g)
}

/// Samples one grasp per entry of `cond` and maps them back to metric grasps.
pub fn sample(model: &Denoiser, cond: &CondBatch, rng: &mut impl Rng, allow_untrained: bool) -> Result<Vec<Grasp>> {
    if !model.trained && !allow_untrained {
        return Err(Error::UntrainedModel);
    }
    let g = sample_chain(model, cond, rng, None)?;
    to_grasps(model, &g)
}

pub fn to_grasps(model: &Denoiser, g: &Mat) -> Result<Vec<Grasp>> {
    g.rows()
        .into_iter()
        .map(|row| model.context.stats.denormalize(row.as_slice().expect("standard layout")))
        .collect()
}
