//! Evaluator-driven refinement.
//!
//! Evaluator-guided diffusion shifts every reverse-step mean by
//! `λ · log(T - t + 1) · ∇_{g_t} log D(S = 1 | g_t, f_O)`. Note that the
//! modulation is zero at `t = T` and largest at `t = 1`, so guidance grows
//! towards the end of the chain.
//!
//! Sampling refinement runs a Metropolis-Hastings chain per grasp with a
//! symmetric Gaussian proposal and acceptance ratio
//! `α = D(g + Δg) / D(g)`; the proposal is accepted when `α ≥ u`,
//! `u ~ U[0, 1)`. The one-stage variant perturbs every component at once;
//! the two-stage variant refines the pose `(p, r)` first and the joints
//! afterwards.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cond::CondBatch;
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::grasp::Grasp;
use crate::nn::Mat;
use crate::sampler::{sample_chain, to_grasps, Denoiser};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub sigma_q: f64,
    /// Iterations of the one-stage refinement.
    pub iterations: usize,
    /// Pose-stage and joint-stage iterations of the two-stage refinement.
    pub stage_split: (usize, usize),
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { sigma_p: 0.01, sigma_r: 0.05, sigma_q: 0.05, iterations: 20, stage_split: (10, 10) }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_p, self.sigma_r, self.sigma_q];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("proposal sigmas must be nonnegative, got {sigmas:?}")));
        }
        Ok(())
    }
}

/// One block of MH iterations with fixed per-part proposal scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub sigma_q: f64,
    pub iterations: usize,
}

impl Stage {
    pub fn esr1(cfg: &ProposalConfig) -> Vec<Stage> {
        vec![Stage { sigma_p: cfg.sigma_p, sigma_r: cfg.sigma_r, sigma_q: cfg.sigma_q, iterations: cfg.iterations }]
    }

    pub fn esr2(cfg: &ProposalConfig) -> Vec<Stage> {
        vec![
            Stage { sigma_p: cfg.sigma_p, sigma_r: cfg.sigma_r, sigma_q: 0.0, iterations: cfg.stage_split.0 },
            Stage { sigma_p: 0.0, sigma_r: 0.0, sigma_q: cfg.sigma_q, iterations: cfg.stage_split.1 },
        ]
    }
}

/// Draws `g + Δg`. Parts whose scale is zero are copied unchanged and
/// consume no randomness; joints are clamped to `limits` when given.
pub fn propose(g: &Grasp, stage: &Stage, limits: Option<(&[f64], &[f64])>, rng: &mut impl Rng) -> Grasp {
    let mut out = g.clone();
    let mut jitter = |x: &mut f64, sigma: f64| {
        if sigma > 0.0 {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    };
    out.p.iter_mut().for_each(|x| jitter(x, stage.sigma_p));
    out.r.iter_mut().for_each(|x| jitter(x, stage.sigma_r));
    out.q.iter_mut().for_each(|x| jitter(x, stage.sigma_q));
    if let Some((lo, hi)) = limits {
        for (j, q) in out.q.iter_mut().enumerate() {
            *q = q.clamp(lo[j], hi[j]);
        }
    }
    out
}

/// Metropolis-Hastings decision for a symmetric proposal. Returns whether
/// the proposal is accepted and the ratio `α`.
pub fn mh_accept(current: f64, proposed: f64, rng: &mut impl Rng) -> (bool, f64) {
    let alpha = proposed / current;
    let u: f64 = rng.random();
    (alpha >= u, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    /// Score of the chain state after each iteration, starting with the
    /// initial score; `iterations + 1` entries.
    pub scores: Vec<f64>,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub grasps: Vec<Grasp>,
    pub traces: Vec<ChainTrace>,
}

impl Refined {
    pub fn mean_initial_score(&self) -> f64 {
        mean(self.traces.iter().map(|t| t.scores[0]))
    }

    pub fn mean_final_score(&self) -> f64 {
        mean(self.traces.iter().map(|t| *t.scores.last().expect("nonempty trace")))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Batched MH refinement against an arbitrary scorer. All chains advance
/// together so each iteration costs one scorer call.
pub fn mh_refine<F>(
    grasps: &[Grasp],
    mut scorer: F,
    stages: &[Stage],
    limits: Option<(&[f64], &[f64])>,
    rng: &mut impl Rng,
) -> Result<Refined>
where
    F: FnMut(&[Grasp]) -> Result<Vec<f64>>,
{
    let mut current = grasps.to_vec();
    let mut scores = scorer(&current)?;
    if scores.len() != current.len() {
        return Err(Error::shape("mh_refine", "scorer returned the wrong number of scores"));
    }
    let mut traces: Vec<ChainTrace> = scores.iter().map(|&s| ChainTrace { scores: vec![s], accepted: 0 }).collect();
    for stage in stages {
        for _ in 0..stage.iterations {
            let proposals: Vec<Grasp> = current.iter().map(|g| propose(g, stage, limits, rng)).collect();
            let proposed = scorer(&proposals)?;
            for (i, prop) in proposals.into_iter().enumerate() {
                let (accept, _) = mh_accept(scores[i], proposed[i], rng);
                if accept {
                    current[i] = prop;
                    scores[i] = proposed[i];
                    traces[i].accepted += 1;
                }
                traces[i].scores.push(scores[i]);
            }
        }
    }
    Ok(Refined { grasps: current, traces })
}

fn evaluator_scorer<'a>(evaluator: &'a EvaluatorModel, cond: &'a CondBatch) -> impl FnMut(&[Grasp]) -> Result<Vec<f64>> + 'a {
    move |g| evaluator.score(g, cond)
}

fn joint_limits(evaluator: &EvaluatorModel) -> Option<(&[f64], &[f64])> {
    Some((&evaluator.context.stats.q_lo, &evaluator.context.stats.q_hi))
}

/// One-stage refinement: every component perturbed jointly.
pub fn esr1(
    evaluator: &EvaluatorModel,
    grasps: &[Grasp],
    cond: &CondBatch,
    cfg: &ProposalConfig,
    rng: &mut impl Rng,
) -> Result<Refined> {
    cfg.validate()?;
    mh_refine(grasps, evaluator_scorer(evaluator, cond), &Stage::esr1(cfg), joint_limits(evaluator), rng)
}

/// Two-stage refinement: pose first (`Δq = 0`), then joints (`Δp = Δr = 0`).
pub fn esr2(
    evaluator: &EvaluatorModel,
    grasps: &[Grasp],
    cond: &CondBatch,
    cfg: &ProposalConfig,
    rng: &mut impl Rng,
) -> Result<Refined> {
    cfg.validate()?;
    mh_refine(grasps, evaluator_scorer(evaluator, cond), &Stage::esr2(cfg), joint_limits(evaluator), rng)
}

/// `log(T - t + 1)`.
pub fn guidance_modulation(total_steps: usize, t: usize) -> f64 {
    ((total_steps - t + 1) as f64).ln()
}

/// Evaluator-guided reverse diffusion, returning model-space grasps.
pub fn egd_sample_model_space(
    denoiser: &Denoiser,
    evaluator: &EvaluatorModel,
    cond: &CondBatch,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<Mat> {
    denoiser.context.ensure_compatible(&evaluator.context)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("guidance strength must be nonnegative, got {lambda}")));
    }
    let total = denoiser.schedule.steps();
    let mut guide = |g: &Mat, t: usize| -> Result<Option<Mat>> {
        let scale = lambda * guidance_modulation(total, t);
        if scale == 0.0 {
            return Ok(None);
        }
        Ok(Some(evaluator.grad_log_score(g, cond)? * scale))
    };
    sample_chain(denoiser, cond, rng, Some(&mut guide))
}

pub fn egd_sample(
    denoiser: &Denoiser,
    evaluator: &EvaluatorModel,
    cond: &CondBatch,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Grasp>> {
    let g = egd_sample_model_space(denoiser, evaluator, cond, lambda, rng)?;
    to_grasps(denoiser, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMethod {
    Sampler,
    Esr1,
    Esr2,
    Egd,
    #[serde(rename = "egd+esr1")]
    EgdEsr1,
    #[serde(rename = "egd+esr2")]
    EgdEsr2,
}

impl RefineMethod {
    pub const ALL: [RefineMethod; 6] = [
        RefineMethod::Sampler,
        RefineMethod::Esr1,
        RefineMethod::Esr2,
        RefineMethod::Egd,
        RefineMethod::EgdEsr1,
        RefineMethod::EgdEsr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RefineMethod::Sampler => "sampler",
            RefineMethod::Esr1 => "esr1",
            RefineMethod::Esr2 => "esr2",
            RefineMethod::Egd => "egd",
            RefineMethod::EgdEsr1 => "egd+esr1",
            RefineMethod::EgdEsr2 => "egd+esr2",
        }
    }

    pub fn uses_egd(self) -> bool {
        matches!(self, RefineMethod::Egd | RefineMethod::EgdEsr1 | RefineMethod::EgdEsr2)
    }

    pub fn esr_stages(self, cfg: &ProposalConfig) -> Option<Vec<Stage>> {
        match self {
            RefineMethod::Esr1 | RefineMethod::EgdEsr1 => Some(Stage::esr1(cfg)),
            RefineMethod::Esr2 | RefineMethod::EgdEsr2 => Some(Stage::esr2(cfg)),
            RefineMethod::Sampler | RefineMethod::Egd => None,
        }
    }
}

impl FromStr for RefineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "").replace("sampler+", "");
        RefineMethod::ALL
            .into_iter()
            .find(|m| m.name().replace('+', "") == key.replace('+', ""))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

impl std::fmt::Display for RefineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub method: RefineMethod,
    pub n: usize,
    /// Mean evaluator score of the sampled grasps before any ESR stage.
    pub score_before: f64,
    pub score_after: f64,
    pub scores: Vec<f64>,
    pub timings: Vec<StageTiming>,
    pub total_ms: f64,
    pub ms_per_grasp: f64,
}

/// Samples one grasp per entry of `cond` and applies the named pipeline:
/// plain or guided sampling followed by the optional ESR stage.
pub fn refine_batch(
    method: RefineMethod,
    denoiser: &Denoiser,
    evaluator: &EvaluatorModel,
    cond: &CondBatch,
    lambda: f64,
    proposal: &ProposalConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<Grasp>, RefineReport)> {
    denoiser.context.ensure_compatible(&evaluator.context)?;
    proposal.validate()?;
    let mut timings = Vec::new();
    let start = Instant::now();
    let (grasps, stage) = if method.uses_egd() {
        (egd_sample(denoiser, evaluator, cond, lambda, rng)?, "egd")
    } else {
        (to_grasps(denoiser, &sample_chain(denoiser, cond, rng, None)?)?, "sampler")
    };
    timings.push(StageTiming { stage: stage.into(), millis: start.elapsed().as_secs_f64() * 1e3 });

    let (grasps, scores_before, scores) = match method.esr_stages(proposal) {
        Some(stages) => {
            let t0 = Instant::now();
            let refined = mh_refine(&grasps, evaluator_scorer(evaluator, cond), &stages, joint_limits(evaluator), rng)?;
            let name = if stages.len() == 1 { "esr1" } else { "esr2" };
            timings.push(StageTiming { stage: name.into(), millis: t0.elapsed().as_secs_f64() * 1e3 });
            let before = refined.traces.iter().map(|t| t.scores[0]).collect::<Vec<_>>();
            let after = refined.traces.iter().map(|t| *t.scores.last().expect("trace")).collect();
            (refined.grasps, before, after)
        }
        None => {
            let s = if grasps.is_empty() { Vec::new() } else { evaluator.score(&grasps, cond)? };
            (grasps, s.clone(), s)
        }
    };
    let total_ms: f64 = timings.iter().map(|t| t.millis).sum();
    let n = grasps.len();
    let report = RefineReport {
        method,
        n,
        score_before: mean(scores_before.iter().copied()),
        score_after: mean(scores.iter().copied()),
        scores,
        timings,
        total_ms,
        ms_per_grasp: if n == 0 { 0.0 } else { total_ms / n as f64 },
    };
    Ok((grasps, report))
}
