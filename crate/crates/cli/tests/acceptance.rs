//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the report is always printed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use graspdiff::bps::{encode, BasisSet};
use graspdiff::cond::{select_features, CondBatch};
use graspdiff::evaluator::{
    ablation_report, freq_encode, train_evaluator, EvaluatorConfig, EvaluatorHyper, EvaluatorModel, FreqConfig,
};
use graspdiff::grasp::{Grasp, PointCloud};
use graspdiff::pipeline::{encode_views, evaluator_dataset, model_context, oracle_labels, random_baseline, sampler_dataset};
use graspdiff::refine::{egd_sample_model_space, esr2, guidance_modulation, mh_accept, ProposalConfig};
use graspdiff::sampler::{sample, sample_chain, train_sampler, Denoiser, DenoiserConfig, NoiseSchedule, SamplerHyper};
use graspdiff::toyworld::{diversity_entropy, gen_dataset, DatasetConfig, Split, ToyGripper};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Tolerances and budgets.
const SCHEDULE_TOL: f64 = 1e-12;
const SCHEDULE_BUDGET: Duration = Duration::from_secs(1);
const MC_DRAWS: usize = 100_000;
const RECONSTRUCT_TOL: f64 = 1e-5;
const DIFFUSION_BUDGET: Duration = Duration::from_secs(60);
const GRAD_CASES: u64 = 100;
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ENCODED_WIDTH: usize = 124;
const MH_TRIALS: usize = 10_000;
const MIN_OBJECTS: usize = 50;
const MIN_GRASPS: usize = 20_000;
const MIN_ACCURACY: f64 = 75.0;
const BASELINE_FACTOR: f64 = 5.0;
const REFINE_GRASPS: usize = 500;
const TOY_BUDGET: Duration = Duration::from_secs(30 * 60);
const UNIFORM_ENTROPY_TOL: f64 = 0.05;
const BPS_PAIRS: usize = 100;
const BPS_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::linear(100, 1e-4, 1e-2).unwrap();
    let ends = s.beta(1) == 1e-4 && s.beta(100) == 1e-2;
    let increasing = (2..=100).all(|t| s.beta(t) > s.beta(t - 1));
    let err = (s.alpha_bar(100) - common::alpha_bar_product(100, 1e-4, 1e-2)).abs();
    let took = start.elapsed();
    outcome(
        ends && increasing && err < SCHEDULE_TOL && took < SCHEDULE_BUDGET,
        format!("endpoints exact: {ends}, increasing: {increasing}, alpha_bar error {err:.1e}, {took:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::default();
    let betas = common::beta_grid(100, 1e-4, 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g0 = -0.6;
    let mut worst_z: f64 = 0.0;
    for t in [1, 50, 100] {
        let closed: Vec<f64> =
            (0..MC_DRAWS).map(|_| s.q_sample(&[g0], t, &[rng.sample(StandardNormal)]).unwrap()[0]).collect();
        let chained: Vec<f64> = (0..MC_DRAWS).map(|_| common::forward_chain(g0, &betas, t, &mut rng)).collect();
        let (mean, var) = (s.alpha_bar(t).sqrt() * g0, 1.0 - s.alpha_bar(t));
        for xs in [&closed, &chained] {
            let (m, v) = common::mean_var(xs);
            worst_z = worst_z.max((m - mean).abs() / (var / MC_DRAWS as f64).sqrt());
            worst_z = worst_z.max((v - var).abs() / (var * (2.0 / (MC_DRAWS as f64 - 1.0)).sqrt()));
        }
    }
    let mut worst_err: f64 = 0.0;
    for _ in 0..50 {
        let x0: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..25).map(|_| rng.sample(StandardNormal)).collect();
        let mut g = s.q_sample(&x0, 100, &eps).unwrap();
        for t in (1..=100).rev() {
            let ab = s.alpha_bar(t);
            let true_eps: Vec<f64> = g.iter().zip(&x0).map(|(x, a)| (x - ab.sqrt() * a) / (1.0 - ab).sqrt()).collect();
            g = s.posterior_mean(&g, t, &true_eps).unwrap();
        }
        worst_err = g.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(worst_err, f64::max);
    }
    let took = start.elapsed();
    outcome(
        worst_z <= 3.0 && worst_err < RECONSTRUCT_TOL && took < DIFFUSION_BUDGET,
        format!("worst deviation {worst_z:.2} sigma, reconstruction error {worst_err:.1e}, {took:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "none");
    for seed in 0..GRAD_CASES {
        for (op, err) in common::gradcheck::op_errors(seed) {
            if err > worst.0 {
                worst = (err, op);
            }
        }
        let d = common::gradcheck::denoiser_error(seed);
        if d > worst.0 {
            worst = (d, "denoiser");
        }
        let e = common::gradcheck::evaluator_error(seed);
        if e > worst.0 {
            worst = (e, "grad_log_score");
        }
    }
    let took = start.elapsed();
    outcome(
        worst.0 < GRAD_TOL && took < GRAD_BUDGET,
        format!("worst relative error {:.1e} ({}), {took:.2?}", worst.0, worst.1),
    )
}

fn criterion_4() -> Outcome {
    let zero = freq_encode(&[0.0], 4);
    let zero_ok = zero == vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let half = freq_encode(&[0.5], 1);
    let half_ok = (half[0] - 1.0).abs() < 1e-12 && half[1].abs() < 1e-12;
    let width = FreqConfig::new(10, 4, 0).encoded_len(16);
    outcome(zero_ok && half_ok && width == ENCODED_WIDTH, format!("x=0 ok: {zero_ok}, x=0.5 ok: {half_ok}, width {width}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // synthetic 1-D evaluator and a fixed proposal with known ratio
    let d = |x: f64| (-x * x).exp();
    let current = 0.1;
    let mut rates = Vec::new();
    let mut pass = true;
    for alpha in [0.25f64, 0.5, 0.9] {
        let proposal = (current * current - alpha.ln()).sqrt();
        let hits = (0..MH_TRIALS).filter(|_| mh_accept(d(current), d(proposal), &mut rng).0).count();
        pass &= common::bernoulli_within_3sigma(hits, MH_TRIALS, alpha);
        rates.push(format!("{alpha}->{:.4}", hits as f64 / MH_TRIALS as f64));
    }
    let always = (0..MH_TRIALS).all(|_| mh_accept(d(0.5), d(0.2), &mut rng).0 && mh_accept(d(0.3), d(0.3), &mut rng).0);
    outcome(pass && always, format!("rates {}, alpha >= 1 always accepted: {always}", rates.join(", ")))
}

fn criterion_6() -> Outcome {
    let ctx = graspdiff::cond::ModelContext { basis: BasisSet::sample(32, 0.3, 6).unwrap(), stats: ToyGripper::default().normalization() };
    let dcfg = DenoiserConfig { width: 16, heads: 2, object_tokens: 2, self_layers: 1, cross_layers: 1, head_hidden: 16, ..Default::default() };
    let den = Denoiser::new(dcfg, ctx.clone(), 1).unwrap();
    let ev = EvaluatorModel::new(EvaluatorConfig { freq: FreqConfig::default(), object_dim: 16, hidden: vec![16] }, ctx, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cond = CondBatch::new(common::random_mat(2, 32, 0.1, &mut rng).mapv(f64::abs), (0..16).map(|i| i % 2).collect()).unwrap();
    let plain = sample_chain(&den, &cond, &mut ChaCha8Rng::seed_from_u64(60), None).unwrap();
    let guided = egd_sample_model_space(&den, &ev, &cond, 0.0, &mut ChaCha8Rng::seed_from_u64(60)).unwrap();
    let identical = plain.iter().zip(guided.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    let at_t = guidance_modulation(100, 100);
    outcome(identical && at_t == 0.0, format!("bit-identical: {identical}, modulation at T = {at_t}"))
}

/// Trained sampler output shared with the diversity criterion.
struct ToyRun {
    samples: Vec<Grasp>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn criterion_7(run: &mut Option<ToyRun>) -> Outcome {
    let start = Instant::now();
    let cfg = DatasetConfig::new(100, 4, 60, 7);
    let data = gen_dataset(&cfg).unwrap();
    let (objects, grasps) = (data.scenes.len(), data.grasp_count());
    let basis = BasisSet::sample(512, 0.3, 7).unwrap();
    let feats = encode_views(&data, &basis).unwrap();
    let ctx = model_context(&data, basis);

    // (a) evaluator accuracy on held-out objects
    let ecfg = EvaluatorConfig { freq: FreqConfig::new(10, 4, 0), object_dim: 64, hidden: vec![256, 128, 64] };
    let hyper = EvaluatorHyper { epochs: 15, seed: 7, ..EvaluatorHyper::desk() };
    let (ev, _) = train_evaluator(&evaluator_dataset(&data, &feats, Split::Train), ecfg, ctx.clone(), &hyper).unwrap();
    let accuracy = ablation_report(&[&ev], &evaluator_dataset(&data, &feats, Split::Test)).unwrap()[0].total_acc;

    // (b) sampler success on held-out objects against random grasps
    let dcfg = DenoiserConfig { width: 64, heads: 4, object_tokens: 8, self_layers: 1, cross_layers: 1, head_hidden: 128, ..Default::default() };
    let shyper = SamplerHyper { epochs: 40, batch_size: 64, gamma: 0.97, seed: 7, ..SamplerHyper::desk() };
    let (den, _) = train_sampler(&sampler_dataset(&data, &feats, Split::Train), dcfg, ctx, &shyper).unwrap();
    let rows: Vec<usize> = data
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Test)
        .flat_map(|(i, s)| (0..s.views.len()).flat_map(move |v| std::iter::repeat_n((i, v), 25)))
        .map(|(i, v)| feats.row(i, v))
        .collect();
    let cond = select_features(&feats.features, rows.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let samples = sample(&den, &cond, &mut rng, false).unwrap();
    let hits = oracle_labels(&data, &feats, &samples, &rows).into_iter().filter(|&b| b).count();
    let rate = hits as f64 / samples.len() as f64;
    let baseline = random_baseline(&data, 2500, &mut ChaCha8Rng::seed_from_u64(71)).unwrap();
    let floor = baseline.conservative_rate();

    // (c) ESR-2 over 500 sampled grasps
    let picked: Vec<usize> = (0..REFINE_GRASPS).collect();
    let refined = esr2(&ev, &samples[..REFINE_GRASPS], &cond.select(&picked), &ProposalConfig::default(), &mut rng).unwrap();
    let (before, after) = (refined.mean_initial_score(), refined.mean_final_score());

    let took = start.elapsed();
    let (lo, hi) = ToyGripper::default().limits();
    *run = Some(ToyRun { samples, lo, hi });
    let pass = objects >= MIN_OBJECTS
        && grasps >= MIN_GRASPS
        && accuracy >= MIN_ACCURACY
        && hits > 0
        && rate >= BASELINE_FACTOR * floor
        && after >= before
        && took <= TOY_BUDGET;
    outcome(
        pass,
        format!(
            "{objects} objects, {grasps} grasps; (a) held-out accuracy {accuracy:.2}%; \
             (b) sampler {hits}/{} = {:.3}% vs random {}/{} (bound {:.4}%); \
             (c) ESR-2 mean score {before:.4} -> {after:.4}; {took:.0?}",
            rows.len(),
            100.0 * rate,
            baseline.successes,
            baseline.trials,
            100.0 * floor,
        ),
    )
}

fn criterion_8(run: &Option<ToyRun>) -> Outcome {
    let (lo, hi) = ToyGripper::default().limits();
    let g = Grasp::new([0.0; 3], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![0.4; 16]);
    let (zero, _) = diversity_entropy(&vec![g.clone(); 200], &lo, &hi, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let uniform: Vec<Grasp> = (0..20_000)
        .map(|_| Grasp::new([0.0; 3], g.r, (0..16).map(|j| rng.random_range(lo[j]..hi[j])).collect()))
        .collect();
    let (u, _) = diversity_entropy(&uniform, &lo, &hi, 10).unwrap();
    let uniform_ok = (u - 10f64.ln()).abs() <= UNIFORM_ENTROPY_TOL * 10f64.ln();
    let Some(run) = run else {
        return outcome(false, "no trained sampler available");
    };
    let (sampled, _) = diversity_entropy(&run.samples, &run.lo, &run.hi, 10).unwrap();
    let (constant, _) = diversity_entropy(&vec![run.samples[0].clone(); run.samples.len()], &run.lo, &run.hi, 10).unwrap();
    outcome(
        zero == 0.0 && uniform_ok && sampled > constant,
        format!("identical {zero}, uniform {u:.4} vs ln 10 = {:.4}, sampler {sampled:.4} > constant {constant}", 10f64.ln()),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut invariant = true;
    for case in 0..BPS_PAIRS {
        let n = rng.random_range(1..500);
        let cloud: Vec<[f64; 3]> = (0..n).map(|_| [0.0; 3].map(|_: f64| rng.random_range(-0.25..0.25))).collect();
        let basis = BasisSet::sample(rng.random_range(1..400), 0.3, case as u64).unwrap();
        let enc = encode(&PointCloud::new(cloud.clone()).unwrap(), &basis).unwrap();
        let brute = common::bps_brute(&cloud, &basis.basis);
        worst = enc.distances.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        let mut shuffled = cloud;
        shuffled.shuffle(&mut rng);
        invariant &= encode(&PointCloud::new(shuffled).unwrap(), &basis).unwrap() == enc;
    }
    let basis = BasisSet::sample(300, 0.3, 99).unwrap();
    let self_enc = encode(&PointCloud::new(basis.basis.clone()).unwrap(), &basis).unwrap();
    let zero = self_enc.distances.iter().all(|&d| d == 0.0);
    outcome(
        invariant && worst <= BPS_TOL && zero,
        format!("permutation invariant: {invariant}, worst brute-force gap {worst:.1e}, self-encoding zero: {zero}"),
    )
}

fn graspdiff(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_graspdiff")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run_manifest.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn artifact_table(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    serde_json::from_str::<serde_json::Value>(&text).unwrap()["artifacts"].clone()
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let cloud = p("a/data/objects/obj_0000/view_00.txt");
    let basis = ["--basis-size", "64"];
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("gen-data", vec!["gen-data", "--objects", "8", "--views", "2", "--grasps-per-view", "30"].into_iter().map(String::from).collect()),
        ("train-sampler", ["train-sampler", "--epochs", "2", "--width", "16", "--tokens", "4", "--self-layers", "1", "--cross-layers", "1", "--head-hidden", "32"].iter().chain(&basis).map(|s| s.to_string()).collect()),
        ("train-evaluator", ["train-evaluator", "--epochs", "2", "--object-dim", "16", "--hidden", "32,16"].iter().chain(&basis).map(|s| s.to_string()).collect()),
        ("sample", vec!["sample".into(), "--n".into(), "5".into(), "--cloud".into(), cloud.clone()]),
        ("score", vec!["score".into(), "--cloud".into(), cloud.clone()]),
        ("refine", vec!["refine".into(), "--n".into(), "4".into(), "--method".into(), "egd+esr2".into(), "--cloud".into(), cloud.clone()]),
        ("ablate", ["ablate", "--epochs", "1", "--object-dim", "16", "--hidden", "16"].iter().chain(&basis).map(|s| s.to_string()).collect()),
        ("bench", ["bench", "--grasps-per-view", "2", "--iters", "2", "--stage-split", "1,1"].iter().map(|s| s.to_string()).collect()),
        ("report", vec!["report".into()]),
        ("bps", ["bps", "encode", "--basis-size", "32", "--cloud"].iter().map(|s| s.to_string()).chain([cloud.clone()]).collect()),
    ];
    let mut checked = Vec::new();
    for (name, base) in commands {
        for copy in ["a", "b"] {
            // inputs always come from copy `a`, so both runs see identical inputs
            let mut args: Vec<String> = vec!["--seed".into(), "10".into()];
            args.extend(base.iter().cloned());
            match name {
                "train-sampler" | "train-evaluator" | "ablate" => args.extend(["--data".into(), p("a/data")]),
                "sample" => args.extend(["--sampler".into(), p("a/train-sampler/sampler.gdw")]),
                "score" => args.extend(["--evaluator".into(), p("a/train-evaluator/evaluator.gdw"), "--grasps".into(), p("a/sample/grasps.json")]),
                "refine" | "bench" => args.extend([
                    "--sampler".into(),
                    p("a/train-sampler/sampler.gdw"),
                    "--evaluator".into(),
                    p("a/train-evaluator/evaluator.gdw"),
                ]),
                "report" => args.push(p("a/bench")),
                _ => {}
            }
            if name == "bench" {
                args.extend(["--data".into(), p("a/data")]);
            }
            let dir = if name == "gen-data" { format!("{copy}/data") } else { format!("{copy}/{name}") };
            args.extend(["--out".into(), p(&dir)]);
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            if let Err(e) = graspdiff(&refs) {
                return outcome(false, e);
            }
        }
        let (a, b) = if name == "gen-data" { (p("a/data"), p("b/data")) } else { (p(&format!("a/{name}")), p(&format!("b/{name}"))) };
        let (a, b) = (PathBuf::from(a), PathBuf::from(b));
        let same_bytes = files(&a) == files(&b) && !files(&a).is_empty();
        let same_table = artifact_table(&a) == artifact_table(&b);
        if !(same_bytes && same_table) {
            return outcome(false, format!("{name}: artifacts differ between identical runs"));
        }
        checked.push(name);
    }
    outcome(true, format!("byte-identical reruns of {}", checked.join(", ")))
}

fn main() {
    let mut toy = None;
    let criteria: Vec<(u32, Box<dyn FnOnce(&mut Option<ToyRun>) -> Outcome>)> = vec![
        (1, Box::new(|_| criterion_1())),
        (2, Box::new(|_| criterion_2())),
        (3, Box::new(|_| criterion_3())),
        (4, Box::new(|_| criterion_4())),
        (5, Box::new(|_| criterion_5())),
        (6, Box::new(|_| criterion_6())),
        (7, Box::new(criterion_7)),
        (8, Box::new(|run| criterion_8(run))),
        (9, Box::new(|_| criterion_9())),
        (10, Box::new(|_| criterion_10())),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut toy)))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        failed += (!result.pass) as usize;
        println!("criterion {n}: {} ({})", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
