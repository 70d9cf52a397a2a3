use std::collections::BTreeMap;
use std::path::Path;

use graspdiff::bps::BasisSet;
use graspdiff::cond::CondBatch;
use graspdiff::evaluator::{
    ablation_markdown, ablation_report, train_evaluator, EvaluatorConfig, EvaluatorHyper, EvaluatorModel, FreqConfig,
};
use graspdiff::grasp::{read_grasps, Grasp, PointCloud};
use graspdiff::pipeline::{
    bench, bench_markdown, encode_views, evaluator_dataset, model_context, sampler_dataset, BenchConfig, MethodResult,
};
use graspdiff::refine::{refine_batch, ProposalConfig, RefineMethod};
use graspdiff::sampler::{sample, train_sampler, Denoiser, DenoiserConfig, SamplerHyper};
use graspdiff::toyworld::{derive_seed, gen_dataset, DatasetConfig, Split, ToyDataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::manifest::{Run, RunManifest};

/// Stream tags so each command's randomness is independent of the others.
mod stream {
    pub const SAMPLE: u64 = 1;
    pub const REFINE: u64 = 2;
    pub const BENCH: u64 = 3;
}

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Executes the parsed command inside `run`.
pub fn execute(cmd: &Command, seed: u64, run: &mut Run) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a, seed, run),
        Command::TrainSampler(a) => train_sampler_cmd(a, seed, run),
        Command::TrainEvaluator(a) => train_evaluator_cmd(a, seed, run),
        Command::Sample(a) => sample_cmd(a, seed, run),
        Command::Score(a) => score_cmd(a, run),
        Command::Refine(a) => refine_cmd(a, seed, run),
        Command::Ablate(a) => ablate_cmd(a, seed, run),
        Command::Bench(a) => bench_cmd(a, seed, run),
        Command::Report(a) => report_cmd(a, run),
        Command::Bps(BpsCommand::Encode(a)) => bps_encode(a, run),
    }
}

pub fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::GenData(a) => a.out.out.as_deref(),
        Command::TrainSampler(a) => a.out.out.as_deref(),
        Command::TrainEvaluator(a) => a.out.out.as_deref(),
        Command::Sample(a) => a.out.out.as_deref(),
        Command::Score(a) => a.out.out.as_deref(),
        Command::Refine(a) => a.out.out.as_deref(),
        Command::Ablate(a) => a.out.out.as_deref(),
        Command::Bench(a) => a.out.out.as_deref(),
        Command::Report(a) => a.out.out.as_deref(),
        Command::Bps(BpsCommand::Encode(a)) => a.out.out.as_deref(),
    }
}

fn gen_data(a: &GenDataArgs, seed: u64, run: &mut Run) -> Result<()> {
    let mut cfg = DatasetConfig::new(a.objects, a.views, a.grasps_per_view, seed);
    cfg.test_fraction = a.test_fraction;
    let data = run.timed("generate", a.objects, || Ok(gen_dataset(&cfg)?))?;
    let dir = run.dir.clone();
    let manifest = run.timed("write", a.objects, || Ok(data.write(&dir)?))?;
    run.dataset_hash = Some(manifest.content_hash);
    Ok(())
}

fn load_dataset(path: &Path, run: &mut Run) -> Result<ToyDataset> {
    let data = run.timed("load-dataset", 0, || Ok(ToyDataset::read(path)?))?;
    run.dataset_hash = Some(data.content_hash()?);
    Ok(data)
}

fn basis(a: &BasisArgs) -> Result<BasisSet> {
    Ok(BasisSet::sample(a.basis_size, a.basis_radius, a.basis_seed)?)
}

fn train_sampler_cmd(a: &TrainSamplerArgs, seed: u64, run: &mut Run) -> Result<()> {
    let data = load_dataset(&a.data, run)?;
    let basis = basis(&a.basis)?;
    let feats = run.timed("encode", data.scenes.len(), || Ok(encode_views(&data, &basis)?))?;
    let context = model_context(&data, basis);
    let train = sampler_dataset(&data, &feats, Split::Train);
    let mut hyper = match a.preset {
        Preset::Desk => SamplerHyper::desk(),
        Preset::Full => SamplerHyper::full(),
    };
    hyper.seed = seed;
    hyper.epochs = a.epochs.unwrap_or(hyper.epochs);
    hyper.batch_size = a.batch_size.unwrap_or(hyper.batch_size);
    hyper.lr = a.lr.unwrap_or(hyper.lr);
    hyper.gamma = a.gamma.unwrap_or(hyper.gamma);
    let config = DenoiserConfig {
        width: a.width,
        heads: a.heads,
        object_tokens: a.tokens,
        self_layers: a.self_layers,
        cross_layers: a.cross_layers,
        head_hidden: a.head_hidden,
        ..DenoiserConfig::default()
    };
    let (model, report) = run.timed("train", train.examples.len(), || Ok(train_sampler(&train, config, context, &hyper)?))?;
    let path = run.path("sampler.gdw");
    model.save(&path)?;
    run.record_weights("sampler", &path)?;
    run.write_json("training.json", &report)
}

fn evaluator_hyper(t: &EvaluatorTraining, seed: u64) -> EvaluatorHyper {
    let mut hyper = match t.preset {
        Preset::Desk => EvaluatorHyper::desk(),
        Preset::Full => EvaluatorHyper::full(),
    };
    hyper.seed = seed;
    hyper.epochs = t.epochs.unwrap_or(hyper.epochs);
    hyper.batch_size = t.batch_size.unwrap_or(hyper.batch_size);
    hyper.lr = t.lr.unwrap_or(hyper.lr);
    hyper
}

pub fn parse_freq(s: &str) -> Result<FreqConfig> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("bad frequency config `{s}`: {e}")))?;
    match parts[..] {
        [p, r, q] => Ok(FreqConfig::new(p, r, q)),
        _ => Err(CliError::Usage(format!("frequency config `{s}` needs three values"))),
    }
}

#[derive(Serialize)]
struct HeldOut {
    objects: Vec<usize>,
    grasps: usize,
    recall_pos: f64,
    recall_neg: f64,
    total_acc: f64,
}

fn train_evaluator_cmd(a: &TrainEvaluatorArgs, seed: u64, run: &mut Run) -> Result<()> {
    let freq = parse_freq(&a.freq)?;
    let data = load_dataset(&a.data, run)?;
    let basis = basis(&a.basis)?;
    let feats = run.timed("encode", data.scenes.len(), || Ok(encode_views(&data, &basis)?))?;
    let context = model_context(&data, basis);
    let train = evaluator_dataset(&data, &feats, Split::Train);
    let test = evaluator_dataset(&data, &feats, Split::Test);
    let config = EvaluatorConfig { freq, object_dim: a.arch.object_dim, hidden: a.arch.hidden.clone() };
    let hyper = evaluator_hyper(&a.training, seed);
    let (model, report) = run.timed("train", train.len(), || Ok(train_evaluator(&train, config, context, &hyper)?))?;
    let path = run.path("evaluator.gdw");
    model.save(&path)?;
    run.record_weights("evaluator", &path)?;
    run.write_json("training.json", &report)?;
    if !test.is_empty() {
        let row = run.timed("held-out", test.len(), || Ok(ablation_report(&[&model], &test)?))?.remove(0);
        run.write_json(
            "heldout.json",
            &HeldOut {
                objects: data.ids(Split::Test),
                grasps: test.len(),
                recall_pos: row.recall_pos,
                recall_neg: row.recall_neg,
                total_acc: row.total_acc,
            },
        )?;
    }
    Ok(())
}

/// Cloud moved to its centroid frame, with the shift that was applied.
fn centered_cloud(path: &Path) -> Result<(PointCloud, [f64; 3])> {
    Ok(PointCloud::read(path)?.centered())
}

fn shift_grasps(grasps: &mut [Grasp], v: [f64; 3]) {
    for g in grasps {
        for i in 0..3 {
            g.p[i] += v[i];
        }
    }
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    v.map(|x| -x)
}

fn write_grasps(run: &Run, name: &str, grasps: &[Grasp]) -> Result<()> {
    run.write_json(name, &grasps)
}

fn load_sampler(path: &Path, run: &mut Run) -> Result<Denoiser> {
    let model = Denoiser::load(path)?;
    run.record_weights("sampler", path)?;
    Ok(model)
}

fn load_evaluator(path: &Path, run: &mut Run) -> Result<EvaluatorModel> {
    let model = EvaluatorModel::load(path)?;
    run.record_weights("evaluator", path)?;
    Ok(model)
}

fn sample_cmd(a: &SampleArgs, seed: u64, run: &mut Run) -> Result<()> {
    let model = load_sampler(&a.sampler, run)?;
    let (cloud, shift) = centered_cloud(&a.cloud)?;
    let enc = model.context.basis.encode(&cloud)?;
    let cond = CondBatch::repeat(&enc, a.n);
    let mut rng = rng(seed, stream::SAMPLE);
    let mut grasps = run.timed("sample", a.n, || Ok(sample(&model, &cond, &mut rng, a.allow_untrained)?))?;
    shift_grasps(&mut grasps, neg(shift));
    write_grasps(run, "grasps.json", &grasps)
}

fn score_cmd(a: &ScoreArgs, run: &mut Run) -> Result<()> {
    let model = load_evaluator(&a.evaluator, run)?;
    let (cloud, shift) = centered_cloud(&a.cloud)?;
    let mut grasps = read_grasps(&a.grasps)?;
    shift_grasps(&mut grasps, shift);
    let scores = if grasps.is_empty() {
        Vec::new()
    } else {
        let enc = model.context.basis.encode(&cloud)?;
        let cond = CondBatch::repeat(&enc, grasps.len());
        run.timed("score", grasps.len(), || Ok(model.score(&grasps, &cond)?))?
    };
    run.write_json("scores.json", &scores)
}

fn proposal(a: &ProposalArgs) -> Result<ProposalConfig> {
    let (&[sigma_p, sigma_r, sigma_q], &[pose, joint]) = (a.sigmas.as_slice(), a.stage_split.as_slice()) else {
        return Err(CliError::Usage("--sigmas takes 3 values and --stage-split takes 2".into()));
    };
    Ok(ProposalConfig { sigma_p, sigma_r, sigma_q, iterations: a.iters, stage_split: (pose, joint) })
}

#[derive(Serialize)]
struct RefineSummary<'a> {
    method: RefineMethod,
    n: usize,
    lambda: f64,
    proposal: ProposalConfig,
    score_before: f64,
    score_after: f64,
    scores: &'a [f64],
}

fn refine_cmd(a: &RefineArgs, seed: u64, run: &mut Run) -> Result<()> {
    let method: RefineMethod = a.method.parse()?;
    let denoiser = load_sampler(&a.sampler, run)?;
    let evaluator = load_evaluator(&a.evaluator, run)?;
    let (cloud, shift) = centered_cloud(&a.cloud)?;
    let enc = denoiser.context.basis.encode(&cloud)?;
    let cond = CondBatch::repeat(&enc, a.n);
    let proposal = proposal(&a.proposal)?;
    let mut rng = rng(seed, stream::REFINE);
    let (mut grasps, report) = refine_batch(method, &denoiser, &evaluator, &cond, a.lambda, &proposal, &mut rng)?;
    for t in &report.timings {
        run.timings.push(crate::manifest::PhaseTiming { phase: t.stage.clone(), millis: t.millis, items: report.n });
    }
    shift_grasps(&mut grasps, neg(shift));
    write_grasps(run, "grasps.json", &grasps)?;
    run.write_json(
        "refine.json",
        &RefineSummary {
            method,
            n: report.n,
            lambda: a.lambda,
            proposal,
            score_before: report.score_before,
            score_after: report.score_after,
            scores: &report.scores,
        },
    )
}

fn ablate_cmd(a: &AblateArgs, seed: u64, run: &mut Run) -> Result<()> {
    let configs = a.configs.split(';').filter(|s| !s.trim().is_empty()).map(parse_freq).collect::<Result<Vec<_>>>()?;
    if configs.is_empty() {
        return Err(CliError::Usage("no frequency configurations given".into()));
    }
    let data = load_dataset(&a.data, run)?;
    let basis = basis(&a.basis)?;
    let feats = run.timed("encode", data.scenes.len(), || Ok(encode_views(&data, &basis)?))?;
    let context = model_context(&data, basis);
    let train = evaluator_dataset(&data, &feats, Split::Train);
    let test = evaluator_dataset(&data, &feats, Split::Test);
    let hyper = evaluator_hyper(&a.training, seed);
    let mut models = Vec::new();
    for freq in &configs {
        let config = EvaluatorConfig { freq: *freq, object_dim: a.arch.object_dim, hidden: a.arch.hidden.clone() };
        let (model, _) =
            run.timed(&format!("train{freq}"), train.len(), || Ok(train_evaluator(&train, config, context.clone(), &hyper)?))?;
        models.push(model);
    }
    let refs: Vec<&EvaluatorModel> = models.iter().collect();
    let rows = ablation_report(&refs, &test)?;
    run.write_json("ablation.json", &rows)?;
    run.write("ablation.md", ablation_markdown(&rows).as_bytes())
}

/// Deterministic part of a bench row; timings go to the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: RefineMethod,
    pub grasps: usize,
    pub success_rate: f64,
    pub mean_score: f64,
    pub diversity_mean: f64,
    pub diversity_std: f64,
}

pub fn parse_methods(s: &str) -> Result<Vec<RefineMethod>> {
    if s.trim() == "all" {
        return Ok(RefineMethod::ALL.to_vec());
    }
    Ok(s.split(',').map(|m| m.parse::<RefineMethod>()).collect::<Result<Vec<_>, _>>()?)
}

fn bench_cmd(a: &BenchArgs, seed: u64, run: &mut Run) -> Result<()> {
    let methods = parse_methods(&a.methods)?;
    let data = load_dataset(&a.data, run)?;
    let denoiser = load_sampler(&a.sampler, run)?;
    let evaluator = load_evaluator(&a.evaluator, run)?;
    denoiser.context.ensure_compatible(&evaluator.context)?;
    let feats = run.timed("encode", data.scenes.len(), || Ok(encode_views(&data, &evaluator.context.basis)?))?;
    let mut rng = rng(seed, stream::BENCH);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for method in methods {
        let cfg = BenchConfig {
            methods: vec![method],
            grasps_per_view: a.grasps_per_view,
            lambda: a.lambda,
            proposal: proposal(&a.proposal)?,
            bins: a.bins,
        };
        let r = bench(&data, &feats, &denoiser, &evaluator, &cfg, &mut rng)?.remove(0);
        run.timings.push(crate::manifest::PhaseTiming {
            phase: format!("bench:{method}"),
            millis: r.ms_per_grasp * r.grasps as f64,
            items: r.grasps,
        });
        rows.push(BenchRow {
            method,
            grasps: r.grasps,
            success_rate: r.success_rate,
            mean_score: r.mean_score,
            diversity_mean: r.diversity_mean,
            diversity_std: r.diversity_std,
        });
        results.push(r);
    }
    print!("{}", bench_markdown(&results));
    run.write_json("bench.json", &rows)
}

#[derive(Serialize)]
struct ReportSummary {
    runs: Vec<String>,
    rows: Vec<MethodResult>,
}

fn report_cmd(a: &ReportArgs, run: &mut Run) -> Result<()> {
    if a.runs.is_empty() {
        return Err(graspdiff::Error::MissingManifest("(no run directories given)".into()).into());
    }
    // grasp-weighted totals per method, in first-seen order
    let mut order: Vec<RefineMethod> = Vec::new();
    let mut acc: BTreeMap<String, (usize, [f64; 4], f64)> = BTreeMap::new();
    for dir in &a.runs {
        let manifest = RunManifest::read(dir)?;
        let path = dir.join("bench.json");
        let rows: Vec<BenchRow> = serde_json::from_slice(&std::fs::read(&path).map_err(CliError::io(&path))?)?;
        for r in rows {
            let ms = manifest.timings.iter().find(|t| t.phase == format!("bench:{}", r.method)).map_or(0.0, |t| t.millis);
            let e = acc.entry(r.method.to_string()).or_insert((0, [0.0; 4], 0.0));
            if e.0 == 0 {
                order.push(r.method);
            }
            let w = r.grasps as f64;
            e.0 += r.grasps;
            for (slot, v) in e.1.iter_mut().zip([r.success_rate, r.mean_score, r.diversity_mean, r.diversity_std]) {
                *slot += w * v;
            }
            e.2 += ms;
        }
    }
    let rows: Vec<MethodResult> = order
        .iter()
        .map(|m| {
            let (n, sums, ms) = acc[&m.to_string()];
            let d = n.max(1) as f64;
            MethodResult {
                method: *m,
                grasps: n,
                success_rate: sums[0] / d,
                mean_score: sums[1] / d,
                diversity_mean: sums[2] / d,
                diversity_std: sums[3] / d,
                ms_per_grasp: ms / d,
            }
        })
        .collect();
    run.write("report.md", bench_markdown(&rows).as_bytes())?;
    run.write_json("report.json", &ReportSummary { runs: a.runs.iter().map(|p| p.display().to_string()).collect(), rows })
}

#[derive(Serialize)]
struct EncodingFile<'a> {
    basis_size: usize,
    radius: f64,
    basis_seed: u64,
    centered: bool,
    shift: [f64; 3],
    distances: &'a [f64],
}

fn bps_encode(a: &BpsEncodeArgs, run: &mut Run) -> Result<()> {
    let raw = PointCloud::read(&a.cloud)?;
    let (cloud, shift) = if a.no_center { (raw, [0.0; 3]) } else { raw.centered() };
    let basis = basis(&a.basis)?;
    let enc = run.timed("encode", 1, || Ok(basis.encode(&cloud)?))?;
    run.write_json(
        "encoding.json",
        &EncodingFile {
            basis_size: a.basis.basis_size,
            radius: a.basis.basis_radius,
            basis_seed: a.basis.basis_seed,
            centered: !a.no_center,
            shift,
            distances: &enc.distances,
        },
    )
}
