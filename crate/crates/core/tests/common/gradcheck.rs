//! Central-difference checks of every tape op and of the model-level
//! gradients the pipeline relies on.

use graspdiff::bps::BasisSet;
use graspdiff::cond::{CondBatch, ModelContext};
use graspdiff::evaluator::{EvaluatorConfig, EvaluatorModel, FreqConfig};
use graspdiff::grasp::NormalizationStats;
use graspdiff::nn::{Mat, Tape, Var};
use graspdiff::sampler::{Denoiser, DenoiserConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numeric_grad, random_mat, rel_err};

pub const H: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Largest relative error over all inputs of `build`, contracting the
/// output with a random weight matrix to get a scalar.
fn check(inputs: &[Mat], build: &Build, rng: &mut impl Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let (r, c) = tape.value(out).dim();
    let w = random_mat(r, c, 1.0, rng);
    let grads = tape.backward(out, w.clone()).unwrap();

    let eval = |xs: &[Mat]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.leaf(m.clone()).unwrap()).collect();
        let o = build(&mut t, &vs);
        (t.value(o) * &w).sum()
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt_or_zero(&tape, *v);
        let numeric = numeric_grad(&inputs[i], H, |x| {
            let mut xs = inputs.to_vec();
            xs[i] = x.clone();
            eval(&xs)
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Relative error of every op for one random case.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c| random_mat(r, c, 1.0, &mut rng);
    let cases: Vec<(&'static str, Vec<Mat>, Box<Build>)> = vec![
        ("matmul", vec![m(3, 4), m(4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add_bias", vec![m(3, 4), m(1, 4)], Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap())),
        ("add", vec![m(3, 4), m(3, 4)], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("scale", vec![m(2, 3)], Box::new(|t, v| t.scale(v[0], -1.7).unwrap())),
        ("gelu", vec![m(3, 5)], Box::new(|t, v| t.gelu(v[0]).unwrap())),
        ("sigmoid", vec![m(3, 5)], Box::new(|t, v| t.sigmoid(v[0]).unwrap())),
        ("log_sigmoid", vec![m(3, 5)], Box::new(|t, v| t.log_sigmoid(v[0]).unwrap())),
        ("softmax", vec![m(3, 5)], Box::new(|t, v| t.softmax(v[0]).unwrap())),
        ("layer_norm", vec![m(3, 5), m(1, 5), m(1, 5)], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap())),
        (
            "attention",
            vec![m(4, 4), m(6, 4), m(6, 4)],
            Box::new(|t, v| t.attention(v[0], v[1], v[2], 2, 2, 3).unwrap()),
        ),
        ("concat", vec![m(3, 2), m(3, 3)], Box::new(|t, v| t.concat(&[v[0], v[1]]).unwrap())),
        ("slice_cols", vec![m(3, 5)], Box::new(|t, v| t.slice_cols(v[0], 1, 3).unwrap())),
        ("reshape", vec![m(2, 6)], Box::new(|t, v| t.reshape(v[0], 4, 3).unwrap())),
        ("gather_rows", vec![m(3, 4)], Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap())),
        ("freq_encode", vec![m(3, 2).mapv(|x| x * 0.3)], Box::new(|t, v| t.freq_encode(v[0], 3).unwrap())),
        ("freq_encode_identity", vec![m(3, 2)], Box::new(|t, v| t.freq_encode(v[0], 0).unwrap())),
        ("sum", vec![m(3, 4)], Box::new(|t, v| t.sum(v[0]).unwrap())),
    ];
    let target = m(3, 4);
    let pred = m(3, 4);
    let logits = m(5, 1).mapv(|x| 2.0 * x);
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0];
    let mse: Box<Build> = Box::new(move |t, v| t.mse(v[0], target.clone()).unwrap());
    let bce: Box<Build> = Box::new(move |t, v| t.bce(v[0], &labels).unwrap());
    let mut weights = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    cases
        .iter()
        .map(|(name, inputs, build)| (*name, inputs.as_slice(), build.as_ref()))
        .chain([("mse", std::slice::from_ref(&pred), mse.as_ref()), ("bce", std::slice::from_ref(&logits), bce.as_ref())])
        .map(|(name, inputs, build)| (name, check(inputs, build, &mut weights)))
        .collect()
}

fn small_context(seed: u64) -> ModelContext {
    let stats = NormalizationStats::new([0.0; 3], 0.1, vec![0.0; 4], vec![1.5; 4]).unwrap();
    ModelContext { basis: BasisSet::sample(12, 0.3, seed).unwrap(), stats }
}

/// `∇_{g_t} ‖ε̂‖²` of a small random denoiser against finite differences.
pub fn denoiser_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DenoiserConfig { width: 8, heads: 2, object_tokens: 2, self_layers: 1, cross_layers: 1, head_hidden: 8, ..Default::default() };
    let model = Denoiser::new(cfg, small_context(seed), seed).unwrap();
    let g = random_mat(2, model.dim(), 1.0, &mut rng);
    let t: Vec<usize> = (0..2).map(|_| rng.random_range(1..=100)).collect();
    let cond = CondBatch::new(random_mat(2, 12, 0.1, &mut rng).mapv(f64::abs), vec![1, 0]).unwrap();
    let loss = |x: &Mat| -> f64 { model.predict_noise(x, &t, &cond).unwrap().mapv(|e| e * e).sum() };

    let mut tape = Tape::new();
    let gv = tape.leaf(g.clone()).unwrap();
    let eps = model.forward(&mut tape, gv, &t, &cond).unwrap();
    let e = tape.value(eps).clone();
    // d‖ε̂‖²/dε̂ = 2ε̂
    let grads = tape.backward(eps, e * 2.0).unwrap();
    rel_err(&grads.wrt_or_zero(&tape, gv), &numeric_grad(&g, H, loss))
}

/// `grad_log_score` of a small random evaluator against finite differences
/// of the log of its score.
pub fn evaluator_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EvaluatorConfig { freq: FreqConfig { p: 2, r: 1, q: 0 }, object_dim: 6, hidden: vec![8, 4] };
    let model = EvaluatorModel::new(cfg, small_context(seed), seed).unwrap();
    let g = random_mat(3, model.dim(), 0.5, &mut rng);
    let cond = CondBatch::new(random_mat(2, 12, 0.1, &mut rng).mapv(f64::abs), vec![0, 1, 1]).unwrap();
    let log_score = |x: &Mat| -> f64 { model.score_model_space(x, &cond).unwrap().iter().map(|s| s.ln()).sum() };
    rel_err(&model.grad_log_score(&g, &cond).unwrap(), &numeric_grad(&g, H, log_score))
}
