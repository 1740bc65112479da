//! Shared helpers for the integration tests and the acceptance harness:
//! finite-difference gradient checks and naive reference implementations.

#![allow(dead_code)]

pub mod oracles;

use rand::Rng as _;
use unmixsr::gram::{Gram, GramConfig};
use unmixsr::srnet::{SrConfig, SrNetwork};
use unmixsr::tensor::rng::{self, Rng};
use unmixsr::tensor::{Graph, ParamSet, Tensor, Var};
use unmixsr::unmixing::{l1_loss, sad_loss, tv_loss};

pub const FD_STEP: f64 = 1e-5;

pub fn rand_tensor(r: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[margin, hi)` with random signs, keeping kinks out of reach of
/// the finite-difference stencil.
pub fn rand_away_from_zero(r: &mut Rng, shape: &[usize], margin: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(margin..hi);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ out ⊙ W` for a fixed random `W`, so every output element matters.
fn weighted_root(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every input; returns the worst relative error.
pub fn check_inputs(inputs: &[Tensor], seed: u64, f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor], w: Option<&Tensor>| -> (f64, Tensor, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let w = match w {
            Some(w) => w.clone(),
            None => rand_tensor(&mut rng::stream(seed, "gradcheck.weights"), &shape, -1.0, 1.0),
        };
        let root = weighted_root(&mut g, out, &w);
        g.backward(root).unwrap();
        let grads = vars
            .iter()
            .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(*v).numel()]))
            .collect();
        (g.value(root).item(), w, grads)
    };
    let (_, w, analytic) = eval(inputs, None);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            *slot = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Same check for named parameters of a network whose forward pass is `f`.
pub fn check_params(
    params: &ParamSet,
    names: &[&str],
    input: &Tensor,
    seed: u64,
    f: &dyn Fn(&mut Graph, &ParamSet, Var) -> Var,
) -> f64 {
    let eval = |ps: &ParamSet, w: Option<&Tensor>| -> (f64, Tensor, Graph) {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = f(&mut g, ps, x);
        let shape = g.shape(out).to_vec();
        let w = match w {
            Some(w) => w.clone(),
            None => rand_tensor(&mut rng::stream(seed, "gradcheck.weights"), &shape, -1.0, 1.0),
        };
        let root = weighted_root(&mut g, out, &w);
        g.backward(root).unwrap();
        (g.value(root).item(), w, g)
    };
    let (_, w, g) = eval(params, None);
    let grads = g.param_grads();
    let mut worst = 0.0f64;
    for name in names {
        let n = params.get(name).unwrap().value().numel();
        let analytic = grads.get(*name).cloned().unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().value_mut().data_mut()[i] += FD_STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().value_mut().data_mut()[i] -= FD_STEP;
            *slot = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

type Case = (&'static str, fn(u64) -> f64);

fn c_add(s: u64) -> f64 {
    let mut r = rng::stream(s, "add");
    let ins = [rand_tensor(&mut r, &[3, 4], -1.0, 1.0), rand_tensor(&mut r, &[3, 4], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.add(v[0], v[1]).unwrap())
}

fn c_sub(s: u64) -> f64 {
    let mut r = rng::stream(s, "sub");
    let ins = [rand_tensor(&mut r, &[5], -1.0, 1.0), rand_tensor(&mut r, &[5], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.sub(v[0], v[1]).unwrap())
}

fn c_mul(s: u64) -> f64 {
    let mut r = rng::stream(s, "mul");
    let ins = [rand_tensor(&mut r, &[2, 3, 2], -1.0, 1.0), rand_tensor(&mut r, &[2, 3, 2], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.mul(v[0], v[1]).unwrap())
}

fn c_scale(s: u64) -> f64 {
    let mut r = rng::stream(s, "scale");
    let k = r.random_range(-2.0..2.0);
    let ins = [rand_tensor(&mut r, &[7], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.scale(v[0], k).unwrap())
}

fn c_relu(s: u64) -> f64 {
    let mut r = rng::stream(s, "relu");
    let ins = [rand_away_from_zero(&mut r, &[2, 3, 3], 1e-3, 1.0)];
    check_inputs(&ins, s, &|g, v| g.relu(v[0]).unwrap())
}

fn c_leaky(s: u64) -> f64 {
    let mut r = rng::stream(s, "leaky");
    let ins = [rand_away_from_zero(&mut r, &[2, 3, 3], 1e-3, 1.0)];
    check_inputs(&ins, s, &|g, v| g.leaky_relu(v[0], 0.2).unwrap())
}

fn c_sigmoid(s: u64) -> f64 {
    let mut r = rng::stream(s, "sigmoid");
    let ins = [rand_tensor(&mut r, &[10], -4.0, 4.0)];
    check_inputs(&ins, s, &|g, v| g.sigmoid(v[0]).unwrap())
}

fn c_abs(s: u64) -> f64 {
    let mut r = rng::stream(s, "abs");
    let ins = [rand_away_from_zero(&mut r, &[10], 1e-3, 1.0)];
    check_inputs(&ins, s, &|g, v| g.abs(v[0]).unwrap())
}

fn c_sum_mean(s: u64) -> f64 {
    let mut r = rng::stream(s, "sum");
    let ins = [rand_tensor(&mut r, &[3, 2, 2], -1.0, 1.0)];
    let a = check_inputs(&ins, s, &|g, v| g.sum(v[0]).unwrap());
    let b = check_inputs(&ins, s, &|g, v| g.mean(v[0]).unwrap());
    a.max(b)
}

fn c_reshape_transpose(s: u64) -> f64 {
    let mut r = rng::stream(s, "reshape");
    let ins = [rand_tensor(&mut r, &[2, 6], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| {
        let t = g.reshape(v[0], &[3, 4]).unwrap();
        g.transpose2d(t).unwrap()
    })
}

fn c_row_tv(s: u64) -> f64 {
    let mut r = rng::stream(s, "row_tv");
    // Cumulative sums of steps bounded away from zero keep |Δ| off the kink.
    let steps = rand_away_from_zero(&mut r, &[3, 6], 1e-2, 0.5);
    let mut d = steps.data().to_vec();
    for i in 0..3 {
        for j in 1..6 {
            d[i * 6 + j] += d[i * 6 + j - 1];
        }
    }
    let ins = [Tensor::new(vec![3, 6], d).unwrap()];
    check_inputs(&ins, s, &|g, v| g.row_tv(v[0]).unwrap())
}

fn c_conv2d(s: u64) -> f64 {
    let mut r = rng::stream(s, "conv2d");
    let (ci, co) = (r.random_range(1..4), r.random_range(1..4));
    let k = [1, 3][r.random_range(0..2)];
    let pad = r.random_range(0..=k / 2 + 1);
    let ins = [
        rand_tensor(&mut r, &[ci, 5, 4], -1.0, 1.0),
        rand_tensor(&mut r, &[co, ci, k, k], -1.0, 1.0),
        rand_tensor(&mut r, &[co], -1.0, 1.0),
    ];
    check_inputs(&ins, s, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), pad).unwrap())
}

fn c_conv_transpose(s: u64) -> f64 {
    let mut r = rng::stream(s, "convt");
    let (ci, co) = (r.random_range(1..4), r.random_range(1..4));
    let stride = r.random_range(1..4);
    let k = r.random_range(1..5);
    let ins = [
        rand_tensor(&mut r, &[ci, 3, 4], -1.0, 1.0),
        rand_tensor(&mut r, &[ci, co, k, k], -1.0, 1.0),
    ];
    check_inputs(&ins, s, &|g, v| g.conv_transpose2d(v[0], v[1], stride).unwrap())
}

fn c_shuffle(s: u64) -> f64 {
    let mut r = rng::stream(s, "shuffle");
    let a = check_inputs(&[rand_tensor(&mut r, &[8, 2, 3], -1.0, 1.0)], s, &|g, v| g.pixel_shuffle(v[0], 2).unwrap());
    let b = check_inputs(&[rand_tensor(&mut r, &[2, 4, 6], -1.0, 1.0)], s, &|g, v| {
        g.pixel_unshuffle(v[0], 2).unwrap()
    });
    a.max(b)
}

fn c_replicate(s: u64) -> f64 {
    let mut r = rng::stream(s, "replicate");
    let ins = [rand_tensor(&mut r, &[2, 3, 2], -1.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.replicate(v[0], 3).unwrap())
}

fn c_bicubic(s: u64) -> f64 {
    let mut r = rng::stream(s, "bicubic");
    let n = [2, 4][r.random_range(0..2)];
    let ins = [rand_tensor(&mut r, &[2, 4, 3], 0.0, 1.0)];
    check_inputs(&ins, s, &|g, v| g.bicubic_upsample(v[0], n).unwrap())
}

fn c_softmax(s: u64) -> f64 {
    let mut r = rng::stream(s, "softmax");
    let ins = [rand_tensor(&mut r, &[4, 3, 3], -3.0, 3.0)];
    check_inputs(&ins, s, &|g, v| g.softmax_channels(v[0]).unwrap())
}

fn c_layer_norm(s: u64) -> f64 {
    let mut r = rng::stream(s, "layer_norm");
    let ins = [
        rand_tensor(&mut r, &[5, 3, 2], -1.0, 1.0),
        rand_tensor(&mut r, &[5], 0.5, 1.5),
        rand_tensor(&mut r, &[5], -0.5, 0.5),
    ];
    check_inputs(&ins, s, &|g, v| g.layer_norm(v[0], v[1], v[2]).unwrap())
}

fn c_pool_scale_concat(s: u64) -> f64 {
    let mut r = rng::stream(s, "pool");
    let ins = [
        rand_tensor(&mut r, &[3, 4, 2], -1.0, 1.0),
        rand_tensor(&mut r, &[3, 1, 1], -1.0, 1.0),
        rand_tensor(&mut r, &[2, 4, 2], -1.0, 1.0),
    ];
    check_inputs(&ins, s, &|g, v| {
        let p = g.global_avg_pool(v[0]).unwrap();
        let p = g.mul(p, v[1]).unwrap();
        let sc = g.scale_channels(v[0], p).unwrap();
        g.concat_channels(sc, v[2]).unwrap()
    })
}

fn c_spectral_angle(s: u64) -> f64 {
    let mut r = rng::stream(s, "sam");
    let ins = [rand_tensor(&mut r, &[5, 3, 3], 0.05, 1.0), rand_tensor(&mut r, &[5, 3, 3], 0.05, 1.0)];
    check_inputs(&ins, s, &|g, v| g.spectral_angle(v[0], v[1]).unwrap())
}

fn c_attention(s: u64) -> f64 {
    let mut r = rng::stream(s, "attention");
    // ReLU inside the squeeze path: keep its pre-activation well away from 0
    // by using a large positive down-projection bias.
    let ins = [
        rand_tensor(&mut r, &[4, 3, 3], -1.0, 1.0),
        rand_tensor(&mut r, &[2, 4, 1, 1], -0.5, 0.5),
        rand_tensor(&mut r, &[2], 1.0, 2.0),
        rand_tensor(&mut r, &[4, 2, 1, 1], -1.0, 1.0),
        rand_tensor(&mut r, &[4], -0.5, 0.5),
    ];
    check_inputs(&ins, s, &|g, v| g.channel_attention(v[0], (v[1], v[2]), (v[3], v[4])).unwrap())
}

fn c_losses(s: u64) -> f64 {
    let mut r = rng::stream(s, "losses");
    let ins = [rand_tensor(&mut r, &[4, 3, 3], 0.05, 1.0), rand_tensor(&mut r, &[4, 3, 3], 0.05, 1.0)];
    let a = check_inputs(&ins, s, &|g, v| l1_loss(g, v[0], v[1]).unwrap());
    let b = check_inputs(&ins, s, &|g, v| sad_loss(g, v[0], v[1]).unwrap());
    let m = [c_row_tv_input(&mut r)];
    let c = check_inputs(&m, s, &|g, v| tv_loss(g, v[0]).unwrap());
    a.max(b).max(c)
}

fn c_row_tv_input(r: &mut Rng) -> Tensor {
    let steps = rand_away_from_zero(r, &[2, 5], 1e-2, 0.5);
    let mut d = steps.data().to_vec();
    for i in 0..2 {
        for j in 1..5 {
            d[i * 5 + j] += d[i * 5 + j - 1];
        }
    }
    Tensor::new(vec![2, 5], d).unwrap()
}

fn c_gram(s: u64) -> f64 {
    let gram = Gram::new("g", GramConfig::new(4)).unwrap();
    let mut ps = ParamSet::new();
    gram.init(&mut ps, s).unwrap();
    let mut r = rng::stream(s, "gram");
    let x = rand_tensor(&mut r, &[4, 4, 4], -1.0, 1.0);
    let names: Vec<String> = ps.iter().map(|p| p.name().to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let wrt_params = check_params(&ps, &names, &x, s, &|g, ps, x| gram.forward(g, ps, x).unwrap());
    let wrt_input = check_inputs(&[x], s, &|g, v| gram.forward(g, &ps, v[0]).unwrap());
    wrt_params.max(wrt_input)
}

/// Every primitive plus the full GRAM block.
pub const GRADIENT_CASES: &[Case] = &[
    ("add", c_add),
    ("sub", c_sub),
    ("mul", c_mul),
    ("scale", c_scale),
    ("relu", c_relu),
    ("leaky_relu", c_leaky),
    ("sigmoid", c_sigmoid),
    ("abs", c_abs),
    ("sum/mean", c_sum_mean),
    ("reshape/transpose2d", c_reshape_transpose),
    ("row_tv", c_row_tv),
    ("conv2d", c_conv2d),
    ("conv_transpose2d", c_conv_transpose),
    ("pixel_shuffle/unshuffle", c_shuffle),
    ("replicate", c_replicate),
    ("bicubic_upsample", c_bicubic),
    ("softmax_channels", c_softmax),
    ("layer_norm", c_layer_norm),
    ("pool/scale/concat", c_pool_scale_concat),
    ("spectral_angle", c_spectral_angle),
    ("channel_attention", c_attention),
    ("losses", c_losses),
    ("gram_block", c_gram),
];

/// Worst relative error per case over `seeds` seeds.
pub fn gradient_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    GRADIENT_CASES
        .iter()
        .map(|(name, case)| (*name, (0..seeds).map(case).fold(0.0, f64::max)))
        .collect()
}

/// End-to-end SR gradient with respect to the head conv (G = 1, C = 8).
pub fn sr_head_gradient(seed: u64) -> f64 {
    let cfg = SrConfig {
        width: 8,
        grams: 1,
        mam: true,
        ..SrConfig::new(3, 2, 2)
    };
    let net = SrNetwork::new(cfg, seed).unwrap();
    let mut r = rng::stream(seed, "sr.grad");
    let x = rand_tensor(&mut r, &[3, 4, 4], 0.0, 1.0);
    let a = rand_tensor(&mut r, &[2, 4, 4], 0.0, 1.0);
    check_params(
        net.params(),
        &["sr.head.weight", "sr.head.bias"],
        &x,
        seed,
        &|g, ps, x| {
            let net = SrNetwork::from_params(cfg, ps.clone()).unwrap();
            let av = g.constant(a.clone());
            net.forward(g, x, Some(av)).unwrap()
        },
    )
}
