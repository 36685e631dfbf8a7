//! Randomized finite-difference trials shared by the gradient tests and the
//! acceptance run.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tps::augment::{sample_aug_spec, AugmentationSpec};
use tps::flow::{warp_plan, FlowField, WarpMode};
use tps::gradcheck::{grad_check, GradCheckReport};
use tps::tensor::{Graph, Tensor, Var};
use tps::train::{build_objective, SourceSample, TargetInput};
use tps::{Result, IGNORE};

use super::{random_labels, random_pair, random_tensor, rng, scrambled, tiny_model, tps_sample};

pub const TRIALS: usize = 100;
pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Smooth non-linear read-out so linear ops get a non-constant gradient.
fn readout(g: &mut Graph, v: Var) -> Var {
    let s = g.elementwise(v, f64::sin, f64::cos);
    g.mean(s)
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (r.random_range(1..=2), r.random_range(1..=3), r.random_range(2..=6), r.random_range(2..=6))
}

fn random_flow(r: &mut ChaCha8Rng, h: usize, w: usize) -> FlowField {
    let n = h * w;
    FlowField::new(
        h,
        w,
        (0..n).map(|_| r.random_range(-1.5..1.5)).collect(),
        (0..n).map(|_| r.random_range(-1.5..1.5)).collect(),
        (0..n).map(|_| r.random_bool(0.9)).collect(),
    )
    .unwrap()
}

/// Entries away from the ReLU kink, so central differences stay one-sided.
fn off_kink(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.05..1.0);
        if r.random_bool(0.5) { m } else { -m }
    })
}

pub type Trial = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

pub fn conv2d(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    let o = r.random_range(1..=3);
    let k = [1, 3][r.random_range(0..2)];
    let stride = r.random_range(1..=2);
    let pad = r.random_range(0..=k / 2);
    let inputs = [
        random_tensor(r, vec![n, c, h.max(k), w.max(k)]),
        random_tensor(r, vec![o, c, k, k]),
        random_tensor(r, vec![o]),
    ];
    grad_check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            Ok(readout(g, y))
        },
        &inputs,
        EPS,
        TOL,
    )
}

pub fn relu(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    grad_check(
        |g, v| {
            let y = g.relu(v[0]);
            Ok(readout(g, y))
        },
        &[off_kink(r, vec![n, c, h, w])],
        EPS,
        TOL,
    )
}

pub fn softmax(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, _, h, w) = dims(r);
    let c = r.random_range(2..=5);
    grad_check(
        |g, v| {
            let y = g.softmax_channel(v[0])?;
            Ok(readout(g, y))
        },
        &[random_tensor(r, vec![n, c, h, w])],
        EPS,
        TOL,
    )
}

pub fn cross_entropy(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (_, _, h, w) = dims(r);
    let k = r.random_range(2..=5);
    let mut labels = random_labels(r, h, w, k).data;
    for l in labels.iter_mut() {
        if r.random_bool(0.2) {
            *l = IGNORE;
        }
    }
    grad_check(
        |g, v| {
            let p = g.softmax_channel(v[0])?;
            g.cross_entropy_masked(p, &labels, IGNORE)
        },
        &[random_tensor(r, vec![1, k, h, w])],
        EPS,
        TOL,
    )
}

pub fn bilinear_resize(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    let (oh, ow) = (r.random_range(1..=9), r.random_range(1..=9));
    grad_check(
        |g, v| {
            let y = g.bilinear_resize(v[0], oh, ow)?;
            Ok(readout(g, y))
        },
        &[random_tensor(r, vec![n, c, h, w])],
        EPS,
        TOL,
    )
}

pub fn warp(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    let mode = if r.random_bool(0.5) { WarpMode::Bilinear } else { WarpMode::Nearest };
    let plan = Arc::new(warp_plan(&random_flow(r, h, w), mode));
    grad_check(
        |g, v| {
            let y = g.spatial_map(v[0], plan.clone())?;
            Ok(readout(g, y))
        },
        &[random_tensor(r, vec![n, c, h, w])],
        EPS,
        TOL,
    )
}

pub fn select_concat(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    let mask = Arc::new((0..h * w).map(|_| r.random_bool(0.5)).collect::<Vec<_>>());
    let inputs = [random_tensor(r, vec![n, c, h, w]), random_tensor(r, vec![n, c, h, w])];
    grad_check(
        |g, v| {
            let s = g.select(mask.clone(), v[0], v[1])?;
            let y = g.concat_channels(s, v[1])?;
            Ok(readout(g, y))
        },
        &inputs,
        EPS,
        TOL,
    )
}

pub fn add_scale_squares(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (n, c, h, w) = dims(r);
    let factor = r.random_range(-2.0..2.0);
    let inputs = [random_tensor(r, vec![n, c, h, w]), random_tensor(r, vec![n, c, h, w])];
    grad_check(
        |g, v| {
            let s = g.scale(v[1], factor);
            let y = g.add(v[0], s)?;
            let q = g.sum_squares(y);
            let m = readout(g, y);
            g.add(q, m)
        },
        &inputs,
        EPS,
        TOL,
    )
}

/// Full objective (source term plus the cross-frame term) differentiated
/// with respect to every student parameter of a tiny model.
pub fn forward_pair_loss_tps(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (k, h, w) = (3, 8, 8);
    let seed = r.random::<u64>();
    let model = scrambled(&tiny_model(seed, k, h, w), seed ^ 1);
    let src = SourceSample {
        pair: random_pair(r, h, w),
        flow: FlowField::uniform(h, w, r.random_range(-1..=1) as f64, r.random_range(-1..=1) as f64),
        label: random_labels(r, h, w, k),
    };
    let (du, dv) = (r.random_range(-1..=1) as f64, r.random_range(-1..=1) as f64);
    let tgt = tps_sample(r, h, w, du, dv);
    let mut spec: AugmentationSpec = sample_aug_spec(r);
    spec.rescale.enabled = false;
    let lambda_t = r.random_range(0.1..2.0);
    let teacher = model.clone();
    grad_check(
        |g, v| {
            let bound = model.bind_vars(v.to_vec());
            let terms = build_objective(g, &model, &bound, &teacher, &src, TargetInput::Tps(&tgt), &spec, 0.0, lambda_t)?;
            Ok(terms.total)
        },
        model.params(),
        EPS,
        TOL,
    )
}

pub const OPS: [(&str, Trial); 8] = [
    ("conv2d", conv2d),
    ("relu", relu),
    ("softmax_channel", softmax),
    ("cross_entropy_masked", cross_entropy),
    ("bilinear_resize", bilinear_resize),
    ("warp", warp),
    ("select+concat", select_concat),
    ("add+scale+sum_squares", add_scale_squares),
];

/// Worst relative error over `trials` seeded trials.
pub fn worst(trial: Trial, seed: u64, trials: usize) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        worst = worst.max(trial(&mut r)?.max_rel_error);
    }
    Ok(worst)
}
