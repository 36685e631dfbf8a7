//! Measurements shared by the property tests and the acceptance run. Each
//! returns the quantity a criterion bounds, over seeded random trials.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tps::augment::AugmentationSpec;
use tps::eval::{accumulate_confusion, feature_variance_from_samples, miou, ConfusionMatrix, FeatureVarianceReport};
use tps::flow::{estimate_flow_blockmatch, warp_classes, warp_probs, BlockMatchParams, FlowField, WarpMode};
use tps::tensor::Graph;
use tps::train::{crossframe_pseudo_label, loss_pixmatch, loss_source, loss_tps, pseudo_label, PairSample, SourceSample};
use tps::{Frame, FramePair, ProbMap, IGNORE};

use super::{naive_conv, random_labels, random_pair, random_probs, random_tensor, rng, scrambled, tiny_model, tps_sample};

pub const TRIALS: usize = 50;

/// Largest absolute difference between `conv2d` and the direct loop.
pub fn conv_vs_naive(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (n, c, o) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
        let k = [1, 3, 5][r.random_range(0..3)];
        let (h, w) = (r.random_range(k..=9), r.random_range(k..=9));
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=k / 2);
        let x = random_tensor(&mut r, vec![n, c, h, w]);
        let wt = random_tensor(&mut r, vec![o, c, k, k]);
        let b = random_tensor(&mut r, vec![o]);
        let mut g = Graph::new();
        let (vx, vw, vb) = (g.input(&x), g.input(&wt), g.input(&b));
        let y = g.conv2d(vx, vw, vb, stride, pad).unwrap();
        let want = naive_conv(&x, &wt, &b, stride, pad);
        assert_eq!(g.value(y).len(), want.len());
        for (a, b) in g.value(y).iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Whether `accumulate_confusion` matches a double loop on every trial.
pub fn confusion_vs_loop(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let k = r.random_range(2..=6);
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let pred = random_labels(&mut r, h, w, k);
        let mut gt = random_labels(&mut r, h, w, k);
        for v in gt.data.iter_mut() {
            if r.random_bool(0.15) {
                *v = IGNORE;
            }
        }
        let mut cm = ConfusionMatrix::new(k);
        accumulate_confusion(&pred, &gt, &mut cm).unwrap();
        let mut want = vec![vec![0u64; k]; k];
        for y in 0..h {
            for x in 0..w {
                let g = gt.get(y, x);
                if g != IGNORE {
                    want[g as usize][pred.get(y, x) as usize] += 1;
                }
            }
        }
        let miou_ok = match miou(&cm) {
            Ok((per, mean)) => {
                let mut present = Vec::new();
                for c in 0..k {
                    let tp = want[c][c];
                    let fp: u64 = (0..k).filter(|&i| i != c).map(|i| want[i][c]).sum();
                    let fn_: u64 = (0..k).filter(|&j| j != c).map(|j| want[c][j]).sum();
                    let union = tp + fp + fn_;
                    let iou = (union > 0).then(|| tp as f64 / union as f64);
                    if per[c] != iou {
                        return false;
                    }
                    present.extend(iou);
                }
                mean == present.iter().sum::<f64>() / present.len() as f64
            }
            Err(_) => want.iter().flatten().all(|&v| v == 0),
        };
        miou_ok && (0..k).all(|i| (0..k).all(|j| cm.get(i, j) == want[i][j]))
    })
}

/// (1/2 + 4/7) / 2, which rounds to 0.5357.
pub const MIOU_HAND: f64 = 15.0 / 28.0;

pub fn miou_hand_example() -> f64 {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
    miou(&cm).unwrap().1
}

/// Zero flow leaves class maps and probability maps bit-identical.
pub fn warp_zero_is_identity(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let (k, h, w) = (r.random_range(2..=5), r.random_range(1..=9), r.random_range(1..=9));
        let labels = random_labels(&mut r, h, w, k);
        let probs = random_probs(&mut r, k, h, w);
        let zero = FlowField::zeros(h, w);
        let (wl, vl) = warp_classes(&labels, &zero).unwrap();
        let (wn, vn) = warp_probs(&probs, &zero, WarpMode::Nearest).unwrap();
        let (wb, vb) = warp_probs(&probs, &zero, WarpMode::Bilinear).unwrap();
        wl == labels && wn == probs && wb == probs && [vl, vn, vb].iter().all(|v| v.iter().all(|&b| b))
    })
}

/// Uniform integer flow moves every value by exactly that offset; pixels
/// nothing lands on are invalid (IGNORE for class maps).
pub fn warp_uniform_is_shift(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let (k, h, w) = (r.random_range(2..=5), r.random_range(2..=9), r.random_range(2..=9));
        let (du, dv) = (r.random_range(-3i64..=3), r.random_range(-3i64..=3));
        let labels = random_labels(&mut r, h, w, k);
        let probs = random_probs(&mut r, k, h, w);
        let flow = FlowField::uniform(h, w, du as f64, dv as f64);
        let (wl, vl) = warp_classes(&labels, &flow).unwrap();
        let (wb, vb) = warp_probs(&probs, &flow, WarpMode::Bilinear).unwrap();
        (0..h).all(|y| {
            (0..w).all(|x| {
                let (sx, sy) = (x as i64 - du, y as i64 - dv);
                let inside = sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64;
                let p = y * w + x;
                if !inside {
                    return !vl[p] && !vb[p] && wl.data[p] == IGNORE;
                }
                let (sx, sy) = (sx as usize, sy as usize);
                vl[p]
                    && vb[p]
                    && wl.data[p] == labels.get(sy, sx)
                    && (0..k).all(|c| wb.at(c, y, x) == probs.at(c, sy, sx))
            })
        })
    })
}

/// Frame with values on a 1/256 grid so SAD sums are exact in any order.
fn quantized_frame(r: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(h, w, (0..3 * h * w).map(|_| r.random_range(0..256) as f64 / 256.0).collect()).unwrap()
}

/// Independent exhaustive search: enumerate every admissible displacement of
/// every tile and keep the smallest (SAD, |d|^2, du, dv).
fn exhaustive_blockmatch(a: &Frame, b: &Frame, block: usize, radius: i64) -> FlowField {
    let (h, w) = (a.height as i64, a.width as i64);
    let mut flow = FlowField::zeros(a.height, a.width);
    let tiles_y = (h + block as i64 - 1) / block as i64;
    let tiles_x = (w + block as i64 - 1) / block as i64;
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (y0, x0) = (ty * block as i64, tx * block as i64);
            let (y1, x1) = ((y0 + block as i64).min(h), (x0 + block as i64).min(w));
            let mut candidates = Vec::new();
            for dv in -radius..=radius {
                for du in -radius..=radius {
                    if x0 + du < 0 || y0 + dv < 0 || x1 + du > w || y1 + dv > h {
                        continue;
                    }
                    let mut sad = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let pa = a.pixel(y as usize, x as usize);
                            let pb = b.pixel((y + dv) as usize, (x + du) as usize);
                            sad += (0..3).map(|c| (pa[c] - pb[c]).abs()).sum::<f64>();
                        }
                    }
                    candidates.push((sad, du * du + dv * dv, du, dv));
                }
            }
            let best = candidates
                .into_iter()
                .min_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)).then(p.3.cmp(&q.3)))
                .unwrap();
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = (y * w + x) as usize;
                    flow.du[p] = best.2 as f64;
                    flow.dv[p] = best.3 as f64;
                }
            }
        }
    }
    flow
}

/// Block matching agrees with the independent search on every trial. Half of
/// the trials use a shifted copy so the true motion is a strict minimum.
pub fn blockmatch_vs_exhaustive(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|i| {
        let (h, w) = (r.random_range(5..=20), r.random_range(5..=20));
        let block = [1, 3, 5, 7][r.random_range(0..4)];
        let radius = r.random_range(0..=4);
        let a = quantized_frame(&mut r, h, w);
        let b = if i % 2 == 0 {
            let (du, dv) = (r.random_range(-2i64..=2), r.random_range(-2i64..=2));
            let mut b = quantized_frame(&mut r, h, w);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sx, sy) = (x - du, y - dv);
                    if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        b.set_pixel(y as usize, x as usize, a.pixel(sy as usize, sx as usize));
                    }
                }
            }
            b
        } else {
            quantized_frame(&mut r, h, w)
        };
        let got = estimate_flow_blockmatch(&a, &b, BlockMatchParams { block, radius }).unwrap();
        got == exhaustive_blockmatch(&a, &b, block, radius as i64)
    })
}

/// With tau = 0 every warp-valid pixel of a cross-frame pseudo label is
/// labelled and every warp-invalid pixel is IGNORE.
pub fn tau_zero_labels_every_valid_pixel(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let (k, h, w) = (r.random_range(2..=5), 8, 8);
        let model = scrambled(&tiny_model(r.random(), k, h, w), r.random());
        let (du, dv) = (r.random_range(-3..=3) as f64, r.random_range(-3..=3) as f64);
        let s = tps_sample(&mut r, h, w, du, dv);
        let pl = crossframe_pseudo_label(&model, &s.prev.pair, &s.prev.flow, &s.propagation, 0.0).unwrap();
        let probs = model.predict_pair(&s.prev.pair, &s.prev.flow).unwrap();
        let (_, valid) = warp_probs(&probs, &s.propagation, WarpMode::Bilinear).unwrap();
        let expected = valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64;
        pl.labels.data.iter().zip(&valid).all(|(&l, &v)| (l != IGNORE) == v) && pl.labelled_fraction == expected
    })
}

/// Labelled pixel count never rises as tau sweeps 0, 0.1, ..., 0.9.
pub fn labelled_count_monotone_in_tau(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let (k, h, w) = (r.random_range(2..=6), r.random_range(1..=8), r.random_range(1..=8));
        let probs = random_probs(&mut r, k, h, w);
        let counts: Vec<usize> = (0..10)
            .map(|i| pseudo_label(&probs, i as f64 / 10.0).unwrap().labels.labelled_count())
            .collect();
        counts.windows(2).all(|p| p[1] <= p[0])
    })
}

/// Scaling one pixel's probability vector by c > 0 and renormalizing keeps
/// its pseudo label.
pub fn argmax_scale_invariant(seed: u64, trials: usize) -> bool {
    let mut r = rng(seed);
    (0..trials).all(|_| {
        let (k, h, w) = (r.random_range(2..=6), r.random_range(1..=6), r.random_range(1..=6));
        let probs = random_probs(&mut r, k, h, w);
        let base = pseudo_label(&probs, 0.0).unwrap().labels;
        let hw = h * w;
        let mut scaled = probs.data.clone();
        for p in 0..hw {
            let c = r.random_range(1e-3..1e3);
            let s: f64 = (0..k).map(|ch| probs.data[ch * hw + p] * c).sum();
            for ch in 0..k {
                scaled[ch * hw + p] = probs.data[ch * hw + p] * c / s;
            }
        }
        let scaled = ProbMap::new(k, h, w, scaled).unwrap();
        pseudo_label(&scaled, 0.0).unwrap().labels == base
    })
}

fn random_source(r: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> SourceSample {
    SourceSample {
        pair: random_pair(r, h, w),
        flow: FlowField::uniform(h, w, r.random_range(-2..=2) as f64, r.random_range(-2..=2) as f64),
        label: random_labels(r, h, w, k),
    }
}

/// Worst error of: the target weight recovered from lambda in {0, 1}
/// against the directly computed target term; the total at a third lambda
/// against the affine prediction; and lambda = 0 against the source loss.
pub fn lambda_affine_error(seed: u64, trials: usize) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut affine, mut reduce): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let (k, h, w) = (r.random_range(2..=5), 8, 8);
        let model = scrambled(&tiny_model(r.random(), k, h, w), r.random());
        let src = random_source(&mut r, k, h, w);
        let (du, dv) = (r.random_range(-2..=2) as f64, r.random_range(-2..=2) as f64);
        let tgt = tps_sample(&mut r, h, w, du, dv);
        let spec = AugmentationSpec {
            rescale: tps::augment::Toggle::off(1.0),
            ..tps::augment::sample_aug_spec(&mut r)
        };
        let tau = r.random_range(0.0..0.6);
        let l0 = loss_tps(&model, &src, &tgt, &spec, tau, 0.0).unwrap();
        let l1 = loss_tps(&model, &src, &tgt, &spec, tau, 1.0).unwrap();
        let lam = r.random_range(0.1..2.0);
        let ll = loss_tps(&model, &src, &tgt, &spec, tau, lam).unwrap();
        let coeff = l1.total - l0.total;
        affine = affine
            .max((coeff - l1.target).abs())
            .max((ll.total - (l0.total + lam * coeff)).abs());
        reduce = reduce.max((l0.total - loss_source(&model, &src).unwrap()).abs());
        let pm0 = loss_pixmatch(&model, &src, &tgt.cur, &spec, tau, 0.0).unwrap();
        reduce = reduce.max((pm0.total - l0.total).abs());
    }
    (affine, reduce)
}

/// On a static clip with zero flow and identity augmentation the two
/// objectives coincide; returns the worst absolute gap.
pub fn static_tps_vs_pixmatch(seed: u64, trials: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (k, h, w) = (r.random_range(2..=5), 8, 8);
        let model = scrambled(&tiny_model(r.random(), k, h, w), r.random());
        let src = random_source(&mut r, k, h, w);
        let frame = super::random_frame(&mut r, h, w);
        let pair = FramePair::new(frame.clone(), frame).unwrap();
        let still = PairSample {
            pair,
            flow: FlowField::zeros(h, w),
        };
        let tgt = tps::train::TpsSample {
            prev: still.clone(),
            cur: still.clone(),
            propagation: FlowField::zeros(h, w),
        };
        let spec = AugmentationSpec::identity();
        let tau = r.random_range(0.0..0.6);
        let lam = r.random_range(0.1..2.0);
        let a = loss_tps(&model, &src, &tgt, &spec, tau, lam).unwrap();
        let b = loss_pixmatch(&model, &src, &still, &spec, tau, lam).unwrap();
        worst = worst.max((a.total - b.total).abs()).max((a.target - b.target).abs());
    }
    worst
}

/// `(seed, a, s)` cases for [`gaussian_clusters`].
pub const GAUSSIAN_CASES: [(u64, f64, f64); 4] = [(1, 2.0, 1.0), (2, 1.0, 1.0), (3, 1.5, 0.8), (4, 3.0, 0.5)];
/// Sample means carry relative error near `s / (a * sqrt(n))`; this keeps it
/// well under a percent for every case.
pub const GAUSSIAN_PER_CLASS: usize = 50_000;

/// Two 2-D Gaussian classes at (+-a, 0) with isotropic variance s^2. After
/// whitening, the x axis carries inter a^2/(a^2+s^2) and intra
/// s^2/(a^2+s^2); the y axis, when kept, carries only intra 1. Returns the
/// report and the closed-form (inter, intra).
pub fn gaussian_clusters(seed: u64, a: f64, s: f64, per_class: usize) -> (FeatureVarianceReport, f64, f64) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, s).unwrap();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (class, centre) in [(0usize, -a), (1, a)] {
        for _ in 0..per_class {
            samples.push(vec![centre + noise.sample(&mut r), noise.sample(&mut r)]);
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut r);
    let samples: Vec<Vec<f64>> = order.iter().map(|&i| samples[i].clone()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let report = feature_variance_from_samples(&samples, &labels).unwrap();
    let x = a * a / (a * a + s * s);
    // The y axis is dropped when x alone covers the retained variance share.
    if (a * a + s * s) / (a * a + 2.0 * s * s) >= tps::eval::PCA_VARIANCE_KEPT {
        (report, x, 1.0 - x)
    } else {
        (report, x / 2.0, (1.0 - x + 1.0) / 2.0)
    }
}

/// Per-class constant, class-distinct features.
pub fn constant_cluster_intra(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = 6;
    let centres: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..200 {
        let c = r.random_range(0..4);
        samples.push(centres[c].clone());
        labels.push(c);
    }
    feature_variance_from_samples(&samples, &labels).unwrap().sigma2_intra
}

