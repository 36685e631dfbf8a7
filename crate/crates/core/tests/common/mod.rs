#![allow(dead_code)]

pub mod checks;
pub mod grads;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tps::flow::FlowField;
use tps::model::{init_model, ModelConfig, SegmentationModel};
use tps::tensor::Tensor;
use tps::train::{PairSample, TpsSample};
use tps::{ClassMap, Frame, FramePair, ProbMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FramePair {
    FramePair::new(random_frame(rng, h, w), random_frame(rng, h, w)).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: usize) -> ClassMap {
    ClassMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..classes) as u8).collect()).unwrap()
}

pub fn random_probs(rng: &mut ChaCha8Rng, classes: usize, h: usize, w: usize) -> ProbMap {
    let hw = h * w;
    let raw: Vec<f64> = (0..classes * hw).map(|_| rng.random_range(0.01..1.0)).collect();
    let mut data = raw.clone();
    for p in 0..hw {
        let s: f64 = (0..classes).map(|c| raw[c * hw + p]).sum();
        for c in 0..classes {
            data[c * hw + p] = raw[c * hw + p] / s;
        }
    }
    ProbMap::new(classes, h, w, data).unwrap()
}

/// A model small enough for finite differences over every parameter.
pub fn tiny_model(seed: u64, classes: usize, h: usize, w: usize) -> SegmentationModel {
    init_model(
        seed,
        ModelConfig {
            widths: [2, 3, 3],
            ..ModelConfig::new(classes, h, w)
        },
    )
}

/// Every parameter replaced by a uniform draw, so no layer starts at zero.
pub fn scrambled(model: &SegmentationModel, seed: u64) -> SegmentationModel {
    let mut r = rng(seed);
    let params = model
        .params()
        .iter()
        .map(|t| Tensor::from_fn(t.shape().to_vec(), |_| r.random_range(-0.6..0.6)))
        .collect();
    SegmentationModel::from_params(model.config.clone(), params).unwrap()
}

pub fn uniform_flow(h: usize, w: usize, du: f64, dv: f64) -> FlowField {
    FlowField::uniform(h, w, du, dv)
}

/// A four-frame window (k-2, k-1, k-1, k) with uniform motion `(du, dv)`.
pub fn tps_sample(rng: &mut ChaCha8Rng, h: usize, w: usize, du: f64, dv: f64) -> TpsSample {
    let flow = uniform_flow(h, w, du, dv);
    let frames: Vec<Frame> = (0..3).map(|_| random_frame(rng, h, w)).collect();
    TpsSample {
        prev: PairSample {
            pair: FramePair::new(frames[0].clone(), frames[1].clone()).unwrap(),
            flow: flow.clone(),
        },
        cur: PairSample {
            pair: FramePair::new(frames[1].clone(), frames[2].clone()).unwrap(),
            flow: flow.clone(),
        },
        propagation: flow,
    }
}

/// Direct seven-loop convolution, zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdt) = (x.data(), w.data());
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((ni * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * wdt[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}
