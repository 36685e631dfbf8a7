//! Augmentation set and its cross-frame application to frame pairs.
//!
//! Photometric transforms (brightness, contrast, saturation, hue, blur) only
//! touch pixel values. Geometric transforms (rescale, horizontal flip) move
//! pixels, so they are recorded in a [`GeometricLog`] and replayed on labels,
//! pseudo labels and flow fields to keep everything aligned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::flow::{rescale_flow, FlowField};
use crate::image::{nearest_source, resize_planes, ClassMap, Frame, FramePair, ProbMap, IGNORE};
use crate::synth::hsv_to_rgb;

pub const BRIGHTNESS_RANGE: (f64, f64) = (0.2, 1.8);
pub const CONTRAST_RANGE: (f64, f64) = (0.2, 1.8);
pub const SATURATION_RANGE: (f64, f64) = (0.2, 1.8);
pub const HUE_RANGE: (f64, f64) = (0.8, 1.2);
pub const BLUR_KERNELS: [usize; 3] = [5, 7, 9];
pub const RESCALE_RANGE: (f64, f64) = (0.8, 1.2);
pub const ENABLE_PROBABILITY: f64 = 0.5;

/// Degrees of hue rotation per unit of hue factor away from 1.
const HUE_DEGREES_PER_UNIT: f64 = 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toggle<T> {
    pub enabled: bool,
    pub value: T,
}

impl<T> Toggle<T> {
    pub fn on(value: T) -> Self {
        Toggle { enabled: true, value }
    }

    pub fn off(value: T) -> Self {
        Toggle {
            enabled: false,
            value,
        }
    }

    fn get(&self) -> Option<&T> {
        self.enabled.then_some(&self.value)
    }
}

/// One draw from the augmentation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub brightness: Toggle<f64>,
    pub contrast: Toggle<f64>,
    pub saturation: Toggle<f64>,
    pub hue: Toggle<f64>,
    /// Gaussian blur kernel size.
    pub blur: Toggle<usize>,
    pub hflip: Toggle<()>,
    pub rescale: Toggle<f64>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationSpec {
    /// Every transform disabled.
    pub fn identity() -> Self {
        AugmentationSpec {
            brightness: Toggle::off(1.0),
            contrast: Toggle::off(1.0),
            saturation: Toggle::off(1.0),
            hue: Toggle::off(1.0),
            blur: Toggle::off(5),
            hflip: Toggle::off(()),
            rescale: Toggle::off(1.0),
        }
    }

    /// Checks every enabled factor against its admissible range.
    pub fn in_range(&self) -> bool {
        let within = |t: &Toggle<f64>, (lo, hi): (f64, f64)| !t.enabled || (lo..=hi).contains(&t.value);
        within(&self.brightness, BRIGHTNESS_RANGE)
            && within(&self.contrast, CONTRAST_RANGE)
            && within(&self.saturation, SATURATION_RANGE)
            && within(&self.hue, HUE_RANGE)
            && within(&self.rescale, RESCALE_RANGE)
            && (!self.blur.enabled || BLUR_KERNELS.contains(&self.blur.value))
    }

    pub fn geometric_log(&self) -> GeometricLog {
        let mut ops = Vec::new();
        if let Some(&s) = self.rescale.get() {
            ops.push(GeometricOp::Rescale(s));
        }
        if self.hflip.enabled {
            ops.push(GeometricOp::HFlip);
        }
        GeometricLog { ops }
    }
}

/// Each transform on with probability 0.5; factors uniform in range.
pub fn sample_aug_spec<R: Rng + ?Sized>(rng: &mut R) -> AugmentationSpec {
    let mut factor = |(lo, hi): (f64, f64)| {
        let enabled = rng.random::<f64>() < ENABLE_PROBABILITY;
        let value = rng.random_range(lo..=hi);
        Toggle { enabled, value }
    };
    let brightness = factor(BRIGHTNESS_RANGE);
    let contrast = factor(CONTRAST_RANGE);
    let saturation = factor(SATURATION_RANGE);
    let hue = factor(HUE_RANGE);
    let blur = Toggle {
        enabled: rng.random::<f64>() < ENABLE_PROBABILITY,
        value: BLUR_KERNELS[rng.random_range(0..BLUR_KERNELS.len())],
    };
    let hflip = Toggle {
        enabled: rng.random::<f64>() < ENABLE_PROBABILITY,
        value: (),
    };
    let rescale = Toggle {
        enabled: rng.random::<f64>() < ENABLE_PROBABILITY,
        value: rng.random_range(RESCALE_RANGE.0..=RESCALE_RANGE.1),
    };
    AugmentationSpec {
        brightness,
        contrast,
        saturation,
        hue,
        blur,
        hflip,
        rescale,
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn map_pixels(frame: &mut Frame, mut f: impl FnMut([f64; 3]) -> [f64; 3]) {
    for y in 0..frame.height {
        for x in 0..frame.width {
            let out = f(frame.pixel(y, x));
            frame.set_pixel(y, x, out.map(|c| c.clamp(0.0, 1.0)));
        }
    }
}

pub(crate) fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

/// Normalized Gaussian taps for kernel size `k`.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (k / 2) as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Reflect-101 index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(frame: &Frame, k: usize) -> Frame {
    let taps = gaussian_kernel(k);
    let half = (k / 2) as isize;
    let (h, w) = (frame.height, frame.width);
    let hw = h * w;
    let mut tmp = vec![0.0; frame.data.len()];
    let mut out = vec![0.0; frame.data.len()];
    for c in 0..3 {
        let src = &frame.data[c * hw..(c + 1) * hw];
        let mid = &mut tmp[c * hw..(c + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                mid[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * src[y * w + reflect(x as isize + t as isize - half, w)])
                    .sum();
            }
        }
        let dst = &mut out[c * hw..(c + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * mid[reflect(y as isize + t as isize - half, h) * w + x])
                    .sum();
            }
        }
    }
    Frame {
        height: h,
        width: w,
        data: out,
    }
}

/// Colour jitter then blur, in that order; output clamped to `[0,1]`.
pub fn apply_photometric(frame: &Frame, spec: &AugmentationSpec) -> Frame {
    let mut out = frame.clone();
    if let Some(&b) = spec.brightness.get() {
        map_pixels(&mut out, |p| p.map(|c| c * b));
    }
    if let Some(&c) = spec.contrast.get() {
        let n = (out.height * out.width) as f64;
        let mut mean = 0.0;
        for y in 0..out.height {
            for x in 0..out.width {
                mean += luma(out.pixel(y, x));
            }
        }
        mean /= n;
        map_pixels(&mut out, |p| p.map(|v| mean + c * (v - mean)));
    }
    if let Some(&s) = spec.saturation.get() {
        map_pixels(&mut out, |p| {
            let l = luma(p);
            p.map(|v| l + s * (v - l))
        });
    }
    if let Some(&f) = spec.hue.get() {
        let shift = (f - 1.0) * HUE_DEGREES_PER_UNIT;
        map_pixels(&mut out, |p| {
            let (h, s, v) = rgb_to_hsv(p);
            hsv_to_rgb(h + shift, s, v)
        });
    }
    if let Some(&k) = spec.blur.get() {
        out = gaussian_blur(&out, k);
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeometricOp {
    /// Resize by the factor, then centre-crop or pad back to the input size.
    Rescale(f64),
    HFlip,
}

/// Ordered geometric transforms applied to one frame pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometricLog {
    pub ops: Vec<GeometricOp>,
}

fn scaled(n: usize, s: f64) -> usize {
    ((n as f64 * s).round() as usize).max(1)
}

/// Offset of the centred window of `n_out` inside `n_in` (negative pads).
fn center_offset(n_in: usize, n_out: usize) -> isize {
    (n_in as isize - n_out as isize) / 2
}

/// Centre crop/pad of planar data from `(h, w)` to `(out_h, out_w)`.
fn center_fit<T: Copy>(
    data: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
    pad: T,
) -> Vec<T> {
    let (oy, ox) = (center_offset(h, out_h), center_offset(w, out_w));
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for c in 0..planes {
        for y in 0..out_h {
            let sy = y as isize + oy;
            for x in 0..out_w {
                let sx = x as isize + ox;
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                out.push(if inside {
                    data[(c * h + sy as usize) * w + sx as usize]
                } else {
                    pad
                });
            }
        }
    }
    out
}

fn hflip_planes<T: Copy>(data: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for c in 0..planes {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = data[(c * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

fn nearest_resize<T: Copy>(data: &[T], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(planes * oh * ow);
    for c in 0..planes {
        for y in 0..oh {
            let sy = nearest_source(y, h, oh);
            for x in 0..ow {
                out.push(data[(c * h + sy) * w + nearest_source(x, w, ow)]);
            }
        }
    }
    out
}

impl GeometricLog {
    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn hflip_count(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, GeometricOp::HFlip)).count()
    }

    pub fn apply_frame(&self, frame: &Frame) -> Frame {
        let (h, w) = (frame.height, frame.width);
        let mut data = frame.data.clone();
        for op in &self.ops {
            data = match *op {
                GeometricOp::Rescale(s) => {
                    let size = (scaled(h, s), scaled(w, s));
                    let r = resize_planes(&data, 3, (h, w), size);
                    center_fit(&r, 3, size, (h, w), 0.0)
                }
                GeometricOp::HFlip => hflip_planes(&data, 3, h, w),
            };
        }
        Frame { height: h, width: w, data }
    }

    /// Nearest-neighbour transform of a class map; padding reads [`IGNORE`].
    pub fn apply_classes(&self, map: &ClassMap) -> ClassMap {
        let (h, w) = (map.height, map.width);
        let mut data = map.data.clone();
        for op in &self.ops {
            data = match *op {
                GeometricOp::Rescale(s) => {
                    let size = (scaled(h, s), scaled(w, s));
                    let r = nearest_resize(&data, 1, (h, w), size);
                    center_fit(&r, 1, size, (h, w), IGNORE)
                }
                GeometricOp::HFlip => hflip_planes(&data, 1, h, w),
            };
        }
        ClassMap { height: h, width: w, data }
    }

    /// Nearest-neighbour transform of every channel of a probability map.
    pub fn apply_probs_nearest(&self, map: &ProbMap) -> ProbMap {
        let (k, h, w) = (map.classes, map.height, map.width);
        let mut data = map.data.clone();
        for op in &self.ops {
            data = match *op {
                GeometricOp::Rescale(s) => {
                    let size = (scaled(h, s), scaled(w, s));
                    let r = nearest_resize(&data, k, (h, w), size);
                    center_fit(&r, k, size, (h, w), 0.0)
                }
                GeometricOp::HFlip => hflip_planes(&data, k, h, w),
            };
        }
        ProbMap { classes: k, height: h, width: w, data }
    }

    pub fn apply_flow(&self, flow: &FlowField) -> Result<FlowField> {
        let (h, w) = (flow.height, flow.width);
        let mut f = flow.clone();
        for op in &self.ops {
            f = match *op {
                GeometricOp::Rescale(s) => {
                    let r = rescale_flow(&f, s, s)?;
                    let size = (r.height, r.width);
                    FlowField {
                        height: h,
                        width: w,
                        du: center_fit(&r.du, 1, size, (h, w), 0.0),
                        dv: center_fit(&r.dv, 1, size, (h, w), 0.0),
                        valid: center_fit(&r.valid, 1, size, (h, w), false),
                    }
                }
                GeometricOp::HFlip => f.hflip(),
            };
        }
        Ok(f)
    }
}

/// Applies the geometric part of `spec` to a frame with its label map and
/// flow, keeping all three aligned.
pub fn apply_geometric(
    frame: &Frame,
    labels: &ClassMap,
    flow: &FlowField,
    spec: &AugmentationSpec,
) -> Result<(Frame, ClassMap, FlowField)> {
    if (labels.height, labels.width) != (frame.height, frame.width)
        || (flow.height, flow.width) != (frame.height, frame.width)
    {
        return Err(shape_err!(
            "geometric augmentation needs aligned inputs: frame {}x{}, labels {}x{}, flow {}x{}",
            frame.height,
            frame.width,
            labels.height,
            labels.width,
            flow.height,
            flow.width
        ));
    }
    let log = spec.geometric_log();
    Ok((log.apply_frame(frame), log.apply_classes(labels), log.apply_flow(flow)?))
}

/// Full augmentation of a single frame: photometric, then geometric.
pub fn augment_frame(frame: &Frame, spec: &AugmentationSpec) -> Frame {
    spec.geometric_log().apply_frame(&apply_photometric(frame, spec))
}

/// Augments both frames of a pair with one shared spec.
///
/// The returned log holds the geometric transforms the trainer must replay
/// on pseudo labels and on the pair's flow.
pub fn apply_crossframe(pair: &FramePair, spec: &AugmentationSpec) -> Result<(FramePair, GeometricLog)> {
    let out = FramePair::new(augment_frame(&pair.prev, spec), augment_frame(&pair.cur, spec))?;
    Ok((out, spec.geometric_log()))
}
