//! Two-domain synthetic video benchmark.
//!
//! A clip shows textured rectangles and discs, one per foreground class,
//! translating with constant integer velocities over a static textured
//! background. Because motion is an exact integer translation, labels and
//! forward flow follow analytically from the shape trajectories, including
//! an occlusion-aware validity mask: a flow vector is valid only if its
//! pixel is still visible, at the displaced position, in the next frame.
//!
//! The target domain renders the very same scene and then applies a fixed
//! appearance shift (hue rotation, per-channel affine colour change, a static
//! texture overlay, and per-frame Gaussian noise). Geometry is drawn from a
//! separate random stream, so both domains share labels and flow exactly.

mod dataset;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{ClassMap, Frame, FramePair};

pub use dataset::{gen_dataset, ClipEntry, Dataset, DatasetManifest, GenConfig, Split, MANIFEST_FILE};
pub use io::{clip_to_bytes, load_clip, parse_clip, save_clip, CLIP_MAGIC, CLIP_VERSION};

/// Largest per-axis speed, in pixels per frame.
pub const MAX_SPEED: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Rect { half_w: i32, half_h: i32 },
    Disc { radius: i32 },
}

/// One moving object; position is the integer centre at frame 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: u8,
    pub kind: ShapeKind,
    pub cx: i32,
    pub cy: i32,
    pub vx: i32,
    pub vy: i32,
}

impl ShapeSpec {
    fn covers(&self, t: usize, x: i32, y: i32) -> bool {
        let dx = x - (self.cx + self.vx * t as i32);
        let dy = y - (self.cy + self.vy * t as i32);
        match self.kind {
            ShapeKind::Rect { half_w, half_h } => dx.abs() <= half_w && dy.abs() <= half_h,
            ShapeKind::Disc { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }
}

/// Appearance change applied to target-domain frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub hue_rotation_deg: f64,
    pub channel_gain: [f64; 3],
    pub channel_bias: [f64; 3],
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
    /// Period, in pixels, of the static sinusoidal texture overlay.
    pub texture_period: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            hue_rotation_deg: 30.0,
            channel_gain: [0.85, 1.0, 0.8],
            channel_bias: [0.08, 0.0, 0.1],
            noise_sigma: 0.06,
            texture_amplitude: 0.08,
            texture_period: 6.0,
        }
    }
}

/// Everything needed to render one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub length: usize,
    pub domain: Domain,
    pub shift: DomainShift,
    /// Explicit shapes; when `None` they are drawn from the seed.
    pub shapes: Option<Vec<ShapeSpec>>,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, classes: usize, length: usize) -> Self {
        SceneSpec {
            height,
            width,
            classes,
            length,
            domain: Domain::Source,
            shift: DomainShift::default(),
            shapes: None,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_shapes(mut self, shapes: Vec<ShapeSpec>) -> Self {
        self.shapes = Some(shapes);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::Config(format!(
                "frames must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        if !(2..=8).contains(&self.classes) {
            return Err(Error::Config(format!("class count must be in 2..=8, got {}", self.classes)));
        }
        if self.length < 3 {
            return Err(Error::Config(format!("clips need at least 3 frames, got {}", self.length)));
        }
        if let Some(shapes) = &self.shapes {
            if shapes.len() > self.classes - 1 {
                return Err(Error::Config(format!(
                    "{} shapes requested but only {} foreground classes",
                    shapes.len(),
                    self.classes - 1
                )));
            }
            for s in shapes {
                if s.class == 0 || s.class as usize >= self.classes {
                    return Err(Error::Config(format!("shape class {} out of 1..{}", s.class, self.classes)));
                }
                if s.vx.abs() > MAX_SPEED || s.vy.abs() > MAX_SPEED {
                    return Err(Error::Config(format!("shape velocity ({}, {}) exceeds {MAX_SPEED}", s.vx, s.vy)));
                }
            }
        }
        Ok(())
    }
}

/// A rendered clip with labels and forward ground-truth flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub domain: Domain,
    pub classes: usize,
    pub frames: Vec<Frame>,
    /// Absent when labels are withheld (unlabelled target training view).
    pub labels: Option<Vec<ClassMap>>,
    /// `gt_flow[t]` maps frame `t` to frame `t + 1`.
    pub gt_flow: Vec<FlowField>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    /// `(x_{k-1}, x_k)`.
    pub fn pair(&self, k: usize) -> Result<FramePair> {
        if k == 0 || k >= self.len() {
            return Err(Error::ClipTooShort(format!(
                "pair ending at frame {k} needs frames {}..={k} of a {}-frame clip",
                k.saturating_sub(1),
                self.len()
            )));
        }
        FramePair::new(self.frames[k - 1].clone(), self.frames[k].clone())
    }

    /// Copy with labels removed.
    pub fn without_labels(&self) -> Clip {
        Clip {
            labels: None,
            ..self.clone()
        }
    }

    /// Checks sizes, label range, and flow finiteness.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if self.frames.iter().any(|f| (f.height, f.width) != (h, w)) {
            return Err(Error::Format(format!("clip {} has frames of differing size", self.clip_id)));
        }
        if self.gt_flow.len() + 1 != self.len() {
            return Err(Error::Format(format!(
                "clip {} has {} frames but {} flow fields",
                self.clip_id,
                self.len(),
                self.gt_flow.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::Format(format!("clip {} label count mismatch", self.clip_id)));
            }
            for l in labels {
                if (l.height, l.width) != (h, w) || l.data.iter().any(|&c| c as usize >= self.classes) {
                    return Err(Error::Format(format!("clip {} has an invalid label map", self.clip_id)));
                }
            }
        }
        for f in &self.gt_flow {
            if (f.height, f.width) != (h, w) || f.du.iter().chain(&f.dv).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("clip {} has an invalid flow field", self.clip_id)));
            }
        }
        Ok(())
    }
}

/// Deterministic 64-bit mixer used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GEOMETRY_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Largest per-shape deviation from its class hue, in degrees.
const HUE_JITTER_DEG: f64 = 20.0;

/// Typical hue of a foreground class, in degrees.
fn class_hue(class: u8, classes: usize) -> f64 {
    (class as f64 - 1.0) / (classes as f64 - 1.0) * 360.0 + 15.0
}

/// Luminance pattern of a foreground class in shape-local coordinates.
///
/// Classes pair up by pattern (flat, horizontal stripes, vertical stripes,
/// checker) and differ within a pair by shape kind, so class identity never
/// depends on colour alone.
fn class_texture(class: u8, lx: i32, ly: i32) -> f64 {
    const AMPLITUDE: f64 = 0.12;
    let on = match (class.saturating_sub(1) / 2) % 4 {
        0 => return 0.0,
        1 => ly.div_euclid(2) % 2 == 0,
        2 => lx.div_euclid(2) % 2 == 0,
        _ => (lx.div_euclid(2) + ly.div_euclid(2)) % 2 == 0,
    };
    if on {
        AMPLITUDE
    } else {
        -AMPLITUDE
    }
}

pub(crate) fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

struct Scene {
    shapes: Vec<ShapeSpec>,
    shape_colors: Vec<[f64; 3]>,
    background: [f64; 3],
    background_tilt: [f64; 2],
    background_phase: [f64; 2],
}

fn random_shapes(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<ShapeSpec> {
    let count = rng.random_range(1..spec.classes);
    let mut classes: Vec<u8> = (1..spec.classes as u8).collect();
    // partial Fisher-Yates
    for i in 0..count {
        let j = rng.random_range(i..classes.len());
        classes.swap(i, j);
    }
    let (h, w) = (spec.height as i32, spec.width as i32);
    classes[..count]
        .iter()
        .map(|&class| {
            // odd classes are rectangles, even classes discs
            let kind = if class % 2 == 1 {
                ShapeKind::Rect {
                    half_w: rng.random_range(4..=8),
                    half_h: rng.random_range(4..=8),
                }
            } else {
                ShapeKind::Disc {
                    radius: rng.random_range(5..=9),
                }
            };
            ShapeSpec {
                class,
                kind,
                cx: rng.random_range(8..w - 8),
                cy: rng.random_range(8..h - 8),
                vx: rng.random_range(-MAX_SPEED..=MAX_SPEED),
                vy: rng.random_range(-MAX_SPEED..=MAX_SPEED),
            }
        })
        .collect()
}

fn build_scene(seed: u64, spec: &SceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, GEOMETRY_STREAM));
    let shapes = match &spec.shapes {
        Some(s) => s.clone(),
        None => random_shapes(&mut rng, spec),
    };
    let shape_colors = shapes
        .iter()
        .map(|s| {
            let hue = class_hue(s.class, spec.classes) + rng.random_range(-HUE_JITTER_DEG..HUE_JITTER_DEG);
            hsv_to_rgb(hue, 0.75, rng.random_range(0.82..0.98))
        })
        .collect();
    let grey = rng.random_range(0.1..0.22);
    let background = [
        grey + rng.random_range(-0.05..0.05),
        grey + rng.random_range(-0.05..0.05),
        grey + rng.random_range(-0.05..0.05),
    ];
    Scene {
        shapes,
        shape_colors,
        background,
        background_tilt: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
        background_phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)],
    }
}

/// Index of the topmost shape covering `(x, y)` at frame `t`, 0 for
/// background.
fn owner_at(scene: &Scene, t: usize, x: i32, y: i32) -> usize {
    scene
        .shapes
        .iter()
        .enumerate()
        .rev()
        .find(|(_, s)| s.covers(t, x, y))
        .map_or(0, |(i, _)| i + 1)
}

fn render_source(scene: &Scene, spec: &SceneSpec, t: usize, owners: &[usize]) -> Frame {
    let (h, w) = (spec.height, spec.width);
    let mut frame = Frame::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
            let owner = owners[y * w + x];
            let rgb = if owner == 0 {
                let ripple = 0.04
                    * ((x as f64 * 0.9 + scene.background_phase[0]).sin()
                        * (y as f64 * 0.7 + scene.background_phase[1]).sin());
                let tilt = scene.background_tilt[0] * (fx - 0.5) + scene.background_tilt[1] * (fy - 0.5);
                scene.background.map(|c| c + tilt + ripple)
            } else {
                let s = &scene.shapes[owner - 1];
                // texture attached to the shape so it moves with it
                let lx = x as i32 - (s.cx + s.vx * t as i32);
                let ly = y as i32 - (s.cy + s.vy * t as i32);
                let tex = class_texture(s.class, lx, ly);
                scene.shape_colors[owner - 1].map(|c| c + tex)
            };
            frame.set_pixel(y, x, rgb.map(|c| c.clamp(0.0, 1.0)));
        }
    }
    frame
}

/// Rotation of RGB about the grey axis by `deg` degrees.
pub(crate) fn rotate_hue_rgb(rgb: [f64; 3], deg: f64) -> [f64; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    let k = (1.0 - c) / 3.0;
    let r3 = (1.0f64 / 3.0).sqrt() * s;
    let m = [
        [c + k, k - r3, k + r3],
        [k + r3, c + k, k - r3],
        [k - r3, k + r3, c + k],
    ];
    [0, 1, 2].map(|i| m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2])
}

fn apply_shift(frame: &mut Frame, shift: &DomainShift, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, shift.noise_sigma.max(0.0)).expect("finite sigma");
    let period = shift.texture_period.max(1.0);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let rgb = rotate_hue_rgb(frame.pixel(y, x), shift.hue_rotation_deg);
            let tex = shift.texture_amplitude
                * (std::f64::consts::TAU * x as f64 / period).sin()
                * (std::f64::consts::TAU * y as f64 / period).cos();
            let out = [0, 1, 2].map(|c| {
                let v = shift.channel_gain[c] * rgb[c] + shift.channel_bias[c] + tex;
                let n = if shift.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                (v + n).clamp(0.0, 1.0)
            });
            frame.set_pixel(y, x, out);
        }
    }
}

/// Renders one clip from `seed`.
pub fn gen_clip(seed: u64, spec: &SceneSpec) -> Result<Clip> {
    spec.validate()?;
    let scene = build_scene(seed, spec);
    let (h, w) = (spec.height, spec.width);
    let owners: Vec<Vec<usize>> = (0..spec.length)
        .map(|t| {
            (0..h * w)
                .map(|i| owner_at(&scene, t, (i % w) as i32, (i / w) as i32))
                .collect()
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, NOISE_STREAM));
    let frames = (0..spec.length)
        .map(|t| {
            let mut f = render_source(&scene, spec, t, &owners[t]);
            if spec.domain == Domain::Target {
                apply_shift(&mut f, &spec.shift, &mut noise_rng);
            }
            // values are stored as f32 on disk; keep memory and disk identical
            f.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
            f
        })
        .collect();

    let class_of = |owner: usize| if owner == 0 { 0 } else { scene.shapes[owner - 1].class };
    let labels = owners
        .iter()
        .map(|o| ClassMap::new(h, w, o.iter().map(|&i| class_of(i)).collect()))
        .collect::<Result<Vec<_>>>()?;

    let gt_flow = (0..spec.length - 1)
        .map(|t| {
            let mut flow = FlowField::zeros(h, w);
            for i in 0..h * w {
                let owner = owners[t][i];
                let (vx, vy) = if owner == 0 {
                    (0, 0)
                } else {
                    let s = &scene.shapes[owner - 1];
                    (s.vx, s.vy)
                };
                let tx = (i % w) as i32 + vx;
                let ty = (i / w) as i32 + vy;
                flow.du[i] = vx as f64;
                flow.dv[i] = vy as f64;
                flow.valid[i] = tx >= 0
                    && ty >= 0
                    && (tx as usize) < w
                    && (ty as usize) < h
                    && owners[t + 1][ty as usize * w + tx as usize] == owner;
            }
            flow
        })
        .collect();

    Ok(Clip {
        clip_id: format!("{:?}-{seed:016x}", spec.domain).to_lowercase(),
        domain: spec.domain,
        classes: spec.classes,
        frames,
        labels: Some(labels),
        gt_flow,
    })
}
