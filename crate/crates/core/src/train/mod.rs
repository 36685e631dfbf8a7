//! Pseudo labelling, the PixMatch and TPS objectives, and the training loop.

mod flows;
mod loss;
mod pseudo;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_aug_spec, AugmentationSpec};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelConfig, SegmentationModel};
use crate::optim::{sgd_step, OptimizerState, SgdConfig};
use crate::synth::{Dataset, DatasetManifest, Split};
use crate::synth::{mix_seed, Clip};
use crate::tensor::Graph;

pub use flows::{FlowProvider, FlowSource};
pub use loss::{
    build_objective, loss_pixmatch, loss_source, loss_tps, source_term, student_term, LossRecord, LossTerms,
    LossValue, PairSample, SourceSample, TargetInput, TpsSample,
};
pub use pseudo::{crossframe_pseudo_label, pseudo_label, PseudoLabelMap};

pub const LOSS_CSV_HEADER: &str = "iter,loss_src,loss_tgt,labelled_frac";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SourceOnly,
    #[serde(rename = "pixmatch")]
    PixMatch,
    #[default]
    Tps,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::SourceOnly => "source_only",
            Objective::PixMatch => "pixmatch",
            Objective::Tps => "tps",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Propagation interval in frames.
    pub eta: usize,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    /// Target loss weight.
    pub lambda_t: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iters: usize,
    pub seed: u64,
    pub flow_source: FlowSource,
    pub objective: Objective,
    pub log_every: usize,
    pub shared_branches: bool,
    /// Leading iterations trained on the source term alone.
    pub warmup_iters: usize,
    /// Polynomial decay exponent: `lr * (1 - iter/iters)^power`; 0 keeps the
    /// rate constant.
    pub lr_decay_power: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        TrainConfig {
            eta: 1,
            tau: 0.0,
            lambda_t: 1.0,
            lr: sgd.learning_rate,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            iters: 2000,
            seed: 0,
            flow_source: FlowSource::GroundTruth,
            objective: Objective::Tps,
            log_every: 20,
            shared_branches: false,
            warmup_iters: 0,
            lr_decay_power: 0.0,
        }
    }
}

/// Learning rate of the desk experiment preset.
pub const DESK_LR: f64 = 0.01;

impl TrainConfig {
    /// Preset for the three-objective desk experiment: block-matched flow, a
    /// larger rate than the default and polynomial decay, so 2000 iterations
    /// are enough to fit the small network.
    pub fn desk(objective: Objective, seed: u64) -> Self {
        TrainConfig {
            objective,
            seed,
            lr: DESK_LR,
            lr_decay_power: 0.9,
            flow_source: FlowSource::BlockMatch,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.eta == 0 {
            return bad("eta must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if !(self.lambda_t.is_finite() && self.lambda_t >= 0.0) {
            return bad(format!("lambda_t must be finite and >= 0, got {}", self.lambda_t));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_decay_power.is_finite() && self.lr_decay_power >= 0.0) {
            return bad(format!("lr_decay_power must be >= 0, got {}", self.lr_decay_power));
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn model_config(&self, manifest: &DatasetManifest) -> ModelConfig {
        ModelConfig {
            shared_branches: self.shared_branches,
            ..ModelConfig::new(manifest.classes, manifest.height, manifest.width)
        }
    }

    /// Learning rate in effect at `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if self.lr_decay_power == 0.0 {
            return self.lr;
        }
        let progress = iter as f64 / self.iters.max(1) as f64;
        self.lr * (1.0 - progress).max(0.0).powf(self.lr_decay_power)
    }

    /// Smallest target frame index `k` a window may end at.
    fn first_target_frame(&self) -> usize {
        match self.objective {
            Objective::Tps => self.eta + 1,
            _ => 1,
        }
    }
}

/// Everything one iteration draws from its seeded stream.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationDraw {
    pub source_clip: usize,
    pub source_frame: usize,
    pub target_clip: usize,
    pub target_frame: usize,
    pub spec: AugmentationSpec,
}

/// Draw for iteration `iter`; independent of every other iteration.
pub fn draw_iteration(config: &TrainConfig, iter: usize, n_source: usize, n_target: usize, length: usize) -> IterationDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, iter as u64));
    let source_clip = rng.random_range(0..n_source);
    let source_frame = rng.random_range(1..length);
    let target_clip = rng.random_range(0..n_target.max(1));
    let target_frame = rng.random_range(config.first_target_frame().min(length - 1)..length);
    let spec = sample_aug_spec(&mut rng);
    IterationDraw {
        source_clip,
        source_frame,
        target_clip,
        target_frame,
        spec,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SegmentationModel,
    pub log: Vec<LossRecord>,
}

/// Source and unlabelled target clips held in memory for training.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub manifest: DatasetManifest,
    pub source: Vec<Clip>,
    pub target: Vec<Clip>,
}

impl TrainingData {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let ds = Dataset {
            manifest: manifest.clone(),
        };
        Ok(TrainingData {
            manifest: manifest.clone(),
            source: ds.load_split(Split::Source)?,
            target: ds.load_split(Split::TargetTrain)?,
        })
    }
}

pub fn train(manifest: &DatasetManifest, config: &TrainConfig) -> Result<TrainOutcome> {
    train_on(&TrainingData::load(manifest)?, config)
}

/// Deterministic training run over preloaded clips.
pub fn train_on(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(data, config, |_, _| {})
}

/// [`train_on`] that shows the model to `observer` before every step.
pub fn train_observed(
    data: &TrainingData,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, &SegmentationModel),
) -> Result<TrainOutcome> {
    config.validate()?;
    let length = data.manifest.length;
    if data.source.is_empty() {
        return Err(Error::InvalidManifest("no source clips".into()));
    }
    if config.objective != Objective::SourceOnly {
        if data.target.is_empty() {
            return Err(Error::InvalidManifest("no target training clips".into()));
        }
        if length < config.first_target_frame() + 1 {
            return Err(Error::ClipTooShort(format!(
                "eta={} needs clips of at least {} frames, dataset has {length}",
                config.eta,
                config.eta + 2
            )));
        }
    }
    let mut model = init_model(config.seed, config.model_config(&data.manifest));
    let mut opt = OptimizerState::new(config.sgd(), model.params());
    let mut flows = FlowProvider::new(config.flow_source);
    let mut log = Vec::new();

    for iter in 0..config.iters {
        let draw = draw_iteration(config, iter, data.source.len(), data.target.len(), length);
        let src_clip = &data.source[draw.source_clip];
        let tgt_clip = data.target.get(draw.target_clip);
        let src = SourceSample::from_clip(src_clip, draw.source_frame, &mut flows)?;
        let (pix, tps);
        let warming = iter < config.warmup_iters;
        let target = match (config.objective, tgt_clip) {
            _ if warming => TargetInput::None,
            (Objective::SourceOnly, _) | (_, None) => TargetInput::None,
            (Objective::PixMatch, Some(c)) => {
                pix = PairSample::from_clip(c, draw.target_frame, &mut flows)?;
                TargetInput::PixMatch(&pix)
            }
            (Objective::Tps, Some(c)) => {
                tps = TpsSample::from_clip(c, draw.target_frame, config.eta, &mut flows)?;
                TargetInput::Tps(&tps)
            }
        };

        observer(iter, &model);
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let terms = build_objective(
            &mut g,
            &model,
            &bound,
            &model,
            &src,
            target,
            &draw.spec,
            config.tau,
            config.lambda_t,
        )?;
        let values = terms.values(&g);
        let grads = g.backward(terms.total)?;
        let diagnose = |what: &str| {
            Error::NonFinite(format!(
                "{what} at iteration {iter} (loss_src={}, loss_tgt={}; source clip {} frame {}, target clip {} frame {})",
                values.source,
                values.target,
                src_clip.clip_id,
                draw.source_frame,
                tgt_clip.map_or("-", |c| c.clip_id.as_str()),
                draw.target_frame
            ))
        };
        if !values.total.is_finite() {
            return Err(diagnose("loss"));
        }
        for (p, v) in model.params_mut().iter_mut().zip(bound.vars()) {
            let grad = grads.get_or_zeros(*v, p.numel());
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(diagnose("gradient"));
            }
            p.set_grad(grad)?;
        }
        if iter % config.log_every == 0 {
            log.push(LossRecord {
                iteration: iter,
                loss_source: values.source,
                loss_target: values.target,
                labelled_pixel_fraction: values.labelled_fraction,
            });
            log::debug!(
                "iter {iter}: src {:.4} tgt {:.4} labelled {:.3}",
                values.source,
                values.target,
                values.labelled_fraction
            );
        }
        opt.config.learning_rate = config.lr_at(iter);
        sgd_step(model.params_mut(), &mut opt)?;
    }
    Ok(TrainOutcome { model, log })
}

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.loss_source, r.loss_target, r.labelled_pixel_fraction
        ));
    }
    out
}

pub fn write_loss_csv(log: &[LossRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(loss_csv(log).as_bytes()).map_err(|e| Error::io(path, e))
}
