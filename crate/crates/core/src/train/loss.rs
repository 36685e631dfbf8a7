use serde::{Deserialize, Serialize};

use crate::augment::{apply_crossframe, AugmentationSpec};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{ClassMap, FramePair, IGNORE};
use crate::model::{BoundModel, SegmentationModel};
use crate::synth::Clip;
use crate::tensor::{Graph, Var};

use super::flows::FlowProvider;
use super::pseudo::{check_tau, crossframe_pseudo_label, pseudo_label, PseudoLabelMap};

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss_source: f64,
    pub loss_target: f64,
    pub labelled_pixel_fraction: f64,
}

/// Labelled source pair: frames `(k-1, k)`, flow between them, labels of `k`.
#[derive(Clone, Debug)]
pub struct SourceSample {
    pub pair: FramePair,
    pub flow: FlowField,
    pub label: ClassMap,
}

/// Unlabelled target pair with the flow between its frames.
#[derive(Clone, Debug)]
pub struct PairSample {
    pub pair: FramePair,
    pub flow: FlowField,
}

/// Target window `(k-eta-1, k-eta, k-1, k)` for the temporal objective.
#[derive(Clone, Debug)]
pub struct TpsSample {
    /// Teacher input, frames `(k-eta-1, k-eta)`.
    pub prev: PairSample,
    /// Student input, frames `(k-1, k)`.
    pub cur: PairSample,
    /// Displacement from frame `k-eta` to frame `k`.
    pub propagation: FlowField,
}

impl SourceSample {
    pub fn from_clip(clip: &Clip, k: usize, flows: &mut FlowProvider) -> Result<Self> {
        let labels = clip
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("clip {} carries no labels", clip.clip_id)))?;
        Ok(SourceSample {
            pair: clip.pair(k)?,
            flow: flows.step(clip, k - 1)?,
            label: labels[k].clone(),
        })
    }
}

impl PairSample {
    pub fn from_clip(clip: &Clip, k: usize, flows: &mut FlowProvider) -> Result<Self> {
        Ok(PairSample {
            pair: clip.pair(k)?,
            flow: flows.step(clip, k.saturating_sub(1))?,
        })
    }
}

impl TpsSample {
    pub fn from_clip(clip: &Clip, k: usize, eta: usize, flows: &mut FlowProvider) -> Result<Self> {
        if eta == 0 || k < eta + 1 || k >= clip.len() {
            return Err(Error::ClipTooShort(format!(
                "eta={eta} at frame {k} needs frames {}..={k}, clip {} has {} frames",
                k.saturating_sub(eta + 1),
                clip.clip_id,
                clip.len()
            )));
        }
        Ok(TpsSample {
            prev: PairSample::from_clip(clip, k - eta, flows)?,
            cur: PairSample::from_clip(clip, k, flows)?,
            propagation: flows.span(clip, k - eta, k)?,
        })
    }
}

/// Target side of an objective.
#[derive(Clone, Copy, Debug)]
pub enum TargetInput<'a> {
    None,
    PixMatch(&'a PairSample),
    Tps(&'a TpsSample),
}

/// Nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub source: Var,
    /// Absent when the target term was skipped.
    pub target: Option<Var>,
    pub labelled_fraction: f64,
}

/// Values of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub source: f64,
    pub target: f64,
    pub labelled_fraction: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValue {
        LossValue {
            total: g.scalar_value(self.total),
            source: g.scalar_value(self.source),
            target: self.target.map_or(0.0, |t| g.scalar_value(t)),
            labelled_fraction: self.labelled_fraction,
        }
    }
}

/// Supervised cross-entropy of the fused prediction for frame `k`.
pub fn source_term(g: &mut Graph, model: &SegmentationModel, bound: &BoundModel, src: &SourceSample) -> Result<Var> {
    let prev = g.input(&src.pair.prev.to_tensor());
    let cur = g.input(&src.pair.cur.to_tensor());
    let out = model.forward_pair(g, bound, prev, cur, &src.flow)?;
    g.cross_entropy_masked(out.probs, &src.label.data, IGNORE)
}

/// Cross-entropy of the student on the augmented pair against pseudo
/// labels moved through the same geometric transforms.
pub fn student_term(
    g: &mut Graph,
    model: &SegmentationModel,
    bound: &BoundModel,
    sample: &PairSample,
    pseudo: &PseudoLabelMap,
    spec: &AugmentationSpec,
) -> Result<Var> {
    let (pair, log) = apply_crossframe(&sample.pair, spec)?;
    let flow = log.apply_flow(&sample.flow)?;
    let labels = log.apply_classes(&pseudo.labels);
    let prev = g.input(&pair.prev.to_tensor());
    let cur = g.input(&pair.cur.to_tensor());
    let out = model.forward_pair(g, bound, prev, cur, &flow)?;
    g.cross_entropy_masked(out.probs, &labels.data, IGNORE)
}

/// Records `L_src + lambda_t * L_tgt` on `g`.
///
/// The student is `model` with parameters `bound`; pseudo labels come from a
/// gradient-free pass of `teacher`. With `lambda_t == 0` the target side is
/// not evaluated at all.
#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    g: &mut Graph,
    model: &SegmentationModel,
    bound: &BoundModel,
    teacher: &SegmentationModel,
    src: &SourceSample,
    target: TargetInput<'_>,
    spec: &AugmentationSpec,
    tau: f64,
    lambda_t: f64,
) -> Result<LossTerms> {
    check_tau(tau)?;
    if !(lambda_t >= 0.0 && lambda_t.is_finite()) {
        return Err(Error::Config(format!("lambda_t must be finite and >= 0, got {lambda_t}")));
    }
    let source = source_term(g, model, bound, src)?;
    let skip = lambda_t == 0.0 || matches!(target, TargetInput::None);
    if skip {
        return Ok(LossTerms {
            total: source,
            source,
            target: None,
            labelled_fraction: 0.0,
        });
    }
    let (sample, pseudo) = match target {
        TargetInput::PixMatch(t) => (t, pseudo_label(&teacher.predict_pair(&t.pair, &t.flow)?, tau)?),
        TargetInput::Tps(t) => (
            &t.cur,
            crossframe_pseudo_label(teacher, &t.prev.pair, &t.prev.flow, &t.propagation, tau)?,
        ),
        TargetInput::None => unreachable!("handled above"),
    };
    let tgt = student_term(g, model, bound, sample, &pseudo, spec)?;
    let weighted = g.scale(tgt, lambda_t);
    let total = g.add(source, weighted)?;
    Ok(LossTerms {
        total,
        source,
        target: Some(tgt),
        labelled_fraction: pseudo.labelled_fraction,
    })
}

fn evaluate(
    model: &SegmentationModel,
    src: &SourceSample,
    target: TargetInput<'_>,
    spec: &AugmentationSpec,
    tau: f64,
    lambda_t: f64,
) -> Result<LossValue> {
    let mut g = Graph::new();
    let bound = model.bind_frozen(&mut g);
    let terms = build_objective(&mut g, model, &bound, model, src, target, spec, tau, lambda_t)?;
    Ok(terms.values(&g))
}

/// Source cross-entropy plus the weighted single-pair consistency term.
pub fn loss_pixmatch(
    model: &SegmentationModel,
    src: &SourceSample,
    tgt: &PairSample,
    spec: &AugmentationSpec,
    tau: f64,
    lambda_t: f64,
) -> Result<LossValue> {
    evaluate(model, src, TargetInput::PixMatch(tgt), spec, tau, lambda_t)
}

/// Source cross-entropy plus the weighted cross-frame term.
pub fn loss_tps(
    model: &SegmentationModel,
    src: &SourceSample,
    tgt: &TpsSample,
    spec: &AugmentationSpec,
    tau: f64,
    lambda_t: f64,
) -> Result<LossValue> {
    evaluate(model, src, TargetInput::Tps(tgt), spec, tau, lambda_t)
}

/// Supervised term alone.
pub fn loss_source(model: &SegmentationModel, src: &SourceSample) -> Result<f64> {
    let spec = AugmentationSpec::identity();
    Ok(evaluate(model, src, TargetInput::None, &spec, 0.0, 0.0)?.total)
}
