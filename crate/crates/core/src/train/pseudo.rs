use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{warp_probs, FlowField, WarpMode};
use crate::image::{ClassMap, FramePair, ProbMap, IGNORE};
use crate::model::SegmentationModel;

/// Hard labels taken from a prediction, with filtered pixels set to
/// [`IGNORE`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelMap {
    pub labels: ClassMap,
    pub tau: f64,
    pub labelled_fraction: f64,
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1), got {tau}")));
    }
    Ok(())
}

fn threshold(probs: &ProbMap, tau: f64, valid: Option<&[bool]>) -> Result<PseudoLabelMap> {
    check_tau(tau)?;
    let (k, hw) = (probs.classes, probs.height * probs.width);
    let mut labels = probs.argmax();
    for px in 0..hw {
        let usable = valid.is_none_or(|v| v[px]);
        let best = probs.data[labels.data[px] as usize * hw + px];
        debug_assert!((labels.data[px] as usize) < k);
        if !usable || best <= tau {
            labels.data[px] = IGNORE;
        }
    }
    let labelled_fraction = labels.labelled_fraction();
    Ok(PseudoLabelMap {
        labels,
        tau,
        labelled_fraction,
    })
}

/// Per pixel: the argmax class when its probability exceeds `tau`, else
/// [`IGNORE`].
pub fn pseudo_label(probs: &ProbMap, tau: f64) -> Result<PseudoLabelMap> {
    threshold(probs, tau, None)
}

/// Pseudo labels for frame `k` from the prediction on the pair ending at
/// frame `k - eta`.
///
/// `pair_flow` feeds the model's own fusion (frame `k-eta-1` to `k-eta`);
/// `propagation` carries the prediction forward to frame `k`. Pixels the
/// warp leaves empty become [`IGNORE`].
pub fn crossframe_pseudo_label(
    model: &SegmentationModel,
    prev_pair: &FramePair,
    pair_flow: &FlowField,
    propagation: &FlowField,
    tau: f64,
) -> Result<PseudoLabelMap> {
    check_tau(tau)?;
    let probs = model.predict_pair(prev_pair, pair_flow)?;
    let (warped, valid) = warp_probs(&probs, propagation, WarpMode::Bilinear)?;
    threshold(&warped, tau, Some(&valid))
}
