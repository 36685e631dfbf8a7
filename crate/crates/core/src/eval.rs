//! Segmentation metrics, temporal consistency, and feature-variance
//! statistics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::flow::{warp_classes, FlowField};
use crate::image::{ClassMap, IGNORE};
use crate::model::SegmentationModel;
use crate::synth::Clip;
use crate::train::FlowProvider;

/// Fraction of the total variance the retained principal components cover.
pub const PCA_VARIANCE_KEPT: f64 = 0.95;
pub const MAX_SAMPLES_PER_CLASS: usize = 500;

/// `K x K` counts, rows ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(shape_err!("confusion matrix rows must all have length {k}"));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(shape_err!("cannot merge {}-class and {}-class matrices", self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Adds per-pixel `(gt, pred)` counts, skipping [`IGNORE`] ground truth.
pub fn accumulate_confusion(pred: &ClassMap, gt: &ClassMap, cm: &mut ConfusionMatrix) -> Result<()> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(shape_err!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height,
            pred.width,
            gt.height,
            gt.width
        ));
    }
    let k = cm.classes;
    for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
        if g == IGNORE {
            continue;
        }
        for label in [g, p] {
            if label as usize >= k {
                return Err(Error::InvalidLabel {
                    label,
                    index: i,
                    classes: k,
                    ignore: IGNORE,
                });
            }
        }
        cm.counts[g as usize * k + p as usize] += 1;
    }
    Ok(())
}

/// Per-class IoU (`None` for classes with zero union) and their mean.
pub fn miou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    if cm.total() == 0 {
        return Err(Error::NoEvaluatedPixels);
    }
    let k = cm.classes;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
            let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((per_class, mean))
}

/// Agreeing and compared pixel counts behind [`temporal_consistency`].
pub fn temporal_agreement(pred_t: &ClassMap, pred_t1: &ClassMap, flow: &FlowField) -> Result<(usize, usize)> {
    if (pred_t.height, pred_t.width) != (pred_t1.height, pred_t1.width) {
        return Err(shape_err!("consecutive predictions differ in size"));
    }
    let (warped, valid) = warp_classes(pred_t, flow)?;
    let mut agree = 0;
    let mut count = 0;
    for (i, &v) in valid.iter().enumerate() {
        if v {
            count += 1;
            agree += (warped.data[i] == pred_t1.data[i]) as usize;
        }
    }
    Ok((agree, count))
}

/// Fraction of warp-valid pixels where the warped `pred_t` equals
/// `pred_t1`. An empty valid region counts as fully consistent.
pub fn temporal_consistency(pred_t: &ClassMap, pred_t1: &ClassMap, flow: &FlowField) -> Result<f64> {
    let (agree, count) = temporal_agreement(pred_t, pred_t1, flow)?;
    Ok(if count == 0 { 1.0 } else { agree as f64 / count as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVarianceReport {
    pub sigma2_inter: f64,
    pub sigma2_intra: f64,
    pub num_samples: usize,
    pub classes: usize,
    pub components: usize,
    /// Classes dropped for having fewer than two samples.
    pub excluded_classes: Vec<usize>,
}

/// Population variance about the first value, so identical inputs give
/// exactly zero.
fn shifted_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(shift) = it.next() else { return 0.0 };
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - shift;
        n += 1.0;
        s += d;
        s2 += d * d;
    }
    ((s2 - s * s / n) / n).max(0.0)
}

/// Inter/intra-class variance of whitened samples.
///
/// `samples[i]` is one feature vector with class `labels[i]`. Samples are
/// centred, projected on the principal components covering
/// [`PCA_VARIANCE_KEPT`] of the variance, and scaled to unit variance per
/// component. `sigma2_inter` is the mean over components of the variance of
/// class means about the global mean; `sigma2_intra` is the mean within-class
/// variance. Classes with fewer than two samples are dropped.
pub fn feature_variance_from_samples(samples: &[Vec<f64>], labels: &[usize]) -> Result<FeatureVarianceReport> {
    if samples.len() != labels.len() {
        return Err(shape_err!("{} samples but {} labels", samples.len(), labels.len()));
    }
    let dim = samples.first().map_or(0, Vec::len);
    if samples.iter().any(|s| s.len() != dim) {
        return Err(shape_err!("feature vectors differ in length"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut excluded = Vec::new();
    by_class.retain(|&c, idx| {
        let keep = idx.len() >= 2;
        if !keep {
            log::warn!("class {c} has {} feature samples, excluded", idx.len());
            excluded.push(c);
        }
        keep
    });
    let kept: Vec<usize> = by_class.values().flatten().copied().collect();
    let n = kept.len();
    let empty = FeatureVarianceReport {
        sigma2_inter: 0.0,
        sigma2_intra: 0.0,
        num_samples: n,
        classes: by_class.len(),
        components: 0,
        excluded_classes: excluded.clone(),
    };
    if n == 0 || dim == 0 {
        return Ok(empty);
    }

    let mean: Vec<f64> = (0..dim)
        .map(|d| kept.iter().map(|&i| samples[i][d]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, dim, |r, d| samples[kept[r]][d] - mean[d]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= f64::EPSILON * dim as f64 {
        return Ok(empty);
    }
    let mut components = Vec::new();
    let mut covered = 0.0;
    for &j in &order {
        let lambda = eig.eigenvalues[j];
        if lambda <= 0.0 {
            break;
        }
        components.push(j);
        covered += lambda;
        if covered >= PCA_VARIANCE_KEPT * total {
            break;
        }
    }

    // Whitened coordinates, row-major [n, m], indexed like `kept`.
    let m = components.len();
    let mut z = vec![0.0; n * m];
    for (ci, &j) in components.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        let scale = eig.eigenvalues[j].sqrt();
        for r in 0..n {
            z[r * m + ci] = centred.row(r).iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / scale;
        }
    }
    let position: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let classes = by_class.len() as f64;
    let (mut inter, mut intra) = (0.0, 0.0);
    for ci in 0..m {
        let global = (0..n).map(|r| z[r * m + ci]).sum::<f64>() / n as f64;
        for idx in by_class.values() {
            let col = idx.iter().map(|i| z[position[i] * m + ci]);
            let class_mean = col.clone().sum::<f64>() / idx.len() as f64;
            inter += (class_mean - global).powi(2);
            intra += shifted_variance(col);
        }
    }
    Ok(FeatureVarianceReport {
        sigma2_inter: inter / (classes * m as f64),
        sigma2_intra: intra / (classes * m as f64),
        num_samples: n,
        classes: by_class.len(),
        components: m,
        excluded_classes: excluded,
    })
}

/// Which activations [`feature_variance`] reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Input of the last convolution, upsampled to frame size.
    #[default]
    Penultimate,
}

/// Feature variance of temporal features: per sampled pixel of frame `k`,
/// the penultimate activations of frames `k-1` and `k` are concatenated. At
/// most [`MAX_SAMPLES_PER_CLASS`] pixels per class are drawn with `seed`.
pub fn feature_variance(
    model: &SegmentationModel,
    clips: &[Clip],
    layer: FeatureLayer,
    seed: u64,
) -> Result<FeatureVarianceReport> {
    let FeatureLayer::Penultimate = layer;
    let k = model.config.classes;
    let mut candidates: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); k];
    for (ci, clip) in clips.iter().enumerate() {
        let labels = clip
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("clip {} has no evaluation labels", clip.clip_id)))?;
        for (t, map) in labels.iter().enumerate().skip(1) {
            for (px, &l) in map.data.iter().enumerate() {
                if l != IGNORE && (l as usize) < k {
                    candidates[l as usize].push((ci, t, px));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wanted: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (class, list) in candidates.iter_mut().enumerate() {
        list.shuffle(&mut rng);
        for &(ci, t, px) in list.iter().take(MAX_SAMPLES_PER_CLASS) {
            wanted.entry((ci, t)).or_default().push((px, class));
        }
    }
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (&(ci, t), pixels) in &wanted {
        let (c, prev, cur) = model.pair_features(&clips[ci].pair(t)?)?;
        let hw = prev.len() / c;
        for &(px, class) in pixels {
            let feat: Vec<f64> = (0..c).map(|j| prev[j * hw + px]).chain((0..c).map(|j| cur[j * hw + px])).collect();
            samples.push(feat);
            labels.push(class);
        }
    }
    feature_variance_from_samples(&samples, &labels)
}

/// Segmentation and consistency scores of a model on labelled clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub confusion: ConfusionMatrix,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub temporal_consistency: f64,
}

/// Predicts every frame `k >= 1` with its pair and scores it.
///
/// Fusion flow comes from `flows`; temporal consistency between
/// consecutive predictions always uses the ground-truth flow.
pub fn evaluate_model(model: &SegmentationModel, clips: &[Clip], flows: &mut FlowProvider) -> Result<EvalMetrics> {
    let mut cm = ConfusionMatrix::new(model.config.classes);
    let (mut agree, mut compared) = (0usize, 0usize);
    for clip in clips {
        let labels = clip
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("clip {} has no evaluation labels", clip.clip_id)))?;
        let mut preds = Vec::with_capacity(clip.len());
        for t in 1..clip.len() {
            let pred = model.predict_pair(&clip.pair(t)?, &flows.step(clip, t - 1)?)?.argmax();
            accumulate_confusion(&pred, &labels[t], &mut cm)?;
            preds.push(pred);
        }
        for (i, w) in preds.windows(2).enumerate() {
            let (a, n) = temporal_agreement(&w[0], &w[1], &clip.gt_flow[i + 1])?;
            agree += a;
            compared += n;
        }
    }
    let (per_class_iou, miou) = miou(&cm)?;
    Ok(EvalMetrics {
        confusion: cm,
        per_class_iou,
        miou,
        temporal_consistency: if compared == 0 { 1.0 } else { agree as f64 / compared as f64 },
    })
}

/// Evaluation report as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub temporal_consistency: f64,
    pub sigma2_inter: f64,
    pub sigma2_intra: f64,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    pub fn new(metrics: &EvalMetrics, variance: &FeatureVarianceReport, config_echo: serde_json::Value) -> Self {
        EvalReport {
            per_class_iou: metrics.per_class_iou.clone(),
            miou: metrics.miou,
            temporal_consistency: metrics.temporal_consistency,
            sigma2_inter: variance.sigma2_inter,
            sigma2_intra: variance.sigma2_intra,
            config_echo,
        }
    }
}
