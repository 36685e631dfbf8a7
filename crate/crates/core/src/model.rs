//! Two-branch video segmentation network with flow-guided score fusion.
//!
//! Each branch is a four-layer convnet (two stride-2 stages) whose coarse
//! scores are bilinearly upsampled to the frame size. The previous-frame
//! scores are warped to the current frame along the supplied flow, stacked
//! with the current-frame scores, and fused by a 1x1 convolution.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::flow::{warp_plan, FlowField, WarpMode};
use crate::image::{Frame, FramePair, ProbMap};
use crate::tensor::{Graph, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TPSM";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of the three hidden conv layers.
    pub widths: [usize; 3],
    pub shared_branches: bool,
}

impl ModelConfig {
    pub fn new(classes: usize, height: usize, width: usize) -> Self {
        ModelConfig {
            classes,
            height,
            width,
            widths: [16, 32, 32],
            shared_branches: false,
        }
    }

    /// `(out, in, stride)` for the four branch layers.
    fn layers(&self) -> [(usize, usize, usize); 4] {
        let [a, b, c] = self.widths;
        [(a, 3, 2), (b, a, 2), (c, b, 1), (self.classes, c, 1)]
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let branches = if self.shared_branches { 1 } else { 2 };
        for _ in 0..branches {
            for (out, inp, _) in self.layers() {
                shapes.push(vec![out, inp, 3, 3]);
                shapes.push(vec![out]);
            }
        }
        shapes.push(vec![self.classes, 2 * self.classes, 1, 1]);
        shapes.push(vec![self.classes]);
        shapes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Prev,
    Cur,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationModel {
    pub config: ModelConfig,
    params: Vec<Tensor>,
}

/// Parameter leaves of a model recorded on one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
    shared: bool,
}

impl BoundModel {
    fn branch(&self, branch: Branch) -> &[Var] {
        match (branch, self.shared) {
            (Branch::Cur, false) => &self.vars[8..16],
            _ => &self.vars[0..8],
        }
    }

    fn fusion(&self) -> (Var, Var) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Scores and penultimate features of one branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    /// `[1,K,H,W]` pre-softmax scores.
    pub scores: Var,
    /// `[1,C,H/4,W/4]` activations feeding the last layer.
    pub features: Var,
}

/// Intermediate nodes of a pair forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PairOutput {
    pub prev: BranchOutput,
    pub cur: BranchOutput,
    /// `[1,K,H,W]` fused pre-softmax scores.
    pub fused: Var,
    pub probs: Var,
}

/// Deterministic He-uniform initialization with zero biases.
///
/// Layers feeding a ReLU use the bound `sqrt(6 / fan_in)`; the two score
/// layers (last branch convolution and fusion) are linear and use
/// `sqrt(3 / fan_in)`.
pub fn init_model(seed: u64, config: ModelConfig) -> SegmentationModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = config.param_shapes();
    let fusion = shapes.len() - 2;
    let params = shapes
        .into_iter()
        .enumerate()
        .map(|(i, shape)| {
            if shape.len() == 1 {
                return Tensor::zeros(shape);
            }
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let feeds_relu = i != fusion && (i / 2) % 4 < 3;
            let gain = if feeds_relu { 6.0 } else { 3.0 };
            let bound = (gain / fan_in).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
        })
        .collect();
    SegmentationModel { config, params }
}

impl SegmentationModel {
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let shapes = config.param_shapes();
        if shapes.len() != params.len()
            || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(shape_err!("parameters do not match the architecture {config:?}"));
        }
        Ok(SegmentationModel { config, params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Records parameters as gradient-carrying leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| g.input(&p.clone().with_requires_grad(true)))
            .collect();
        self.bind_vars(vars)
    }

    /// Records parameters as constants (teacher and inference passes).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| g.input(&p.clone().with_requires_grad(false)))
            .collect();
        self.bind_vars(vars)
    }

    /// Wraps already-recorded parameter leaves, in [`Self::params`] order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundModel {
        assert_eq!(vars.len(), self.params.len(), "one var per parameter");
        BoundModel {
            vars,
            shared: self.config.shared_branches,
        }
    }

    fn check_frame(&self, g: &Graph, frame: Var) -> Result<()> {
        let want = [1, 3, self.config.height, self.config.width];
        if g.shape(frame) != want {
            return Err(shape_err!(
                "model expects frames shaped {want:?}, got {:?}",
                g.shape(frame)
            ));
        }
        Ok(())
    }

    pub fn forward_branch(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        branch: Branch,
        frame: Var,
    ) -> Result<BranchOutput> {
        self.check_frame(g, frame)?;
        let p = bound.branch(branch);
        let layers = self.config.layers();
        let mut x = frame;
        let mut features = frame;
        for (i, &(_, _, stride)) in layers.iter().enumerate() {
            x = g.conv2d(x, p[2 * i], p[2 * i + 1], stride, 1)?;
            if i + 1 < layers.len() {
                x = g.relu(x);
                features = x;
            }
        }
        let scores = g.bilinear_resize(x, self.config.height, self.config.width)?;
        Ok(BranchOutput { scores, features })
    }

    /// `F(X_k)`: fused class distribution for the current frame of a pair.
    ///
    /// Previous-frame scores are bilinearly warped along `flow`; pixels the
    /// warp leaves empty take the current-frame scores instead.
    pub fn forward_pair(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        prev: Var,
        cur: Var,
        flow: &FlowField,
    ) -> Result<PairOutput> {
        if (flow.height, flow.width) != (self.config.height, self.config.width) {
            return Err(shape_err!(
                "flow is {}x{}, model expects {}x{}",
                flow.height,
                flow.width,
                self.config.height,
                self.config.width
            ));
        }
        let prev_out = self.forward_branch(g, bound, Branch::Prev, prev)?;
        let cur_out = self.forward_branch(g, bound, Branch::Cur, cur)?;
        let plan = Arc::new(warp_plan(flow, WarpMode::Bilinear));
        let mask = Arc::new(plan.valid().to_vec());
        let warped = g.spatial_map(prev_out.scores, plan)?;
        let aligned = g.select(mask, warped, cur_out.scores)?;
        let stacked = g.concat_channels(aligned, cur_out.scores)?;
        let (wf, bf) = bound.fusion();
        let fused = g.conv2d(stacked, wf, bf, 1, 0)?;
        let probs = g.softmax_channel(fused)?;
        Ok(PairOutput {
            prev: prev_out,
            cur: cur_out,
            fused,
            probs,
        })
    }

    /// Gradient-free prediction for a pair.
    pub fn predict_pair(&self, pair: &FramePair, flow: &FlowField) -> Result<ProbMap> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let prev = g.input(&pair.prev.to_tensor());
        let cur = g.input(&pair.cur.to_tensor());
        let out = self.forward_pair(&mut g, &bound, prev, cur, flow)?;
        ProbMap::new(
            self.config.classes,
            self.config.height,
            self.config.width,
            g.value(out.probs).to_vec(),
        )
    }

    /// Penultimate features of both frames, upsampled to the frame size.
    /// Returns `(channels, prev features, cur features)`, planar.
    pub fn pair_features(&self, pair: &FramePair) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let mut run = |frame: &Frame, branch| -> Result<Vec<f64>> {
            let x = g.input(&frame.to_tensor());
            let out = self.forward_branch(&mut g, &bound, branch, x)?;
            let up = g.bilinear_resize(out.features, self.config.height, self.config.width)?;
            Ok(g.value(up).to_vec())
        };
        let prev = run(&pair.prev, Branch::Prev)?;
        let cur = run(&pair.cur, Branch::Cur)?;
        Ok((self.config.widths[2], prev, cur))
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let descriptor = serde_json::json!({
            "architecture": self.config,
            "param_shapes": self.params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>(),
        });
        let json = serde_json::to_vec(&descriptor).expect("descriptor serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for &v in p.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, needed: usize| Error::Truncated {
            offset,
            needed,
            len: bytes.len(),
        };
        if bytes.len() < 8 {
            return Err(truncated(0, 8));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic, expected \"TPSM\"".into()));
        }
        let json_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json_end = 8 + json_len;
        if bytes.len() < json_end {
            return Err(truncated(8, json_len));
        }
        #[derive(Deserialize)]
        struct Descriptor {
            architecture: ModelConfig,
        }
        let desc: Descriptor = serde_json::from_slice(&bytes[8..json_end])?;
        let shapes = desc.architecture.param_shapes();
        let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let payload_end = json_end + 4 * count;
        if bytes.len() < payload_end + 4 {
            return Err(truncated(json_end, 4 * count + 4));
        }
        let stored = u32::from_le_bytes(bytes[payload_end..payload_end + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..payload_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut values = bytes[json_end..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let params = shapes
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                Tensor::new(shape, values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        SegmentationModel::from_params(desc.architecture, params)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
