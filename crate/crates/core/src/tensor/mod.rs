//! Deterministic reverse-mode autodiff over dense `f64` tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every node that requires one.
//! Only the handful of operations the segmentation network needs exist:
//! convolution, ReLU, channel softmax, masked cross-entropy, spatial
//! resampling (resize and flow warps), channel concatenation and a few
//! scalar combinators.

mod conv;
mod spatial;

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};

pub use conv::Conv2dGeometry;
pub use spatial::SpatialMap;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(shape_err!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Conv2dGeometry,
        cols: Vec<f64>,
    },
    Relu(Var),
    SoftmaxChannel(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<u8>,
        count: usize,
    },
    Spatial {
        input: Var,
        map: Arc<SpatialMap>,
    },
    Select {
        mask: Arc<Vec<bool>>,
        on_true: Var,
        on_false: Var,
    },
    ConcatChannels(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mean(Var),
    SumSquares(Var),
    Elementwise {
        input: Var,
        derivative: fn(f64) -> f64,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Tape of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the node does not require one or
    /// the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, zero-filled when absent.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn nchw(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(shape_err!("{what} must be 4-D [N,C,H,W], got {shape:?}")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records `tensor` as a leaf, honouring its `requires_grad` flag.
    pub fn input(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape.clone(),
            tensor.data.clone(),
            tensor.requires_grad,
            Op::Leaf,
        )
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, false, Op::Leaf))
    }

    /// Leaf that always receives a gradient.
    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, true, Op::Leaf))
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.clone(),
            requires_grad: node.requires_grad,
            grad: None,
        }
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = Conv2dGeometry::infer(
            self.shape(input),
            self.shape(weight),
            self.shape(bias),
            stride,
            padding,
        )?;
        let (out, cols) = conv::forward(
            &geom,
            self.value(input),
            self.value(weight),
            self.value(bias),
        );
        let requires_grad = self.needs(&[input, weight, bias]);
        Ok(self.push(
            geom.output_shape().to_vec(),
            out,
            requires_grad,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols: if requires_grad { cols } else { Vec::new() },
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.needs(&[input]);
        self.push(shape, out, rg, Op::Relu(input))
    }

    /// Softmax over the channel axis of an `[N,K,H,W]` tensor.
    pub fn softmax_channel(&mut self, input: Var) -> Result<Var> {
        let [n, k, h, w] = nchw(self.shape(input), "softmax input")?;
        if k < 2 {
            return Err(shape_err!("softmax needs at least 2 channels, got {k}"));
        }
        let out = softmax_channel_values(self.value(input), n, k, h * w);
        let shape = self.shape(input).to_vec();
        let rg = self.needs(&[input]);
        Ok(self.push(shape, out, rg, Op::SoftmaxChannel(input)))
    }

    /// Mean of `-ln p[label]` over every pixel whose label is not `ignore`.
    ///
    /// `labels` is laid out `[N,H,W]`. When every pixel is ignored the loss
    /// is zero and so is its gradient.
    pub fn cross_entropy_masked(&mut self, probs: Var, labels: &[u8], ignore: u8) -> Result<Var> {
        let [n, k, h, w] = nchw(self.shape(probs), "cross-entropy probabilities")?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(shape_err!(
                "label map holds {} pixels, probabilities {:?}",
                labels.len(),
                self.shape(probs)
            ));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            if label == ignore {
                continue;
            }
            if label as usize >= k {
                return Err(Error::InvalidLabel {
                    label,
                    index: i,
                    classes: k,
                    ignore,
                });
            }
            let (b, px) = (i / hw, i % hw);
            let pr = p[(b * k + label as usize) * hw + px];
            total -= pr.max(f64::MIN_POSITIVE).ln();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.needs(&[probs]);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            rg,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                count,
            },
        ))
    }

    /// Applies a per-channel spatial linear map (resize, warp) to `[N,C,H,W]`.
    pub fn spatial_map(&mut self, input: Var, map: Arc<SpatialMap>) -> Result<Var> {
        let [n, c, h, w] = nchw(self.shape(input), "spatial map input")?;
        if (h, w) != (map.in_height(), map.in_width()) {
            return Err(shape_err!(
                "spatial map expects {}x{} input, got {h}x{w}",
                map.in_height(),
                map.in_width()
            ));
        }
        let out = map.apply_planes(self.value(input), n * c);
        let rg = self.needs(&[input]);
        Ok(self.push(
            vec![n, c, map.out_height(), map.out_width()],
            out,
            rg,
            Op::Spatial { input, map },
        ))
    }

    /// Bilinear resize with the half-pixel (align-corners-false) convention.
    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [_, _, h, w] = nchw(self.shape(input), "resize input")?;
        if out_h == 0 || out_w == 0 {
            return Err(shape_err!("resize target must be at least 1x1"));
        }
        let map = Arc::new(SpatialMap::bilinear_resize(h, w, out_h, out_w));
        self.spatial_map(input, map)
    }

    /// Per-pixel choice between two `[N,C,H,W]` tensors; `mask` is `H*W`.
    pub fn select(&mut self, mask: Arc<Vec<bool>>, on_true: Var, on_false: Var) -> Result<Var> {
        let shape = self.shape(on_true).to_vec();
        if shape != self.shape(on_false) {
            return Err(shape_err!(
                "select operands differ: {:?} vs {:?}",
                shape,
                self.shape(on_false)
            ));
        }
        let [_, _, h, w] = nchw(&shape, "select operand")?;
        if mask.len() != h * w {
            return Err(shape_err!("select mask has {} pixels, expected {}", mask.len(), h * w));
        }
        let hw = h * w;
        let a = self.value(on_true);
        let b = self.value(on_false);
        let out = (0..a.len())
            .map(|i| if mask[i % hw] { a[i] } else { b[i] })
            .collect();
        let rg = self.needs(&[on_true, on_false]);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Select {
                mask,
                on_true,
                on_false,
            },
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = nchw(self.shape(a), "concat operand")?;
        let [nb, cb, hb, wb] = nchw(self.shape(b), "concat operand")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err!(
                "concat operands differ outside the channel axis: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let hw = h * w;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&va[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&vb[s * cb * hw..(s + 1) * cb * hw]);
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![n, ca + cb, h, w], out, rg, Op::ConcatChannels(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "add operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).iter().map(|x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.needs(&[input]);
        self.push(shape, out, rg, Op::Scale(input, factor))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.needs(&[input]);
        self.push(Vec::new(), vec![m], rg, Op::Mean(input))
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s = self.value(input).iter().map(|x| x * x).sum();
        let rg = self.needs(&[input]);
        self.push(Vec::new(), vec![s], rg, Op::SumSquares(input))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn elementwise(&mut self, input: Var, f: fn(f64) -> f64, derivative: fn(f64) -> f64) -> Var {
        let out = self.value(input).iter().map(|&x| f(x)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.needs(&[input]);
        self.push(shape, out, rg, Op::Elementwise { input, derivative })
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            let slot =
                grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let w = &self.nodes[weight.0].value;
                acc(*input, &mut |dx| conv::backward_input(geom, w, g, dx));
                acc(*weight, &mut |dw| conv::backward_weight(geom, cols, g, dw));
                acc(*bias, &mut |db| conv::backward_bias(geom, g, db));
            }
            Op::Relu(input) => {
                let x = &self.nodes[input.0].value;
                acc(*input, &mut |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(x).zip(g) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::SoftmaxChannel(input) => {
                let [n, k, h, w] = nchw(&node.shape, "").expect("checked in forward");
                let p = &node.value;
                let hw = h * w;
                acc(*input, &mut |dx| {
                    for b in 0..n {
                        let base = b * k * hw;
                        for px in 0..hw {
                            let mut dot = 0.0;
                            for c in 0..k {
                                let i = base + c * hw + px;
                                dot += g[i] * p[i];
                            }
                            for c in 0..k {
                                let i = base + c * hw + px;
                                dx[i] += p[i] * (g[i] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                probs,
                labels,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let p = &self.nodes[probs.0].value;
                let [_, k, h, w] = nchw(&self.nodes[probs.0].shape, "").expect("checked");
                let hw = h * w;
                let scale = g[0] / *count as f64;
                acc(*probs, &mut |dp| {
                    for (i, &label) in labels.iter().enumerate() {
                        if label as usize >= k {
                            continue;
                        }
                        let j = ((i / hw) * k + label as usize) * hw + i % hw;
                        dp[j] -= scale / p[j].max(f64::MIN_POSITIVE);
                    }
                });
            }
            Op::Spatial { input, map } => {
                let planes = node.value.len() / (map.out_height() * map.out_width());
                acc(*input, &mut |dx| map.accumulate_transpose(g, planes, dx));
            }
            Op::Select {
                mask,
                on_true,
                on_false,
            } => {
                let hw = mask.len();
                acc(*on_true, &mut |d| {
                    for (i, (d, gi)) in d.iter_mut().zip(g).enumerate() {
                        if mask[i % hw] {
                            *d += gi;
                        }
                    }
                });
                acc(*on_false, &mut |d| {
                    for (i, (d, gi)) in d.iter_mut().zip(g).enumerate() {
                        if !mask[i % hw] {
                            *d += gi;
                        }
                    }
                });
            }
            Op::ConcatChannels(a, b) => {
                let [n, c, h, w] = nchw(&node.shape, "").expect("checked");
                let ca = self.nodes[a.0].shape[1];
                let cb = c - ca;
                let hw = h * w;
                acc(*a, &mut |d| {
                    for s in 0..n {
                        let src = &g[s * c * hw..s * c * hw + ca * hw];
                        for (d, gi) in d[s * ca * hw..(s + 1) * ca * hw].iter_mut().zip(src) {
                            *d += gi;
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for s in 0..n {
                        let src = &g[s * c * hw + ca * hw..(s + 1) * c * hw];
                        for (d, gi) in d[s * cb * hw..(s + 1) * cb * hw].iter_mut().zip(src) {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                }
            }
            Op::Scale(input, factor) => {
                acc(*input, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(d, gi)| *d += factor * gi)
                });
            }
            Op::Mean(input) => {
                let len = self.nodes[input.0].value.len().max(1) as f64;
                acc(*input, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / len));
            }
            Op::SumSquares(input) => {
                let x = &self.nodes[input.0].value;
                acc(*input, &mut |d| {
                    d.iter_mut()
                        .zip(x)
                        .for_each(|(d, xi)| *d += 2.0 * xi * g[0])
                });
            }
            Op::Elementwise { input, derivative } => {
                let x = &self.nodes[input.0].value;
                acc(*input, &mut |d| {
                    for ((d, &xi), gi) in d.iter_mut().zip(x).zip(g) {
                        *d += derivative(xi) * gi;
                    }
                });
            }
        }
    }
}

/// Channel softmax of a flat `[N,K,HW]` buffer with max subtraction.
pub fn softmax_channel_values(x: &[f64], n: usize, k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let base = b * k * hw;
        for px in 0..hw {
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(x[base + c * hw + px]);
            }
            let mut sum = 0.0;
            for c in 0..k {
                let e = (x[base + c * hw + px] - max).exp();
                out[base + c * hw + px] = e;
                sum += e;
            }
            for c in 0..k {
                out[base + c * hw + px] /= sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tensor_rejects_mismatched_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut g = Graph::new();
        let x = g.param(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
        let s = g.sum_squares(y);
        let grads = g.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 4.0]);
    }

    #[test]
    fn relu_keeps_positive_tensor() {
        let mut g = Graph::new();
        let x = g.constant(vec![4], vec![0.1, 1.0, 3.0, 7.5]).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn relu_gradient_matches_finite_difference_away_from_zero() {
        for (x0, expected) in [(-0.5, 0.0), (0.5, 1.0)] {
            let mut g = Graph::new();
            let x = g.param(vec![1], vec![x0]).unwrap();
            let y = g.relu(x);
            let m = g.mean(y);
            let grads = g.backward(m).unwrap();
            let eps = 1e-6;
            let fd = ((x0 + eps).max(0.0) - (x0 - eps).max(0.0)) / (2.0 * eps);
            assert!(close(grads.get(x).unwrap()[0], expected, 0.0));
            assert!(close(fd, expected, 1e-9));
        }
    }

    #[test]
    fn softmax_uniform_and_analytic() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 4, 1, 2], vec![0.3; 8]).unwrap();
        let p = g.softmax_channel(x).unwrap();
        assert!(g.value(p).iter().all(|&v| close(v, 0.25, 1e-15)));

        let x = g.constant(vec![1, 2, 1, 1], vec![0.0, 3f64.ln()]).unwrap();
        let p = g.softmax_channel(x).unwrap();
        assert!(close(g.value(p)[0], 0.25, 1e-15));
        assert!(close(g.value(p)[1], 0.75, 1e-15));
    }

    #[test]
    fn softmax_rejects_single_channel() {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 1, 2, 2], vec![0.0; 4]).unwrap();
        assert!(g.softmax_channel(x).is_err());
    }

    #[test]
    fn cross_entropy_single_pixel() {
        let mut g = Graph::new();
        let p = g.constant(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        let l = g.cross_entropy_masked(p, &[0], 255).unwrap();
        assert!(close(g.scalar_value(l), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn cross_entropy_all_ignored_is_zero_with_zero_grads() {
        let mut g = Graph::new();
        let logits = g.param(vec![1, 3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let p = g.softmax_channel(logits).unwrap();
        let l = g.cross_entropy_masked(p, &[255; 4], 255).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
        let grads = g.backward(l).unwrap();
        assert!(grads.get_or_zeros(logits, 12).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut g = Graph::new();
        let p = g.constant(vec![1, 2, 1, 2], vec![0.5; 4]).unwrap();
        let err = g.cross_entropy_masked(p, &[0, 2], 255).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { label: 2, index: 1, .. }));
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.7).collect();
        let x = g.constant(vec![1, 1, 3, 4], data.clone()).unwrap();
        let y = g.bilinear_resize(x, 3, 4).unwrap();
        assert_eq!(g.value(y), &data[..]);

        let c = g.constant(vec![1, 2, 3, 3], vec![0.42; 18]).unwrap();
        for (h, w) in [(1, 1), (5, 2), (7, 9)] {
            let y = g.bilinear_resize(c, h, w).unwrap();
            assert!(g.value(y).iter().all(|&v| close(v, 0.42, 1e-15)));
        }
    }

    #[test]
    fn concat_select_add_scale() {
        let mut g = Graph::new();
        let a = g.param(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = g.param(vec![1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0]);
        let s = g.select(Arc::new(vec![true, false]), a, b).unwrap();
        assert_eq!(g.value(s), &[1.0, 4.0]);
        let t = g.add(s, a).unwrap();
        let t = g.scale(t, 0.5);
        assert_eq!(g.value(t), &[1.0, 3.0]);
        let m = g.mean(t);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[0.5, 0.25]);
        assert_eq!(grads.get(b).unwrap(), &[0.0, 0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.param(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = g.param(vec![2], vec![1.0, 2.0]).unwrap();
        let s = g.add(a, b).unwrap();
        let l = g.sum_squares(s);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &[4.0, 8.0]);
    }
}
