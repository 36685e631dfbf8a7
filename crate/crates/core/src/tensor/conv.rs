//! 2-D cross-correlation through im2col and a dense matrix product.

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn infer(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [batch, in_channels, in_h, in_w] = *input else {
            return Err(shape_err!("conv2d input must be [N,Cin,H,W], got {input:?}"));
        };
        let [out_channels, wc, kernel_h, kernel_w] = *weight else {
            return Err(shape_err!("conv2d weight must be [Cout,Cin,kh,kw], got {weight:?}"));
        };
        if wc != in_channels {
            return Err(shape_err!(
                "conv2d weight expects {wc} input channels, input has {in_channels}"
            ));
        }
        if bias != [out_channels] {
            return Err(shape_err!("conv2d bias must be [{out_channels}], got {bias:?}"));
        }
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(shape_err!("conv2d kernel must be odd, got {kernel_h}x{kernel_w}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be positive"));
        }
        let span_h = in_h + 2 * padding;
        let span_w = in_w + 2 * padding;
        if span_h < kernel_h || span_w < kernel_w {
            return Err(shape_err!(
                "conv2d kernel {kernel_h}x{kernel_w} larger than padded input {span_h}x{span_w}"
            ));
        }
        Ok(Conv2dGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (span_h - kernel_h) / stride + 1,
            out_w: (span_w - kernel_w) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate touched by output `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

fn im2col(geom: &Conv2dGeometry, input: &[f64], cols: &mut [f64]) {
    let p = geom.positions();
    let hw = geom.in_h * geom.in_w;
    for c in 0..geom.in_channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let row = (c * geom.kernel_h + ky) * geom.kernel_w + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geom.out_h {
                    let line = &mut dst[oy * geom.out_w..(oy + 1) * geom.out_w];
                    match geom.source(oy, ky, geom.in_h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = geom
                                    .source(ox, kx, geom.in_w)
                                    .map_or(0.0, |ix| plane[iy * geom.in_w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(geom: &Conv2dGeometry, cols: &[f64], dx: &mut [f64]) {
    let p = geom.positions();
    let hw = geom.in_h * geom.in_w;
    for c in 0..geom.in_channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let row = (c * geom.kernel_h + ky) * geom.kernel_w + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geom.out_h {
                    let Some(iy) = geom.source(oy, ky, geom.in_h) else {
                        continue;
                    };
                    for ox in 0..geom.out_w {
                        if let Some(ix) = geom.source(ox, kx, geom.in_w) {
                            plane[iy * geom.in_w + ix] += src[oy * geom.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents cover the strided views;
    // `c` is a dense row-major m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Returns the output and the im2col buffer kept for the weight gradient.
pub(super) fn forward(
    geom: &Conv2dGeometry,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let ck = geom.patch_len();
    let p = geom.positions();
    let in_len = geom.in_channels * geom.in_h * geom.in_w;
    let out_len = geom.out_channels * p;
    let mut cols = vec![0.0; geom.batch * ck * p];
    let mut out = vec![0.0; geom.batch * out_len];
    for s in 0..geom.batch {
        let col = &mut cols[s * ck * p..(s + 1) * ck * p];
        im2col(geom, &input[s * in_len..(s + 1) * in_len], col);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        for (co, &b) in bias.iter().enumerate() {
            dst[co * p..(co + 1) * p].fill(b);
        }
        gemm(
            geom.out_channels,
            ck,
            p,
            weight,
            (ck as isize, 1),
            col,
            (p as isize, 1),
            1.0,
            dst,
        );
    }
    (out, cols)
}

pub(super) fn backward_input(geom: &Conv2dGeometry, weight: &[f64], dout: &[f64], dx: &mut [f64]) {
    let ck = geom.patch_len();
    let p = geom.positions();
    let in_len = geom.in_channels * geom.in_h * geom.in_w;
    let out_len = geom.out_channels * p;
    let mut dcols = vec![0.0; ck * p];
    for s in 0..geom.batch {
        gemm(
            ck,
            geom.out_channels,
            p,
            weight,
            (1, ck as isize),
            &dout[s * out_len..(s + 1) * out_len],
            (p as isize, 1),
            0.0,
            &mut dcols,
        );
        col2im_add(geom, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
    }
}

pub(super) fn backward_weight(geom: &Conv2dGeometry, cols: &[f64], dout: &[f64], dw: &mut [f64]) {
    let ck = geom.patch_len();
    let p = geom.positions();
    let out_len = geom.out_channels * p;
    for s in 0..geom.batch {
        gemm(
            geom.out_channels,
            p,
            ck,
            &dout[s * out_len..(s + 1) * out_len],
            (p as isize, 1),
            &cols[s * ck * p..(s + 1) * ck * p],
            (1, p as isize),
            1.0,
            dw,
        );
    }
}

pub(super) fn backward_bias(geom: &Conv2dGeometry, dout: &[f64], db: &mut [f64]) {
    let p = geom.positions();
    for s in 0..geom.batch {
        for (co, d) in db.iter_mut().enumerate() {
            let start = (s * geom.out_channels + co) * p;
            *d += dout[start..start + p].iter().sum::<f64>();
        }
    }
}
