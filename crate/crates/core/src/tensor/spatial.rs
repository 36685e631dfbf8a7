/// Sparse linear map between two pixel grids, applied identically to every
/// channel plane.
///
/// Output pixel `q` is `sum_j weight_j * input[source_j]` over the entries of
/// row `q`. Rows flagged invalid produce zero. Bilinear resizing and the
/// splatting flow warp are both expressed this way, so one graph operation
/// differentiates either.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    valid: Vec<bool>,
}

impl SpatialMap {
    /// Builds a map from per-output rows of `(source pixel, weight)`.
    pub fn from_rows(
        (in_h, in_w): (usize, usize),
        (out_h, out_w): (usize, usize),
        rows: impl IntoIterator<Item = Option<Vec<(usize, f64)>>>,
    ) -> Self {
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        let mut valid = Vec::with_capacity(out_h * out_w);
        for row in rows {
            match row {
                Some(items) => {
                    entries.extend(items.into_iter().map(|(s, w)| (s as u32, w)));
                    valid.push(true);
                }
                None => valid.push(false),
            }
            offsets.push(entries.len());
        }
        assert_eq!(valid.len(), out_h * out_w, "one row per output pixel");
        SpatialMap {
            in_h,
            in_w,
            out_h,
            out_w,
            offsets,
            entries,
            valid,
        }
    }

    /// Half-pixel bilinear resize; source coordinates are clamped to the grid.
    pub fn bilinear_resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let ys = axis_taps(in_h, out_h);
        let xs = axis_taps(in_w, out_w);
        let rows = ys.iter().flat_map(|&(y0, y1, wy)| {
            xs.iter().map(move |&(x0, x1, wx)| {
                let mut row = Vec::with_capacity(4);
                for (yy, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                    for (xx, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                        let w = fy * fx;
                        if w != 0.0 {
                            row.push((yy * in_w + xx, w));
                        }
                    }
                }
                Some(row)
            })
        });
        SpatialMap::from_rows((in_h, in_w), (out_h, out_w), rows.collect::<Vec<_>>())
    }

    pub fn in_height(&self) -> usize {
        self.in_h
    }

    pub fn in_width(&self) -> usize {
        self.in_w
    }

    pub fn out_height(&self) -> usize {
        self.out_h
    }

    pub fn out_width(&self) -> usize {
        self.out_w
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn row(&self, q: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[q]..self.offsets[q + 1]]
    }

    /// Applies the map to `planes` consecutive input planes.
    pub fn apply_planes(&self, input: &[f64], planes: usize) -> Vec<f64> {
        let in_hw = self.in_h * self.in_w;
        let out_hw = self.out_h * self.out_w;
        let mut out = vec![0.0; planes * out_hw];
        for c in 0..planes {
            let src = &input[c * in_hw..(c + 1) * in_hw];
            let dst = &mut out[c * out_hw..(c + 1) * out_hw];
            for (q, d) in dst.iter_mut().enumerate() {
                if self.valid[q] {
                    *d = self.row(q).iter().map(|&(s, w)| w * src[s as usize]).sum();
                }
            }
        }
        out
    }

    pub(super) fn accumulate_transpose(&self, dout: &[f64], planes: usize, dx: &mut [f64]) {
        let in_hw = self.in_h * self.in_w;
        let out_hw = self.out_h * self.out_w;
        for c in 0..planes {
            let g = &dout[c * out_hw..(c + 1) * out_hw];
            let d = &mut dx[c * in_hw..(c + 1) * in_hw];
            for (q, &gq) in g.iter().enumerate() {
                if self.valid[q] {
                    for &(s, w) in self.row(q) {
                        d[s as usize] += w * gq;
                    }
                }
            }
        }
    }
}

/// `(lower index, upper index, upper weight)` for each output position.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}
