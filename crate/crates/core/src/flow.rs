//! Forward optical flow, the splatting warp, block matching and
//! composition.
//!
//! Flow is stored forward: `flow(p)` is where pixel `p` of frame `a` moves to
//! in frame `b`. Warping a map from `a` to `b` therefore splats every valid
//! source pixel onto its displaced position instead of sampling backwards.
//! Target pixels nobody lands on, and source pixels pushed outside the grid,
//! leave holes that are reported invalid.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::image::{nearest_source, ClassMap, Frame, ProbMap, IGNORE};
use crate::tensor::SpatialMap;

/// Total splat weight below which a target pixel counts as a hole.
pub const MIN_SPLAT_WEIGHT: f64 = 1e-6;

/// Per-pixel displacement `(du, dv)` in pixels with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpMode {
    /// Splat with bilinear weights and renormalize by the received weight.
    Bilinear,
    /// Splat to the rounded target; later source pixels (row-major) win.
    Nearest,
}

impl FlowField {
    pub fn new(
        height: usize,
        width: usize,
        du: Vec<f64>,
        dv: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if du.len() != n || dv.len() != n || valid.len() != n {
            return Err(shape_err!(
                "flow {height}x{width} needs {n} entries per component, got {}/{}/{}",
                du.len(),
                dv.len(),
                valid.len()
            ));
        }
        if let Some(i) = du.iter().chain(&dv).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flow component at index {i}")));
        }
        Ok(FlowField {
            height,
            width,
            du,
            dv,
            valid,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, du: f64, dv: f64) -> Self {
        let n = height * width;
        FlowField {
            height,
            width,
            du: vec![du; n],
            dv: vec![dv; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.len().max(1) as f64
    }

    fn check_size(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(shape_err!(
                "flow is {}x{} but {what} is {height}x{width}",
                self.height,
                self.width
            ));
        }
        Ok(())
    }

    /// Mirror left-right; horizontal displacements change sign.
    pub fn hflip(&self) -> FlowField {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = y * self.width + (self.width - 1 - x);
                let dst = y * self.width + x;
                out.du[dst] = -self.du[src];
                out.dv[dst] = self.dv[src];
                out.valid[dst] = self.valid[src];
            }
        }
        out
    }
}

/// Linear map realizing the warp of a `height x width` map along `flow`.
pub fn warp_plan(flow: &FlowField, mode: WarpMode) -> SpatialMap {
    let (h, w) = (flow.height, flow.width);
    let n = h * w;
    let rows: Vec<Option<Vec<(usize, f64)>>> = match mode {
        WarpMode::Nearest => {
            let mut owner: Vec<Option<usize>> = vec![None; n];
            for p in 0..n {
                if !flow.valid[p] {
                    continue;
                }
                let tx = ((p % w) as f64 + flow.du[p]).round();
                let ty = ((p / w) as f64 + flow.dv[p]).round();
                if tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h {
                    owner[ty as usize * w + tx as usize] = Some(p);
                }
            }
            owner.into_iter().map(|o| o.map(|p| vec![(p, 1.0)])).collect()
        }
        WarpMode::Bilinear => {
            let mut received: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for p in 0..n {
                if !flow.valid[p] {
                    continue;
                }
                let tx = (p % w) as f64 + flow.du[p];
                let ty = (p / w) as f64 + flow.dv[p];
                let (x0, y0) = (tx.floor(), ty.floor());
                let (fx, fy) = (tx - x0, ty - y0);
                for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
                    for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                        let weight = wy * wx;
                        if weight == 0.0 || xx < 0.0 || yy < 0.0 {
                            continue;
                        }
                        let (xi, yi) = (xx as usize, yy as usize);
                        if xi < w && yi < h {
                            received[yi * w + xi].push((p, weight));
                        }
                    }
                }
            }
            received
                .into_iter()
                .map(|items| {
                    let total: f64 = items.iter().map(|(_, wt)| wt).sum();
                    (total > MIN_SPLAT_WEIGHT)
                        .then(|| items.into_iter().map(|(p, wt)| (p, wt / total)).collect())
                })
                .collect()
        }
    };
    SpatialMap::from_rows((h, w), (h, w), rows)
}

/// Warps a class map (nearest mode only); holes read [`IGNORE`].
pub fn warp_classes(map: &ClassMap, flow: &FlowField) -> Result<(ClassMap, Vec<bool>)> {
    flow.check_size(map.height, map.width, "class map")?;
    let plan = warp_plan(flow, WarpMode::Nearest);
    let data = (0..map.data.len())
        .map(|q| match plan.row(q).first() {
            Some(&(p, _)) if plan.valid()[q] => map.data[p as usize],
            _ => IGNORE,
        })
        .collect();
    let out = ClassMap::new(map.height, map.width, data)?;
    Ok((out, plan.valid().to_vec()))
}

/// Warps a probability map; holes are zero and flagged invalid.
pub fn warp_probs(map: &ProbMap, flow: &FlowField, mode: WarpMode) -> Result<(ProbMap, Vec<bool>)> {
    flow.check_size(map.height, map.width, "probability map")?;
    let plan = warp_plan(flow, mode);
    let data = plan.apply_planes(&map.data, map.classes);
    Ok((
        ProbMap::new(map.classes, map.height, map.width, data)?,
        plan.valid().to_vec(),
    ))
}

/// Shared form of a warp plan for graph use.
pub fn warp_plan_arc(flow: &FlowField, mode: WarpMode) -> Arc<SpatialMap> {
    Arc::new(warp_plan(flow, mode))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatchParams {
    pub block: usize,
    pub radius: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        BlockMatchParams { block: 7, radius: 4 }
    }
}

/// Exhaustive sum-of-absolute-differences block matching.
///
/// The frame is tiled into `block x block` tiles from the top-left (edge tiles
/// are clipped). For each tile every displacement within `radius` that keeps
/// the displaced tile inside frame `b` is scored; the minimum SAD wins, ties
/// going to the smaller squared displacement, then to the lexicographically
/// smaller `(du, dv)`.
pub fn estimate_flow_blockmatch(a: &Frame, b: &Frame, params: BlockMatchParams) -> Result<FlowField> {
    if !a.same_size(b) {
        return Err(shape_err!(
            "block matching needs equal frames, got {}x{} and {}x{}",
            a.height,
            a.width,
            b.height,
            b.width
        ));
    }
    let BlockMatchParams { block, radius } = params;
    if block == 0 || block % 2 == 0 {
        return Err(Error::Config(format!("block size must be odd, got {block}")));
    }
    if radius > 4 {
        return Err(Error::Config(format!("search radius must be at most 4, got {radius}")));
    }
    let (h, w) = (a.height, a.width);
    let hw = h * w;
    let r = radius as isize;
    let mut flow = FlowField::zeros(h, w);
    for by in (0..h).step_by(block) {
        let ey = (by + block).min(h);
        for bx in (0..w).step_by(block) {
            let ex = (bx + block).min(w);
            let mut best: Option<(f64, isize, isize, isize)> = None;
            for du in -r..=r {
                for dv in -r..=r {
                    if (bx as isize + du) < 0
                        || (by as isize + dv) < 0
                        || ex as isize + du > w as isize
                        || ey as isize + dv > h as isize
                    {
                        continue;
                    }
                    let mut sad = 0.0;
                    for c in 0..3 {
                        let pa = &a.data[c * hw..(c + 1) * hw];
                        let pb = &b.data[c * hw..(c + 1) * hw];
                        for y in by..ey {
                            let yb = (y as isize + dv) as usize;
                            for x in bx..ex {
                                let xb = (x as isize + du) as usize;
                                sad += (pa[y * w + x] - pb[yb * w + xb]).abs();
                            }
                        }
                    }
                    let key = (sad, du * du + dv * dv, du, dv);
                    let better = match best {
                        None => true,
                        Some(cur) => {
                            key.0 < cur.0
                                || (key.0 == cur.0 && (key.1, key.2, key.3) < (cur.1, cur.2, cur.3))
                        }
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let (_, _, du, dv) = best.expect("zero displacement is always admissible");
            for y in by..ey {
                for x in bx..ex {
                    flow.du[y * w + x] = du as f64;
                    flow.dv[y * w + x] = dv as f64;
                }
            }
        }
    }
    Ok(flow)
}

/// Chains `t0 -> t1` with `t1 -> t2`, looking the second field up at the
/// rounded landing position of the first. Validity is the conjunction along
/// the chain; landings outside the grid are invalid.
pub fn compose_flow(first: &FlowField, second: &FlowField) -> Result<FlowField> {
    second.check_size(first.height, first.width, "first flow")?;
    let (h, w) = (first.height, first.width);
    let mut out = FlowField::zeros(h, w);
    for p in 0..h * w {
        out.valid[p] = false;
        if !first.valid[p] {
            continue;
        }
        let tx = ((p % w) as f64 + first.du[p]).round();
        let ty = ((p / w) as f64 + first.dv[p]).round();
        if tx < 0.0 || ty < 0.0 || tx as usize >= w || ty as usize >= h {
            continue;
        }
        let q = ty as usize * w + tx as usize;
        if !second.valid[q] {
            continue;
        }
        out.du[p] = first.du[p] + second.du[q];
        out.dv[p] = first.dv[p] + second.dv[q];
        out.valid[p] = true;
    }
    Ok(out)
}

/// Resamples the flow grid by `(sx, sy)` (nearest neighbour) and scales the
/// displacements by the same factors.
pub fn rescale_flow(flow: &FlowField, sx: f64, sy: f64) -> Result<FlowField> {
    if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
        return Err(Error::Config(format!("flow scale factors must be positive, got ({sx}, {sy})")));
    }
    let out_w = ((flow.width as f64 * sx).round() as usize).max(1);
    let out_h = ((flow.height as f64 * sy).round() as usize).max(1);
    let n = out_h * out_w;
    let mut out = FlowField {
        height: out_h,
        width: out_w,
        du: vec![0.0; n],
        dv: vec![0.0; n],
        valid: vec![false; n],
    };
    for y in 0..out_h {
        let sy_idx = nearest_source(y, flow.height, out_h);
        for x in 0..out_w {
            let s = sy_idx * flow.width + nearest_source(x, flow.width, out_w);
            let d = y * out_w + x;
            out.du[d] = flow.du[s] * sx;
            out.dv[d] = flow.dv[s] * sy;
            out.valid[d] = flow.valid[s];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map(h: usize, w: usize) -> ClassMap {
        ClassMap::new(h, w, (0..h * w).map(|i| (i % 7) as u8).collect()).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let map = ramp_map(5, 6);
        let (out, valid) = warp_classes(&map, &FlowField::zeros(5, 6)).unwrap();
        assert_eq!(out, map);
        assert!(valid.iter().all(|&v| v));

        let probs = ProbMap::new(2, 5, 6, (0..60).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap();
        for mode in [WarpMode::Nearest, WarpMode::Bilinear] {
            let (out, valid) = warp_probs(&probs, &FlowField::zeros(5, 6), mode).unwrap();
            assert_eq!(out, probs);
            assert!(valid.iter().all(|&v| v));
        }
    }

    #[test]
    fn uniform_shift_moves_map_right() {
        let map = ramp_map(4, 5);
        let (out, valid) = warp_classes(&map, &FlowField::uniform(4, 5, 1.0, 0.0)).unwrap();
        for y in 0..4 {
            assert!(!valid[y * 5]);
            assert_eq!(out.get(y, 0), IGNORE);
            for x in 1..5 {
                assert!(valid[y * 5 + x]);
                assert_eq!(out.get(y, x), map.get(y, x - 1));
            }
        }
    }

    #[test]
    fn out_of_bounds_flow_invalidates_everything() {
        let map = ramp_map(4, 4);
        let (out, valid) = warp_classes(&map, &FlowField::uniform(4, 4, 10.0, -9.0)).unwrap();
        assert!(valid.iter().all(|&v| !v));
        assert!(out.data.iter().all(|&v| v == IGNORE));
    }

    #[test]
    fn later_source_wins_nearest_collisions() {
        let map = ClassMap::new(1, 3, vec![1, 2, 3]).unwrap();
        let flow = FlowField::new(1, 3, vec![1.0, 0.0, 0.0], vec![0.0; 3], vec![true; 3]).unwrap();
        let (out, valid) = warp_classes(&map, &flow).unwrap();
        assert_eq!(out.data, vec![IGNORE, 2, 3]);
        assert_eq!(valid, vec![false, true, true]);
    }

    #[test]
    fn masked_flow_pixels_are_not_splatted() {
        let map = ClassMap::new(1, 3, vec![1, 2, 3]).unwrap();
        let flow = FlowField::new(1, 3, vec![0.0; 3], vec![0.0; 3], vec![true, false, true]).unwrap();
        let (out, _) = warp_classes(&map, &flow).unwrap();
        assert_eq!(out.data, vec![1, IGNORE, 3]);
    }

    #[test]
    fn bilinear_warp_preserves_distribution() {
        let probs = ProbMap::new(2, 2, 3, vec![0.2, 0.4, 0.6, 0.8, 1.0, 0.0, 0.8, 0.6, 0.4, 0.2, 0.0, 1.0]).unwrap();
        let flow = FlowField::uniform(2, 3, 0.5, 0.25);
        let (out, valid) = warp_probs(&probs, &flow, WarpMode::Bilinear).unwrap();
        for px in 0..6 {
            if valid[px] {
                let s = out.data[px] + out.data[6 + px];
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blockmatch_identical_and_constant_frames_give_zero() {
        let mut frame = Frame::filled(16, 16, 0.0);
        for (i, v) in frame.data.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 / 10.0;
        }
        let f = estimate_flow_blockmatch(&frame, &frame, BlockMatchParams::default()).unwrap();
        assert!(f.du.iter().chain(&f.dv).all(|&d| d == 0.0));
        let c = Frame::filled(16, 16, 0.3);
        let f = estimate_flow_blockmatch(&c, &c, BlockMatchParams::default()).unwrap();
        assert!(f.du.iter().chain(&f.dv).all(|&d| d == 0.0));
        assert!(f.valid.iter().all(|&v| v));
    }

    #[test]
    fn blockmatch_rejects_bad_parameters() {
        let a = Frame::filled(8, 8, 0.0);
        let b = Frame::filled(8, 9, 0.0);
        assert!(estimate_flow_blockmatch(&a, &b, BlockMatchParams::default()).is_err());
        assert!(estimate_flow_blockmatch(&a, &a, BlockMatchParams { block: 6, radius: 2 }).is_err());
        assert!(estimate_flow_blockmatch(&a, &a, BlockMatchParams { block: 7, radius: 5 }).is_err());
    }

    #[test]
    fn compose_basics() {
        let f = FlowField::uniform(6, 6, 1.0, 0.0);
        let g = FlowField::uniform(6, 6, 0.0, 1.0);
        let id = compose_flow(&FlowField::zeros(6, 6), &f).unwrap();
        assert_eq!(id, f);
        let fg = compose_flow(&f, &g).unwrap();
        for p in 0..36 {
            if p % 6 < 5 {
                assert!(fg.valid[p]);
                assert_eq!((fg.du[p], fg.dv[p]), (1.0, 1.0));
            } else {
                assert!(!fg.valid[p]);
            }
        }
        assert!(compose_flow(&f, &FlowField::zeros(5, 6)).is_err());
    }

    #[test]
    fn rescale_basics() {
        let f = FlowField::uniform(4, 6, 1.0, -0.5);
        assert_eq!(rescale_flow(&f, 1.0, 1.0).unwrap(), f);
        let s = rescale_flow(&FlowField::uniform(4, 6, 1.0, 0.0), 2.0, 1.0).unwrap();
        assert_eq!((s.height, s.width), (4, 12));
        assert!(s.du.iter().all(|&d| d == 2.0));
        assert!(rescale_flow(&f, 0.0, 1.0).is_err());
    }

    #[test]
    fn hflip_negates_horizontal_component() {
        let f = FlowField::uniform(3, 4, 1.0, 0.5).hflip();
        assert!(f.du.iter().all(|&d| d == -1.0));
        assert!(f.dv.iter().all(|&d| d == 0.5));
    }
}
