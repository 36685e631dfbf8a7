//! Plain image containers shared by every module.
//!
//! All multi-channel maps are planar (`[C,H,W]`, row-major per plane), which
//! is the layout the network consumes directly.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{SpatialMap, Tensor};

/// Reserved class value for pixels excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// RGB frame, values nominally in `[0,1]`, planar layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(shape_err!(
                "frame {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            ));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let hw = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let hw = self.height * self.width;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[hw + i] = rgb[1];
        self.data[2 * hw + i] = rgb[2];
    }

    /// `[1,3,H,W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone())
            .expect("frame length checked at construction")
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        (self.height, self.width) == (other.height, other.width)
    }
}

/// Two consecutive frames `(x_{k-1}, x_k)` consumed together by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub prev: Frame,
    pub cur: Frame,
}

impl FramePair {
    pub fn new(prev: Frame, cur: Frame) -> Result<Self> {
        if !prev.same_size(&cur) {
            return Err(shape_err!(
                "pair frames differ: {}x{} vs {}x{}",
                prev.height,
                prev.width,
                cur.height,
                cur.width
            ));
        }
        Ok(FramePair { prev, cur })
    }
}

/// Per-pixel class indices with [`IGNORE`] for excluded pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "class map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(ClassMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        ClassMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn labelled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != IGNORE).count()
    }

    pub fn labelled_fraction(&self) -> f64 {
        self.labelled_count() as f64 / self.data.len().max(1) as f64
    }
}

/// Per-pixel class distribution, planar `[K,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(shape_err!(
                "prob map {classes}x{height}x{width} needs {} values, got {}",
                classes * height * width,
                data.len()
            ));
        }
        Ok(ProbMap {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Per-pixel argmax; the lowest class index wins ties.
    pub fn argmax(&self) -> ClassMap {
        let hw = self.height * self.width;
        let data = (0..hw)
            .map(|px| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.data[c * hw + px] > self.data[best * hw + px] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        ClassMap {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// One-hot encoding; [`IGNORE`] pixels become all-zero columns.
    pub fn one_hot(labels: &ClassMap, classes: usize) -> Self {
        let hw = labels.height * labels.width;
        let mut data = vec![0.0; classes * hw];
        for (px, &l) in labels.data.iter().enumerate() {
            if (l as usize) < classes {
                data[l as usize * hw + px] = 1.0;
            }
        }
        ProbMap {
            classes,
            height: labels.height,
            width: labels.width,
            data,
        }
    }
}

/// Bilinear resize of planar data with `planes` channels.
pub fn resize_planes(
    data: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return data.to_vec();
    }
    SpatialMap::bilinear_resize(h, w, out_h, out_w).apply_planes(data, planes)
}

/// Nearest-neighbour source index along one axis for a resize.
pub fn nearest_source(o: usize, n_in: usize, n_out: usize) -> usize {
    let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize;
    src.min(n_in - 1)
}
