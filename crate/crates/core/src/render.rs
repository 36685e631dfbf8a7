//! Colour-mapped class maps as binary PPM (P6) images.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{ClassMap, IGNORE};
use crate::synth::hsv_to_rgb;

pub type Rgb8 = [u8; 3];

/// Colour of [`IGNORE`] pixels.
pub const IGNORE_COLOR: Rgb8 = [0, 0, 0];

/// `classes` evenly spaced saturated hues.
pub fn default_palette(classes: usize) -> Vec<Rgb8> {
    (0..classes)
        .map(|c| {
            let [r, g, b] = hsv_to_rgb(360.0 * c as f64 / classes as f64, 0.75, 0.95);
            [to_u8(r), to_u8(g), to_u8(b)]
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb8>,
}

pub fn colorize(map: &ClassMap, palette: &[Rgb8]) -> Result<RgbImage> {
    let pixels = map
        .data
        .iter()
        .enumerate()
        .map(|(i, &c)| match c {
            IGNORE => Ok(IGNORE_COLOR),
            c => palette.get(c as usize).copied().ok_or(Error::InvalidLabel {
                label: c,
                index: i,
                classes: palette.len(),
                ignore: IGNORE,
            }),
        })
        .collect::<Result<_>>()?;
    Ok(RgbImage {
        width: map.width,
        height: map.height,
        pixels,
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().flatten());
    out
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PPM header ended early".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::Format("not a binary PPM (P6)".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::Format(format!("bad PPM {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    if number("maxval")? != 255 {
        return Err(Error::Format("only 8-bit PPM is supported".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() < start + need {
        return Err(Error::Truncated {
            offset: start.min(bytes.len()),
            needed: need,
            len: bytes.len(),
        });
    }
    let pixels = bytes[start..start + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(RgbImage { width, height, pixels })
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderKind {
    Pred,
    Gt,
    Pseudo,
}

impl RenderKind {
    pub fn name(self) -> &'static str {
        match self {
            RenderKind::Pred => "pred",
            RenderKind::Gt => "gt",
            RenderKind::Pseudo => "pseudo",
        }
    }
}

/// Writes `frame_{t}_{kind}.ppm` into `dir` for every map.
pub fn render_maps(dir: &Path, kind: RenderKind, maps: &[(usize, ClassMap)], palette: &[Rgb8]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    maps.iter()
        .map(|(t, map)| {
            let path = dir.join(format!("frame_{t}_{}.ppm", kind.name()));
            write_ppm(&colorize(map, palette)?, &path)?;
            Ok(path)
        })
        .collect()
}
