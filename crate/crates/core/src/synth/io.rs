//! Binary clip files.
//!
//! Little-endian layout:
//!
//! ```text
//! "TPSC"  u16 version
//! u32 H, u32 W, u32 K, u32 L
//! u8 domain (0 source, 1 target), u8 has_labels, u16 id length, id bytes
//! L*H*W*3 f32   frames, row-major interleaved RGB
//! L*H*W   u8    labels (only when has_labels = 1)
//! (L-1)*H*W*2 f32  flow, interleaved (du, dv)
//! (L-1)*H*W   u8   flow validity (0/1)
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{ClassMap, Frame};

use super::{Clip, Domain};

pub const CLIP_MAGIC: &[u8; 4] = b"TPSC";
pub const CLIP_VERSION: u16 = 1;

pub fn clip_to_bytes(clip: &Clip) -> Vec<u8> {
    let (h, w, l) = (clip.height(), clip.width(), clip.len());
    let hw = h * w;
    let mut out = Vec::with_capacity(64 + l * hw * 13);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for v in [h, w, clip.classes, l] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match clip.domain {
        Domain::Source => 0,
        Domain::Target => 1,
    });
    out.push(clip.labels.is_some() as u8);
    out.extend_from_slice(&(clip.clip_id.len() as u16).to_le_bytes());
    out.extend_from_slice(clip.clip_id.as_bytes());
    for f in &clip.frames {
        for i in 0..hw {
            for c in 0..3 {
                out.extend_from_slice(&(f.data[c * hw + i] as f32).to_le_bytes());
            }
        }
    }
    if let Some(labels) = &clip.labels {
        for l in labels {
            out.extend_from_slice(&l.data);
        }
    }
    for f in &clip.gt_flow {
        for i in 0..hw {
            out.extend_from_slice(&(f.du[i] as f32).to_le_bytes());
            out.extend_from_slice(&(f.dv[i] as f32).to_le_bytes());
        }
    }
    for f in &clip.gt_flow {
        out.extend(f.valid.iter().map(|&v| v as u8));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn parse_clip(bytes: &[u8]) -> Result<Clip> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CLIP_MAGIC {
        return Err(Error::Format("bad magic, expected \"TPSC\"".into()));
    }
    let version = cur.u16()?;
    if version != CLIP_VERSION {
        return Err(Error::Format(format!("unsupported clip version {version}")));
    }
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    let l = cur.u32()? as usize;
    if !(2..=8).contains(&k) {
        return Err(Error::InvalidManifest(format!("class count {k} outside 2..=8")));
    }
    if h == 0 || w == 0 || l < 2 {
        return Err(Error::InvalidManifest(format!("degenerate clip {h}x{w} with {l} frames")));
    }
    let domain = match cur.u8()? {
        0 => Domain::Source,
        1 => Domain::Target,
        d => return Err(Error::Format(format!("unknown domain tag {d}"))),
    };
    let has_labels = match cur.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad label flag {v}"))),
    };
    let id_len = cur.u16()? as usize;
    let clip_id = String::from_utf8(cur.take(id_len)?.to_vec())
        .map_err(|_| Error::Format("clip id is not UTF-8".into()))?;

    let hw = h * w;
    let mut frames = Vec::with_capacity(l);
    for _ in 0..l {
        let raw = cur.f32s(hw * 3)?;
        let mut data = vec![0.0; hw * 3];
        for i in 0..hw {
            for c in 0..3 {
                data[c * hw + i] = raw[i * 3 + c] as f64;
            }
        }
        frames.push(Frame::new(h, w, data)?);
    }
    let labels = if has_labels {
        let mut maps = Vec::with_capacity(l);
        for _ in 0..l {
            let data = cur.take(hw)?.to_vec();
            if let Some(bad) = data.iter().find(|&&c| c as usize >= k) {
                return Err(Error::Format(format!("label {bad} out of range for {k} classes")));
            }
            maps.push(ClassMap::new(h, w, data)?);
        }
        Some(maps)
    } else {
        None
    };
    let mut gt_flow = Vec::with_capacity(l - 1);
    for _ in 0..l - 1 {
        let raw = cur.f32s(hw * 2)?;
        let du = raw.iter().step_by(2).map(|&v| v as f64).collect();
        let dv = raw.iter().skip(1).step_by(2).map(|&v| v as f64).collect();
        gt_flow.push(FlowField::new(h, w, du, dv, vec![true; hw])?);
    }
    for f in gt_flow.iter_mut() {
        f.valid = cur.take(hw)?.iter().map(|&v| v != 0).collect();
    }
    let body_end = cur.pos;
    let stored = cur.u32()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.pos
        )));
    }
    Ok(Clip {
        clip_id,
        domain,
        classes: k,
        frames,
        labels,
        gt_flow,
    })
}

pub fn save_clip(clip: &Clip, path: &Path) -> Result<u32> {
    let bytes = clip_to_bytes(clip);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(crc32fast::hash(&bytes))
}

pub fn load_clip(path: &Path) -> Result<Clip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_clip(&bytes)
}
