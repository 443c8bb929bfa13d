use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images scaled to [0,1], row-major, `count` × `rows` × `cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }

    /// Area-averaging resample to `side` × `side`.
    pub fn downsample(&self, side: usize) -> IdxImages {
        if side == self.rows && side == self.cols {
            return self.clone();
        }
        let wr = area_weights(self.rows, side);
        let wc = area_weights(self.cols, side);
        let mut pixels = Vec::with_capacity(self.count * side * side);
        for i in 0..self.count {
            let img = self.image(i);
            for rw in &wr {
                for cw in &wc {
                    let mut acc = 0.0;
                    for &(r, a) in rw {
                        for &(c, b) in cw {
                            acc += a * b * img[r * self.cols + c];
                        }
                    }
                    pixels.push(acc);
                }
            }
        }
        IdxImages {
            count: self.count,
            rows: side,
            cols: side,
            pixels,
        }
    }
}

// For each output cell, the source indices it overlaps with normalized weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((s, overlap / scale));
                }
                s += 1;
            }
            w
        })
        .collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("{}: truncated file", self.what)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Ingestion {
        row: 0,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    let what = path.display().to_string();
    let mut cur = Cursor { bytes: &bytes, pos: 0, what: &what };
    let magic = cur.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("{what}: bad image magic {magic:#010x}")));
    }
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let raw = cur.take(count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: raw.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let what = path.display().to_string();
    let mut cur = Cursor { bytes: &bytes, pos: 0, what: &what };
    let magic = cur.u32()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("{what}: bad label magic {magic:#010x}")));
    }
    let count = cur.u32()? as usize;
    Ok(cur.take(count)?.to_vec())
}

/// Reads an image/label file pair, optionally resampling to `side` × `side`.
pub fn load_idx(images: &Path, labels: &Path, side: Option<usize>) -> Result<(IdxImages, Vec<u8>)> {
    let mut img = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            img.count,
            lab.len()
        )));
    }
    if let Some(s) = side {
        img = img.downsample(s);
    }
    Ok((img, lab))
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, raw: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || raw.len() % (rows * cols) != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {rows}x{cols} images",
            raw.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + raw.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [raw.len() / (rows * cols), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(raw);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}
