//! Datasets: procedural colored digits, IDX digit ingestion, and CSV tables
//! with protected attributes.

mod colored;
mod idx;
mod tabular;

pub use colored::{
    gen_colored_digits, generate_with_color_means, quantize_channel, ColoredDigitsConfig,
    DigitSource, Split, GLYPH_COUNT, PALETTE,
};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use tabular::{
    flip_attribute, load_tabular, load_tabular_holdout, load_tabular_split, ColumnKind, FeatureColumn, FeatureSlot,
    TabularSchema,
};

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One observation `(x, y, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: usize,
    pub b: &'a [i32],
}

/// Where a dataset came from; persisted in `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ColoredDigits {
        config: ColoredDigitsConfig,
        split: Split,
        palette: Vec<[f64; 3]>,
    },
    Tabular {
        schema: TabularSchema,
        features: Vec<FeatureSlot>,
        target_values: Vec<String>,
        bias_values: Vec<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub x_dim: usize,
    pub bias_arity: usize,
    pub num_classes: usize,
    pub bias_cardinalities: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    bias: Vec<i32>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, bias: Vec<i32>, meta: DatasetMeta) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("empty dataset".into()));
        }
        if x.shape().len() != 2 || x.rows() != n {
            return Err(Error::Data(format!(
                "{} labels for features of shape {:?}",
                n,
                x.shape()
            )));
        }
        if meta.bias_arity == 0 || bias.len() != n * meta.bias_arity {
            return Err(Error::Data(format!(
                "{} bias entries for {n} samples of arity {}",
                bias.len(),
                meta.bias_arity
            )));
        }
        if meta.bias_cardinalities.len() != meta.bias_arity {
            return Err(Error::Data("one cardinality per bias channel".into()));
        }
        if let Some(&bad) = y.iter().find(|&&v| v >= meta.num_classes) {
            return Err(Error::Data(format!(
                "target {bad} outside [0, {})",
                meta.num_classes
            )));
        }
        for (k, chunk) in bias.chunks(meta.bias_arity).enumerate() {
            for (c, &v) in chunk.iter().enumerate() {
                if v < 0 || v as usize >= meta.bias_cardinalities[c] {
                    return Err(Error::Data(format!(
                        "sample {k}: bias channel {c} value {v} outside [0, {})",
                        meta.bias_cardinalities[c]
                    )));
                }
            }
        }
        let mut meta = meta;
        meta.n = n;
        meta.x_dim = x.cols();
        Ok(Self { x, y, bias, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn bias_arity(&self) -> usize {
        self.meta.bias_arity
    }

    pub fn bias_row(&self, i: usize) -> &[i32] {
        let a = self.meta.bias_arity;
        &self.bias[i * a..(i + 1) * a]
    }

    pub fn bias_rows(&self, idx: &[usize]) -> Vec<&[i32]> {
        idx.iter().map(|&i| self.bias_row(i)).collect()
    }

    /// Bias channel `c` of every sample.
    pub fn bias_channel(&self, c: usize) -> Vec<usize> {
        (0..self.len()).map(|i| self.bias_row(i)[c] as usize).collect()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: self.x.row(i),
            y: self.y[i],
            b: self.bias_row(i),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let bias = idx
            .iter()
            .flat_map(|&i| self.bias_row(i).iter().copied())
            .collect();
        Dataset::new(
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
            bias,
            self.meta.clone(),
        )
    }

    /// Seeded random subset of `n` samples (all of them if `n >= len`).
    pub fn sample_subset(&self, n: usize, seed: u64) -> Result<Self> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n.min(self.len()));
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Writes `meta.json` and `data.bin` into `dir`.
    ///
    /// `data.bin` holds, per sample: `x_dim` little-endian f64, the target as
    /// i32, then `bias_arity` i32 bias entries.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        fs::write(dir.join("meta.json"), meta + "\n")?;
        let mut w = BufWriter::new(File::create(dir.join("data.bin"))?);
        for i in 0..self.len() {
            for v in self.x.row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(self.y[i] as i32).to_le_bytes())?;
            for b in self.bias_row(i) {
                w.write_all(&b.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_reader(BufReader::new(File::open(dir.join("meta.json"))?))?;
        let mut r = BufReader::new(File::open(dir.join("data.bin"))?);
        let (n, d, a) = (meta.n, meta.x_dim, meta.bias_arity);
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n * a);
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        let trunc = |i| Error::Format(format!("data.bin truncated at sample {i}"));
        for i in 0..n {
            for _ in 0..d {
                r.read_exact(&mut b8).map_err(|_| trunc(i))?;
                x.push(f64::from_le_bytes(b8));
            }
            r.read_exact(&mut b4).map_err(|_| trunc(i))?;
            let yi = i32::from_le_bytes(b4);
            if yi < 0 {
                return Err(Error::Format(format!("negative target at sample {i}")));
            }
            y.push(yi as usize);
            for _ in 0..a {
                r.read_exact(&mut b4).map_err(|_| trunc(i))?;
                bias.push(i32::from_le_bytes(b4));
            }
        }
        if r.read(&mut b4)? != 0 {
            return Err(Error::Format("data.bin has trailing bytes".into()));
        }
        Dataset::new(Tensor::new(vec![n, d], x)?, y, bias, meta)
    }
}
