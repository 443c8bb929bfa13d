use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::idx::load_idx;
use super::{Dataset, DatasetMeta, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const GLYPH_COUNT: usize = 10;
const BINS: usize = 8;

/// Class-mean colors. Channel values come from {0.1, 0.55, 0.9}, which sit inside
/// bins 0, 4 and 7, so any two means differ by at least three bins on some
/// channel. Dark colors are excluded so glyphs stay visible.
pub const PALETTE: [[f64; 3]; GLYPH_COUNT] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.1, 0.1, 0.9],
    [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9],
    [0.1, 0.9, 0.9],
    [0.9, 0.9, 0.9],
    [0.9, 0.55, 0.1],
    [0.55, 0.1, 0.9],
    [0.1, 0.55, 0.55],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DigitSource {
    #[default]
    Procedural,
    /// Directory holding the four standard MNIST IDX files.
    IdxFiles { path: PathBuf },
}

fn default_side() -> usize {
    14
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColoredDigitsConfig {
    pub sigma2: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_side")]
    pub image_side: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub source: DigitSource,
}

impl ColoredDigitsConfig {
    pub fn new(sigma2: f64, n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            sigma2,
            n_train,
            n_test,
            image_side: default_side(),
            seed,
            source: DigitSource::Procedural,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if self.image_side < 8 {
            return Err(Error::Config(format!(
                "image_side must be >= 8, got {}",
                self.image_side
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    pub fn x_dim(&self) -> usize {
        3 * self.image_side * self.image_side
    }
}

/// Bin of a channel value under 8 equal-width bins on [0,1].
pub fn quantize_channel(v: f64) -> i32 {
    ((v * BINS as f64).floor() as i32).clamp(0, BINS as i32 - 1)
}

pub fn gen_colored_digits(cfg: &ColoredDigitsConfig, split: Split) -> Result<Dataset> {
    generate_with_color_means(cfg, split).map(|(d, _)| d)
}

/// Like [`gen_colored_digits`], also returning each sample's palette index.
pub fn generate_with_color_means(
    cfg: &ColoredDigitsConfig,
    split: Split,
) -> Result<(Dataset, Vec<usize>)> {
    cfg.validate()?;
    let n = match split {
        Split::Train => cfg.n_train,
        Split::Test => cfg.n_test,
    };
    let side = cfg.image_side;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });

    let glyphs: Vec<(Vec<f64>, usize)> = match &cfg.source {
        DigitSource::Procedural => (0..n)
            .map(|_| {
                let y = rng.gen_range(0..GLYPH_COUNT);
                (render_glyph(y, side, &mut rng), y)
            })
            .collect(),
        DigitSource::IdxFiles { path } => idx_glyphs(path, split, n, side)?,
    };

    let noise = Normal::new(0.0, cfg.sigma2.sqrt()).expect("finite positive std");
    let mut x = Vec::with_capacity(n * cfg.x_dim());
    let mut ys = Vec::with_capacity(n);
    let mut bias = Vec::with_capacity(n * 3);
    let mut means = Vec::with_capacity(n);
    for (img, y) in glyphs {
        let m = match split {
            Split::Train => y,
            Split::Test => rng.gen_range(0..GLYPH_COUNT),
        };
        let mut color = PALETTE[m];
        for c in &mut color {
            *c = (*c + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        for v in &img {
            x.extend(color.iter().map(|c| v * c));
        }
        bias.extend(color.iter().map(|&c| quantize_channel(c)));
        ys.push(y);
        means.push(m);
    }
    let meta = DatasetMeta {
        n,
        x_dim: cfg.x_dim(),
        bias_arity: 3,
        num_classes: GLYPH_COUNT,
        bias_cardinalities: vec![BINS; 3],
        provenance: Provenance::ColoredDigits {
            config: cfg.clone(),
            split,
            palette: PALETTE.to_vec(),
        },
    };
    let ds = Dataset::new(Tensor::new(vec![n, cfg.x_dim()], x)?, ys, bias, meta)?;
    Ok((ds, means))
}

fn idx_glyphs(dir: &std::path::Path, split: Split, n: usize, side: usize) -> Result<Vec<(Vec<f64>, usize)>> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let (img, lab) = load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        Some(side),
    )?;
    if n > img.count {
        return Err(Error::Data(format!(
            "requested {n} samples but the IDX split holds {}",
            img.count
        )));
    }
    (0..n)
        .map(|i| {
            let y = lab[i] as usize;
            if y >= GLYPH_COUNT {
                return Err(Error::Data(format!("IDX label {y} at index {i}")));
            }
            Ok((img.image(i).to_vec(), y))
        })
        .collect()
}

/// Draws glyph `g` with random translation, scale and stroke width.
/// Pixel values are 0 or 1.
pub(super) fn render_glyph(g: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let du = rng.gen_range(-0.12..0.12);
    let dv = rng.gen_range(-0.12..0.12);
    let s = rng.gen_range(0.85..1.1);
    let t = rng.gen_range(0.07..0.12);
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let x = ((c as f64 + 0.5) / side as f64 - 0.5 - du) / s;
            let y = ((r as f64 + 0.5) / side as f64 - 0.5 - dv) / s;
            out.push(if inside(g, x, y, t) { 1.0 } else { 0.0 });
        }
    }
    out
}

// Glyph membership in centered coordinates, x right and y down, span ~[-0.4, 0.4].
fn inside(g: usize, x: f64, y: f64, t: f64) -> bool {
    let (ax, ay) = (x.abs(), y.abs());
    let r = x.hypot(y);
    let within = ax < 0.35 && ay < 0.35;
    let vbar = ax < t && ay < 0.35;
    let hbar = ay < t && ax < 0.35;
    let d = 1.4 * t;
    match g {
        0 => (r - 0.28).abs() < t,
        1 => vbar,
        2 => hbar,
        3 => vbar || hbar,
        4 => within && ((x - y).abs() < d || (x + y).abs() < d),
        5 => (ax.max(ay) - 0.28).abs() < t,
        6 => ((x + 0.28).abs() < t && ay < 0.35) || ((y - 0.28).abs() < t && ax < 0.35),
        7 => (ax - 0.22).abs() < t && ay < 0.35,
        8 => r < 0.22,
        9 => within && (x + y).abs() < d,
        _ => unreachable!("glyph index {g}"),
    }
}
