//! Config-driven experiment runner shared by the command-line tool and the
//! test suites: data generation, training runs, evaluation and σ² sweeps.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{
    flip_attribute, gen_colored_digits, load_tabular_holdout, load_tabular_split, ColoredDigitsConfig,
    Dataset, DigitSource, Provenance, Split, TabularSchema,
};
use crate::error::{Error, Result};
use crate::graphmi::PairPolicy;
use crate::metrics::{
    accuracy, auc, average_precision, balanced_accuracy, consistency, f1, gap_metrics, EvalReport,
};
use crate::models::{build_bundle, save_checkpoint, ArchSpec, ModelBundle};
use crate::training::{fit_partial, predict, predict_scores, TrainConfig, TrainHistory, Variant};

/// Derives an independent seed for one named component from the top-level
/// seed (SplitMix64 over the seed mixed with an FNV-1a hash of the name).
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn default_side() -> usize {
    14
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    ColoredDigits {
        sigma2: f64,
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_side")]
        image_side: usize,
        #[serde(default)]
        source: DigitSource,
    },
    Tabular {
        path: PathBuf,
        /// Separate test file; without it `test_fraction` of `path` is held out.
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        schema: TabularSchema,
    },
}

/// Extractor hidden widths (the last is `h`) and disentangled feature width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma2: Vec<f64>,
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    pub outputs: PathBuf,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// Parses a JSON config; relative paths are resolved against the
    /// config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.outputs);
        match &mut cfg.data {
            DataConfig::ColoredDigits { source: DigitSource::IdxFiles { path }, .. } => fix(path),
            DataConfig::Tabular { path, test_path, .. } => {
                fix(path);
                if let Some(t) = test_path {
                    fix(t);
                }
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match &self.data {
            DataConfig::ColoredDigits { .. } => {
                self.digits_config(self.seed).expect("colored digits").validate()?;
            }
            DataConfig::Tabular { test_fraction, .. } => {
                if let PairPolicy::ChannelTolerance(_) = self.train.pair_policy {
                    return Err(Error::Config(
                        "tabular data needs the same_label pair policy".into(),
                    ));
                }
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "test_fraction must lie in (0, 1), got {test_fraction}"
                    )));
                }
            }
        }
        if let Some(m) = &self.model {
            if m.hidden.is_empty() || m.hidden.contains(&0) || m.feature == 0 {
                return Err(Error::Config(format!("invalid model widths {m:?}")));
            }
        }
        if let Some(s) = &self.sweep {
            if !matches!(self.data, DataConfig::ColoredDigits { .. }) {
                return Err(Error::Config("sweeps vary sigma2 and need colored digits".into()));
            }
            if s.sigma2.is_empty() || s.variants.is_empty() || s.seeds.is_empty() {
                return Err(Error::Config("sweep lists must be non-empty".into()));
            }
            if let Some(&bad) = s.sigma2.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("sweep sigma2 must be > 0, got {bad}")));
            }
        }
        Ok(())
    }

    /// Colored-digit generator settings under top-level seed `seed`.
    pub fn digits_config(&self, seed: u64) -> Option<ColoredDigitsConfig> {
        match &self.data {
            DataConfig::ColoredDigits { sigma2, n_train, n_test, image_side, source } => {
                Some(ColoredDigitsConfig {
                    sigma2: *sigma2,
                    n_train: *n_train,
                    n_test: *n_test,
                    image_side: *image_side,
                    seed: sub_seed(seed, "data"),
                    source: source.clone(),
                })
            }
            DataConfig::Tabular { .. } => None,
        }
    }

    pub fn sigma2(&self) -> Option<f64> {
        match &self.data {
            DataConfig::ColoredDigits { sigma2, .. } => Some(*sigma2),
            DataConfig::Tabular { .. } => None,
        }
    }

    /// Copy with a different σ², variant and seed, as used for sweep cells.
    pub fn cell(&self, variant: Variant, sigma2: f64, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.train.variant = variant;
        if let DataConfig::ColoredDigits { sigma2: s, .. } = &mut c.data {
            *s = sigma2;
        }
        c.sweep = None;
        c
    }

    /// Training config with the shuffle sub-seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.seed, "shuffle"),
            ..self.train.clone()
        }
    }
}

/// Train and test splits for `cfg`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataConfig::ColoredDigits { .. } => {
            let dc = cfg.digits_config(cfg.seed).expect("colored digits");
            Ok((
                gen_colored_digits(&dc, Split::Train)?,
                gen_colored_digits(&dc, Split::Test)?,
            ))
        }
        DataConfig::Tabular { path, test_path: Some(t), schema, .. } => load_tabular_split(path, t, schema),
        DataConfig::Tabular { path, test_path: None, test_fraction, schema } => {
            load_tabular_holdout(path, schema, *test_fraction, sub_seed(cfg.seed, "data"))
        }
    }
}

/// Architecture for `cfg` sized to `train`.
pub fn arch_for(cfg: &ExperimentConfig, train: &Dataset) -> ArchSpec {
    let d = train.x_dim();
    match (&cfg.data, &cfg.model) {
        (DataConfig::ColoredDigits { .. }, None) => ArchSpec::colored_digits(d),
        (DataConfig::ColoredDigits { .. }, Some(m)) => ArchSpec::colored_digits_sized(d, &m.hidden, m.feature),
        (DataConfig::Tabular { .. }, m) => {
            let m = m.clone().unwrap_or(ModelConfig { hidden: vec![64], feature: 32 });
            ArchSpec::tabular_sized(d, &m.hidden, m.feature, &train.meta.bias_cardinalities)
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, train: &Dataset) -> Result<ModelBundle> {
    build_bundle(&arch_for(cfg, train), sub_seed(cfg.seed, "init"))
}

/// Metrics of `bundle` on `ds`. Ranking metrics are reported for binary
/// targets, equalized-odds gaps for binary protected attributes, and one
/// consistency entry per flipped column. Metrics undefined on this data are
/// omitted.
pub fn evaluate(bundle: &ModelBundle, ds: &Dataset, flips: &[String]) -> Result<EvalReport> {
    if bundle.input_dim() != ds.x_dim() {
        return Err(Error::dim(format!(
            "checkpoint expects {} features, data has {}",
            bundle.input_dim(),
            ds.x_dim()
        )));
    }
    let preds = predict(bundle, &ds.x)?;
    let mut r = EvalReport {
        accuracy: Some(accuracy(&preds, &ds.y)?),
        balanced_accuracy: balanced_accuracy(&preds, &ds.y).ok(),
        ..Default::default()
    };
    if bundle.binary_target() {
        let scores = predict_scores(bundle, &ds.x)?;
        r.auc = auc(&scores, &ds.y).ok();
        r.average_precision = average_precision(&scores, &ds.y).ok();
        r.f1 = f1(&scores, &ds.y).ok();
        if let Provenance::Tabular { schema, .. } = &ds.meta.provenance {
            for (c, name) in schema.bias_columns.iter().enumerate() {
                if ds.meta.bias_cardinalities[c] == 2 {
                    if let Ok((rms, max)) = gap_metrics(&preds, &ds.y, &ds.bias_channel(c)) {
                        r.gap_rms.insert(name.clone(), rms);
                        r.gap_max.insert(name.clone(), max);
                    }
                }
            }
        }
    }
    for col in flips {
        let flipped = flip_attribute(ds, col)?;
        r.consistency.insert(col.clone(), consistency(&preds, &predict(bundle, &flipped.x)?)?);
    }
    Ok(r)
}

/// Outcome summary of one training run; serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test: EvalReport,
    /// Wall-clock seconds since the Unix epoch; the only non-reproducible key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

pub struct RunOutcome {
    pub bundle: ModelBundle,
    pub history: TrainHistory,
    pub report: RunReport,
}

/// Builds, trains and evaluates one model on already-loaded data.
pub fn run_on(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    run_keeping_history(cfg, train, test).map_err(|(e, _)| e)
}

/// [`run_on`], handing back whatever history was recorded before a failure.
fn run_keeping_history(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> std::result::Result<RunOutcome, (Error, TrainHistory)> {
    let mut bundle = build_model(cfg, train).map_err(|e| (e, TrainHistory::default()))?;
    let (history, outcome) = fit_partial(&mut bundle, train, Some(test), &cfg.train_config());
    if let Err(e) = outcome {
        return Err((e, history));
    }
    let report = (|| {
        Ok(RunReport {
            variant: cfg.train.variant,
            sigma2: cfg.sigma2(),
            seed: cfg.seed,
            train_accuracy: accuracy(&predict(&bundle, &train.x)?, &train.y)?,
            test: evaluate(&bundle, test, &[])?,
            generated_at: None,
        })
    })();
    match report {
        Ok(report) => Ok(RunOutcome { bundle, history, report }),
        Err(e) => Err((e, history)),
    }
}

/// Runs one model and writes its artifacts to `dir`; on failure the partial
/// history is still written.
fn run_into(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, dir: &Path) -> Result<RunOutcome> {
    match run_keeping_history(cfg, train, test) {
        Ok(out) => {
            write_run(dir, &out)?;
            Ok(out)
        }
        Err((e, history)) => {
            fs::create_dir_all(dir)?;
            history.write_jsonl(BufWriter::new(File::create(dir.join("history.jsonl"))?))?;
            Err(e)
        }
    }
}

fn now_unix() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

/// Writes `checkpoint.bin`, `history.jsonl` and `report.json` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&out.bundle, &dir.join("checkpoint.bin"))?;
    out.history.write_jsonl(BufWriter::new(File::create(dir.join("history.jsonl"))?))?;
    let report = RunReport {
        generated_at: now_unix(),
        ..out.report.clone()
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}

/// Loads data, trains, and writes all run artifacts to `cfg.outputs`
/// (only the partial history if training fails).
pub fn train_and_save(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (train, test) = load_data(cfg)?;
    run_into(cfg, &train, &test, &cfg.outputs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitSummary {
    pub n: usize,
    pub x_dim: usize,
    /// Empirical entropy (nats) of each bias channel.
    pub bias_entropy: Vec<f64>,
}

impl SplitSummary {
    pub fn of(ds: &Dataset) -> Self {
        let bias_entropy = (0..ds.bias_arity())
            .map(|c| {
                let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
                for v in ds.bias_channel(c) {
                    *counts.entry(v).or_default() += 1;
                }
                let n = ds.len() as f64;
                counts
                    .values()
                    .map(|&k| {
                        let p = k as f64 / n;
                        -p * p.ln()
                    })
                    .sum()
            })
            .collect();
        Self {
            n: ds.len(),
            x_dim: ds.x_dim(),
            bias_entropy,
        }
    }
}

/// Generates (or ingests) the configured data and persists both splits under
/// `outputs/train` and `outputs/test`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(SplitSummary, SplitSummary)> {
    let (train, test) = load_data(cfg)?;
    train.save(&cfg.outputs.join("train"))?;
    test.save(&cfg.outputs.join("test"))?;
    Ok((SplitSummary::of(&train), SplitSummary::of(&test)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub sigma2: f64,
    pub seed: u64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub variant: Variant,
    pub sigma2: f64,
    pub seed: u64,
}

/// Every (variant, σ², seed) combination of the config's sweep section.
pub fn sweep_cells(s: &SweepConfig) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &variant in &s.variants {
        for &sigma2 in &s.sigma2 {
            for &seed in &s.seeds {
                cells.push(SweepCell { variant, sigma2, seed });
            }
        }
    }
    cells
}

/// Runs `cells`; failures become rows with empty accuracies. Data is
/// generated once per (σ², seed). When `out` is given each cell writes its
/// artifacts to `out/cells/<variant>_<sigma2>_<seed>/` and the sorted table
/// goes to `out/table.csv`.
pub fn run_sweep(base: &ExperimentConfig, cells: &[SweepCell], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let mut data: HashMap<(u64, u64), (Dataset, Dataset)> = HashMap::new();
    let mut rows = Vec::with_capacity(cells.len());
    for c in cells {
        let cfg = base.cell(c.variant, c.sigma2, c.seed);
        let key = (c.sigma2.to_bits(), c.seed);
        let result = (|| -> Result<RunOutcome> {
            cfg.validate()?;
            if !data.contains_key(&key) {
                data.insert(key, load_data(&cfg)?);
            }
            let (train, test) = &data[&key];
            match out {
                Some(dir) => {
                    let name = format!("{}_{}_{}", c.variant, c.sigma2, c.seed);
                    run_into(&cfg, train, test, &dir.join("cells").join(name))
                }
                None => run_on(&cfg, train, test),
            }
        })();
        rows.push(match result {
            Ok(o) => SweepRow {
                variant: c.variant,
                sigma2: c.sigma2,
                seed: c.seed,
                train_accuracy: Some(o.report.train_accuracy),
                test_accuracy: o.report.test.accuracy,
                error: None,
            },
            Err(e) => SweepRow {
                variant: c.variant,
                sigma2: c.sigma2,
                seed: c.seed,
                train_accuracy: None,
                test_accuracy: None,
                error: Some(e.to_string()),
            },
        });
    }
    rows.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.sigma2.total_cmp(&b.sigma2))
            .then(a.seed.cmp(&b.seed))
    });
    if let Some(dir) = out {
        write_table(&dir.join("table.csv"), &rows)?;
    }
    Ok(rows)
}

/// `variant,sigma2,test_accuracy,seed`; failed cells leave the accuracy empty.
pub fn write_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["variant", "sigma2", "test_accuracy", "seed"]).map_err(csv_err)?;
    for r in rows {
        let acc = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        w.write_record([r.variant.as_str(), &r.sigma2.to_string(), &acc, &r.seed.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean test accuracy over the successful seeds of one (variant, σ²).
pub fn mean_accuracy(rows: &[SweepRow], variant: Variant, sigma2: f64) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.sigma2 == sigma2)
        .filter_map(|r| r.test_accuracy)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests;
