use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use csad::data::Dataset;
use csad::experiment::{
    gen_data, run_sweep, sweep_cells, train_and_save, evaluate, ExperimentConfig, SweepConfig, SplitSummary,
};
use csad::models::load_checkpoint;
use csad::training::Variant;

/// Exit codes: 0 success, 1 other failure, 2 invalid config, 3 training
/// failure, 4 evaluation failure.
const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRAIN: u8 = 3;
const EXIT_EVAL: u8 = 4;

#[derive(Parser)]
#[command(name = "csad", version, about = "Cross-sample adversarial debiasing experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or ingest the configured data and write both splits.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the configured variant; writes checkpoint, history and report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a saved dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (meta.json + data.bin).
        #[arg(long)]
        data: PathBuf,
        /// Column to flip for a consistency score; repeatable.
        #[arg(long = "flip")]
        flips: Vec<String>,
        /// Report path [default: eval/report.json beside the checkpoint, or
        /// under the configured outputs when --config is given].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every (variant, sigma2, seed) cell and write table.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's sigma2 list, e.g. 0.02,0.035.
        #[arg(long, value_delimiter = ',')]
        sigma2: Option<Vec<f64>>,
        /// Overrides the config's variant list, e.g. baseline,CSAD.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, err: e.into() })
    }
}

/// Config errors keep their own exit code whatever stage raised them.
fn staged<T>(r: csad::Result<T>, code: u8) -> Result<T, Failure> {
    match r {
        Err(e @ csad::Error::Config(_)) => Err(e).exit_with(EXIT_CONFIG),
        r => r.exit_with(code),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))
        .exit_with(EXIT_CONFIG)
}

fn print_summary(name: &str, s: &SplitSummary) {
    let h: Vec<String> = s.bias_entropy.iter().map(|v| format!("{v:.4}")).collect();
    println!("{name}: n={} x_dim={} bias_entropy=[{}]", s.n, s.x_dim, h.join(", "));
}

fn cmd_gen_data(config: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let (train, test) = staged(gen_data(&cfg), EXIT_OTHER)?;
    print_summary("train", &train);
    print_summary("test", &test);
    println!("wrote {}", cfg.outputs.display());
    Ok(())
}

fn cmd_train(config: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let out = staged(train_and_save(&cfg), EXIT_TRAIN)?;
    let r = &out.report;
    println!("variant {} train_accuracy {:.4}", r.variant, r.train_accuracy);
    if let Some(a) = r.test.accuracy {
        println!("test_accuracy {a:.4}");
    }
    println!("wrote {}", cfg.outputs.display());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    flips: &[String],
    out: Option<PathBuf>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let outputs = match config {
        Some(c) => Some(load_config(c)?.outputs),
        None => None,
    };
    let bundle = load_checkpoint(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))
        .exit_with(EXIT_EVAL)?;
    let ds = Dataset::load(data)
        .with_context(|| format!("reading dataset {}", data.display()))
        .exit_with(EXIT_EVAL)?;
    let report = evaluate(&bundle, &ds, flips).exit_with(EXIT_EVAL)?;
    let text = serde_json::to_string_pretty(&report).exit_with(EXIT_OTHER)? + "\n";
    let path = out.unwrap_or_else(|| match outputs {
        Some(dir) => dir.join("eval").join("report.json"),
        None => checkpoint.with_file_name("eval").join("report.json"),
    });
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).exit_with(EXIT_OTHER)?;
    }
    fs::write(&path, &text)
        .with_context(|| format!("writing {}", path.display()))
        .exit_with(EXIT_OTHER)?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(config: &Path, sigma2: Option<Vec<f64>>, variants: Option<Vec<String>>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    let variants = variants
        .map(|v| v.iter().map(|s| s.parse::<Variant>()).collect::<csad::Result<Vec<_>>>())
        .transpose()
        .exit_with(EXIT_CONFIG)?;
    let base = cfg.sweep.clone().unwrap_or_else(|| SweepConfig {
        sigma2: cfg.sigma2().into_iter().collect(),
        variants: vec![cfg.train.variant],
        seeds: vec![cfg.seed],
    });
    cfg.sweep = Some(SweepConfig {
        sigma2: sigma2.unwrap_or(base.sigma2),
        variants: variants.unwrap_or(base.variants),
        seeds: base.seeds,
    });
    cfg.validate().exit_with(EXIT_CONFIG)?;
    let sweep = cfg.sweep.clone().ok_or_else(|| anyhow!("no sweep")).exit_with(EXIT_CONFIG)?;
    let rows = staged(run_sweep(&cfg, &sweep_cells(&sweep), Some(&cfg.outputs)), EXIT_OTHER)?;
    println!("variant,sigma2,test_accuracy,seed");
    for r in &rows {
        let acc = r.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
        println!("{},{},{},{}", r.variant, r.sigma2, acc, r.seed);
        if let Some(e) = &r.error {
            eprintln!("cell {} {} {} failed: {e}", r.variant, r.sigma2, r.seed);
        }
    }
    println!("wrote {}", cfg.outputs.join("table.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData { config } => cmd_gen_data(&config),
        Cmd::Train { config } => cmd_train(&config),
        Cmd::Eval { checkpoint, data, flips, out, config } => {
            cmd_eval(&checkpoint, &data, &flips, out, config.as_deref())
        }
        Cmd::Sweep { config, sigma2, variants } => cmd_sweep(&config, sigma2, variants),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
