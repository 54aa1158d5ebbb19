//! `progfuse` — cohort simulation, GP imputation, feature extraction,
//! model training, and evaluation from one binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use progfuse_core::cohort::{load_cohort, save_cohort, CohortFormat, Target};
use progfuse_core::config::{ModelKind, RunConfig};
use progfuse_core::pipeline::{
    evaluate_model, impute_cohort, run_trained, TrainedModel,
};
use progfuse_core::synth::{generate, SignalStrength, SimConfig};
use progfuse_core::transformer::Checkpoint;
use progfuse_core::EvalReport;

#[derive(Parser)]
#[command(
    name = "progfuse",
    about = "GP imputation and multimodal progression prediction pipeline",
    version
)]
struct Cli {
    /// TOML config file with [run] and [simulate] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Log level: error | warn | info | debug | trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl FormatArg {
    fn cohort_format(self) -> CohortFormat {
        match self {
            FormatArg::Json => CohortFormat::Json,
            FormatArg::Csv => CohortFormat::CsvPair,
        }
    }
}

#[derive(Args)]
struct CohortArg {
    /// Cohort path: a JSON file or a directory with patients.csv/samples.csv.
    #[arg(long)]
    cohort: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its manifest.
    Simulate {
        /// Number of patients; overrides the config file.
        #[arg(long)]
        n: Option<usize>,
        /// Planted signal strength: none | weak | strong.
        #[arg(long)]
        signal: Option<SignalStrength>,
        /// Fraction of signal carried by static features (0..=1).
        #[arg(long)]
        signal_split: Option<f64>,
        /// Per-day observation probability (0..=1).
        #[arg(long)]
        missingness: Option<f64>,
        /// Output format for the cohort.
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Fit per-(patient, channel) GPs and write the completed cohort.
    Impute {
        #[command(flatten)]
        cohort: CohortArg,
        /// Synthetic clones per patient to append.
        #[arg(long, default_value_t = 0)]
        augment: usize,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Write the encoded-static + windowed feature table for a cohort.
    Features {
        #[command(flatten)]
        cohort: CohortArg,
    },
    /// Train a model end to end and report held-out test AUROC.
    Train {
        #[command(flatten)]
        cohort: CohortArg,
        /// multimodal | unimodal-ts | logistic; overrides the config file.
        #[arg(long)]
        model: Option<ModelKind>,
        /// w48 | w72; overrides the config file.
        #[arg(long)]
        target: Option<Target>,
    },
    /// Evaluate a saved checkpoint on a cohort's test split.
    Evaluate {
        #[command(flatten)]
        cohort: CohortArg,
        /// Checkpoint written by `train` (defaults to <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        target: Option<Target>,
    },
    /// Pretty-print a previously written evaluation report.
    Report {
        /// Report path (defaults to <out>/report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// On-disk config schema: a `[run]` table mirroring `RunConfig` and a
/// `[simulate]` table mirroring `SimConfig`; both optional, all fields
/// defaulted.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default)]
struct ConfigFile {
    run: RunConfig,
    simulate: SimConfig,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile {
            run: RunConfig::default(),
            simulate: SimConfig::default(),
        }),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("invalid config file {}", p.display()))
        }
    }
}

fn detect_format(path: &Path) -> CohortFormat {
    if path.is_dir() {
        CohortFormat::CsvPair
    } else {
        CohortFormat::Json
    }
}

fn echo_run_config(out: &Path, config: &RunConfig) -> Result<()> {
    let resolved = toml::to_string_pretty(config).context("serialize resolved config")?;
    fs::write(out.join("resolved_config.toml"), resolved)?;
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!(
        "AUROC {:.4}  ({} positives / {} negatives on test)",
        report.auroc, report.n_pos, report.n_neg
    );
    println!("split: {}", report.split_descriptor);
    println!("fingerprint: {}", report.config_fingerprint);
    if !report.funnel.is_empty() {
        println!("funnel:");
        for (rule, n) in &report.funnel {
            println!("  {rule}: {n}");
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {}", cli.out.display()))?;

    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
        cfg.simulate.seed = seed;
    }
    let out = cli.out.clone();

    match cli.command {
        Command::Simulate {
            n,
            signal,
            signal_split,
            missingness,
            format,
        } => {
            let mut sim = cfg.simulate;
            if let Some(n) = n {
                sim.n_patients = n;
            }
            if let Some(s) = signal {
                sim.signal_strength = s;
            }
            if let Some(s) = signal_split {
                sim.signal_split = s;
            }
            if let Some(m) = missingness {
                sim.missingness = m;
            }
            let (cohort, manifest) = generate(&sim)?;
            let cohort_path = match format {
                FormatArg::Json => out.join("cohort.json"),
                FormatArg::Csv => out.join("cohort"),
            };
            if matches!(format, FormatArg::Csv) {
                fs::create_dir_all(&cohort_path)?;
            }
            save_cohort(&cohort, &cohort_path, format.cohort_format())?;
            fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "wrote {} patients to {} (event rates {:.3}/{:.3})",
                manifest.n_patients,
                cohort_path.display(),
                manifest.event_rate_w48,
                manifest.event_rate_w72
            );
        }

        Command::Impute {
            cohort,
            augment,
            format,
        } => {
            let input = load_cohort(&cohort.cohort, detect_format(&cohort.cohort))?;
            let (dense, records, summary) = impute_cohort(
                &input,
                &cfg.run.gp.fit,
                augment,
                cfg.run.seed,
            )?;
            let cohort_path = match format {
                FormatArg::Json => out.join("imputed_cohort.json"),
                FormatArg::Csv => out.join("imputed_cohort"),
            };
            if matches!(format, FormatArg::Csv) {
                fs::create_dir_all(&cohort_path)?;
            }
            save_cohort(&dense, &cohort_path, format.cohort_format())?;
            fs::write(
                out.join("gp_models.json"),
                serde_json::to_string_pretty(&records)?,
            )?;
            fs::write(
                out.join("impute_summary.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            println!(
                "fits attempted {}, succeeded {}, mean lml {:.4}",
                summary.fits_attempted, summary.fits_succeeded, summary.mean_lml
            );
        }

        Command::Features { cohort } => {
            let input = load_cohort(&cohort.cohort, detect_format(&cohort.cohort))?;
            let table = progfuse_core::pipeline::cohort_features(
                &input,
                &cfg.run.encoding,
                &cfg.run.window,
                &cfg.run.gp.fit,
                cfg.run.seed,
            )?;
            table
                .write_csv(&out.join("features.csv"))
                .context("write features.csv")?;
            let mut labels = String::from("row_id,label_w48,label_w72\n");
            for p in &input.patients {
                let fmt = |l: Option<bool>| match l {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                };
                labels.push_str(&format!(
                    "{},{},{}\n",
                    p.patient_id,
                    fmt(p.label_w48),
                    fmt(p.label_w72)
                ));
            }
            fs::write(out.join("labels.csv"), labels)?;
            println!(
                "wrote {} rows x {} columns to {}",
                table.n_rows(),
                table.n_cols(),
                out.join("features.csv").display()
            );
        }

        Command::Train {
            cohort,
            model,
            target,
        } => {
            if let Some(m) = model {
                cfg.run.model = m;
            }
            if let Some(t) = target {
                cfg.run.target = t;
            }
            let input = load_cohort(&cohort.cohort, detect_format(&cohort.cohort))?;
            echo_run_config(&out, &cfg.run)?;
            let (report, artifacts, trained) = run_trained(&input, &cfg.run)?;
            report.write_json(&out.join("report.json"))?;
            report.write_roc_csv(&out.join("roc.csv"))?;
            fs::write(
                out.join("artifacts.json"),
                serde_json::to_string_pretty(&artifacts)?,
            )?;
            match &trained {
                TrainedModel::Logistic(m) => {
                    fs::write(
                        out.join("checkpoint.json"),
                        serde_json::to_string_pretty(m)?,
                    )?;
                }
                TrainedModel::Transformer(ckpt) => {
                    ckpt.save(&out.join("checkpoint.json"))?;
                }
            }
            print_report(&report);
        }

        Command::Evaluate {
            cohort,
            checkpoint,
            model,
            target,
        } => {
            if let Some(m) = model {
                cfg.run.model = m;
            }
            if let Some(t) = target {
                cfg.run.target = t;
            }
            let ckpt_path = checkpoint.unwrap_or_else(|| out.join("checkpoint.json"));
            if !ckpt_path.exists() {
                bail!("checkpoint not found: {}", ckpt_path.display());
            }
            let trained = match cfg.run.model {
                ModelKind::Logistic => {
                    let text = fs::read_to_string(&ckpt_path)
                        .with_context(|| format!("cannot read {}", ckpt_path.display()))?;
                    TrainedModel::Logistic(serde_json::from_str(&text).with_context(|| {
                        format!("invalid logistic checkpoint {}", ckpt_path.display())
                    })?)
                }
                ModelKind::Multimodal | ModelKind::UnimodalTs => {
                    TrainedModel::Transformer(Checkpoint::load(&ckpt_path)?)
                }
            };
            let input = load_cohort(&cohort.cohort, detect_format(&cohort.cohort))?;
            echo_run_config(&out, &cfg.run)?;
            let report = evaluate_model(&input, &cfg.run, &trained)?;
            report.write_json(&out.join("report.json"))?;
            report.write_roc_csv(&out.join("roc.csv"))?;
            print_report(&report);
        }

        Command::Report { report } => {
            let path = report.unwrap_or_else(|| out.join("report.json"));
            let text = fs::read_to_string(&path)
                .with_context(|| format!("cannot read report {}", path.display()))?;
            let report: EvalReport = serde_json::from_str(&text)
                .with_context(|| format!("invalid report {}", path.display()))?;
            print_report(&report);
        }
    }
    Ok(())
}
