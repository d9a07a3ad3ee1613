//! `confot` — conformal prediction experiments over black-box logits.
//!
//! Subcommands:
//! - `run`: repeated-split conformal experiments (base and/or transductive).
//! - `gen-synth`: write a synthetic logits/labels pair for exploration.
//! - `validate`: check a logits/labels pair against the file formats.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use confot_core::error::ConfotError;
use confot_core::harness::{validate_dataset, ExperimentConfig, Method};
use confot_core::io::{save_labels_csv, save_logits, DtypeCode, ReportFormat};
use confot_core::score::ScoreKind;
use confot_core::synth::{generate, ShiftKind, SynthConfig};
use confot_core::transport::{LabelPrior, TransportConfig};

#[derive(Parser)]
#[command(name = "confot", version, about = "Conformal prediction sets over classifier logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreArg {
    Lac,
    Aps,
    Raps,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Base,
    #[value(name = "conf-ot", alias = "conf_ot")]
    ConfOt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PriorArg {
    Empirical,
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShiftArg {
    None,
    Prior,
    Temperature,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated-split conformal experiments and write a report.
    Run {
        /// Binary logit file (CONFOTL1 format).
        #[arg(long)]
        logits: PathBuf,
        /// Single-column label CSV.
        #[arg(long)]
        labels: PathBuf,
        /// Error rates; repeat the flag for several (default 0.1 0.05).
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
        /// Non-conformity scores; repeat for several (default all three).
        #[arg(long = "score", value_enum)]
        scores: Vec<ScoreArg>,
        /// RAPS per-rank penalty.
        #[arg(long = "raps-lambda", default_value_t = 0.001)]
        raps_lambda: f64,
        /// RAPS penalty-free rank count.
        #[arg(long = "raps-kreg", default_value_t = 1)]
        raps_kreg: usize,
        /// Methods to evaluate; repeat for both (default both).
        #[arg(long = "method", value_enum)]
        methods: Vec<MethodArg>,
        /// Entropic temperature of the transport step.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Sinkhorn renormalization iterations.
        #[arg(long, default_value_t = 3)]
        iters: usize,
        /// Label-marginal prior for the transport step.
        #[arg(long, value_enum, default_value_t = PriorArg::Empirical)]
        prior: PriorArg,
        /// Fraction of samples assigned to calibration.
        #[arg(long = "cal-ratio", default_value_t = 0.5)]
        cal_ratio: f64,
        /// Number of repeated random splits.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Transduce queries in consecutive chunks of this size.
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
        /// Report destination.
        #[arg(long = "out", default_value = "report.json")]
        out: PathBuf,
        /// Report format.
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Generate a synthetic logits/labels dataset.
    GenSynth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        cal: usize,
        #[arg(long)]
        test: usize,
        #[arg(long, value_enum, default_value_t = ShiftArg::None)]
        shift: ShiftArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes <prefix>_logits.bin and <prefix>_labels.csv.
        #[arg(long = "out-prefix")]
        out_prefix: String,
    },
    /// Check a logits/labels pair against the file formats.
    Validate {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

fn exit_code_for(err: &ConfotError) -> u8 {
    match err {
        ConfotError::Parameter { .. } | ConfotError::Contract(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), ConfotError> {
    match cli.command {
        Command::Run {
            logits,
            labels,
            alphas,
            scores,
            raps_lambda,
            raps_kreg,
            methods,
            tau,
            iters,
            prior,
            cal_ratio,
            seeds,
            batch_size,
            out,
            format,
        } => {
            let mut config = ExperimentConfig::with_defaults(logits, labels);
            if !alphas.is_empty() {
                config.alphas = alphas;
            }
            if !scores.is_empty() {
                config.scores = scores
                    .iter()
                    .map(|s| match s {
                        ScoreArg::Lac => ScoreKind::Lac,
                        ScoreArg::Aps => ScoreKind::Aps,
                        ScoreArg::Raps => ScoreKind::Raps {
                            lambda: raps_lambda,
                            k_reg: raps_kreg,
                        },
                    })
                    .collect();
            } else {
                config.scores = vec![
                    ScoreKind::Lac,
                    ScoreKind::Aps,
                    ScoreKind::Raps {
                        lambda: raps_lambda,
                        k_reg: raps_kreg,
                    },
                ];
            }
            if !methods.is_empty() {
                config.methods = methods
                    .iter()
                    .map(|m| match m {
                        MethodArg::Base => Method::Base,
                        MethodArg::ConfOt => Method::ConfOt,
                    })
                    .collect();
            }
            config.transport = TransportConfig {
                temperature: tau,
                iterations: iters,
                prior: match prior {
                    PriorArg::Empirical => LabelPrior::EmpiricalCalibration,
                    PriorArg::Uniform => LabelPrior::Uniform,
                },
                ..TransportConfig::default()
            };
            config.cal_ratio = cal_ratio;
            config.seeds = seeds;
            config.query_batch_size = batch_size;
            config.output_path = out;
            config.output_format = match format {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Csv => ReportFormat::Csv,
            };

            let report = confot_core::harness::run_experiment(&config)?;
            eprintln!(
                "wrote {} rows over {} seeds to {}",
                report.rows.len(),
                report.seeds,
                config.output_path.display()
            );
            Ok(())
        }
        Command::GenSynth {
            classes,
            cal,
            test,
            shift,
            seed,
            out_prefix,
        } => {
            let data = generate(&SynthConfig {
                num_classes: classes,
                cal_size: cal,
                test_size: test,
                shift: match shift {
                    ShiftArg::None => ShiftKind::None,
                    ShiftArg::Prior => ShiftKind::Prior,
                    ShiftArg::Temperature => ShiftKind::Temperature,
                },
                seed,
            })?;
            let combined = data.combined()?;
            let logits_path = PathBuf::from(format!("{out_prefix}_logits.bin"));
            let labels_path = PathBuf::from(format!("{out_prefix}_labels.csv"));
            save_logits(&combined.logits, &logits_path, DtypeCode::F64)?;
            save_labels_csv(&combined.labels, &labels_path)?;
            println!("{}", logits_path.display());
            println!("{}", labels_path.display());
            Ok(())
        }
        Command::Validate { logits, labels } => {
            let (k, n) = validate_dataset(&logits, &labels)?;
            println!("ok: {n} samples, {k} classes");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
