use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ivus_core::nets::GeneratorVariant;
use ivus_core::phantom::Split;
use ivus_harness::commands;
use ivus_harness::config::{resolve_output, ExperimentKind, Overrides, RunConfig, OUT_ROOT_ENV};
use ivus_harness::selftest;
use ivus_harness::HarnessError;

#[derive(Parser)]
#[command(name = "ivus", version, about = "Phantom IVUS segmentation: data, training, evaluation and ablations")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = OUT_ROOT_ENV)]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (`output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory written by gen-data (`data.dir`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training split size (`data.train`).
    #[arg(long)]
    train: Option<usize>,
    /// Validation split size (`data.val`).
    #[arg(long)]
    val: Option<usize>,
    /// Test split size (`data.test`).
    #[arg(long)]
    test: Option<usize>,
    /// Training epochs (`train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Training seed (`train.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Generator variant (`generator.variant`).
    #[arg(long)]
    variant: Option<GeneratorVariant>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom dataset and its manifest.
    GenData(Common),
    /// Train a generator/discriminator pair.
    Train(Common),
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Run an ablation over seeds and write reports.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Experiment to run (`experiment.kind`).
        #[arg(long)]
        kind: Option<ExperimentKind>,
        /// Comma-separated seeds (`experiment.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Merge runs.csv files and draw plots.
    Report {
        /// Output directory for merged.csv and plots.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Experiment directories or runs.csv files.
        inputs: Vec<PathBuf>,
    },
    /// Run the oracle suites.
    Selftest {
        /// Run only these suites.
        #[arg(long = "suite")]
        suites: Vec<u32>,
        /// Append a deliberately failing check (exercises the failure exit).
        #[arg(long, hide = true)]
        inject_failure: bool,
    },
}

impl Common {
    fn resolve(&self, extra: Overrides) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            out: self.out.clone(),
            data_dir: self.data.clone(),
            train: self.train,
            val: self.val,
            test: self.test,
            epochs: self.epochs,
            seed: self.seed,
            variant: self.variant,
            ..extra
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.out_root.as_deref();
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.resolve(Overrides::default())?;
            let out = cfg.output_dir(root);
            let manifest = commands::gen_data(&cfg, &out)?;
            println!("wrote {} files and the manifest to {}", manifest.files.len(), out.display());
        }
        Command::Train(common) => {
            let cfg = common.resolve(Overrides::default())?;
            let out = cfg.output_dir(root);
            let trained = commands::train_cmd(&cfg, &out)?;
            if let Some(v) = trained.history.last_validation() {
                println!(
                    "validation lu_jm {:.4} ma_jm {:.4}",
                    v.get("lu_jm").unwrap_or(f64::NAN),
                    v.get("ma_jm").unwrap_or(f64::NAN)
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let strict = common.config.is_some();
            let cfg = common.resolve(Overrides::default())?;
            let out = cfg.output_dir(root);
            let eval = commands::eval_cmd(&cfg, &checkpoint, split, strict, &out)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            println!(
                "{} samples: lu_jm {:.4} ma_jm {:.4}",
                eval.summary.n,
                eval.summary.get("lu_jm").unwrap_or(f64::NAN),
                eval.summary.get("ma_jm").unwrap_or(f64::NAN)
            );
            println!("wrote {}", out.display());
        }
        Command::Experiment { common, kind, seeds } => {
            let cfg = common.resolve(Overrides {
                kind,
                seeds,
                ..Overrides::default()
            })?;
            let out = cfg.output_dir(root);
            let result = commands::experiment_cmd(&cfg, &out);
            println!("wrote {}", out.display());
            result?;
        }
        Command::Report { out, inputs } => {
            let out = resolve_output(&out, root);
            let merged = commands::report_cmd(&inputs, &out)?;
            println!(
                "merged {} rows ({} duplicates dropped), {} plots in {}",
                merged.rows,
                merged.duplicates,
                merged.plots.len(),
                out.display()
            );
        }
        Command::Selftest { suites, inject_failure } => {
            let suites = if suites.is_empty() {
                selftest::SUITES.to_vec()
            } else {
                suites
            };
            let mut report = selftest::run(&suites);
            if inject_failure {
                report.checks.push(selftest::Check {
                    suite: 0,
                    name: "injected".into(),
                    passed: false,
                    detail: "requested with --inject-failure".into(),
                });
            }
            for line in report.lines() {
                println!("{line}");
            }
            for (suite, t) in &report.timings {
                println!("suite {suite:>2} took {:.2} s", t.as_secs_f64());
            }
            report.into_result()?;
            println!("all checks passed");
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.downcast_ref::<HarnessError>()
        .map_or(2, |h| h.exit_code() as u8)
}

/// The error chain joined with `: `, skipping causes a message already
/// spells out.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
