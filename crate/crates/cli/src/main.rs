use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use labelleak_core::experiment::{self, ExperimentConfig, SweepConfig};
use labelleak_core::{Dataset, Error, Model};

#[derive(Parser)]
#[command(name = "labelleak", version, about = "Federated-learning simulator and label-count recovery attack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write dataset, auxiliary set, partition and initial model
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train, attack every client update and write the results CSV
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a grid of experiments and write one combined results CSV
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Histogram each logit over the samples of each class
    DiagnoseMoments {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated `n:j` pairs; all pairs when omitted
        #[arg(long, value_delimiter = ',')]
        pairs: Vec<String>,
    },
    /// Aggregate result CSVs into mean and std per configuration and round
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(a) = self.alpha {
            cfg.partition.alpha = a;
        }
        if let Some(m) = self.epochs {
            cfg.scheme.epochs = m;
        }
        if let Some(e) = self.eta {
            cfg.scheme.eta = e;
        }
    }
}

fn load(path: &Path, overrides: &Overrides) -> labelleak_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json_file(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn parse_pairs(raw: &[String]) -> labelleak_core::Result<Option<Vec<(usize, usize)>>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.iter()
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("pair '{p}' is not of the form n:j")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Validation(format!("pair '{p}' is not of the form n:j")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<labelleak_core::Result<Vec<_>>>()
        .map(Some)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let s = experiment::generate_data(&cfg)?;
            println!(
                "wrote {} samples, {} auxiliary, {} clients to {}",
                s.dataset.len(),
                s.auxiliary.len(),
                s.partition.clients(),
                cfg.output.dir.display()
            );
        }
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let out = experiment::run_and_write(&cfg)?;
            let failed = out.rows.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} attacks ({failed} flagged) written to {}",
                out.rows.len(),
                cfg.output.results().display()
            );
        }
        Command::Sweep { config, out, seed } => {
            let mut sweep = SweepConfig::from_json_file(&config)?;
            if let Some(s) = seed {
                sweep.base.seed = s;
            }
            let rows = experiment::run_sweep(&sweep)?;
            experiment::write_results(&out, &rows)?;
            println!("{} attacks written to {}", rows.len(), out.display());
        }
        Command::DiagnoseMoments { model, data, out, pairs } => {
            let pairs = parse_pairs(&pairs)?;
            let model = Model::load_json(&model)?;
            let data = Dataset::read_csv(&data, Some(model.classes()))?;
            let rows = experiment::logit_histograms(&model, &data, pairs.as_deref())?;
            experiment::write_histograms(&out, &rows)?;
            println!("{} histogram rows written to {}", rows.len(), out.display());
        }
        Command::Report { results, out } => {
            let mut rows = Vec::new();
            for path in &results {
                rows.extend(experiment::read_results(path)?);
            }
            let report = experiment::report(&rows);
            let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
                (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
                _ => "n/a".to_string(),
            };
            println!("scheme\toptimizer\talpha\tm\tbatch\tround\tn\tfailed\tcAcc\tiAcc");
            for r in &report {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.scheme,
                    r.optimizer,
                    r.alpha,
                    r.m,
                    r.batch,
                    r.round,
                    r.rows,
                    r.failures,
                    fmt(r.cacc_mean, r.cacc_std),
                    fmt(r.iacc_mean, r.iacc_std)
                );
            }
            if let Some(path) = out {
                experiment::write_report(&path, &report)
                    .with_context(|| format!("writing report to {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Io { .. } | Error::Parse { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
