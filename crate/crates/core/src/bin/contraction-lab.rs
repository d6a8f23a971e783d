use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contraction_lab::harness::{emit_report, output_dir, run, ExperimentConfig, ExperimentKind, OUTPUT_ENV};
use contraction_lab::Error;

#[derive(Parser)]
#[command(name = "contraction-lab", version, about = "Posterior contraction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// GP posterior-mean error slope.
    GpRate(Flags),
    /// Random-truncation sieve contraction slope.
    SieveRate(Flags),
    /// Empirical Gram matrix concentration.
    GramConc(Flags),
    /// Without-replacement Gram tail against its bound.
    GramNoreplace(Flags),
    /// Graph-Laplacian semi-supervised contraction.
    GraphSsl(Flags),
    /// Nyström eigenfunction sup norms and eigenvalue decay.
    EigenfunBound(Flags),
    /// Trace identity, variance series and variance bound.
    VarianceIdentity(Flags),
}

#[derive(Args)]
struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config, then $CONTRACTION_LAB_OUT, then results/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

fn split(cmd: Command) -> (ExperimentKind, Flags) {
    match cmd {
        Command::GpRate(f) => (ExperimentKind::GpRate, f),
        Command::SieveRate(f) => (ExperimentKind::SieveRate, f),
        Command::GramConc(f) => (ExperimentKind::GramConc, f),
        Command::GramNoreplace(f) => (ExperimentKind::GramNoreplace, f),
        Command::GraphSsl(f) => (ExperimentKind::GraphSsl, f),
        Command::EigenfunBound(f) => (ExperimentKind::EigenfunBound, f),
        Command::VarianceIdentity(f) => (ExperimentKind::VarianceIdentity, f),
    }
}

fn load(kind: ExperimentKind, flags: &Flags) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            ExperimentConfig::parse(&text, Some(kind))?
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(w) = flags.workers {
        cfg.workers = w;
    }
    if let Some(r) = flags.replicates {
        if kind.uses_replicates() {
            cfg.replicates = r;
        } else {
            log::warn!("--replicates has no effect on {kind}");
        }
    }
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    let (kind, flags) = split(cli.command);
    let cfg = match load(kind, &flags) {
        Ok(c) => c,
        Err(Error::Config(list)) => {
            eprintln!("invalid configuration:");
            for e in list {
                eprintln!("  {e}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = output_dir(flags.out.as_deref(), &cfg);
    log::info!("writing to {} (default from ${OUTPUT_ENV})", dir.display());
    let out = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match emit_report(&out, &dir) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let r = &out.result;
    for f in &r.fits {
        println!(
            "{}: slope {:.4} ± {:.4} (target {:.4} ± {}) {}",
            f.statistic,
            f.slope,
            f.stderr,
            f.target,
            f.tolerance,
            if f.pass { "PASS" } else { "FAIL" }
        );
    }
    for c in &r.checks {
        println!("{}: {:.4e} (threshold {:e}) {}", c.name, c.value, c.threshold, if c.pass { "PASS" } else { "FAIL" });
    }
    if r.pass {
        println!("{kind}: PASS");
        ExitCode::SUCCESS
    } else {
        println!("{kind}: FAIL ({})", r.reason.as_deref().unwrap_or(""));
        ExitCode::FAILURE
    }
}
