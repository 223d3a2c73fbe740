use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use oamap::beam_channel::Position;
use oamap::constellation::PowerVector;
use oamap_cli::commands::{self, SerArgs, VerifyArgs, VerifyKind};
use oamap_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "oamap", version, about = "Constellation maps for OAM/WDM mmWave links")]
struct Cli {
    /// Key-value configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct Where {
    /// Radial position in units of the reference ring radius.
    #[arg(long, conflicts_with = "r")]
    beta: Option<f64>,
    /// Radial position in metres.
    #[arg(long)]
    r: Option<f64>,
    /// Propagation distance in metres.
    #[arg(long)]
    z: f64,
}

impl Where {
    fn position(self) -> CliResult<Position> {
        match (self.beta, self.r) {
            (Some(beta), None) => Ok(Position::Beta { beta, z: self.z }),
            (None, Some(r)) => Ok(Position::Cartesian { r, z: self.z }),
            _ => Err(CliError::Validation("give exactly one of --beta or --r".into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Theorem {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Chains,
}

#[derive(Subcommand)]
enum Command {
    /// Per-sub-channel gains over the configured grid, as CSV.
    GainField,
    /// Designs one constellation.
    Design {
        #[command(flatten)]
        at: Where,
        /// Comma list of per-sub-channel powers; switches to fixed-power design.
        #[arg(long)]
        power_vector: Option<String>,
    },
    /// Designs the grid, clusters it and stores the constellation map.
    Map,
    /// Checks the MED perturbation bounds on random grid instances.
    Verify {
        #[arg(long, value_enum)]
        theorem: Theorem,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Use one position for both channels.
        #[arg(long)]
        identical: bool,
        /// Power perturbation scale for Theorem 2 (0 keeps p_f = p_o).
        #[arg(long, default_value_t = 0.1)]
        perturbation: f64,
    },
    /// Monte-Carlo symbol error rate at one position.
    Ser {
        #[command(flatten)]
        at: Where,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        /// Also simulate the equal-power PSK baseline.
        #[arg(long)]
        baseline: bool,
        /// Multiplies the configured noise power.
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
    },
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print<T: Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => emit(&text),
        Err(e) => eprintln!("cannot render summary: {e}"),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::GainField => emit(&commands::cmd_gain_field(&cfg, out)?.display().to_string()),
        Command::Design { at, power_vector } => {
            let power = match power_vector {
                Some(text) => {
                    let values = text
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| CliError::Validation(format!("invalid power vector `{text}`")))?;
                    Some(PowerVector::new(values)?)
                }
                None => None,
            };
            print(&commands::cmd_design(&cfg, at.position()?, power.as_ref(), out)?);
        }
        Command::Map => print(&commands::cmd_map(&cfg, out)?.0),
        Command::Verify { theorem, samples, identical, perturbation } => {
            let kind = match theorem {
                Theorem::One => VerifyKind::Theorem1,
                Theorem::Two => VerifyKind::Theorem2,
                Theorem::Chains => VerifyKind::Chains,
            };
            let args = VerifyArgs { kind, samples, identical, perturbation };
            let summary = commands::cmd_verify(&cfg, &args, out)?;
            emit(&format!(
                "{{\"samples\": {}, \"holds_count\": {}, \"worst_margin\": {}}}",
                summary.samples, summary.holds_count, summary.worst_margin
            ));
        }
        Command::Ser { at, trials, baseline, noise_scale } => {
            let args = SerArgs { position: at.position()?, trials, baseline, noise_scale };
            print(&commands::cmd_ser(&cfg, &args, out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(CliError::Validation(format!("cannot start workers: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oamap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
