//! Subcommand implementations. Each writes its artifacts under `out`
//! atomically and returns the summary that is also stored as JSON.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use oamap::analysis::{
    appendix_a_chain, appendix_b_chain, monte_carlo_ser, product_psk_baseline, theorem1_check, theorem2_check,
    BoundReport, ChainReport,
};
use oamap::beam_channel::{write_gain_field_csv, Position};
use oamap::constellation::{
    design_fixed_power, design_total_power, extract_power, ConstellationFile, DesignResult, PowerVector,
};
use oamap::mapgen::{assignment_csv, build_map, design_grid, save_map, write_atomic, ConstellationMap};

use crate::{CliError, CliResult, RunConfig, REPORT_SCHEMA};

pub const GAIN_FIELD_FILE: &str = "gain_field.csv";
pub const CONSTELLATION_FILE: &str = "constellation.txt";
pub const DESIGN_REPORT: &str = "design.json";
pub const MAP_FILE: &str = "map.txt";
pub const ASSIGNMENT_FILE: &str = "assignments.csv";
pub const MAP_REPORT: &str = "map.json";
pub const VERIFY_REPORT: &str = "verify.json";
pub const SER_REPORT: &str = "ser.json";

fn prepare(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write(path: PathBuf, bytes: &[u8]) -> CliResult<PathBuf> {
    write_atomic(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Digest of the configuration plus the subcommand arguments.
fn inputs_digest(cfg: &RunConfig, args: &str) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical_text());
    h.update(args);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub schema: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub inputs_digest: String,
}

impl Header {
    fn new(command: &'static str, cfg: &RunConfig, args: &str) -> Self {
        Self { schema: REPORT_SCHEMA, command, config_hash: cfg.hash(), inputs_digest: inputs_digest(cfg, args) }
    }
}

/// Writes the gain field over the configured grid and returns its path.
pub fn cmd_gain_field(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    prepare(out)?;
    let system = cfg.system()?;
    let grid = cfg.grid()?;
    let rows = system.gain_field(&grid.frame, &grid.betas(), &grid.zs())?;
    let mut buf = Vec::new();
    write_gain_field_csv(&mut buf, &rows).map_err(|e| CliError::io(out.join(GAIN_FIELD_FILE), e))?;
    write(out.join(GAIN_FIELD_FILE), &buf)
}

#[derive(Clone, Debug, Serialize)]
pub struct DesignSummary {
    #[serde(flatten)]
    pub header: Header,
    pub position: String,
    pub power_vector: Option<Vec<f64>>,
    pub symbol_count: usize,
    pub d_min: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub restart_index: usize,
    pub converged: bool,
    pub status: &'static str,
    pub med_pair: (usize, usize),
}

fn describe(p: &Position) -> String {
    match p {
        Position::Beta { beta, z } => format!("beta {beta} z {z}"),
        Position::Cartesian { r, z } => format!("r {r} z {z}"),
    }
}

fn design_at(cfg: &RunConfig, position: Position, power: Option<&PowerVector>) -> CliResult<DesignResult> {
    let system = cfg.system()?;
    let h = system.channel_matrix(position, &cfg.frame()?)?;
    let options = cfg.design_options();
    Ok(match power {
        Some(p) => design_fixed_power(&h, cfg.symbols, p, &options)?,
        None => design_total_power(&h, cfg.symbols, cfg.power_budget, &options)?,
    })
}

/// Designs one constellation. Non-converged designs are still written;
/// the summary carries the status.
pub fn cmd_design(
    cfg: &RunConfig,
    position: Position,
    power: Option<&PowerVector>,
    out: &Path,
) -> CliResult<DesignSummary> {
    prepare(out)?;
    let result = design_at(cfg, position, power)?;
    let system = cfg.system()?;
    let file = ConstellationFile {
        carriers_hz: system.carrier_frequencies().to_vec(),
        modes: system.modes().to_vec(),
        position: Some(position),
        d_min: result.d_min,
        constellation: result.constellation.clone(),
    };
    write(out.join(CONSTELLATION_FILE), file.to_text().as_bytes())?;
    let args = format!("{} {:?}", describe(&position), power.map(|p| p.values().to_vec()));
    let summary = DesignSummary {
        header: Header::new("design", cfg, &args),
        position: describe(&position),
        power_vector: power.map(|p| p.values().to_vec()),
        symbol_count: cfg.symbols,
        d_min: result.d_min,
        iterations: result.iterations,
        restarts: cfg.restarts,
        restart_index: result.restart_index,
        converged: result.converged,
        status: if result.converged { "converged" } else { "max_iterations" },
        med_pair: result.med_pair,
    };
    write_json(out.join(DESIGN_REPORT), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct MapSummary {
    #[serde(flatten)]
    pub header: Header,
    pub positions: usize,
    pub categories: usize,
    pub categories_below_beta_1: usize,
    pub categories_above_beta_1: usize,
    pub quarantined: Vec<usize>,
    pub total_distortion: f64,
    pub winning_seed: u64,
}

/// Distinct categories among positions whose `beta` satisfies `keep`.
pub fn categories_where(map: &ConstellationMap, keep: impl Fn(f64) -> bool) -> usize {
    map.assignments.iter().filter(|a| keep(a.beta)).map(|a| a.category).collect::<BTreeSet<_>>().len()
}

/// Designs the whole grid, clusters it and stores the map.
pub fn cmd_map(cfg: &RunConfig, out: &Path) -> CliResult<(MapSummary, ConstellationMap)> {
    prepare(out)?;
    let system = cfg.system()?;
    let grid = cfg.grid()?;
    let designs = design_grid(&system, &grid, &cfg.design_options())?;
    let map = build_map(&system, &grid, &designs, cfg.tau, cfg.trials, cfg.seed, &cfg.canonical_text())?;
    save_map(&map, &out.join(MAP_FILE))?;
    write(out.join(ASSIGNMENT_FILE), assignment_csv(&map).as_bytes())?;
    let summary = MapSummary {
        header: Header::new("map", cfg, ""),
        positions: grid.len(),
        categories: map.categories.len(),
        categories_below_beta_1: categories_where(&map, |b| b < 1.0),
        categories_above_beta_1: categories_where(&map, |b| b > 1.0),
        quarantined: map.quarantined.clone(),
        total_distortion: map.total_distortion,
        winning_seed: map.seed,
    };
    write_json(out.join(MAP_REPORT), &summary)?;
    Ok((summary, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyKind {
    Theorem1,
    Theorem2,
    /// Both theorems plus their proof chains on every sample.
    Chains,
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub kind: VerifyKind,
    pub samples: usize,
    /// Use the same grid position for both channels (Theorem 1).
    pub identical: bool,
    /// Scale of the random power perturbation for Theorem 2; zero gives
    /// `p_f = p_o`.
    pub perturbation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub positions: Vec<(f64, f64)>,
    pub bounds: Vec<BoundReport>,
    pub chains: Vec<ChainReport>,
    pub holds: bool,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    #[serde(flatten)]
    pub header: Header,
    pub samples: usize,
    pub holds_count: usize,
    pub clamped_count: usize,
    pub degenerate_skipped: usize,
    pub worst_margin: f64,
    pub reports: Vec<Sample>,
}

/// `p_o` plus a random perturbation of norm `scale * P_sum * U(0.25, 1)`,
/// clipped at zero and kept off sub-channels where `p_o` is zero.
pub fn perturb_power<R: Rng>(p_o: &PowerVector, scale: f64, budget: f64, rng: &mut R) -> oamap::Result<PowerVector> {
    let dir: Vec<f64> = (0..p_o.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let size = scale * budget * rng.gen_range(0.25..=1.0);
    PowerVector::new(
        p_o.values()
            .iter()
            .zip(&dir)
            .map(|(p, d)| if *p == 0.0 { 0.0 } else { (p + size * d / len).max(0.0) })
            .collect(),
    )
}

/// Samples random instances from the grid and checks the requested bounds.
/// Writes the report first; any failed bound or proof step then yields a
/// verification error.
pub fn cmd_verify(cfg: &RunConfig, args: &VerifyArgs, out: &Path) -> CliResult<VerifySummary> {
    prepare(out)?;
    if args.samples == 0 {
        return Err(CliError::Validation("at least one sample is required".into()));
    }
    if !(args.perturbation >= 0.0) {
        return Err(CliError::Validation("perturbation must be non-negative".into()));
    }
    let system = cfg.system()?;
    let frame = cfg.frame()?;
    let positions = cfg.grid()?.positions();
    let options = cfg.design_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channel = |(beta, z): (f64, f64)| system.channel_matrix(Position::Beta { beta, z }, &frame);

    let mut reports = Vec::with_capacity(args.samples);
    let mut degenerate_skipped = 0;
    while reports.len() < args.samples {
        if degenerate_skipped > 10 * args.samples {
            return Err(CliError::Validation("too many degenerate instances".into()));
        }
        let mut sample = Sample { positions: Vec::new(), bounds: Vec::new(), chains: Vec::new(), holds: true, margin: 0.0 };
        if args.kind != VerifyKind::Theorem2 {
            let a = positions[rng.gen_range(0..positions.len())];
            let b = if args.identical { a } else { positions[rng.gen_range(0..positions.len())] };
            let (h1, h2) = (channel(a)?, channel(b)?);
            let t = theorem1_check(&h1, &h2, cfg.symbols, cfg.power_budget, &options)?;
            if args.kind == VerifyKind::Chains {
                sample.chains.push(appendix_a_chain(&h1, &h2, t.alpha, &t.c1, &t.c2)?);
            }
            sample.positions.extend([a, b]);
            sample.bounds.push(t.report);
        }
        if args.kind != VerifyKind::Theorem1 {
            let a = positions[rng.gen_range(0..positions.len())];
            let h = channel(a)?;
            let total = design_total_power(&h, cfg.symbols, cfg.power_budget, &options)?;
            let p_o = extract_power(&total.constellation);
            let p_f = perturb_power(&p_o, args.perturbation, cfg.power_budget, &mut rng)?;
            match theorem2_check(&h, &p_o, &p_f, cfg.symbols, &options, Some(&total.constellation)) {
                Ok(t) => {
                    if args.kind == VerifyKind::Chains {
                        sample.chains.push(appendix_b_chain(&h, &p_o, &p_f, &t.s_o, &t.s_f)?);
                    }
                    sample.positions.push(a);
                    sample.bounds.push(t.report);
                }
                Err(oamap::Error::DegenerateSupport(_)) => {
                    degenerate_skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        }
        sample.holds = sample.bounds.iter().all(|b| b.holds && !b.has_flag("premise_violated"))
            && sample.chains.iter().all(|c| c.overall);
        sample.margin = sample.bounds.iter().map(BoundReport::margin).fold(f64::INFINITY, f64::min);
        reports.push(sample);
    }

    let args_text = format!("{:?} {} {} {}", args.kind, args.samples, args.identical, args.perturbation);
    let summary = VerifySummary {
        header: Header::new("verify", cfg, &args_text),
        samples: reports.len(),
        holds_count: reports.iter().filter(|s| s.holds).count(),
        clamped_count: reports.iter().filter(|s| s.bounds.iter().any(|b| b.has_flag("lhs_clamped"))).count(),
        degenerate_skipped,
        worst_margin: reports.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min),
        reports,
    };
    write_json(out.join(VERIFY_REPORT), &summary)?;
    if summary.holds_count < summary.samples {
        return Err(CliError::Verification(format!(
            "{} of {} samples violate a bound",
            summary.samples - summary.holds_count,
            summary.samples
        )));
    }
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct SerArgs {
    pub position: Position,
    pub trials: usize,
    pub baseline: bool,
    /// Multiplies the configured `N0`.
    pub noise_scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SerSummary {
    #[serde(flatten)]
    pub header: Header,
    pub position: String,
    pub noise_power: f64,
    pub trials: usize,
    pub d_min: f64,
    pub ser: f64,
    pub baseline_d_min: Option<f64>,
    pub baseline_ser: Option<f64>,
}

/// Simulates the designed constellation (and optionally the PSK baseline)
/// at one position.
pub fn cmd_ser(cfg: &RunConfig, args: &SerArgs, out: &Path) -> CliResult<SerSummary> {
    prepare(out)?;
    if args.trials == 0 || !(args.noise_scale > 0.0) {
        return Err(CliError::Validation("trials and noise scale must be positive".into()));
    }
    let system = cfg.system()?;
    let h = system.channel_matrix(args.position, &cfg.frame()?)?;
    let design = design_total_power(&h, cfg.symbols, cfg.power_budget, &cfg.design_options())?;
    let n0 = cfg.noise_power * args.noise_scale;
    let ser = monte_carlo_ser(&h, &design.constellation, n0, args.trials, cfg.seed)?;
    let (baseline_d_min, baseline_ser) = if args.baseline {
        let base = product_psk_baseline(h.dim(), cfg.symbols, cfg.power_budget)?;
        let d = oamap::constellation::med(&h, &base)?.distance;
        (Some(d), Some(monte_carlo_ser(&h, &base, n0, args.trials, cfg.seed)?))
    } else {
        (None, None)
    };
    let args_text = format!("{} {} {} {}", describe(&args.position), args.trials, args.baseline, args.noise_scale);
    let summary = SerSummary {
        header: Header::new("ser", cfg, &args_text),
        position: describe(&args.position),
        noise_power: n0,
        trials: args.trials,
        d_min: design.d_min,
        ser,
        baseline_d_min,
        baseline_ser,
    };
    write_json(out.join(SER_REPORT), &summary)?;
    Ok(summary)
}
