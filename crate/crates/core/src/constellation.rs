//! Minimum-Euclidean-distance constellations and their SCA designers.
//!
//! A constellation of `M` points in `C^U` is handled in stacked real form
//! `x_p = [Re x_1; Im x_1; ...; Re x_M; Im x_M]` of length `M * 2U`. For a
//! diagonal channel the squared pair distance is a weighted sum over the two
//! affected blocks with weights `h_{d mod U}^2`, so no `MD x MD` matrix is
//! ever formed.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::beam_channel::{ChannelMatrix, Position};
use crate::convex_core::{
    solve_subproblem, AffineBound, GroupCap, PowerConstraint, SolveStatus, SubproblemSpec,
};
use crate::error::{domain, Error, Result};
use crate::textfmt::{fmt_f64, fmt_row, parse_f64_list};

/// Relative tie window when comparing restarts.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    points: Vec<Vec<Complex64>>,
}

impl Constellation {
    pub fn new(points: Vec<Vec<Complex64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::DimensionMismatch("constellation needs at least one point".into()));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch("all points must share a non-zero dimension".into()));
        }
        if points.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return domain("constellation points must be finite");
        }
        Ok(Self { points })
    }

    /// Rebuilds a constellation from the stacked real layout.
    pub fn from_stacked(x: &[f64], symbol_count: usize, dim: usize) -> Result<Self> {
        if dim == 0 || symbol_count == 0 || x.len() != symbol_count * 2 * dim {
            return Err(Error::DimensionMismatch(format!(
                "stacked vector of length {} does not fit M = {symbol_count}, U = {dim}",
                x.len()
            )));
        }
        let points = x
            .chunks(2 * dim)
            .map(|block| (0..dim).map(|u| Complex64::new(block[u], block[dim + u])).collect())
            .collect();
        Self::new(points)
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.symbol_count() * 2 * self.dim());
        for p in &self.points {
            out.extend(p.iter().map(|c| c.re));
            out.extend(p.iter().map(|c| c.im));
        }
        out
    }

    pub fn points(&self) -> &[Vec<Complex64>] {
        &self.points
    }
    pub fn symbol_count(&self) -> usize {
        self.points.len()
    }
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// `(1/M) ||x_p||^2`.
    pub fn average_power(&self) -> f64 {
        self.points.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>() / self.symbol_count() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p.iter().map(|c| c * factor).collect()).collect(),
        }
    }
}

/// Per-sub-channel powers `[P_1, ..., P_U]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch("power vector is empty".into()));
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return domain("powers must be finite and non-negative");
        }
        Ok(Self(values))
    }

    pub fn equal(dim: usize, total: f64) -> Result<Self> {
        Self::new(vec![total / dim as f64; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn distance(&self, other: &PowerVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Power constraint applied by the designer.
#[derive(Clone, Debug, PartialEq)]
pub enum PowerMode {
    /// `(1/M) ||x_p||^2 <= budget`.
    Total(f64),
    /// `(1/M) sum_m |x_m[n]|^2 <= P_n` for every sub-channel.
    Fixed(PowerVector),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedPair {
    pub distance: f64,
    pub pair: (usize, usize),
}

fn weights(h: &[f64]) -> Vec<f64> {
    h.iter().chain(h).map(|a| a * a).collect()
}

fn pair_distance_sq(w: &[f64], x: &[f64], m: usize, n: usize) -> f64 {
    let d = w.len();
    let (a, b) = (&x[m * d..(m + 1) * d], &x[n * d..(n + 1) * d]);
    w.iter().zip(a.iter().zip(b)).map(|(wk, (p, q))| wk * (p - q) * (p - q)).sum()
}

fn med_stacked(w: &[f64], x: &[f64]) -> MedPair {
    let count = x.len() / w.len();
    let mut best = MedPair { distance: f64::INFINITY, pair: (0, 1) };
    for m in 0..count {
        for n in m + 1..count {
            let d2 = pair_distance_sq(w, x, m, n);
            if d2 < best.distance {
                best = MedPair { distance: d2, pair: (m, n) };
            }
        }
    }
    best.distance = best.distance.sqrt();
    best
}

fn check_dims(h: &ChannelMatrix, c: &Constellation) -> Result<()> {
    if h.dim() != c.dim() {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} sub-channels, constellation has {}",
            h.dim(),
            c.dim()
        )));
    }
    Ok(())
}

/// Minimum over unordered pairs of `||H (x_m - x_n)||`, with the first
/// minimising pair in lexicographic order.
pub fn med(h: &ChannelMatrix, c: &Constellation) -> Result<MedPair> {
    check_dims(h, c)?;
    if c.symbol_count() < 2 {
        return domain("MED needs at least two symbols");
    }
    Ok(med_stacked(&weights(h.amplitudes()), &c.stacked()))
}

/// `x_p^T E_mn x_p = ||H (x_m - x_n)||^2` for `m < n`, from the two blocks.
pub fn pairwise_quadratic_form(h: &ChannelMatrix, x_p: &[f64], m: usize, n: usize) -> Result<f64> {
    let w = weights(h.amplitudes());
    if x_p.len() % w.len() != 0 {
        return Err(Error::DimensionMismatch("stacked vector does not match the channel".into()));
    }
    let count = x_p.len() / w.len();
    if !(m < n && n < count) {
        return Err(Error::IndexOutOfRange(format!("pair ({m}, {n}) with M = {count}")));
    }
    Ok(pair_distance_sq(&w, x_p, m, n))
}

/// Index set of sub-channel `n` in the stacked layout (both parts, all symbols).
pub fn subchannel_indices(dim: usize, symbol_count: usize, n: usize) -> Vec<usize> {
    (0..symbol_count).flat_map(|m| [m * 2 * dim + n, m * 2 * dim + dim + n]).collect()
}

/// First-order expansion of every pair distance around `x_prev`:
/// `2 x_prev^T E_mn x - x_prev^T E_mn x_prev >= s`.
pub fn linearize_constraints(h: &ChannelMatrix, x_prev: &[f64], power: &PowerMode) -> Result<SubproblemSpec> {
    let u = h.dim();
    let w = weights(h.amplitudes());
    let d = w.len();
    if x_prev.len() % d != 0 || x_prev.len() < 2 * d {
        return Err(Error::DimensionMismatch("stacked vector does not match the channel".into()));
    }
    let count = x_prev.len() / d;
    let mut bounds = Vec::with_capacity(count * (count - 1) / 2);
    for m in 0..count {
        for n in m + 1..count {
            let mut terms = Vec::with_capacity(2 * d);
            let mut offset = 0.0;
            for k in 0..d {
                let diff = x_prev[m * d + k] - x_prev[n * d + k];
                let g = 2.0 * w[k] * diff;
                offset -= w[k] * diff * diff;
                if g != 0.0 {
                    terms.push((m * d + k, g));
                    terms.push((n * d + k, -g));
                }
            }
            bounds.push(AffineBound::new(terms, offset));
        }
    }
    let constraint = match power {
        PowerMode::Total(budget) => {
            if !(*budget > 0.0) {
                return Err(Error::InvalidConfig("power budget must be positive".into()));
            }
            PowerConstraint::Ball { bound: count as f64 * budget }
        }
        PowerMode::Fixed(p) => {
            if p.dim() != u {
                return Err(Error::DimensionMismatch("power vector does not match the channel".into()));
            }
            PowerConstraint::Groups {
                normalization: count as f64,
                caps: (0..u)
                    .map(|n| GroupCap { indices: subchannel_indices(u, count, n), cap: p.values()[n] })
                    .collect(),
            }
        }
    };
    SubproblemSpec::new(x_prev.len(), bounds, constraint)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Extra chain started from this constellation (projected onto the
    /// power constraint), run after the random restarts.
    pub warm_start: Option<Constellation>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iterations: 200, tolerance: 1e-6, seed: 0, warm_start: None }
    }
}

impl DesignOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
    pub fn with_warm_start(mut self, warm_start: Constellation) -> Self {
        self.warm_start = Some(warm_start);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("restarts and max_iterations must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of one SCA chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    /// `d_min` of the initial point followed by every accepted iterate.
    pub d_min: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignResult {
    pub constellation: Constellation,
    pub d_min: f64,
    pub iterations: usize,
    pub restart_index: usize,
    pub converged: bool,
    pub med_pair: (usize, usize),
    /// One trace per chain; the warm-start chain, if any, comes last.
    pub traces: Vec<ChainTrace>,
}

/// Designs under `(1/M) ||x_p||^2 <= P_sum`.
pub fn design_total_power(
    h: &ChannelMatrix,
    symbol_count: usize,
    power_budget: f64,
    options: &DesignOptions,
) -> Result<DesignResult> {
    design(h, symbol_count, &PowerMode::Total(power_budget), options)
}

/// Designs under per-sub-channel caps. The returned points include the
/// power scaling, i.e. they are `A S` with `A = sqrt(diag(p))`.
pub fn design_fixed_power(
    h: &ChannelMatrix,
    symbol_count: usize,
    p: &PowerVector,
    options: &DesignOptions,
) -> Result<DesignResult> {
    if p.values().iter().all(|v| *v == 0.0) {
        return Err(Error::Infeasible("all sub-channel powers are zero".into()));
    }
    design(h, symbol_count, &PowerMode::Fixed(p.clone()), options)
}

fn design(h: &ChannelMatrix, symbol_count: usize, power: &PowerMode, options: &DesignOptions) -> Result<DesignResult> {
    options.validate()?;
    if symbol_count < 2 {
        return domain("design needs at least two symbols");
    }
    if h.is_zero() {
        return domain("channel is identically zero");
    }
    let u = h.dim();
    if let PowerMode::Total(b) = power {
        if !(*b > 0.0) {
            return Err(Error::InvalidConfig("power budget must be positive".into()));
        }
    }
    if let Some(ws) = &options.warm_start {
        if ws.dim() != u || ws.symbol_count() != symbol_count {
            return Err(Error::DimensionMismatch("warm start does not match (M, U)".into()));
        }
    }
    // Work on H / max|h|; distances rescale linearly.
    let scale = h.max_amplitude();
    let unit = h.scaled(1.0 / scale);

    let mut starts: Vec<Vec<f64>> = (0..options.restarts)
        .map(|r| {
            let mut rng = crate::seed::stream(options.seed, r as u64);
            random_start(&mut rng, u, symbol_count, power)
        })
        .collect();
    if let Some(ws) = &options.warm_start {
        starts.push(project(&ws.stacked(), u, symbol_count, power));
    }

    let chains: Vec<Result<(Vec<f64>, ChainTrace)>> = starts
        .into_par_iter()
        .map(|x0| run_chain(&unit, x0, power, options))
        .collect();

    let w = weights(h.amplitudes());
    let mut traces = Vec::with_capacity(chains.len());
    let mut best: Option<(usize, Vec<f64>, MedPair)> = None;
    for (index, chain) in chains.into_iter().enumerate() {
        let (x, mut trace) = chain?;
        for d in &mut trace.d_min {
            *d *= scale;
        }
        let pair = med_stacked(&w, &x);
        let better = match &best {
            None => true,
            Some((_, _, b)) => pair.distance > b.distance * (1.0 + TIE_TOLERANCE),
        };
        if better {
            best = Some((index, x, pair));
        }
        traces.push(trace);
    }
    let (restart_index, x, pair) = best.ok_or_else(|| Error::Internal("no restart produced a design".into()))?;
    let trace = &traces[restart_index];
    Ok(DesignResult {
        constellation: Constellation::from_stacked(&x, symbol_count, u)?,
        d_min: pair.distance,
        iterations: trace.iterations,
        restart_index,
        converged: trace.converged,
        med_pair: pair.pair,
        traces,
    })
}

/// Runs one SCA chain from `start` (projected onto the power constraint)
/// without random restarts. The result is never worse than the start.
pub fn refine(
    h: &ChannelMatrix,
    power: &PowerMode,
    start: &Constellation,
    options: &DesignOptions,
) -> Result<DesignResult> {
    options.validate()?;
    check_dims(h, start)?;
    if h.is_zero() {
        return domain("channel is identically zero");
    }
    let (u, count) = (start.dim(), start.symbol_count());
    if count < 2 {
        return domain("design needs at least two symbols");
    }
    let scale = h.max_amplitude();
    let x0 = project(&start.stacked(), u, count, power);
    let (x, mut trace) = run_chain(&h.scaled(1.0 / scale), x0, power, options)?;
    trace.d_min.iter_mut().for_each(|d| *d *= scale);
    let pair = med_stacked(&weights(h.amplitudes()), &x);
    Ok(DesignResult {
        constellation: Constellation::from_stacked(&x, count, u)?,
        d_min: pair.distance,
        iterations: trace.iterations,
        restart_index: 0,
        converged: trace.converged,
        med_pair: pair.pair,
        traces: vec![trace],
    })
}

fn random_start<R: Rng>(rng: &mut R, u: usize, count: usize, power: &PowerMode) -> Vec<f64> {
    let x: Vec<f64> = (0..count * 2 * u).map(|_| rng.sample(StandardNormal)).collect();
    fill_budget(x, u, count, power)
}

/// Scales `x` so every power constraint is met with equality.
fn fill_budget(mut x: Vec<f64>, u: usize, count: usize, power: &PowerMode) -> Vec<f64> {
    match power {
        PowerMode::Total(b) => {
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let f = (count as f64 * b / energy).sqrt();
            x.iter_mut().for_each(|v| *v *= f);
        }
        PowerMode::Fixed(p) => {
            for n in 0..u {
                let idx = subchannel_indices(u, count, n);
                let energy: f64 = idx.iter().map(|&j| x[j] * x[j]).sum();
                let f = if energy > 0.0 { (count as f64 * p.values()[n] / energy).sqrt() } else { 0.0 };
                idx.iter().for_each(|&j| x[j] *= f);
            }
        }
    }
    x
}

fn project(x: &[f64], u: usize, count: usize, power: &PowerMode) -> Vec<f64> {
    let constraint = match power {
        PowerMode::Total(b) => PowerConstraint::Ball { bound: count as f64 * b },
        PowerMode::Fixed(p) => PowerConstraint::Groups {
            normalization: count as f64,
            caps: (0..u)
                .map(|n| GroupCap { indices: subchannel_indices(u, count, n), cap: p.values()[n] })
                .collect(),
        },
    };
    constraint.project(x)
}

fn run_chain(h: &ChannelMatrix, x0: Vec<f64>, power: &PowerMode, options: &DesignOptions) -> Result<(Vec<f64>, ChainTrace)> {
    let w = weights(h.amplitudes());
    let mut x = x0;
    let mut current = med_stacked(&w, &x).distance;
    let mut trace = ChainTrace { d_min: vec![current], iterations: 0, converged: false };
    for _ in 0..options.max_iterations {
        let spec = linearize_constraints(h, &x, power)?;
        let sol = solve_subproblem(&spec, &x)?;
        trace.iterations += 1;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible("subproblem has no feasible point".into()));
        }
        let next = med_stacked(&w, &sol.x).distance;
        if !(next >= current) {
            // the solver's tolerance can only cost a hair; keep the better point
            trace.converged = true;
            break;
        }
        let change = (next - current) / current.max(f64::MIN_POSITIVE);
        x = sol.x;
        current = next;
        trace.d_min.push(current);
        if change < options.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((x, trace))
}

/// `P_n = (1/M) sum_m |x_m[n]|^2`.
pub fn extract_power(c: &Constellation) -> PowerVector {
    let m = c.symbol_count() as f64;
    PowerVector(
        (0..c.dim())
            .map(|n| c.points().iter().map(|p| p[n].norm_sqr()).sum::<f64>() / m)
            .collect(),
    )
}

/// Divides sub-channel `n` by `sqrt(P_n)` (zero where `P_n = 0`).
pub fn s_form(c: &Constellation, p: &PowerVector) -> Result<Constellation> {
    if p.dim() != c.dim() {
        return Err(Error::DimensionMismatch("power vector does not match the constellation".into()));
    }
    let inv: Vec<f64> = p.values().iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    Constellation::new(
        c.points()
            .iter()
            .map(|pt| pt.iter().zip(&inv).map(|(z, f)| z * f).collect())
            .collect(),
    )
}

/// Largest excess over the power constraint (zero when feasible).
pub fn power_violation(c: &Constellation, power: &PowerMode) -> f64 {
    match power {
        PowerMode::Total(b) => (c.average_power() - b).max(0.0),
        PowerMode::Fixed(p) => extract_power(c)
            .values()
            .iter()
            .zip(p.values())
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max),
    }
}

/// `|1 - med(H_eval, C_rep) / med(H_eval, C_opt)|`.
pub fn normalized_med_diff(h_eval: &ChannelMatrix, c_rep: &Constellation, c_opt: &Constellation) -> Result<f64> {
    if c_rep.symbol_count() != c_opt.symbol_count() || c_rep.dim() != c_opt.dim() {
        return Err(Error::DimensionMismatch("constellations differ in (M, U)".into()));
    }
    let reference = med(h_eval, c_opt)?.distance;
    if reference == 0.0 {
        return domain("optimal constellation has zero MED under the evaluation channel");
    }
    Ok((1.0 - med(h_eval, c_rep)?.distance / reference).abs())
}

pub const CONSTELLATION_FORMAT: &str = "oamap-constellation 1";

/// A constellation with the metadata written alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationFile {
    pub carriers_hz: Vec<f64>,
    pub modes: Vec<i32>,
    pub position: Option<Position>,
    pub d_min: f64,
    pub constellation: Constellation,
}

impl ConstellationFile {
    pub fn to_text(&self) -> String {
        let c = &self.constellation;
        let mut out = String::new();
        let _ = writeln!(out, "{CONSTELLATION_FORMAT}");
        let _ = writeln!(out, "M {}", c.symbol_count());
        let _ = writeln!(out, "U {}", c.dim());
        let _ = writeln!(out, "carriers_hz {}", fmt_row(&self.carriers_hz));
        let modes: Vec<String> = self.modes.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "modes {}", modes.join(" "));
        let _ = match self.position {
            None => writeln!(out, "position none"),
            Some(Position::Beta { beta, z }) => writeln!(out, "position beta {} {}", fmt_f64(beta), fmt_f64(z)),
            Some(Position::Cartesian { r, z }) => writeln!(out, "position cartesian {} {}", fmt_f64(r), fmt_f64(z)),
        };
        let _ = writeln!(out, "d_min {}", fmt_f64(self.d_min));
        for p in c.points() {
            let row: Vec<f64> = p.iter().flat_map(|z| [z.re, z.im]).collect();
            let _ = writeln!(out, "{}", fmt_row(&row));
        }
        out
    }

    /// Parses the text form; `lines` is consumed up to the last point row.
    pub fn parse_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> std::result::Result<Self, String> {
        let mut next = |key: &str| -> std::result::Result<&'a str, String> {
            let line = lines.next().ok_or_else(|| format!("missing `{key}` line"))?;
            if key.is_empty() {
                return Ok(line);
            }
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
                .ok_or_else(|| format!("expected `{key}`, found `{line}`"))
        };
        let header = next("")?;
        if header.trim() != CONSTELLATION_FORMAT {
            return Err(format!("unsupported constellation header `{header}`"));
        }
        let m: usize = next("M")?.trim().parse().map_err(|e| format!("bad M: {e}"))?;
        let u: usize = next("U")?.trim().parse().map_err(|e| format!("bad U: {e}"))?;
        let carriers_hz = parse_f64_list(next("carriers_hz")?).ok_or("bad carriers")?;
        let modes = next("modes")?
            .split_whitespace()
            .map(|t| t.parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("bad modes: {e}"))?;
        let pos: Vec<&str> = next("position")?.split_whitespace().collect();
        let position = match pos.as_slice() {
            ["none"] => None,
            [kind, a, b] => {
                let a: f64 = a.parse().map_err(|_| "bad position")?;
                let b: f64 = b.parse().map_err(|_| "bad position")?;
                match *kind {
                    "beta" => Some(Position::Beta { beta: a, z: b }),
                    "cartesian" => Some(Position::Cartesian { r: a, z: b }),
                    _ => return Err(format!("unknown position kind `{kind}`")),
                }
            }
            _ => return Err("bad position line".into()),
        };
        let d_min: f64 = next("d_min")?.trim().parse().map_err(|e| format!("bad d_min: {e}"))?;
        let mut points = Vec::with_capacity(m);
        for _ in 0..m {
            let row = parse_f64_list(next("")?).ok_or("bad point row")?;
            if row.len() != 2 * u {
                return Err(format!("point row has {} values, expected {}", row.len(), 2 * u));
            }
            points.push(row.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect());
        }
        let constellation = Constellation::new(points).map_err(|e| e.to_string())?;
        Ok(Self { carriers_hz, modes, position, d_min, constellation })
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let parsed = Self::parse_lines(&mut lines)?;
        if lines.any(|l| !l.trim().is_empty()) {
            return Err("trailing content after constellation".into());
        }
        Ok(parsed)
    }
}
