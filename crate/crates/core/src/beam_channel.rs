//! Laguerre-Gaussian beam geometry, link gains and channel matrices.
//!
//! Every carrier `i` hosts the same set of OAM modes. All carriers share one
//! Rayleigh distance `z_R`, so the beam waist of carrier `i` follows from its
//! wavelength as `w_i = sqrt(z_R * lambda_i / pi)`.
//!
//! Sub-channels are ordered carrier-major, mode-minor: index
//! `u = i * L + k` addresses carrier `i` and the `k`-th entry of the mode set.
//!
//! Radial positions can be given either in metres or as the dimensionless
//! `beta = r / r_max(a, l_m, z)` measured against a [`ReferenceFrame`]. At a
//! fixed `beta` all link-gain ratios are (nearly) independent of `z`, which is
//! what makes channels along a constant-`beta` curve proportional.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::textfmt::fmt_f64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Smallest propagation distance (m) accepted by the gain formulas.
pub const MIN_DISTANCE: f64 = 0.05;

/// Receivers farther than this many fundamental beam spots from the axis are
/// treated as outside the OAM beam.
pub const BEAM_EXTENT_FACTOR: f64 = 3.0;

/// One (carrier, OAM mode) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Subchannel {
    pub index: usize,
    pub carrier: usize,
    pub mode: i32,
}

/// Physical parameters of the WDM/OAM link.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    carrier_frequencies: Vec<f64>,
    modes: Vec<i32>,
    rayleigh_distance: f64,
    antenna_gain: Vec<f64>,
    noise_power: f64,
    power_budget: f64,
    symbol_count: usize,
    antenna_spacing: f64,
}

impl SystemConfig {
    pub fn new(
        carrier_frequencies: Vec<f64>,
        modes: Vec<i32>,
        rayleigh_distance: f64,
        symbol_count: usize,
    ) -> Result<Self> {
        if carrier_frequencies.is_empty() {
            return Err(Error::InvalidConfig("at least one carrier is required".into()));
        }
        if carrier_frequencies.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidConfig("carrier frequencies must be positive".into()));
        }
        if carrier_frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "carrier frequencies must be strictly increasing".into(),
            ));
        }
        if modes.is_empty() {
            return Err(Error::InvalidConfig("mode set is empty".into()));
        }
        for (k, l) in modes.iter().enumerate() {
            if modes[..k].contains(l) {
                return Err(Error::InvalidConfig(format!("mode {l} listed twice")));
            }
        }
        if !rayleigh_distance.is_finite() || rayleigh_distance <= 0.0 {
            return Err(Error::InvalidConfig("Rayleigh distance must be positive".into()));
        }
        check_symbol_count(symbol_count)?;
        let u = carrier_frequencies.len() * modes.len();
        Ok(Self {
            carrier_frequencies,
            modes,
            rayleigh_distance,
            antenna_gain: vec![1.0; u],
            noise_power: 1e-10,
            power_budget: 1.0,
            symbol_count,
            antenna_spacing: 0.0,
        })
    }

    /// Two carriers at 60 and 61 GHz, modes {0, +1}, `z_R = 4 m`, `M = 64`,
    /// `N0 = 1e-10`, unit power budget.
    pub fn reference() -> Self {
        Self::new(vec![60e9, 61e9], vec![0, 1], 4.0, 64).expect("reference config is valid")
    }

    pub fn with_noise_power(mut self, noise_power: f64) -> Result<Self> {
        if !noise_power.is_finite() || noise_power <= 0.0 {
            return Err(Error::InvalidConfig("noise power must be positive".into()));
        }
        self.noise_power = noise_power;
        Ok(self)
    }

    pub fn with_power_budget(mut self, power_budget: f64) -> Result<Self> {
        if !power_budget.is_finite() || power_budget <= 0.0 {
            return Err(Error::InvalidConfig("power budget must be positive".into()));
        }
        self.power_budget = power_budget;
        Ok(self)
    }

    pub fn with_symbol_count(mut self, symbol_count: usize) -> Result<Self> {
        check_symbol_count(symbol_count)?;
        self.symbol_count = symbol_count;
        Ok(self)
    }

    /// Per-sub-channel antenna/system gain factors, in sub-channel order.
    pub fn with_antenna_gain(mut self, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != self.subchannel_count() {
            return Err(Error::InvalidConfig(format!(
                "expected {} antenna gains, got {}",
                self.subchannel_count(),
                gains.len()
            )));
        }
        if gains.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::InvalidConfig("antenna gains must be positive".into()));
        }
        self.antenna_gain = gains;
        Ok(self)
    }

    /// Stored for completeness; no gain formula depends on it.
    pub fn with_antenna_spacing(mut self, spacing: f64) -> Result<Self> {
        if !spacing.is_finite() || spacing < 0.0 {
            return Err(Error::InvalidConfig("antenna spacing must be non-negative".into()));
        }
        self.antenna_spacing = spacing;
        Ok(self)
    }

    pub fn carrier_frequencies(&self) -> &[f64] {
        &self.carrier_frequencies
    }
    pub fn modes(&self) -> &[i32] {
        &self.modes
    }
    pub fn rayleigh_distance(&self) -> f64 {
        self.rayleigh_distance
    }
    pub fn antenna_gain(&self) -> &[f64] {
        &self.antenna_gain
    }
    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }
    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }
    pub fn symbol_count(&self) -> usize {
        self.symbol_count
    }
    pub fn antenna_spacing(&self) -> f64 {
        self.antenna_spacing
    }
    pub fn carrier_count(&self) -> usize {
        self.carrier_frequencies.len()
    }
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }
    pub fn subchannel_count(&self) -> usize {
        self.carrier_count() * self.mode_count()
    }

    pub fn subchannel(&self, index: usize) -> Result<Subchannel> {
        if index >= self.subchannel_count() {
            return Err(Error::IndexOutOfRange(format!("sub-channel {index}")));
        }
        let l = self.mode_count();
        Ok(Subchannel { index, carrier: index / l, mode: self.modes[index % l] })
    }

    pub fn subchannels(&self) -> impl Iterator<Item = Subchannel> + '_ {
        (0..self.subchannel_count()).map(move |u| self.subchannel(u).unwrap())
    }

    fn check_carrier(&self, carrier: usize) -> Result<()> {
        if carrier >= self.carrier_count() {
            return Err(Error::IndexOutOfRange(format!(
                "carrier {carrier} (have {})",
                self.carrier_count()
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self, carrier: usize) -> Result<f64> {
        self.check_carrier(carrier)?;
        Ok(SPEED_OF_LIGHT / self.carrier_frequencies[carrier])
    }

    /// Beam waist radius `w_i` implied by the shared Rayleigh distance.
    pub fn beam_waist(&self, carrier: usize) -> Result<f64> {
        Ok((self.rayleigh_distance * self.wavelength(carrier)? / PI).sqrt())
    }

    /// Fundamental Gaussian beam spot `w_i(z) = w_i sqrt(1 + (z/z_R)^2)`.
    pub fn beam_spot(&self, carrier: usize, z: f64) -> Result<f64> {
        if !(z > 0.0) || !z.is_finite() {
            return domain(format!("beam spot needs z > 0, got {z}"));
        }
        let ratio = z / self.rayleigh_distance;
        Ok(self.beam_waist(carrier)? * (1.0 + ratio * ratio).sqrt())
    }

    /// Radius of the maximum-intensity ring of mode `l`; zero for `l = 0`.
    pub fn r_max(&self, carrier: usize, mode: i32, z: f64) -> Result<f64> {
        let spot = self.beam_spot(carrier, z)?;
        Ok((f64::from(mode.unsigned_abs()) / 2.0).sqrt() * spot)
    }

    /// Link gain `g_i^l(r, z) = |h_i^l(r, z)|^2` of the LG beam.
    ///
    /// For `l = 0` the ring factor `(r / r_max)^{2|l|}` is taken as 1.
    pub fn link_gain(&self, carrier: usize, mode: i32, r: f64, z: f64) -> Result<f64> {
        check_distance(z)?;
        if !(r >= 0.0) || !r.is_finite() {
            return domain(format!("radius must be non-negative, got {r}"));
        }
        let lambda = self.wavelength(carrier)?;
        let spot = self.beam_spot(carrier, z)?;
        let rmax = self.r_max(carrier, mode, z)?;
        let slant_sq = rmax * rmax + z * z;
        let order = mode.unsigned_abs() as i32;
        let ring = if order == 0 { 1.0 } else { (r / rmax).powi(2 * order) };
        let envelope = (2.0 * (rmax * rmax - r * r) / (spot * spot)).exp();
        let zeta = self.zeta(carrier, mode);
        Ok(zeta * lambda * lambda / ((4.0 * PI).powi(2) * slant_sq) * ring * envelope)
    }

    /// Link gain at `r = beta * r_max(a, l_m, z)`, evaluated through the
    /// closed form in `beta` rather than through the radius.
    pub fn link_gain_beta(
        &self,
        carrier: usize,
        mode: i32,
        frame: &ReferenceFrame,
        beta: f64,
        z: f64,
    ) -> Result<f64> {
        check_distance(z)?;
        check_beta(beta)?;
        let lambda = self.wavelength(carrier)?;
        let lambda_ref = self.wavelength(frame.carrier)?;
        let ref_order = f64::from(frame.mode.unsigned_abs());
        let rmax = self.r_max(carrier, mode, z)?;
        let slant_sq = rmax * rmax + z * z;
        let order = mode.unsigned_abs() as i32;
        let kappa = lambda_ref * ref_order / lambda;
        let ring = if order == 0 {
            1.0
        } else {
            (kappa / f64::from(order)).powi(order)
                * beta.powi(2 * order)
                * f64::from(order).exp()
        };
        let zeta = self.zeta(carrier, mode);
        Ok(zeta * lambda * lambda / ((4.0 * PI).powi(2) * slant_sq)
            * ring
            * (-kappa * beta * beta).exp())
    }

    /// `beta` at which the gain of `(carrier, mode)` peaks for every `z`.
    pub fn beta_max(&self, carrier: usize, mode: i32, frame: &ReferenceFrame) -> Result<f64> {
        let lambda = self.wavelength(carrier)?;
        let lambda_ref = self.wavelength(frame.carrier)?;
        Ok((lambda * f64::from(mode.unsigned_abs())
            / (lambda_ref * f64::from(frame.mode.unsigned_abs())))
        .sqrt())
    }

    /// Full complex LG response including curvature, propagation and helical
    /// phases. Diagnostic only: [`ChannelMatrix`] keeps magnitudes, since the
    /// phases never change a diagonal channel's distances.
    pub fn complex_response(
        &self,
        carrier: usize,
        mode: i32,
        r: f64,
        phi: f64,
        z: f64,
    ) -> Result<Complex64> {
        let magnitude = self.link_gain(carrier, mode, r, z)?.sqrt();
        let lambda = self.wavelength(carrier)?;
        let rmax = self.r_max(carrier, mode, z)?;
        let zr_over_z = self.rayleigh_distance / z;
        let curvature = z * (1.0 + zr_over_z * zr_over_z);
        let slant = (rmax * rmax + z * z).sqrt();
        let phase = -PI * (r * r - rmax * rmax) / (lambda * curvature)
            - 2.0 * PI / lambda * slant
            - f64::from(mode) * phi;
        Ok(Complex64::from_polar(magnitude, phase))
    }

    /// Whether `(r, z)` lies inside the OAM beam footprint.
    pub fn is_inside_beam(&self, r: f64, z: f64) -> Result<bool> {
        let mut widest: f64 = 0.0;
        for i in 0..self.carrier_count() {
            widest = widest.max(self.beam_spot(i, z)?);
        }
        Ok(r <= BEAM_EXTENT_FACTOR * widest)
    }

    /// Diagonal channel amplitudes `sqrt(g_u)` at a receiver position.
    ///
    /// Outside the beam footprint every sub-channel carries a plane wave, so
    /// each entry takes its carrier's `l = 0` gain.
    pub fn channel_matrix(&self, position: Position, frame: &ReferenceFrame) -> Result<ChannelMatrix> {
        frame.validate(self)?;
        let r = position.radius(self, frame)?;
        let z = position.z();
        check_distance(z)?;
        let inside = self.is_inside_beam(r, z)?;
        let mut amplitudes = Vec::with_capacity(self.subchannel_count());
        for sc in self.subchannels() {
            let mode = if inside { sc.mode } else { 0 };
            amplitudes.push(self.link_gain(sc.carrier, mode, r, z)?.sqrt());
        }
        Ok(ChannelMatrix { amplitudes, position: Some(position), inside_beam: inside })
    }

    /// Same-mode gain ratio `a_{i,j}^l(beta, z) = g_i^l / g_j^l` for
    /// `lambda_i > lambda_j`.
    pub fn gain_ratio_same_mode(
        &self,
        i: usize,
        j: usize,
        mode: i32,
        frame: &ReferenceFrame,
        beta: f64,
        z: f64,
        variant: RatioVariant,
    ) -> Result<f64> {
        check_distance(z)?;
        check_beta(beta)?;
        let (li, lj) = (self.wavelength(i)?, self.wavelength(j)?);
        if i == j {
            return Ok(1.0);
        }
        if li <= lj {
            return Err(Error::ArgumentOrder(format!(
                "same-mode ratio needs lambda_i > lambda_j (carrier {i} vs {j})"
            )));
        }
        let lambda_ref = self.wavelength(frame.carrier)?;
        let ref_order = f64::from(frame.mode.unsigned_abs());
        let order = mode.unsigned_abs() as i32;
        let exponent = beta * beta * ref_order * lambda_ref * (1.0 / lj - 1.0 / li);
        let base = (lj / li).powi(order - 2) * exponent.exp();
        Ok(match variant {
            RatioVariant::Exact => base * self.same_mode_distance_factor(i, j, mode, z)?,
            RatioVariant::Approx => base,
        })
    }

    /// The slant-distance factor `d_j^2 / d_i^2` that the approximate
    /// same-mode ratio drops. Increases with `z` towards 1.
    pub fn same_mode_distance_factor(&self, i: usize, j: usize, mode: i32, z: f64) -> Result<f64> {
        check_distance(z)?;
        let half_order = f64::from(mode.unsigned_abs()) / 2.0;
        let growth = 1.0 + (z / self.rayleigh_distance).powi(2);
        let wi = self.beam_waist(i)?;
        let wj = self.beam_waist(j)?;
        Ok((wj * wj * half_order * growth + z * z) / (wi * wi * half_order * growth + z * z))
    }

    /// Approximate same-carrier gain ratio `a_i^{l1,l2}(beta, z)` for
    /// `|l1| > |l2|`.
    pub fn gain_ratio_same_carrier(
        &self,
        carrier: usize,
        l1: i32,
        l2: i32,
        frame: &ReferenceFrame,
        beta: f64,
        z: f64,
    ) -> Result<f64> {
        check_distance(z)?;
        let (o1, o2) = (l1.unsigned_abs() as i32, l2.unsigned_abs() as i32);
        if o1 <= o2 {
            return Err(Error::ArgumentOrder(format!(
                "same-carrier ratio needs |l1| > |l2|, got {l1} and {l2}"
            )));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return domain(format!("same-carrier ratio needs beta > 0, got {beta}"));
        }
        let lambda = self.wavelength(carrier)?;
        let lambda_ref = self.wavelength(frame.carrier)?;
        let ref_order = f64::from(frame.mode.unsigned_abs());
        let diff = o1 - o2;
        // 0^0 = 1 when l2 = 0
        let self_power = |o: i32| if o == 0 { 1.0 } else { f64::from(o).powi(o) };
        Ok((lambda_ref / lambda).powi(diff)
            * (beta * beta * ref_order).powi(diff)
            * self_power(o2)
            / self_power(o1)
            * f64::from(diff).exp())
    }

    /// Ratio of the same-mode gain ratio at `beta1` to that at `beta2`.
    pub fn same_mode_ratio_across(
        &self,
        i: usize,
        j: usize,
        frame: &ReferenceFrame,
        beta1: f64,
        beta2: f64,
    ) -> Result<f64> {
        check_beta(beta1)?;
        check_beta(beta2)?;
        let (li, lj) = (self.wavelength(i)?, self.wavelength(j)?);
        let lambda_ref = self.wavelength(frame.carrier)?;
        let ref_order = f64::from(frame.mode.unsigned_abs());
        Ok((ref_order * lambda_ref * (1.0 / lj - 1.0 / li) * (beta1 * beta1 - beta2 * beta2)).exp())
    }

    /// Boundary asymmetry `a_r = g(beta_max + d) / g(beta_max - d)`.
    ///
    /// Exceeds 1 for every `0 < d < beta_max`: the gain falls off faster on
    /// the inner side of the maximum-intensity ring.
    pub fn boundary_asymmetry(
        &self,
        carrier: usize,
        mode: i32,
        frame: &ReferenceFrame,
        delta_beta: f64,
        z: f64,
    ) -> Result<f64> {
        check_distance(z)?;
        if mode == 0 {
            return domain("boundary asymmetry is undefined for l = 0");
        }
        let peak = self.beta_max(carrier, mode, frame)?;
        if !(delta_beta > 0.0 && delta_beta < peak) {
            return domain(format!("delta beta must lie in (0, {peak}), got {delta_beta}"));
        }
        let lambda = self.wavelength(carrier)?;
        let lambda_ref = self.wavelength(frame.carrier)?;
        let kappa = f64::from(frame.mode.unsigned_abs()) * lambda_ref / lambda;
        let order = mode.unsigned_abs() as i32;
        Ok((1.0 + 2.0 * delta_beta / (peak - delta_beta)).powi(2 * order)
            * (-4.0 * kappa * delta_beta * peak).exp())
    }

    /// Evaluates every sub-channel's gain over a `(beta, z)` grid.
    pub fn gain_field(
        &self,
        frame: &ReferenceFrame,
        betas: &[f64],
        zs: &[f64],
    ) -> Result<Vec<GainFieldRow>> {
        let mut rows = Vec::with_capacity(betas.len() * zs.len() * self.subchannel_count());
        for &beta in betas {
            for &z in zs {
                let h = self.channel_matrix(Position::Beta { beta, z }, frame)?;
                for sc in self.subchannels() {
                    let amplitude = h.amplitudes[sc.index];
                    rows.push(GainFieldRow {
                        beta,
                        z,
                        subchannel: sc.index,
                        carrier_hz: self.carrier_frequencies[sc.carrier],
                        mode: sc.mode,
                        gain: amplitude * amplitude,
                        amplitude,
                    });
                }
            }
        }
        Ok(rows)
    }

    fn zeta(&self, carrier: usize, mode: i32) -> f64 {
        match self.modes.iter().position(|m| *m == mode) {
            Some(k) => self.antenna_gain[carrier * self.mode_count() + k],
            None => 1.0,
        }
    }
}

fn check_symbol_count(m: usize) -> Result<()> {
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "symbol count must be a power of two >= 2, got {m}"
        )));
    }
    Ok(())
}

fn check_distance(z: f64) -> Result<()> {
    if !(z >= MIN_DISTANCE) || !z.is_finite() {
        return domain(format!("z = {z} m is below the {MIN_DISTANCE} m guard"));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return domain(format!("beta must be non-negative, got {beta}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioVariant {
    /// Keeps the slant-distance factor.
    Exact,
    /// Drops it (valid once `z` is large compared to the beam waist).
    Approx,
}

/// Reference `(carrier a, mode l_m)` against which `beta` is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceFrame {
    pub carrier: usize,
    pub mode: i32,
}

impl ReferenceFrame {
    pub fn new(carrier: usize, mode: i32) -> Result<Self> {
        if mode == 0 {
            return Err(Error::InvalidConfig("reference mode must be nonzero".into()));
        }
        Ok(Self { carrier, mode })
    }

    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        if self.mode == 0 {
            return Err(Error::InvalidConfig("reference mode must be nonzero".into()));
        }
        config.check_carrier(self.carrier)
    }

    /// The radius unit `r_max(a, l_m, z)` at distance `z`.
    pub fn unit_radius(&self, config: &SystemConfig, z: f64) -> Result<f64> {
        config.r_max(self.carrier, self.mode, z)
    }
}

/// Receiver position in a plane containing the beam axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Position {
    Cartesian { r: f64, z: f64 },
    Beta { beta: f64, z: f64 },
}

impl Position {
    pub fn z(&self) -> f64 {
        match *self {
            Position::Cartesian { z, .. } | Position::Beta { z, .. } => z,
        }
    }

    pub fn radius(&self, config: &SystemConfig, frame: &ReferenceFrame) -> Result<f64> {
        match *self {
            Position::Cartesian { r, .. } => {
                if !(r >= 0.0) || !r.is_finite() {
                    return domain(format!("radius must be non-negative, got {r}"));
                }
                Ok(r)
            }
            Position::Beta { beta, z } => {
                check_beta(beta)?;
                Ok(beta * frame.unit_radius(config, z)?)
            }
        }
    }

    pub fn beta(&self, config: &SystemConfig, frame: &ReferenceFrame) -> Result<f64> {
        match *self {
            Position::Beta { beta, .. } => Ok(beta),
            Position::Cartesian { r, z } => Ok(r / frame.unit_radius(config, z)?),
        }
    }
}

/// Diagonal channel `H = diag(h_1, ..., h_U)` with `h_u = sqrt(g_u) >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    amplitudes: Vec<f64>,
    position: Option<Position>,
    inside_beam: bool,
}

impl ChannelMatrix {
    /// Wraps raw amplitudes, e.g. for synthetic channels.
    pub fn from_amplitudes(amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::DimensionMismatch("channel needs at least one amplitude".into()));
        }
        if amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return domain("channel amplitudes must be finite and non-negative");
        }
        Ok(Self { amplitudes, position: None, inside_beam: true })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }
    pub fn position(&self) -> Option<Position> {
        self.position
    }
    pub fn inside_beam(&self) -> bool {
        self.inside_beam
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.amplitudes.iter().all(|a| *a == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
            position: self.position,
            inside_beam: self.inside_beam,
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Diagonal of `G = H^H H`.
    pub fn gains(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }
}

/// One row of the gain-field export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainFieldRow {
    pub beta: f64,
    pub z: f64,
    pub subchannel: usize,
    pub carrier_hz: f64,
    pub mode: i32,
    pub gain: f64,
    pub amplitude: f64,
}

pub const GAIN_FIELD_HEADER: &str = "beta,z_m,subchannel_index,carrier_hz,mode,gain,amplitude";

pub fn write_gain_field_csv<W: Write>(mut out: W, rows: &[GainFieldRow]) -> std::io::Result<()> {
    writeln!(out, "{GAIN_FIELD_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(row.beta),
            fmt_f64(row.z),
            row.subchannel,
            fmt_f64(row.carrier_hz),
            row.mode,
            fmt_f64(row.gain),
            fmt_f64(row.amplitude)
        )?;
    }
    Ok(())
}

/// Ratio of the same-carrier gain ratio at `beta1` to that at `beta2`:
/// `(beta1 / beta2)^{2(|l1| - |l2|)}`.
pub fn same_carrier_ratio_across(l1: i32, l2: i32, beta1: f64, beta2: f64) -> Result<f64> {
    check_beta(beta1)?;
    if !(beta2 > 0.0) || !beta2.is_finite() {
        return domain(format!("beta2 must be positive, got {beta2}"));
    }
    let diff = l1.unsigned_abs() as i32 - l2.unsigned_abs() as i32;
    Ok((beta1 / beta2).powi(2 * diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(freqs: &[f64], modes: &[i32]) -> SystemConfig {
        SystemConfig::new(freqs.to_vec(), modes.to_vec(), 4.0, 16).unwrap()
    }

    fn frame() -> ReferenceFrame {
        ReferenceFrame::new(0, 1).unwrap()
    }

    // Direct one-line evaluations of the closed forms, kept separate from the
    // implementation path.
    fn oracle_waist(f: f64, zr: f64) -> f64 {
        (zr * (299_792_458.0 / f) / std::f64::consts::PI).sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(vec![61e9, 60e9], vec![0], 4.0, 4).is_err());
        assert!(SystemConfig::new(vec![60e9], vec![1, 1], 4.0, 4).is_err());
        assert!(SystemConfig::new(vec![60e9], vec![0], 4.0, 12).is_err());
        assert!(SystemConfig::new(vec![60e9], vec![0], -1.0, 4).is_err());
        assert!(ReferenceFrame::new(0, 0).is_err());
        let c = cfg(&[60e9, 61e9], &[0, 1]);
        assert_eq!(c.subchannel_count(), 4);
        let sc = c.subchannel(3).unwrap();
        assert_eq!((sc.carrier, sc.mode), (1, 1));
        let sc = c.subchannel(1).unwrap();
        assert_eq!((sc.carrier, sc.mode), (0, 1));
        assert!(c.wavelength(0).unwrap() > c.wavelength(1).unwrap());
    }

    #[test]
    fn beam_spot_examples() {
        let c = cfg(&[60e9], &[0, 1]);
        let w0 = c.beam_waist(0).unwrap();
        assert_relative_eq!(c.beam_spot(0, 1e-9).unwrap(), w0, max_relative = 1e-12);
        assert_relative_eq!(c.beam_spot(0, 4.0).unwrap(), w0 * 2f64.sqrt(), max_relative = 1e-14);
        let expected = oracle_waist(60e9, 4.0) * (1.0 + (2.0f64 / 4.0).powi(2)).sqrt();
        assert_relative_eq!(c.beam_spot(0, 2.0).unwrap(), expected, max_relative = 1e-14);
        // frozen from a standalone evaluation
        assert_relative_eq!(c.beam_spot(0, 2.0).unwrap(), 0.089_175_343_745_127, max_relative = 1e-12);
        assert!(matches!(c.beam_spot(0, 0.0), Err(Error::Domain(_))));
        assert!(c.beam_spot(0, -1.0).is_err());
    }

    #[test]
    fn r_max_examples() {
        let c = cfg(&[60e9], &[0, 1, 2]);
        for z in [0.1, 1.0, 3.0] {
            assert_eq!(c.r_max(0, 0, z).unwrap(), 0.0);
            let r1 = c.r_max(0, 1, z).unwrap();
            assert_relative_eq!(c.r_max(0, 2, z).unwrap(), 2f64.sqrt() * r1, max_relative = 1e-14);
            assert_relative_eq!(c.r_max(0, -2, z).unwrap(), 2f64.sqrt() * r1, max_relative = 1e-14);
        }
        let expected = oracle_waist(60e9, 4.0) * (0.5f64 * (1.0 + 1.0 / 16.0)).sqrt();
        assert_relative_eq!(c.r_max(0, 1, 1.0).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn link_gain_examples() {
        let c = cfg(&[60e9], &[0, 1]);
        let lambda = c.wavelength(0).unwrap();
        let z = 1.7;
        let friis = (lambda / (4.0 * PI * z)).powi(2);
        assert_relative_eq!(c.link_gain(0, 0, 0.0, z).unwrap(), friis, max_relative = 1e-12);

        let rmax = c.r_max(0, 1, z).unwrap();
        let slant_sq = rmax * rmax + z * z;
        let ring_friis = lambda * lambda / ((4.0 * PI).powi(2) * slant_sq);
        assert_relative_eq!(c.link_gain(0, 1, rmax, z).unwrap(), ring_friis, max_relative = 1e-12);

        // Independent evaluation at r = 0.05 m, z = 2 m.
        let (r, z) = (0.05f64, 2.0f64);
        let w0 = oracle_waist(60e9, 4.0);
        let wz2 = w0 * w0 * (1.0 + 0.25);
        let rm2 = 0.5 * wz2;
        let oracle = lambda * lambda / ((4.0 * PI).powi(2) * (rm2 + z * z)) * (r * r / rm2)
            * (2.0 * (rm2 - r * r) / wz2).exp();
        assert_relative_eq!(c.link_gain(0, 1, r, z).unwrap(), oracle, max_relative = 1e-12);
        assert_relative_eq!(oracle, 3.598_640_157_344_8e-8, max_relative = 1e-12);

        assert!(c.link_gain(0, 1, 0.1, 0.04).is_err());
        assert!(c.link_gain(0, 1, -0.1, 1.0).is_err());
    }

    #[test]
    fn antenna_gain_scales_link_gain() {
        let c = cfg(&[60e9], &[0, 1]).with_antenna_gain(vec![1.0, 2.5]).unwrap();
        let base = cfg(&[60e9], &[0, 1]);
        let a = c.link_gain(0, 1, 0.05, 1.0).unwrap();
        let b = base.link_gain(0, 1, 0.05, 1.0).unwrap();
        assert_relative_eq!(a, 2.5 * b, max_relative = 1e-14);
    }

    #[test]
    fn beta_max_landmarks() {
        let c = cfg(&[60e9, 65e9], &[0, 1, 2]);
        let f = frame();
        assert_relative_eq!(c.beta_max(0, 1, &f).unwrap(), 1.0, max_relative = 1e-15);
        assert!((c.beta_max(0, 2, &f).unwrap() - 1.414).abs() < 1e-3);
        // The 65 GHz carrier has the shorter wavelength, so its ring sits
        // inside the 60 GHz ring: sqrt(60/65), the reciprocal of 1.0408.
        let b = c.beta_max(1, 1, &f).unwrap();
        assert_relative_eq!(b, (60.0f64 / 65.0).sqrt(), max_relative = 1e-12);
        assert!((1.0 / b - 1.04).abs() < 1e-3);
    }

    #[test]
    fn numerical_peak_matches_beta_max() {
        let c = cfg(&[60e9, 65e9], &[0, 1, 2]);
        let f = frame();
        let step = 0.001;
        for (i, l) in [(0usize, 1i32), (0, 2), (1, 1), (1, 2)] {
            for z in [0.5, 2.0, 4.0] {
                let best = (1..4000)
                    .map(|k| k as f64 * step)
                    .max_by(|a, b| {
                        let ga = c.link_gain_beta(i, l, &f, *a, z).unwrap();
                        let gb = c.link_gain_beta(i, l, &f, *b, z).unwrap();
                        ga.partial_cmp(&gb).unwrap()
                    })
                    .unwrap();
                assert!((best - c.beta_max(i, l, &f).unwrap()).abs() <= step);
            }
        }
    }

    #[test]
    fn channel_matrix_on_axis() {
        let c = cfg(&[60e9], &[0, 1]);
        let h = c.channel_matrix(Position::Cartesian { r: 0.0, z: 1.0 }, &frame()).unwrap();
        assert_eq!(h.dim(), 2);
        assert!(h.amplitudes()[0] > 0.0);
        assert_eq!(h.amplitudes()[1], 0.0);
        assert!(h.inside_beam());
    }

    #[test]
    fn channel_matrix_outside_beam_collapses_to_plane_wave() {
        let c = cfg(&[60e9, 61e9], &[0, 1]);
        let z = 1.0;
        let r = 4.0 * c.beam_spot(0, z).unwrap();
        let h = c.channel_matrix(Position::Cartesian { r, z }, &frame()).unwrap();
        assert!(!h.inside_beam());
        let a = h.amplitudes();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_relative_eq!(a[0], c.link_gain(0, 0, r, z).unwrap().sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn equal_beta_channels_are_nearly_proportional() {
        let c = cfg(&[60e9, 61e9], &[0, 1]);
        let f = frame();
        for beta in [0.4, 1.0, 1.8] {
            let base = c.channel_matrix(Position::Beta { beta, z: 0.5 }, &f).unwrap();
            for z in [1.0, 2.0, 3.0, 4.0] {
                let other = c.channel_matrix(Position::Beta { beta, z }, &f).unwrap();
                let ratios: Vec<f64> = other
                    .amplitudes()
                    .iter()
                    .zip(base.amplitudes())
                    .map(|(a, b)| a / b)
                    .collect();
                let alpha = ratios[0];
                for r in &ratios {
                    assert!((r / alpha - 1.0).abs() < 0.01, "beta {beta} z {z}: {ratios:?}");
                }
                // G2 ~ alpha^2 G1
                for (g2, g1) in other.gains().iter().zip(base.gains()) {
                    assert!((g2 / (alpha * alpha * g1) - 1.0).abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn same_mode_ratio_examples() {
        let c = cfg(&[60e9, 65e9], &[0, 1, 2]);
        let f = frame();
        let r1 = c.gain_ratio_same_mode(0, 1, 2, &f, 1.0, 0.5, RatioVariant::Exact).unwrap();
        let r2 = c.gain_ratio_same_mode(0, 1, 2, &f, 1.0, 4.0, RatioVariant::Exact).unwrap();
        assert!((r1 / r2 - 1.0).abs() < 0.005);
        assert_eq!(c.gain_ratio_same_mode(1, 1, 2, &f, 1.0, 1.0, RatioVariant::Exact).unwrap(), 1.0);
        assert!(matches!(
            c.gain_ratio_same_mode(1, 0, 2, &f, 1.0, 1.0, RatioVariant::Exact),
            Err(Error::ArgumentOrder(_))
        ));

        let c = cfg(&[60e9, 61e9], &[0, 1]);
        let exact = c.gain_ratio_same_mode(0, 1, 1, &f, 1.0, 2.0, RatioVariant::Exact).unwrap();
        let approx = c.gain_ratio_same_mode(0, 1, 1, &f, 1.0, 2.0, RatioVariant::Approx).unwrap();
        let quotient = c.link_gain_beta(0, 1, &f, 1.0, 2.0).unwrap()
            / c.link_gain_beta(1, 1, &f, 1.0, 2.0).unwrap();
        assert_relative_eq!(exact, quotient, max_relative = 1e-12);
        assert!((approx / quotient - 1.0).abs() < 0.01);
    }

    #[test]
    fn same_carrier_ratio_examples() {
        let c = cfg(&[60e9], &[0, 1, 2]);
        let f = frame();
        let at_peak = c.beta_max(0, 1, &f).unwrap();
        let r = c.gain_ratio_same_carrier(0, 1, 0, &f, at_peak, 2.0).unwrap();
        assert_relative_eq!(r, std::f64::consts::E, max_relative = 1e-14);
        let mut prev = 0.0;
        for k in 1..40 {
            let v = c.gain_ratio_same_carrier(0, 2, 1, &f, k as f64 * 0.05, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let approx = c.gain_ratio_same_carrier(0, 2, 1, &f, 1.0, 1.0).unwrap();
        let quotient =
            c.link_gain_beta(0, 2, &f, 1.0, 1.0).unwrap() / c.link_gain_beta(0, 1, &f, 1.0, 1.0).unwrap();
        assert!((approx / quotient - 1.0).abs() < 0.05);
        assert!(matches!(
            c.gain_ratio_same_carrier(0, 1, -1, &f, 1.0, 1.0),
            Err(Error::ArgumentOrder(_))
        ));
        assert!(c.gain_ratio_same_carrier(0, 2, 1, &f, 0.0, 1.0).is_err());
    }

    #[test]
    fn cross_position_ratios() {
        let c = cfg(&[60e9, 65e9], &[0, 1, 2]);
        let f = frame();
        assert_eq!(c.same_mode_ratio_across(0, 1, &f, 0.7, 0.7).unwrap(), 1.0);
        assert_eq!(same_carrier_ratio_across(2, 0, 0.9, 0.9).unwrap(), 1.0);
        assert_eq!(same_carrier_ratio_across(1, -1, 0.3, 1.9).unwrap(), 1.0);
        assert_relative_eq!(
            same_carrier_ratio_across(2, 0, 1.2, 0.8).unwrap(),
            1.5f64.powi(4),
            max_relative = 1e-14
        );
        assert!(same_carrier_ratio_across(2, 0, 1.2, 0.0).is_err());
        // agrees with the quotient of approximate ratios at the two positions
        let a1 = c.gain_ratio_same_mode(0, 1, 1, &f, 1.3, 1.0, RatioVariant::Approx).unwrap();
        let a2 = c.gain_ratio_same_mode(0, 1, 1, &f, 0.6, 2.0, RatioVariant::Approx).unwrap();
        assert_relative_eq!(c.same_mode_ratio_across(0, 1, &f, 1.3, 0.6).unwrap(), a1 / a2, max_relative = 1e-12);
    }

    #[test]
    fn boundary_asymmetry_examples() {
        let c = cfg(&[60e9], &[0, 1, 2]);
        let f = frame();
        assert!((c.boundary_asymmetry(0, 1, &f, 1e-6, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let mut prev = 1.0;
        for k in 1..50 {
            let v = c.boundary_asymmetry(0, 1, &f, k as f64 * 0.019, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let z = 1.3;
        let peak = c.beta_max(0, 1, &f).unwrap();
        let quotient = c.link_gain_beta(0, 1, &f, peak + 0.5, z).unwrap()
            / c.link_gain_beta(0, 1, &f, peak - 0.5, z).unwrap();
        assert_relative_eq!(c.boundary_asymmetry(0, 1, &f, 0.5, z).unwrap(), quotient, max_relative = 1e-9);
        assert!(c.boundary_asymmetry(0, 0, &f, 0.5, z).is_err());
        assert!(c.boundary_asymmetry(0, 1, &f, 1.0, z).is_err());
        assert!(c.boundary_asymmetry(0, 1, &f, 0.0, z).is_err());
    }

    #[test]
    fn gain_field_csv_layout() {
        let c = cfg(&[60e9], &[0, 1]);
        let rows = c.gain_field(&frame(), &[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(rows.len(), 8);
        let mut buf = Vec::new();
        write_gain_field_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], GAIN_FIELD_HEADER);
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first.len(), 7);
        let gain: f64 = first[5].parse().unwrap();
        let friis = (c.wavelength(0).unwrap() / (4.0 * PI)).powi(2);
        assert_relative_eq!(gain, friis, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn beta_and_radius_parameterisations_agree(
            beta in 0.0f64..3.0,
            z in 0.05f64..6.0,
            carrier in 0usize..2,
            mode in -3i32..=3,
            ref_mode in prop::sample::select(vec![-2, -1, 1, 2]),
        ) {
            let c = cfg(&[60e9, 65e9], &[0, 1]);
            let f = ReferenceFrame::new(1 - carrier, ref_mode).unwrap();
            let r = beta * f.unit_radius(&c, z).unwrap();
            let direct = c.link_gain(carrier, mode, r, z).unwrap();
            let closed = c.link_gain_beta(carrier, mode, &f, beta, z).unwrap();
            if direct == 0.0 {
                prop_assert!(closed.abs() < 1e-300);
            } else {
                prop_assert!((closed / direct - 1.0).abs() < 1e-12);
            }
            let back = Position::Cartesian { r, z }.beta(&c, &f).unwrap();
            prop_assert!((back - beta).abs() <= 1e-12 * beta.max(1.0));
        }

        #[test]
        fn friis_reduction(f_ghz in 30.0f64..300.0, z in 0.05f64..10.0) {
            let c = SystemConfig::new(vec![f_ghz * 1e9], vec![0], 4.0, 2).unwrap();
            let lambda = SPEED_OF_LIGHT / (f_ghz * 1e9);
            let g = c.link_gain(0, 0, 0.0, z).unwrap();
            prop_assert!((g / (lambda / (4.0 * PI * z)).powi(2) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn approximate_ratios_track_exact_quotients(
            beta in 0.3f64..2.0,
            z in 0.5f64..4.0,
            wide in any::<bool>(),
        ) {
            let f2 = if wide { 65e9 } else { 61e9 };
            let c = cfg(&[60e9, f2], &[0, 1, 2]);
            let f = frame();
            for l in [0, 1, 2] {
                let approx = c.gain_ratio_same_mode(0, 1, l, &f, beta, z, RatioVariant::Approx).unwrap();
                let q = c.link_gain_beta(0, l, &f, beta, z).unwrap() / c.link_gain_beta(1, l, &f, beta, z).unwrap();
                prop_assert!((approx / q - 1.0).abs() < 0.05);
            }
            for i in 0..2 {
                for (l1, l2) in [(1, 0), (2, 0), (2, 1)] {
                    let approx = c.gain_ratio_same_carrier(i, l1, l2, &f, beta, z).unwrap();
                    let q = c.link_gain_beta(i, l1, &f, beta, z).unwrap() / c.link_gain_beta(i, l2, &f, beta, z).unwrap();
                    prop_assert!((approx / q - 1.0).abs() < 0.05);
                }
            }
        }
    }
}
