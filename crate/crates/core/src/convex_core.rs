//! Convex inner problem of the successive convex approximation.
//!
//! ```text
//!     maximize     s
//!     subject to   g_k . x + c_k >= s            k = 1..K
//!                  ||x||^2 <= B                   (ball)
//!              or  (1/M) sum_{j in S_n} x_j^2 <= P_n   for every group n
//! ```
//!
//! Solved with a Mehrotra predictor-corrector interior-point method on the
//! slack form `min -s` s.t. `f_i(x, s) + w_i = 0`, `w, z > 0`. The start may
//! be infeasible; the iteration stops once the complementarity gap `w . z` is
//! below the relative tolerance and both residuals vanish, and the final point
//! is projected onto the power constraints. Groups with a zero (or negligible) cap pin their
//! coordinates to zero and are eliminated up front.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative optimality tolerance on `s`.
pub const SUBPROBLEM_TOLERANCE: f64 = 1e-8;
/// Absolute slack allowed on the power constraints.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;
/// Newton-step budget per solve.
pub const ITERATION_CAP: usize = 5000;

const DUAL_TOLERANCE: f64 = 1e-8;
const PRIMAL_TOLERANCE: f64 = 1e-12;
const STEP_FRACTION: f64 = 0.99;
/// Caps below this fraction of the largest cap are pinned to zero.
const PINNED_CAP_RATIO: f64 = 1e-14;

/// Sparse affine form `terms . x + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBound {
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

impl AffineBound {
    pub fn new(terms: Vec<(usize, f64)>, offset: f64) -> Self {
        Self { terms, offset }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, g)| g * x[j]).sum::<f64>() + self.offset
    }

    /// True when the linear part vanishes identically.
    pub fn is_degenerate(&self) -> bool {
        self.terms.iter().all(|&(_, g)| g == 0.0)
    }

    fn norm(&self) -> f64 {
        self.terms.iter().map(|&(_, g)| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCap {
    pub indices: Vec<usize>,
    pub cap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PowerConstraint {
    /// `||x||^2 <= bound`.
    Ball { bound: f64 },
    /// `(1 / normalization) * sum_{j in S_n} x_j^2 <= cap_n` for every group.
    Groups { normalization: f64, caps: Vec<GroupCap> },
}

impl PowerConstraint {
    /// `(indices, bound on the squared norm)` per constraint.
    fn quadratic_bounds(&self, dim: usize) -> Vec<(Vec<usize>, f64)> {
        match self {
            PowerConstraint::Ball { bound } => vec![((0..dim).collect(), *bound)],
            PowerConstraint::Groups { normalization, caps } => caps
                .iter()
                .map(|g| (g.indices.clone(), normalization * g.cap))
                .collect(),
        }
    }

    /// Largest excess of `||x_n||^2` over its bound (zero when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.quadratic_bounds(x.len())
            .iter()
            .map(|(idx, b)| idx.iter().map(|&j| x[j] * x[j]).sum::<f64>() - b)
            .fold(0.0, f64::max)
    }

    /// Radially scales every violated group back onto its bound.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (idx, b) in self.quadratic_bounds(x.len()) {
            let energy: f64 = idx.iter().map(|&j| x[j] * x[j]).sum();
            if energy > b {
                let factor = if energy > 0.0 { (b / energy).sqrt() } else { 0.0 };
                for &j in &idx {
                    out[j] *= factor;
                }
            }
        }
        out
    }
}

/// One convex subproblem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSpec {
    pub dim: usize,
    pub bounds: Vec<AffineBound>,
    pub power: PowerConstraint,
}

impl SubproblemSpec {
    pub fn new(dim: usize, bounds: Vec<AffineBound>, power: PowerConstraint) -> Result<Self> {
        for b in &bounds {
            if b.terms.iter().any(|&(j, g)| j >= dim || !g.is_finite()) || !b.offset.is_finite() {
                return Err(Error::DimensionMismatch("affine bound outside the variable range".into()));
            }
        }
        match &power {
            PowerConstraint::Ball { bound } => {
                if !(*bound > 0.0) {
                    return Err(Error::InvalidConfig("ball bound must be positive".into()));
                }
            }
            PowerConstraint::Groups { normalization, caps } => {
                if !(*normalization > 0.0) {
                    return Err(Error::InvalidConfig("group normalization must be positive".into()));
                }
                let mut seen = vec![false; dim];
                for g in caps {
                    if !(g.cap >= 0.0) || !g.cap.is_finite() {
                        return Err(Error::InvalidConfig("group caps must be non-negative".into()));
                    }
                    for &j in &g.indices {
                        if j >= dim || seen[j] {
                            return Err(Error::InvalidConfig("group index sets must partition the variables".into()));
                        }
                        seen[j] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::InvalidConfig("group index sets must partition the variables".into()));
                }
            }
        }
        Ok(Self { dim, bounds, power })
    }

    /// `min_k (g_k . x + c_k)` over the non-degenerate bounds.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.bounds
            .iter()
            .filter(|b| !b.is_degenerate())
            .map(|b| b.eval(x))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub s: f64,
    pub status: SolveStatus,
    /// Relative norm of the Lagrangian gradient at the final multipliers.
    pub kkt_residual: f64,
    /// Final surrogate duality gap `sum w_i z_i`.
    pub gap_bound: f64,
    /// Bounds dropped because their linear part was identically zero.
    pub dropped: usize,
    pub newton_steps: usize,
}

struct Reduced {
    free: Vec<usize>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    groups: Vec<(Vec<usize>, f64)>,
}

impl Reduced {
    fn constraint_count(&self) -> usize {
        self.rows.len() + self.groups.len()
    }

    /// Constraint values `f_i(x, s) <= 0`, rows first.
    fn values(&self, x: &[f64], s: f64, f: &mut [f64]) {
        for (k, (terms, c)) in self.rows.iter().enumerate() {
            f[k] = s - c - terms.iter().map(|&(j, g)| g * x[j]).sum::<f64>();
        }
        let k0 = self.rows.len();
        for (n, (idx, b)) in self.groups.iter().enumerate() {
            f[k0 + n] = idx.iter().map(|&j| x[j] * x[j]).sum::<f64>() - b;
        }
    }

    fn min_row(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|(terms, c)| terms.iter().map(|&(j, g)| g * x[j]).sum::<f64>() + c)
            .fold(f64::INFINITY, f64::min)
    }

    /// `J dy` for the constraint Jacobian at `x`.
    fn jacobian_times(&self, x: &[f64], dy: &DVector<f64>, out: &mut [f64]) {
        let n = x.len();
        for (k, (terms, _)) in self.rows.iter().enumerate() {
            out[k] = dy[n] - terms.iter().map(|&(a, g)| g * dy[a]).sum::<f64>();
        }
        let k0 = self.rows.len();
        for (g, (idx, _)) in self.groups.iter().enumerate() {
            out[k0 + g] = idx.iter().map(|&a| 2.0 * x[a] * dy[a]).sum();
        }
    }

    /// `J^T v`, accumulated into `out` (length `n + 1`).
    fn jacobian_transpose_add(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = x.len();
        for ((terms, _), &vk) in self.rows.iter().zip(v) {
            for &(a, g) in terms {
                out[a] -= vk * g;
            }
            out[n] += vk;
        }
        let k0 = self.rows.len();
        for (g, (idx, _)) in self.groups.iter().enumerate() {
            let vg = v[k0 + g];
            for &a in idx {
                out[a] += 2.0 * vg * x[a];
            }
        }
    }

    /// Gradient of the Lagrangian of `min -s`; the last entry is the `s` part.
    fn dual_residual(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; x.len() + 1];
        r[x.len()] = -1.0;
        self.jacobian_transpose_add(x, z, &mut r);
        r
    }

    /// Cholesky factor of `H + J^T diag(z / w) J`, `H = sum_g 2 z_g I_g`.
    fn normal_matrix(&self, x: &[f64], w: &[f64], z: &[f64]) -> Option<Cholesky<f64, Dyn>> {
        let n = x.len();
        let mut mat = DMatrix::<f64>::zeros(n + 1, n + 1);
        for (k, (terms, _)) in self.rows.iter().enumerate() {
            let d = z[k] / w[k];
            for &(a, ga) in terms {
                mat[(a, n)] -= d * ga;
                for &(b, gb) in terms {
                    if b <= a {
                        mat[(a, b)] += d * ga * gb;
                    }
                }
            }
            mat[(n, n)] += d;
        }
        let k0 = self.rows.len();
        for (g, (idx, _)) in self.groups.iter().enumerate() {
            let zg = z[k0 + g];
            let d = 4.0 * zg / w[k0 + g];
            for &a in idx {
                mat[(a, a)] += 2.0 * zg;
                let xa = d * x[a];
                for &b in idx {
                    if b <= a {
                        mat[(a, b)] += xa * x[b];
                    }
                }
            }
        }
        for a in 0..n {
            mat[(n, a)] = mat[(a, n)];
            for b in 0..a {
                mat[(b, a)] = mat[(a, b)];
            }
        }
        factor_spd(mat)
    }
}

/// Newton direction for the slack form `f(y) + w = 0`, `W Z e = target`.
struct Direction {
    dy: DVector<f64>,
    dw: Vec<f64>,
    dz: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    problem: &Reduced,
    chol: &Cholesky<f64, Dyn>,
    x: &[f64],
    w: &[f64],
    z: &[f64],
    rd: &[f64],
    rp: &[f64],
    rc: &[f64],
) -> Direction {
    // (H + J^T D J) dy = -r_d + J^T W^{-1} (r_c - Z r_p)
    let m = w.len();
    let v: Vec<f64> = (0..m).map(|i| (rc[i] - z[i] * rp[i]) / w[i]).collect();
    let mut rhs: Vec<f64> = rd.iter().map(|r| -r).collect();
    problem.jacobian_transpose_add(x, &v, &mut rhs);
    let dy = chol.solve(&DVector::from_vec(rhs));
    let mut jdy = vec![0.0; m];
    problem.jacobian_times(x, &dy, &mut jdy);
    let dw: Vec<f64> = (0..m).map(|i| -rp[i] - jdy[i]).collect();
    let dz: Vec<f64> = (0..m).map(|i| (-rc[i] - z[i] * dw[i]) / w[i]).collect();
    Direction { dy, dw, dz }
}

fn step_to_boundary(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(1.0, f64::min)
}

/// Maximises `s` from a warm start, which is projected onto the power
/// constraints first. Deterministic for identical inputs.
pub fn solve_subproblem(spec: &SubproblemSpec, warm_start: &[f64]) -> Result<SubproblemSolution> {
    if warm_start.len() != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "warm start has length {}, expected {}",
            warm_start.len(),
            spec.dim
        )));
    }
    let dropped = spec.bounds.iter().filter(|b| b.is_degenerate()).count();
    let quad = spec.power.quadratic_bounds(spec.dim);

    // caps this far below the largest one carry no usable power
    let largest = quad.iter().map(|q| q.1).fold(0.0, f64::max);
    let negligible = PINNED_CAP_RATIO * largest;
    let mut pinned = vec![false; spec.dim];
    for (idx, b) in &quad {
        if *b <= negligible {
            for &j in idx {
                pinned[j] = true;
            }
        }
    }
    let free: Vec<usize> = (0..spec.dim).filter(|&j| !pinned[j]).collect();
    let mut position = vec![usize::MAX; spec.dim];
    for (k, &j) in free.iter().enumerate() {
        position[j] = k;
    }
    let rows: Vec<(Vec<(usize, f64)>, f64)> = spec
        .bounds
        .iter()
        .filter(|b| !b.is_degenerate())
        .map(|b| {
            let terms = b
                .terms
                .iter()
                .filter(|&&(j, g)| !pinned[j] && g != 0.0)
                .map(|&(j, g)| (position[j], g))
                .collect();
            (terms, b.offset)
        })
        .collect();
    let groups: Vec<(Vec<usize>, f64)> = quad
        .iter()
        .filter(|(_, b)| *b > negligible)
        .map(|(idx, b)| (idx.iter().map(|&j| position[j]).collect(), *b))
        .collect();

    if free.is_empty() || rows.is_empty() {
        let x = vec![0.0; spec.dim];
        return Ok(SubproblemSolution {
            s: spec.objective(&x),
            x,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            gap_bound: f64::INFINITY,
            dropped,
            newton_steps: 0,
        });
    }

    let problem = Reduced { free, rows, groups };
    let n = problem.free.len();
    let k_rows = problem.rows.len();
    let m = problem.constraint_count();

    let total_bound: f64 = problem.groups.iter().map(|(_, b)| b).sum();
    let scale = spec
        .bounds
        .iter()
        .filter(|b| !b.is_degenerate())
        .map(|b| b.offset.abs() + b.norm() * total_bound.sqrt())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let gscale = spec
        .bounds
        .iter()
        .flat_map(|b| b.terms.iter().map(|t| t.1.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let row_floor = 1e-2 * scale;

    let projected = spec.power.project(warm_start);
    let mut x: Vec<f64> = problem.free.iter().map(|&j| projected[j]).collect();
    let mut s = problem.min_row(&x) - row_floor;
    let mut f = vec![0.0; m];
    problem.values(&x, s, &mut f);
    let mut w: Vec<f64> = f
        .iter()
        .enumerate()
        .map(|(i, fi)| {
            let floor = if i < k_rows { row_floor } else { 1e-2 * problem.groups[i - k_rows].1 };
            (-fi).max(floor)
        })
        .collect();
    let mut z = vec![0.0; m];
    let row_mu: f64 = w[..k_rows].iter().sum::<f64>() / (k_rows * k_rows) as f64;
    for i in 0..m {
        z[i] = if i < k_rows { 1.0 / k_rows as f64 } else { row_mu / w[i] };
    }

    let mut status = SolveStatus::MaxIter;
    let mut newton_steps = 0usize;
    let mut kkt_residual = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut rp = vec![0.0; m];
    let mut rc = vec![0.0; m];
    while newton_steps < ITERATION_CAP {
        problem.values(&x, s, &mut f);
        for i in 0..m {
            rp[i] = f[i] + w[i];
        }
        let rd = problem.dual_residual(&x, &z);
        gap = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        kkt_residual = (rd[..n].iter().fold(0.0f64, |a, v| a.max(v.abs())) / gscale).max(rd[n].abs());
        let primal = rp[..k_rows].iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
        let primal = rp[k_rows..]
            .iter()
            .zip(&problem.groups)
            .fold(primal, |a, (v, (_, b))| a.max(v.abs() / b));
        let target = SUBPROBLEM_TOLERANCE * problem.min_row(&x).abs().max(1e-3 * scale);
        if gap <= target && kkt_residual <= DUAL_TOLERANCE && primal <= PRIMAL_TOLERANCE {
            status = SolveStatus::Optimal;
            break;
        }
        newton_steps += 1;

        let Some(chol) = problem.normal_matrix(&x, &w, &z) else { break };
        let mu = gap / m as f64;

        // predictor
        for i in 0..m {
            rc[i] = w[i] * z[i];
        }
        let aff = direction(&problem, &chol, &x, &w, &z, &rd, &rp, &rc);
        let alpha_aff = step_to_boundary(&w, &aff.dw).min(step_to_boundary(&z, &aff.dz));
        let mu_aff = (0..m)
            .map(|i| (w[i] + alpha_aff * aff.dw[i]) * (z[i] + alpha_aff * aff.dz[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);

        // corrector
        for i in 0..m {
            rc[i] = w[i] * z[i] + aff.dw[i] * aff.dz[i] - sigma * mu;
        }
        let step = direction(&problem, &chol, &x, &w, &z, &rd, &rp, &rc);
        let alpha = (STEP_FRACTION * step_to_boundary(&w, &step.dw).min(step_to_boundary(&z, &step.dz))).min(1.0);
        let finite = alpha.is_finite()
            && step.dy.iter().chain(&step.dw).chain(&step.dz).all(|v| v.is_finite());
        if !finite {
            break;
        }
        for j in 0..n {
            x[j] += alpha * step.dy[j];
        }
        s += alpha * step.dy[n];
        for i in 0..m {
            w[i] += alpha * step.dw[i];
            z[i] += alpha * step.dz[i];
        }
    }

    // Remove the last trace of primal infeasibility on the quadratic caps.
    let mut full = vec![0.0; spec.dim];
    for (k, &j) in problem.free.iter().enumerate() {
        full[j] = x[k];
    }
    let full = spec.power.project(&full);
    Ok(SubproblemSolution {
        s: spec.objective(&full),
        x: full,
        status,
        kkt_residual,
        gap_bound: gap,
        dropped,
        newton_steps,
    })
}

fn factor_spd(mat: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let dim = mat.nrows();
    if let Some(chol) = mat.clone().cholesky() {
        return Some(chol);
    }
    let trace: f64 = (0..dim).map(|i| mat[(i, i)]).sum::<f64>() / dim as f64;
    let mut ridge = 1e-14 * trace.max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        let mut shifted = mat.clone();
        for i in 0..dim {
            shifted[(i, i)] += ridge;
        }
        if let Some(chol) = shifted.cholesky() {
            return Some(chol);
        }
        ridge *= 100.0;
    }
    None
}
