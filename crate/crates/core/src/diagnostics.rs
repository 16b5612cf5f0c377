//! Monitored invariants, the entropy functional, and the admissibility gate.

use std::fmt;

use serde::Serialize;

use crate::dynamics::{ConsumptionLaw, SimParams, State, StepReport};
use crate::error::{invalid, Result, SimError};
use crate::grid::{inner_product, norm, Grid, NormKind, ScalarField};
use crate::noise::transport_noise_components;
use crate::operators::{consumption, laplacian_neumann};
use crate::spectral::SpectralSolvers;

/// `int n dx` by midpoint quadrature.
pub fn total_mass(n: &ScalarField) -> f64 {
    n.values().iter().sum::<f64>() * n.grid().cell_area()
}

const SAMPLES: usize = 1024;

/// Extremum of `h` on `[0, b]`: 1024 uniform intervals, then a ternary
/// refinement on the two intervals around the best sample.
fn sampled_extremum(h: impl Fn(f64) -> f64, b: f64, minimize: bool) -> f64 {
    let better = |a: f64, c: f64| if minimize { a < c } else { a > c };
    if b <= 0.0 {
        return h(0.0);
    }
    let x = |k: usize| b * k as f64 / SAMPLES as f64;
    let mut best_k = 0;
    let mut best = h(0.0);
    for k in 1..=SAMPLES {
        let v = h(x(k));
        if better(v, best) {
            best = v;
            best_k = k;
        }
    }
    let (mut lo, mut hi) = (x(best_k.saturating_sub(1)), x((best_k + 1).min(SAMPLES)));
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if better(h(m1), h(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let refined = h(0.5 * (lo + hi));
    if better(refined, best) {
        refined
    } else {
        best
    }
}

fn min_fprime(f: &ConsumptionLaw, c0_linf: f64) -> Result<f64> {
    if !(c0_linf >= 0.0 && c0_linf.is_finite()) {
        return Err(invalid("c0_linf", "must be finite and >= 0"));
    }
    for k in 0..=SAMPLES {
        let c = c0_linf * k as f64 / SAMPLES as f64;
        let d = f.deriv(c);
        if !(d > 0.0) {
            return Err(invalid("f", format!("f'({c}) = {d} is not positive on [0, {c0_linf}]")));
        }
    }
    let m = sampled_extremum(|c| f.deriv(c), c0_linf, true);
    if !(m > 0.0) {
        return Err(invalid("f", format!("min f' = {m} on [0, {c0_linf}] is not positive")));
    }
    Ok(m)
}

fn kf_from(f: &ConsumptionLaw, chi: f64, delta: f64, c0_linf: f64) -> Result<f64> {
    let m = min_fprime(f, c0_linf)?;
    Ok(chi * chi / (2.0 * delta * m) + 1.0 / m)
}

/// `K_f = chi^2 / (2 delta min f') + 1 / min f'` over `[0, c0_linf]`.
pub fn compute_kf(params: &SimParams, c0_linf: f64) -> Result<f64> {
    kf_from(&params.f, params.chi, params.delta, c0_linf)
}

fn margin_cell(f: &ConsumptionLaw, chi: f64, delta: f64, c0_linf: f64) -> Result<f64> {
    let kf = kf_from(f, chi, delta, c0_linf)?;
    let max_f2 = sampled_extremum(|c| f.eval(c).powi(2), c0_linf, false);
    Ok(delta - 4.0 * kf * max_f2 / min_fprime(f, c0_linf)?)
}

/// Largest `|c0|_inf` for which `4 K_f max f^2 / min f' <= delta` holds
/// (bisection; infinite if it holds up to `1e6`).
pub fn admissible_c0_bound(params: &SimParams) -> f64 {
    let m = |c: f64| margin_cell(&params.f, params.chi, params.delta, c).unwrap_or(-1.0);
    let mut hi = 1.0;
    while m(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if m(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Result of the admissibility check. Margins are signed: positive means
/// the condition holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub kf: f64,
    pub c0_linf: f64,
    /// `4 K_f max f^2 / min f' <= delta`.
    pub condition_cell_ok: bool,
    pub margin_cell: f64,
    /// `gamma^2 <= min(xi, xi / (2 K0)) / (6 |sigma|^2)`.
    pub gamma_branch1_ok: bool,
    pub margin_gamma1: f64,
    /// `gamma^2 <= 3 xi / (32 sqrt(2) |sigma|^2)` (the `p = 2` member).
    pub gamma_branch2_ok: bool,
    pub margin_gamma2: f64,
    pub c0_bound: f64,
    pub sigma_linf: f64,
    pub k0_used: f64,
    pub xi: f64,
    pub gamma: f64,
}

impl GateReport {
    pub fn all_ok(&self) -> bool {
        self.condition_cell_ok && self.gamma_branch1_ok && self.gamma_branch2_ok
    }
}

impl fmt::Display for GateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
        writeln!(f, "K_f                 {}", self.kf)?;
        writeln!(f, "|c0|_inf            {}", self.c0_linf)?;
        writeln!(f, "c0 bound            {}", self.c0_bound)?;
        writeln!(f, "|sigma|_inf         {}", self.sigma_linf)?;
        writeln!(f, "K0                  {}", self.k0_used)?;
        writeln!(f, "xi                  {}", self.xi)?;
        writeln!(f, "cell condition      {:4} margin {}", flag(self.condition_cell_ok), self.margin_cell)?;
        writeln!(f, "gamma (K0 branch)   {:4} margin {}", flag(self.gamma_branch1_ok), self.margin_gamma1)?;
        write!(f, "gamma (p branch)    {:4} margin {}", flag(self.gamma_branch2_ok), self.margin_gamma2)
    }
}

/// Evaluates the smallness conditions on `c0`, `gamma` and the cell diffusivity.
pub fn check_conditions(params: &SimParams, c0_linf: f64, k0: f64) -> Result<GateReport> {
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(invalid("k0", "must be finite and > 0"));
    }
    let kf = compute_kf(params, c0_linf)?;
    let margin_cell = margin_cell(&params.f, params.chi, params.delta, c0_linf)?;
    let s2 = params.sigma.linf * params.sigma.linf;
    let g2 = params.gamma * params.gamma;
    let xi = params.xi;
    let (b1, b2) = if s2 > 0.0 {
        (
            xi.min(xi / (2.0 * k0)) / (6.0 * s2),
            3.0 * xi / (32.0 * 2f64.sqrt() * s2),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(GateReport {
        kf,
        c0_linf,
        condition_cell_ok: margin_cell >= 0.0,
        margin_cell,
        gamma_branch1_ok: g2 <= b1,
        margin_gamma1: b1 - g2,
        gamma_branch2_ok: g2 <= b2,
        margin_gamma2: b2 - g2,
        c0_bound: admissible_c0_bound(params),
        sigma_linf: params.sigma.linf,
        k0_used: k0,
        xi,
        gamma: params.gamma,
    })
}

/// Discrete elliptic-regularity constant: the largest ratio
/// `|psi|_{H^2}^2 / (|lap psi|^2 + |psi|_{H^1}^2)` over Neumann cell fields,
/// by power iteration on the generalised eigenproblem.
pub fn estimate_k0(grid: &Grid) -> Result<f64> {
    let solvers = SpectralSolvers::new(grid);
    let mut x: Vec<f64> = {
        let mut s = 0x2545_F491_4F6C_DD1Du64;
        (0..grid.cells())
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    };
    let mut estimate = 0.0;
    for _ in 0..500 {
        let psi = ScalarField::from_values(*grid, x.clone())?;
        let num = h2_operator(&psi);
        let numer = inner_product(&num, &psi)?;
        let lap = laplacian_neumann(&psi);
        let denom = norm(&lap, NormKind::L2).powi(2) + norm(&psi, NormKind::L2).powi(2) + norm(&psi, NormKind::H1Semi).powi(2);
        let q = numer / denom;
        let mut y = num.into_values();
        solvers.scalar.apply(&mut y, |l, _, _| 1.0 / (1.0 - l + l * l));
        let s = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(s > 0.0 && s.is_finite()) {
            return Err(SimError::NonFinite("k0 iterate"));
        }
        y.iter_mut().for_each(|v| *v /= s);
        x = y;
        if (q - estimate).abs() <= 1e-12 * q {
            return Ok(q);
        }
        estimate = q;
    }
    Ok(estimate)
}

/// Operator of the `H^2` form `|psi|^2 + |grad psi|^2 + |psi_xx|^2 + |psi_yy|^2 + 2 |psi_xy|^2`.
fn h2_operator(psi: &ScalarField) -> ScalarField {
    let g = *psi.grid();
    let (nx, ny, dx, dy) = (g.nx, g.ny, g.dx, g.dy);
    let lap = laplacian_neumann(psi);
    let dxx = |f: &ScalarField| {
        let mut out = ScalarField::zeros(g);
        for j in 0..ny {
            for i in 0..nx {
                let l = if i > 0 { f.at(i - 1, j) - f.at(i, j) } else { 0.0 };
                let r = if i + 1 < nx { f.at(i + 1, j) - f.at(i, j) } else { 0.0 };
                out.set(i, j, (l + r) / (dx * dx));
            }
        }
        out
    };
    let dyy = |f: &ScalarField| {
        let mut out = ScalarField::zeros(g);
        for j in 0..ny {
            for i in 0..nx {
                let d = if j > 0 { f.at(i, j - 1) - f.at(i, j) } else { 0.0 };
                let u = if j + 1 < ny { f.at(i, j + 1) - f.at(i, j) } else { 0.0 };
                out.set(i, j, (d + u) / (dy * dy));
            }
        }
        out
    };
    // Mixed derivative on interior nodes: D_xy = S_y G_x; apply (S_y G_x)^T (S_y G_x).
    let mut node = vec![0.0; (nx + 1) * (ny + 1)];
    let gx = |i: usize, j: usize| (psi.at(i, j) - psi.at(i - 1, j)) / dx;
    for j in 1..ny {
        for i in 1..nx {
            node[j * (nx + 1) + i] = (gx(i, j) - gx(i, j - 1)) / dy;
        }
    }
    let mut face = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 1..nx {
            face[j * (nx + 1) + i] = (node[j * (nx + 1) + i] - node[(j + 1) * (nx + 1) + i]) / dy;
        }
    }
    let mut mixed = ScalarField::zeros(g);
    for j in 0..ny {
        for i in 0..nx {
            mixed.set(i, j, (face[j * (nx + 1) + i] - face[j * (nx + 1) + i + 1]) / dx);
        }
    }
    psi.add_scaled(-1.0, &lap)
        .add_scaled(1.0, &dxx(&dxx(psi)))
        .add_scaled(1.0, &dyy(&dyy(psi)))
        .add_scaled(2.0, &mixed)
}

/// `E = int n ln n + K_f |grad c|^2 + (8 K_f K_GN |c0|_inf^2 / (3 xi eta)) |u|^2 + |O| / e`.
pub fn entropy_functional(state: &State, params: &SimParams, c0_linf: f64, k_gn: f64) -> Result<f64> {
    let kf = compute_kf(params, c0_linf)?;
    entropy_with_kf(state, params, kf, c0_linf, k_gn)
}

fn entropy_with_kf(state: &State, params: &SimParams, kf: f64, c0_linf: f64, k_gn: f64) -> Result<f64> {
    let g = state.grid();
    let mut nlogn = 0.0;
    for &v in state.n.values() {
        if v < 0.0 {
            return Err(SimError::Precondition(format!("entropy needs n >= 0, found {v}")));
        }
        if v > 0.0 {
            nlogn += v * v.ln();
        }
    }
    let weight = 8.0 * kf * k_gn * c0_linf * c0_linf / (3.0 * params.xi * params.eta);
    Ok(nlogn * g.cell_area()
        + kf * norm(&state.c, NormKind::H1Semi).powi(2)
        + weight * norm(&state.u, NormKind::L2).powi(2)
        + g.area() / std::f64::consts::E)
}

/// One sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub step: u64,
    pub t: f64,
    pub mass_n: f64,
    pub min_n: f64,
    pub max_c: f64,
    pub l2_u: f64,
    pub h1_c: f64,
    pub entropy: f64,
    pub energy_residual: f64,
    /// Cumulative limited-consumption cells since the start of the run.
    pub clip_count: u64,
    pub div_residual: f64,
    /// `|c|^2`.
    pub l2_c_sq: f64,
    /// `int_0^t |grad c|^2`.
    pub int_grad_c_sq: f64,
    /// `int_0^t sum_k |phi_k(c)|^2`.
    pub int_noise_sq: f64,
    /// `int_0^t (n f(c), c)`.
    pub int_consumption: f64,
}

/// Rows in sampling order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticsSeries {
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first(&self) -> Option<&DiagnosticsRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&DiagnosticsRow> {
        self.rows.last()
    }
}

fn row_residual(row: &DiagnosticsRow, l2_c0_sq: f64, params: &SimParams) -> f64 {
    let lhs = row.l2_c_sq + 2.0 * params.xi * row.int_grad_c_sq - params.gamma * params.gamma * row.int_noise_sq
        + 2.0 * row.int_consumption;
    let scale = if l2_c0_sq > 0.0 { l2_c0_sq } else { 1.0 };
    (lhs - l2_c0_sq).abs() / scale
}

/// `max_t | |c|^2 + int (2 xi |grad c|^2 - gamma^2 sum |phi_k(c)|^2 + 2 (n f(c), c)) - |c0|^2 | / |c0|^2`.
/// The stochastic integral term is omitted; it vanishes for the skew noise.
pub fn energy_identity_residual(series: &DiagnosticsSeries, params: &SimParams) -> f64 {
    let Some(first) = series.first() else {
        return 0.0;
    };
    series
        .rows
        .iter()
        .map(|r| row_residual(r, first.l2_c_sq, params))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Default)]
struct EnergyTerms {
    grad_c_sq: f64,
    noise_sq: f64,
    consumption: f64,
}

fn energy_terms(state: &State, params: &SimParams) -> Result<EnergyTerms> {
    let noise_sq = if params.sigma.is_disabled() {
        0.0
    } else {
        transport_noise_components(&state.c, &params.sigma)?
            .iter()
            .map(|p| norm(p, NormKind::L2).powi(2))
            .sum()
    };
    Ok(EnergyTerms {
        grad_c_sq: norm(&state.c, NormKind::H1Semi).powi(2),
        noise_sq,
        consumption: inner_product(&consumption(&state.n, &state.c, &params.f)?, &state.c)?,
    })
}

/// Accumulates time integrals along a run and assembles rows.
#[derive(Debug, Clone)]
pub struct Monitor {
    c0_linf: f64,
    kf: Option<f64>,
    l2_c0_sq: f64,
    last: EnergyTerms,
    integrals: EnergyTerms,
    clip_total: u64,
}

impl Monitor {
    pub fn new(initial: &State, params: &SimParams) -> Result<Self> {
        let c0_linf = norm(&initial.c, NormKind::Linf);
        Ok(Self {
            c0_linf,
            kf: compute_kf(params, c0_linf).ok(),
            l2_c0_sq: norm(&initial.c, NormKind::L2).powi(2),
            last: energy_terms(initial, params)?,
            integrals: EnergyTerms::default(),
            clip_total: 0,
        })
    }

    pub fn c0_linf(&self) -> f64 {
        self.c0_linf
    }

    /// Trapezoidal update of the integrals across one step ending in `state`.
    pub fn advance(&mut self, state: &State, report: &StepReport, params: &SimParams) -> Result<()> {
        let now = energy_terms(state, params)?;
        let h = 0.5 * report.dt;
        self.integrals.grad_c_sq += h * (self.last.grad_c_sq + now.grad_c_sq);
        self.integrals.noise_sq += h * (self.last.noise_sq + now.noise_sq);
        self.integrals.consumption += h * (self.last.consumption + now.consumption);
        self.last = now;
        self.clip_total += report.clip_count;
        Ok(())
    }

    /// Row for `state`, which must be the state most recently passed to
    /// [`Monitor::advance`] (or the initial state).
    ///
    /// The entropy column is NaN when `K_f` is undefined for the consumption
    /// law or `n` has negative entries.
    pub fn record(&self, state: &State, report: &StepReport, params: &SimParams) -> DiagnosticsRow {
        let entropy = self
            .kf
            .and_then(|kf| entropy_with_kf(state, params, kf, self.c0_linf, params.k_gn).ok())
            .unwrap_or(f64::NAN);
        let l2_c_sq = norm(&state.c, NormKind::L2).powi(2);
        let mut row = DiagnosticsRow {
            step: report.step,
            t: state.t,
            mass_n: total_mass(&state.n),
            min_n: state.n.min(),
            max_c: state.c.max(),
            l2_u: norm(&state.u, NormKind::L2),
            h1_c: (l2_c_sq + self.last.grad_c_sq).sqrt(),
            entropy,
            energy_residual: 0.0,
            clip_count: self.clip_total,
            div_residual: report.projection_residual,
            l2_c_sq,
            int_grad_c_sq: self.integrals.grad_c_sq,
            int_noise_sq: self.integrals.noise_sq,
            int_consumption: self.integrals.consumption,
        };
        row.energy_residual = row_residual(&row, self.l2_c0_sq, params);
        row
    }
}
