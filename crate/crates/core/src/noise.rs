//! Noise fields and replayable Brownian increments.
//!
//! Transport noise acts on oxygen through two vector fields `sigma_k`, which
//! equal the canonical basis of the plane away from the walls and vanish on a
//! ring of `cutoff_width` cells. Velocity noise is a finite sum of
//! divergence-free trigonometric modes with a bounded state-dependent gain.
//!
//! Increments are counter-based: the value for `(seed, replica, step, slot)`
//! is computed directly, never by advancing shared state.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result, SimError};
use crate::grid::{norm, vector_inner_product, Grid, NormKind, ScalarField, VectorField};
use crate::operators::{divergence, helmholtz_project};

/// The pair `(sigma_1, sigma_2)` of transport-noise fields.
#[derive(Debug, Clone)]
pub struct TransportSigma {
    pub sigma1: VectorField,
    pub sigma2: VectorField,
    /// `(sum_k |sigma_k|_inf^2)^(1/2)`.
    pub linf: f64,
    /// `|sigma_k|_inf` for each field.
    pub component_linf: [f64; 2],
    /// `(sum_k |sigma_k|_{W^{1,inf}}^2)^(1/2)`, with the derivative part taken
    /// as the largest one-sided face difference quotient.
    pub w1inf: f64,
    pub cutoff_width: usize,
}

impl TransportSigma {
    /// Both fields identically zero (no transport noise).
    pub fn disabled(grid: Grid) -> Self {
        Self {
            sigma1: VectorField::zeros(grid),
            sigma2: VectorField::zeros(grid),
            linf: 0.0,
            component_linf: [0.0; 2],
            w1inf: 0.0,
            cutoff_width: 0,
        }
    }

    /// Builds a family from arbitrary fields, measuring the norms.
    pub fn from_fields(sigma1: VectorField, sigma2: VectorField, cutoff_width: usize) -> Result<Self> {
        sigma1.check_grid(&sigma2)?;
        let component_linf = [norm(&sigma1, NormKind::Linf), norm(&sigma2, NormKind::Linf)];
        let w1 = [w1inf_single(&sigma1), w1inf_single(&sigma2)];
        Ok(Self {
            linf: component_linf[0].hypot(component_linf[1]),
            component_linf,
            w1inf: w1[0].hypot(w1[1]),
            sigma1,
            sigma2,
            cutoff_width,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.sigma1.grid()
    }

    pub fn is_disabled(&self) -> bool {
        self.linf == 0.0
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::from_fields(self.sigma1.scaled(a), self.sigma2.scaled(a), self.cutoff_width)
    }

    /// Cells on which `q(x, x) = Id` holds for the canonical construction.
    pub fn in_region(&self, i: usize, j: usize) -> bool {
        let g = self.grid();
        let w = self.cutoff_width;
        self.cutoff_width > 0 && i >= w && i + w < g.nx && j >= w && j + w < g.ny
    }

    pub fn region_mask(&self) -> Vec<bool> {
        let g = *self.grid();
        let mut mask = vec![false; g.cells()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                mask[g.idx(i, j)] = self.in_region(i, j);
            }
        }
        mask
    }

    fn ux_in_ring(&self, i: usize, j: usize) -> bool {
        let g = self.grid();
        let w = self.cutoff_width;
        i < w.max(1) || i + w.max(1) > g.nx || j < w || j + w >= g.ny
    }

    fn uy_in_ring(&self, i: usize, j: usize) -> bool {
        let g = self.grid();
        let w = self.cutoff_width;
        i < w || i + w >= g.nx || j < w.max(1) || j + w.max(1) > g.ny
    }
}

fn w1inf_single(s: &VectorField) -> f64 {
    let g = *s.grid();
    let mut d: f64 = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            d = d.max((s.ux(i + 1, j) - s.ux(i, j)).abs() / g.dx);
            if j + 1 < g.ny {
                d = d.max((s.ux(i, j + 1) - s.ux(i, j)).abs() / g.dy);
            }
        }
        if j + 1 < g.ny {
            d = d.max((s.ux(g.nx, j + 1) - s.ux(g.nx, j)).abs() / g.dy);
        }
    }
    for j in 0..g.ny {
        for i in 0..g.nx {
            d = d.max((s.uy(i, j + 1) - s.uy(i, j)).abs() / g.dy);
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx.saturating_sub(1) {
            d = d.max((s.uy(i + 1, j) - s.uy(i, j)).abs() / g.dx);
        }
    }
    norm(s, NormKind::Linf) + d
}

/// Canonical family: `sigma_1 = e_x`, `sigma_2 = e_y` on the faces of the
/// region `cutoff_width` cells away from the walls, zero elsewhere.
pub fn make_transport_sigma(grid: Grid, cutoff_width: usize) -> Result<TransportSigma> {
    let w = cutoff_width;
    if w < 1 || 4 * w >= grid.nx.min(grid.ny) {
        return Err(invalid(
            "cutoff_width",
            format!("must satisfy 1 <= w < min(nx, ny)/4, got {w} on {}x{}", grid.nx, grid.ny),
        ));
    }
    let mut s1 = VectorField::zeros(grid);
    for j in w..grid.ny - w {
        for i in w..=grid.nx - w {
            s1.set_ux(i, j, 1.0);
        }
    }
    let mut s2 = VectorField::zeros(grid);
    for j in w..=grid.ny - w {
        for i in w..grid.nx - w {
            s2.set_uy(i, j, 1.0);
        }
    }
    TransportSigma::from_fields(s1, s2, w)
}

/// Measured structure of a transport-noise family.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Largest `|div sigma_k|` over region cells.
    pub max_interior_divergence: f64,
    /// Nonzero faces inside the boundary ring.
    pub boundary_violations: usize,
    /// Largest entry of `|q(x, x) - Id|` over region cells.
    pub max_q_deviation: f64,
    pub linf: f64,
    pub w1inf: f64,
}

impl AssumptionReport {
    pub fn is_clean(&self, tol: f64) -> bool {
        self.max_interior_divergence <= tol && self.boundary_violations == 0 && self.max_q_deviation <= tol
    }
}

pub fn check_sigma_assumptions(sigma: &TransportSigma) -> AssumptionReport {
    let g = *sigma.grid();
    let mut max_div: f64 = 0.0;
    let mut max_q: f64 = 0.0;
    let fields = [&sigma.sigma1, &sigma.sigma2];
    let divs = fields.map(divergence);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !sigma.in_region(i, j) {
                continue;
            }
            let mut q = [[0.0; 2]; 2];
            for (k, s) in fields.iter().enumerate() {
                max_div = max_div.max(divs[k].at(i, j).abs());
                let a = [0.5 * (s.ux(i, j) + s.ux(i + 1, j)), 0.5 * (s.uy(i, j) + s.uy(i, j + 1))];
                for (r, row) in q.iter_mut().enumerate() {
                    for (c, e) in row.iter_mut().enumerate() {
                        *e += a[r] * a[c];
                    }
                }
            }
            for (r, row) in q.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    let id = if r == c { 1.0 } else { 0.0 };
                    max_q = max_q.max((e - id).abs());
                }
            }
        }
    }
    let mut violations = 0;
    for s in fields {
        for j in 0..g.ny {
            for i in 0..=g.nx {
                if sigma.ux_in_ring(i, j) && s.ux(i, j) != 0.0 {
                    violations += 1;
                }
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                if sigma.uy_in_ring(i, j) && s.uy(i, j) != 0.0 {
                    violations += 1;
                }
            }
        }
    }
    AssumptionReport {
        max_interior_divergence: max_div,
        boundary_violations: violations,
        max_q_deviation: max_q,
        linf: sigma.linf,
        w1inf: sigma.w1inf,
    }
}

/// Drift produced by rewriting the Stratonovich transport noise in Ito form:
/// `(gamma^2 / 2) lap c`.
pub fn ito_correction(c: &ScalarField, gamma: f64) -> ScalarField {
    crate::operators::laplacian_neumann(c).scaled(0.5 * gamma * gamma)
}

/// `phi_k(c) = sigma_k . grad c` for both fields.
///
/// Each face contributes half of `sigma_face * (one-sided difference)` to the
/// two cells it separates, so the result is the centred gradient where
/// `sigma = 1`, annihilates constants, and satisfies
/// `(phi_k(c), c) = -1/2 sum c^2 div sigma_k`.
pub fn transport_noise_components(c: &ScalarField, sigma: &TransportSigma) -> Result<[ScalarField; 2]> {
    let g = *c.grid();
    if !g.same_as(sigma.grid()) {
        return Err(SimError::GridMismatch);
    }
    let one = |s: &VectorField| {
        let mut out = ScalarField::zeros(g);
        let r = out.values_mut();
        for j in 0..g.ny {
            for i in 1..g.nx {
                let f = s.ux(i, j);
                if f != 0.0 {
                    let d = 0.5 * f * (c.at(i, j) - c.at(i - 1, j)) / g.dx;
                    r[g.idx(i - 1, j)] += d;
                    r[g.idx(i, j)] += d;
                }
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let f = s.uy(i, j);
                if f != 0.0 {
                    let d = 0.5 * f * (c.at(i, j) - c.at(i, j - 1)) / g.dy;
                    r[g.idx(i, j - 1)] += d;
                    r[g.idx(i, j)] += d;
                }
            }
        }
        out
    };
    Ok([one(&sigma.sigma1), one(&sigma.sigma2)])
}

/// Explicit transport-noise increment `gamma sum_k phi_k(c) dbeta_k`.
pub fn transport_noise_apply(
    c: &ScalarField,
    sigma: &TransportSigma,
    gamma: f64,
    inc: &NoiseIncrement,
) -> Result<ScalarField> {
    let g = *c.grid();
    if gamma == 0.0 || (inc.dbeta[0] == 0.0 && inc.dbeta[1] == 0.0) || sigma.is_disabled() {
        if !g.same_as(sigma.grid()) {
            return Err(SimError::GridMismatch);
        }
        return Ok(ScalarField::zeros(g));
    }
    let [p1, p2] = transport_noise_components(c, sigma)?;
    Ok(p1.scaled(gamma * inc.dbeta[0]).add_scaled(gamma * inc.dbeta[1], &p2))
}

/// `gamma^2 sum_k |phi_k(c)|^2`, the quadratic variation rate of `|c|^2`.
pub fn transport_noise_intensity(c: &ScalarField, sigma: &TransportSigma, gamma: f64) -> Result<f64> {
    if gamma == 0.0 || sigma.is_disabled() {
        return Ok(0.0);
    }
    let comps = transport_noise_components(c, sigma)?;
    Ok(gamma * gamma * comps.iter().map(|p| norm(p, NormKind::L2).powi(2)).sum::<f64>())
}

/// Velocity-noise operator `g(u, c) dW = eps (1 + gain tanh|u|) sum_k lambda_k psi_k dW_k`.
#[derive(Debug, Clone)]
pub struct VelocityNoiseConfig {
    pub n_modes: usize,
    pub amplitude: f64,
    /// Exponent `a` in `lambda_k = k^(-a)` (`k` starting at 1).
    pub mode_decay: f64,
    pub multiplicative_gain: f64,
    /// Growth bound: `|g(u, c)|_HS <= l_g (1 + |(u, c)|)`.
    pub l_g: f64,
    /// Lipschitz constant of `(u, c) -> g(u, c)` in Hilbert-Schmidt norm.
    pub l_lip: f64,
    weights: Vec<f64>,
    modes: Arc<Vec<VectorField>>,
}

impl VelocityNoiseConfig {
    pub fn new(grid: Grid, n_modes: usize, amplitude: f64, mode_decay: f64, multiplicative_gain: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(invalid("amplitude", "must be finite and >= 0"));
        }
        if !(mode_decay >= 0.0 && mode_decay.is_finite()) {
            return Err(invalid("mode_decay", "must be finite and >= 0"));
        }
        if !(multiplicative_gain >= 0.0 && multiplicative_gain.is_finite()) {
            return Err(invalid("multiplicative_gain", "must be finite and >= 0"));
        }
        let max_modes = (grid.nx - 1) * (grid.ny - 1);
        if n_modes > max_modes {
            return Err(invalid("k_modes", format!("at most {max_modes} modes fit on this grid")));
        }
        let modes = streamfunction_modes(grid, n_modes)?;
        let weights: Vec<f64> = (1..=n_modes).map(|k| (k as f64).powf(-mode_decay)).collect();
        let hs = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok(Self {
            n_modes,
            amplitude,
            mode_decay,
            multiplicative_gain,
            l_g: amplitude * (1.0 + multiplicative_gain) * hs,
            l_lip: amplitude * multiplicative_gain * hs,
            weights,
            modes: Arc::new(modes),
        })
    }

    /// No velocity noise.
    pub fn disabled() -> Self {
        Self {
            n_modes: 0,
            amplitude: 0.0,
            mode_decay: 2.0,
            multiplicative_gain: 0.0,
            l_g: 0.0,
            l_lip: 0.0,
            weights: Vec::new(),
            modes: Arc::new(Vec::new()),
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.amplitude == 0.0 || self.n_modes == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn modes(&self) -> &[VectorField] {
        &self.modes
    }

    /// State-dependent prefactor `eps (1 + gain tanh |u|)`.
    pub fn prefactor(&self, u: &VectorField) -> f64 {
        let gain = if self.multiplicative_gain == 0.0 {
            0.0
        } else {
            self.multiplicative_gain * norm(u, NormKind::L2).tanh()
        };
        self.amplitude * (1.0 + gain)
    }

    /// Hilbert-Schmidt norm of `g(u, c)` by direct summation over the modes.
    pub fn hilbert_schmidt(&self, u: &VectorField) -> f64 {
        let s: f64 = self
            .modes
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| (w * norm(m, NormKind::L2)).powi(2))
            .sum();
        self.prefactor(u) * s.sqrt()
    }
}

/// Unit-norm, discretely divergence-free modes: curls of nodal streamfunctions
/// `sin(p pi x / lx) sin(q pi y / ly)`, ordered by `p^2 + q^2`.
fn streamfunction_modes(grid: Grid, n_modes: usize) -> Result<Vec<VectorField>> {
    let mut pq: Vec<(usize, usize)> = (1..grid.nx)
        .flat_map(|p| (1..grid.ny).map(move |q| (p, q)))
        .collect();
    pq.sort_by_key(|&(p, q)| (p * p + q * q, p));
    pq.truncate(n_modes);
    pq.into_iter()
        .map(|(p, q)| {
            let psi = |i: usize, j: usize| {
                (p as f64 * PI * i as f64 / grid.nx as f64).sin() * (q as f64 * PI * j as f64 / grid.ny as f64).sin()
            };
            let mut v = VectorField::zeros(grid);
            for j in 0..grid.ny {
                for i in 1..grid.nx {
                    v.set_ux(i, j, (psi(i, j + 1) - psi(i, j)) / grid.dy);
                }
            }
            for j in 1..grid.ny {
                for i in 0..grid.nx {
                    v.set_uy(i, j, -(psi(i + 1, j) - psi(i, j)) / grid.dx);
                }
            }
            let v = helmholtz_project(&v)?;
            let n = vector_inner_product(&v, &v)?.sqrt();
            Ok(v.scaled(1.0 / n))
        })
        .collect()
}

/// `g(u, c) dW`. Divergence-free since every mode is.
pub fn g_apply(u: &VectorField, _c: &ScalarField, cfg: &VelocityNoiseConfig, inc: &NoiseIncrement) -> Result<VectorField> {
    let g = *u.grid();
    let mut out = VectorField::zeros(g);
    if cfg.is_disabled() {
        return Ok(out);
    }
    if inc.dw.len() < cfg.n_modes {
        return Err(SimError::Precondition(format!(
            "increment carries {} modes, velocity noise needs {}",
            inc.dw.len(),
            cfg.n_modes
        )));
    }
    let pre = cfg.prefactor(u);
    for ((mode, w), dw) in cfg.modes.iter().zip(&cfg.weights).zip(&inc.dw) {
        if !mode.grid().same_as(&g) {
            return Err(SimError::GridMismatch);
        }
        out = out.add_scaled(pre * w * dw, mode);
    }
    Ok(out)
}

/// One step's Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    /// Increments of the velocity-noise Wiener processes `W^k`.
    pub dw: Vec<f64>,
    /// Increments of the two transport-noise motions `beta^k`.
    pub dbeta: [f64; 2],
    pub dt: f64,
    pub step_index: u64,
    pub replica_index: u64,
    pub seed: u64,
}

impl NoiseIncrement {
    pub fn zero(k_modes: usize, dt: f64) -> Self {
        Self {
            dw: vec![0.0; k_modes],
            dbeta: [0.0; 2],
            dt,
            step_index: 0,
            replica_index: 0,
            seed: 0,
        }
    }
}

/// Slots reserved per step in the counter layout.
const SLOT_BITS: u32 = 20;

fn expand_key(seed: u64) -> [u8; 32] {
    // splitmix64
    let mut s = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        chunk.copy_from_slice(&(z ^ (z >> 31)).to_le_bytes());
    }
    key
}

/// Standard normal via Box-Muller from two 64-bit words.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Increments for `(seed, replica, step)`: slots 0 and 1 are `dbeta`, slots
/// `2..2 + k_modes` are `dw`. Each is `Normal(0, dt)`.
pub fn sample_increments(seed: u64, replica: u64, step: u64, dt: f64, k_modes: usize) -> Result<NoiseIncrement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be finite and > 0"));
    }
    if k_modes + 2 > (1 << SLOT_BITS) {
        return Err(invalid("k_modes", "too many modes for the counter layout"));
    }
    if step >= (1u64 << (64 - SLOT_BITS - 2)) {
        return Err(invalid("step", "step index exceeds the counter range"));
    }
    let mut rng = ChaCha8Rng::from_seed(expand_key(seed));
    rng.set_stream(replica);
    let sd = dt.sqrt();
    let mut draw = |slot: u64| {
        rng.set_word_pos((((step << SLOT_BITS) | slot) as u128) * 4);
        gaussian(&mut rng) * sd
    };
    let dbeta = [draw(0), draw(1)];
    let dw = (0..k_modes as u64).map(|k| draw(2 + k)).collect();
    Ok(NoiseIncrement {
        dw,
        dbeta,
        dt,
        step_index: step,
        replica_index: replica,
        seed,
    })
}

/// Supplies the increment for each step of a run.
pub trait IncrementSource: Sync {
    fn increment(&self, step: u64, dt: f64) -> Result<NoiseIncrement>;
}

/// Fresh counter-based increments at whatever `dt` the stepper asks for.
#[derive(Debug, Clone, Copy)]
pub struct CounterStream {
    pub seed: u64,
    pub replica: u64,
    pub k_modes: usize,
}

impl IncrementSource for CounterStream {
    fn increment(&self, step: u64, dt: f64) -> Result<NoiseIncrement> {
        sample_increments(self.seed, self.replica, step, dt, self.k_modes)
    }
}

/// Coarse increments built by summing `ratio` consecutive increments of a
/// fine stream, so that refinement levels see the same Brownian path.
#[derive(Debug, Clone, Copy)]
pub struct NestedStream {
    pub seed: u64,
    pub replica: u64,
    pub k_modes: usize,
    pub fine_dt: f64,
    pub ratio: u64,
}

impl IncrementSource for NestedStream {
    fn increment(&self, step: u64, dt: f64) -> Result<NoiseIncrement> {
        let expected = self.fine_dt * self.ratio as f64;
        if (dt - expected).abs() > 1e-12 * expected {
            return Err(SimError::Precondition(format!(
                "nested stream built for dt = {expected:e}, asked for {dt:e}"
            )));
        }
        let mut acc = NoiseIncrement::zero(self.k_modes, dt);
        acc.step_index = step;
        acc.replica_index = self.replica;
        acc.seed = self.seed;
        for m in 0..self.ratio {
            let fine = sample_increments(self.seed, self.replica, step * self.ratio + m, self.fine_dt, self.k_modes)?;
            acc.dbeta[0] += fine.dbeta[0];
            acc.dbeta[1] += fine.dbeta[1];
            for (a, b) in acc.dw.iter_mut().zip(&fine.dw) {
                *a += b;
            }
        }
        Ok(acc)
    }
}

/// All increments zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroNoise {
    pub k_modes: usize,
}

impl IncrementSource for ZeroNoise {
    fn increment(&self, step: u64, dt: f64) -> Result<NoiseIncrement> {
        let mut inc = NoiseIncrement::zero(self.k_modes, dt);
        inc.step_index = step;
        Ok(inc)
    }
}
