//! Semi-implicit Euler-Maruyama time stepping of the Ito form.
//!
//! One step updates `n`, then `c` (using the new `n`), then `u` (using the
//! new `n` in the buoyancy). Transport, coupling and noise are explicit;
//! diffusion is implicit and solved exactly in the grid eigenbases. The
//! Stratonovich correction `(gamma^2/2) lap c` is folded into the implicit
//! oxygen diffusivity `xi`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsSeries, Monitor};
use crate::error::{invalid, Result, SimError};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::noise::{g_apply, transport_noise_apply, CounterStream, IncrementSource, NoiseIncrement, TransportSigma, VelocityNoiseConfig};
use crate::operators::{buoyancy, chemotaxis_div, convect_velocity, scalar_advect, AdvectionMode, PoissonMethod, Projector};
use crate::spectral::SpectralSolvers;

/// Oxygen consumption rate `f(c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConsumptionLaw {
    /// `f(c) = rate c`.
    Linear { rate: f64 },
    /// `f(c) = vmax c / (km + c)`.
    MichaelisMenten { vmax: f64, km: f64 },
    /// `f(c) = rate c^exponent`, `exponent >= 1`.
    Power { rate: f64, exponent: f64 },
}

impl ConsumptionLaw {
    pub fn eval(&self, c: f64) -> f64 {
        match *self {
            Self::Linear { rate } => rate * c,
            Self::MichaelisMenten { vmax, km } => vmax * c / (km + c),
            Self::Power { rate, exponent } => rate * c.max(0.0).powf(exponent),
        }
    }

    pub fn deriv(&self, c: f64) -> f64 {
        match *self {
            Self::Linear { rate } => rate,
            Self::MichaelisMenten { vmax, km } => vmax * km / ((km + c) * (km + c)),
            Self::Power { rate, exponent } => rate * exponent * c.max(0.0).powf(exponent - 1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::MichaelisMenten { .. } => "michaelis_menten",
            Self::Power { .. } => "power",
        }
    }

    /// Checks `f(0) = 0` and `f, f' > 0` on 1024 samples of `(0, c_max]`.
    pub fn validate(&self, c_max: f64) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be finite and > 0"))
            }
        };
        match *self {
            Self::Linear { rate } => positive("rate", rate)?,
            Self::MichaelisMenten { vmax, km } => {
                positive("vmax", vmax)?;
                positive("km", km)?;
            }
            Self::Power { rate, exponent } => {
                positive("rate", rate)?;
                if !(exponent >= 1.0 && exponent.is_finite()) {
                    return Err(invalid("exponent", "must be finite and >= 1"));
                }
            }
        }
        if self.eval(0.0) != 0.0 {
            return Err(invalid("f", "f(0) must vanish"));
        }
        if c_max > 0.0 {
            for k in 1..=1024 {
                let c = c_max * k as f64 / 1024.0;
                if !(self.eval(c) > 0.0 && self.deriv(c) > 0.0) {
                    return Err(invalid("f", format!("f and f' must be positive on (0, {c_max}], fails at c = {c}")));
                }
            }
        }
        Ok(())
    }
}

/// Which effective diffusivity multiplies the oxygen Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XiMode {
    /// `xi = mu + gamma^2/2`: Ito correction added to the oxygen diffusivity.
    Corrected,
    /// `xi = eta + gamma^2/2`: the correction added to the cell diffusivity.
    CellDiffusivity,
    /// `xi = mu`: Ito form without the correction drift.
    Uncorrected,
}

impl XiMode {
    pub fn resolve(self, eta: f64, mu: f64, gamma: f64) -> f64 {
        match self {
            Self::Corrected => mu + 0.5 * gamma * gamma,
            Self::CellDiffusivity => eta + 0.5 * gamma * gamma,
            Self::Uncorrected => mu,
        }
    }
}

/// Physical coefficients of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub eta: f64,
    pub mu: f64,
    pub delta: f64,
    pub chi: f64,
    pub gamma: f64,
}

/// Everything the stepper needs besides the state.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub eta: f64,
    pub mu: f64,
    pub delta: f64,
    pub chi: f64,
    pub gamma: f64,
    pub xi_mode: XiMode,
    /// Effective oxygen diffusivity; kept equal to `xi_mode.resolve(..)`.
    pub xi: f64,
    /// Potential `Phi` at cell centres.
    pub phi: ScalarField,
    pub f: ConsumptionLaw,
    pub vnoise: VelocityNoiseConfig,
    pub sigma: TransportSigma,
    /// Scheme for `n` and `c` transport.
    pub scalar_advection: AdvectionMode,
    /// Scheme for momentum convection.
    pub velocity_advection: AdvectionMode,
    /// Fraction of the advective limit accepted by [`stable_dt`].
    pub cfl_safety: f64,
    /// Upper bound returned by [`stable_dt`].
    pub dt_max: f64,
    /// Gagliardo-Nirenberg constant in the velocity weight of the entropy.
    pub k_gn: f64,
}

impl SimParams {
    /// Parameters with `Phi = 0`, `f(c) = c`, no noise fields, upwind scalar
    /// transport and skew-symmetric momentum convection.
    pub fn new(grid: Grid, coefficients: Coefficients, xi_mode: XiMode) -> Result<Self> {
        let Coefficients { eta, mu, delta, chi, gamma } = coefficients;
        let p = Self {
            eta,
            mu,
            delta,
            chi,
            gamma,
            xi_mode,
            xi: xi_mode.resolve(eta, mu, gamma),
            phi: ScalarField::zeros(grid),
            f: ConsumptionLaw::Linear { rate: 1.0 },
            vnoise: VelocityNoiseConfig::disabled(),
            sigma: TransportSigma::disabled(grid),
            scalar_advection: AdvectionMode::UpwindFlux,
            velocity_advection: AdvectionMode::CenteredSkew,
            cfl_safety: 0.5,
            dt_max: 1e-2,
            k_gn: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            eta: self.eta,
            mu: self.mu,
            delta: self.delta,
            chi: self.chi,
            gamma: self.gamma,
        }
    }

    pub fn with_xi_mode(mut self, mode: XiMode) -> Result<Self> {
        self.xi_mode = mode;
        self.xi = mode.resolve(self.eta, self.mu, self.gamma);
        self.validate()?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.xi = self.xi_mode.resolve(self.eta, self.mu, gamma);
        self.validate()?;
        Ok(self)
    }

    pub fn with_phi(mut self, phi: ScalarField) -> Result<Self> {
        if !phi.grid().same_as(self.grid()) {
            return Err(SimError::GridMismatch);
        }
        self.phi = phi;
        Ok(self)
    }

    pub fn with_consumption(mut self, f: ConsumptionLaw) -> Self {
        self.f = f;
        self
    }

    pub fn with_sigma(mut self, sigma: TransportSigma) -> Result<Self> {
        if !sigma.grid().same_as(self.grid()) {
            return Err(SimError::GridMismatch);
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_velocity_noise(mut self, vnoise: VelocityNoiseConfig) -> Result<Self> {
        if let Some(m) = vnoise.modes().first() {
            if !m.grid().same_as(self.grid()) {
                return Err(SimError::GridMismatch);
            }
        }
        self.vnoise = vnoise;
        Ok(self)
    }

    pub fn with_advection(mut self, scalar: AdvectionMode, velocity: AdvectionMode) -> Self {
        self.scalar_advection = scalar;
        self.velocity_advection = velocity;
        self
    }

    pub fn with_cfl(mut self, safety: f64, dt_max: f64) -> Result<Self> {
        self.cfl_safety = safety;
        self.dt_max = dt_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_k_gn(mut self, k_gn: f64) -> Result<Self> {
        self.k_gn = k_gn;
        self.validate()?;
        Ok(self)
    }

    /// Number of Wiener increments the velocity noise consumes per step.
    pub fn k_modes(&self) -> usize {
        self.vnoise.n_modes
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        positive("eta", self.eta)?;
        positive("mu", self.mu)?;
        positive("delta", self.delta)?;
        nonneg("chi", self.chi)?;
        nonneg("gamma", self.gamma)?;
        positive("k_gn", self.k_gn)?;
        positive("dt_max", self.dt_max)?;
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(invalid("cfl_safety", format!("must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if self.xi < self.mu {
            return Err(invalid(
                "xi",
                format!("effective diffusivity {} is below mu = {} (xi_mode {:?})", self.xi, self.mu, self.xi_mode),
            ));
        }
        if !self.phi.is_finite() {
            return Err(SimError::NonFinite("phi"));
        }
        Ok(())
    }
}

/// The unknowns `(u, c, n)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: VectorField,
    pub c: ScalarField,
    pub n: ScalarField,
    pub t: f64,
}

impl State {
    pub fn new(u: VectorField, c: ScalarField, n: ScalarField, t: f64) -> Result<Self> {
        let s = Self { u, c, n, t };
        s.check()?;
        Ok(s)
    }

    pub fn grid(&self) -> &Grid {
        self.c.grid()
    }

    pub fn check(&self) -> Result<()> {
        let g = self.c.grid();
        if !g.same_as(self.n.grid()) || !g.same_as(self.u.grid()) {
            return Err(SimError::GridMismatch);
        }
        if !self.c.is_finite() {
            return Err(SimError::NonFinite("c"));
        }
        if !self.n.is_finite() {
            return Err(SimError::NonFinite("n"));
        }
        if !self.u.is_finite() {
            return Err(SimError::NonFinite("u"));
        }
        if !self.t.is_finite() {
            return Err(SimError::NonFinite("t"));
        }
        if self.u.wall_violations() > 0 {
            return Err(SimError::Precondition("velocity has nonzero wall-normal faces".into()));
        }
        Ok(())
    }
}

/// Bookkeeping for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Index of the step that produced the state (0 for the initial state).
    pub step: u64,
    pub dt: f64,
    /// Cells where the consumption term had to be limited to keep `c >= 0`.
    pub clip_count: u64,
    /// `max |div u|` after projection.
    pub projection_residual: f64,
    /// Poisson iterations spent in the projection (0 for the direct solver).
    pub solver_iterations: usize,
    /// Advective time-step limit of the state the step started from.
    pub cfl_limit: f64,
}

/// Time stepper with cached solver plans.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: SimParams,
    grid: Grid,
    solvers: Arc<SpectralSolvers>,
    projector: Projector,
}

impl Simulator {
    pub fn new(params: SimParams) -> Result<Self> {
        params.validate()?;
        let grid = *params.grid();
        let solvers = Arc::new(SpectralSolvers::new(&grid));
        let projector = Projector::with_solvers(grid, solvers.clone());
        Ok(Self {
            params,
            grid,
            solvers,
            projector,
        })
    }

    pub fn with_poisson_method(mut self, method: PoissonMethod) -> Self {
        self.projector = self.projector.with_method(method);
        self
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if !state.grid().same_as(&self.grid) {
            return Err(SimError::GridMismatch);
        }
        state.check()
    }

    /// `sum over directions of (max |u_d| + chi max |d_d c|) / h_d`; the
    /// explicit update of `n` is monotone while `dt * rate <= 1`.
    pub fn advective_rate(&self, state: &State) -> f64 {
        let g = &self.grid;
        let (ux, uy) = state.u.max_abs_components();
        let (mut gx, mut gy) = (0.0_f64, 0.0_f64);
        if self.params.chi > 0.0 {
            let c = &state.c;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if i > 0 {
                        gx = gx.max((c.at(i, j) - c.at(i - 1, j)).abs() / g.dx);
                    }
                    if j > 0 {
                        gy = gy.max((c.at(i, j) - c.at(i, j - 1)).abs() / g.dy);
                    }
                }
            }
        }
        let chi = self.params.chi;
        (ux + chi * gx) / g.dx + (uy + chi * gy) / g.dy
    }

    /// Largest `dt` accepted by [`Simulator::step`] (infinite when nothing moves).
    pub fn advective_limit(&self, state: &State) -> f64 {
        let rate = self.advective_rate(state);
        if rate > 0.0 {
            self.params.cfl_safety / rate
        } else {
            f64::INFINITY
        }
    }

    /// `min(dt_max, safety / rate)`.
    pub fn stable_dt(&self, state: &State) -> f64 {
        self.advective_limit(state).min(self.params.dt_max)
    }

    fn implicit_scalar(&self, field: ScalarField, a: f64, name: &'static str) -> Result<ScalarField> {
        let mut v = field.into_values();
        self.solvers.scalar.solve_shifted(&mut v, a);
        ScalarField::from_values(self.grid, v).map_err(|_| SimError::NonFinite(name))
    }

    fn implicit_velocity(&self, v: &VectorField, a: f64) -> Result<VectorField> {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut bx = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 1..nx {
                bx.push(v.ux(i, j));
            }
        }
        let mut by = Vec::with_capacity(nx * (ny - 1));
        for j in 1..ny {
            for i in 0..nx {
                by.push(v.uy(i, j));
            }
        }
        self.solvers.ux.solve_shifted(&mut bx, a);
        self.solvers.uy.solve_shifted(&mut by, a);
        let mut out = VectorField::zeros(g);
        for j in 0..ny {
            for i in 1..nx {
                out.set_ux(i, j, bx[j * (nx - 1) + i - 1]);
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out.set_uy(i, j, by[(j - 1) * nx + i]);
            }
        }
        if !out.is_finite() {
            return Err(SimError::NonFinite("u"));
        }
        Ok(out)
    }

    /// Advances `state` by `dt` with the given increments.
    pub fn step(&self, state: &State, inc: &NoiseIncrement, dt: f64) -> Result<(State, StepReport)> {
        self.check_state(state)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        let p = &self.params;
        let limit = self.advective_limit(state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(SimError::CflViolation { dt, limit });
        }
        let g = self.grid;

        // Cells: explicit transport and chemotaxis, implicit diffusion.
        let n_star = state
            .n
            .add_scaled(-dt, &scalar_advect(&state.u, &state.n, p.scalar_advection)?)
            .add_scaled(-dt, &chemotaxis_div(&state.n, &state.c, p.chi)?);
        let mut n_new = self.implicit_scalar(n_star, dt * p.delta, "n")?;
        // The transform preserves the mean up to round-off; restore it exactly.
        let shift = state.n.mean() - n_new.mean();
        n_new.values_mut().iter_mut().for_each(|v| *v += shift);

        // Oxygen: explicit transport, noise and consumption with the new n.
        let mut c_star = state
            .c
            .add_scaled(-dt, &scalar_advect(&state.u, &state.c, p.scalar_advection)?)
            .add_scaled(1.0, &transport_noise_apply(&state.c, &p.sigma, p.gamma, inc)?);
        let mut clip_count = 0;
        for ((cs, &c_old), &n) in c_star
            .values_mut()
            .iter_mut()
            .zip(state.c.values())
            .zip(n_new.values())
        {
            let demand = dt * n * p.f.eval(c_old);
            let available = cs.max(0.0);
            if demand > available {
                clip_count += 1;
                *cs -= available;
            } else {
                *cs -= demand;
            }
        }
        let c_new = self.implicit_scalar(c_star, dt * p.xi, "c")?;

        // Velocity: explicit convection, buoyancy and noise, implicit viscosity, projection.
        let u_star = state
            .u
            .add_scaled(-dt, &convect_velocity(&state.u, &state.u, p.velocity_advection)?)
            .add_scaled(dt, &buoyancy(&n_new, &p.phi)?)
            .add_scaled(1.0, &g_apply(&state.u, &state.c, &p.vnoise, inc)?);
        let u_visc = self.implicit_velocity(&u_star, dt * p.eta)?;
        let projection = self.projector.project(&u_visc)?;

        debug_assert!(g.same_as(projection.field.grid()));
        let next = State {
            u: projection.field,
            c: c_new,
            n: n_new,
            t: state.t + dt,
        };
        let report = StepReport {
            step: inc.step_index + 1,
            dt,
            clip_count,
            projection_residual: projection.max_divergence,
            solver_iterations: projection.iterations,
            cfl_limit: limit,
        };
        Ok((next, report))
    }

    /// Fixed-`dt` run to `t_end` with counter-based noise for `(seed, replica 0)`.
    pub fn run(&self, initial: &State, t_end: f64, dt: f64, seed: u64, sample_every: usize) -> Result<(State, DiagnosticsSeries)> {
        let source = CounterStream {
            seed,
            replica: 0,
            k_modes: self.params.k_modes(),
        };
        self.run_with(initial, t_end, dt, &source, sample_every)
    }

    /// Fixed-`dt` run drawing increments from `source`. Rows are recorded at
    /// the initial state, every `sample_every` steps, and at `t_end`.
    pub fn run_with(
        &self,
        initial: &State,
        t_end: f64,
        dt: f64,
        source: &dyn IncrementSource,
        sample_every: usize,
    ) -> Result<(State, DiagnosticsSeries)> {
        if sample_every == 0 {
            return Err(invalid("sample_every", "must be >= 1"));
        }
        let mut monitor = Monitor::new(initial, &self.params)?;
        let mut series = DiagnosticsSeries::default();
        let initial_report = StepReport {
            cfl_limit: self.advective_limit(initial),
            ..StepReport::default()
        };
        series.rows.push(monitor.record(initial, &initial_report, &self.params));
        let state = self.drive(initial, t_end, dt, source, |k, last, s, rep| {
            monitor.advance(s, rep, &self.params)?;
            if (k + 1) % sample_every as u64 == 0 || last {
                series.rows.push(monitor.record(s, rep, &self.params));
            }
            Ok(())
        })?;
        Ok((state, series))
    }

    /// Steps from `initial` to `t_end`, calling `observe(step_index, is_last,
    /// state, report)` after every step.
    pub fn drive(
        &self,
        initial: &State,
        t_end: f64,
        dt: f64,
        source: &dyn IncrementSource,
        mut observe: impl FnMut(u64, bool, &State, &StepReport) -> Result<()>,
    ) -> Result<State> {
        let steps = time_steps(initial.t, t_end, dt)?;
        let total = steps.len();
        let mut state = initial.clone();
        for (k, h) in steps.into_iter().enumerate() {
            let k = k as u64;
            let fail = |e: SimError| SimError::StepFailed {
                step: k,
                source: Box::new(e),
            };
            let inc = source.increment(k, h).map_err(fail)?;
            let (mut next, report) = self.step(&state, &inc, h).map_err(fail)?;
            let last = k + 1 == total as u64;
            if last {
                next.t = t_end;
            } else {
                next.t = initial.t + (k + 1) as f64 * dt;
            }
            observe(k, last, &next, &report).map_err(fail)?;
            state = next;
        }
        Ok(state)
    }
}

/// Step sizes for a fixed-`dt` run from `t0` to `t_end`: full steps followed
/// by one shorter step if `dt` does not divide the interval.
pub fn time_steps(t0: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    if !(t_end >= t0) || !t_end.is_finite() {
        return Err(invalid("t_end", format!("must be finite and >= t0 = {t0}, got {t_end}")));
    }
    let span = t_end - t0;
    let ratio = span / dt;
    let mut full = ratio.round();
    if (ratio - full).abs() > 1e-9 * ratio.max(1.0) {
        full = ratio.floor();
    }
    let full = full as usize;
    let mut steps = vec![dt; full];
    let rest = span - full as f64 * dt;
    if rest > 1e-9 * dt {
        steps.push(rest);
    }
    Ok(steps)
}

/// One step with a freshly built [`Simulator`].
pub fn step(state: &State, params: &SimParams, inc: &NoiseIncrement, dt: f64) -> Result<(State, StepReport)> {
    Simulator::new(params.clone())?.step(state, inc, dt)
}

/// Fixed-`dt` run; see [`Simulator::run`].
pub fn run(
    initial: &State,
    params: &SimParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    sample_every: usize,
) -> Result<(State, DiagnosticsSeries)> {
    Simulator::new(params.clone())?.run(initial, t_end, dt, seed, sample_every)
}

/// See [`Simulator::stable_dt`].
pub fn stable_dt(state: &State, params: &SimParams) -> Result<f64> {
    Ok(Simulator::new(params.clone())?.stable_dt(state))
}
