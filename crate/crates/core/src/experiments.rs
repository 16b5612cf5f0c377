//! Numerical studies built on the stepper: twin runs under a shared noise
//! path, time-step refinement, the Stratonovich-correction check, and
//! Monte-Carlo ensembles.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{DiagnosticsRow, DiagnosticsSeries};
use crate::dynamics::{time_steps, SimParams, Simulator, State, XiMode};
use crate::error::{invalid, Result, SimError};
use crate::grid::{norm, NormKind, ScalarField};
use crate::noise::{CounterStream, IncrementSource, NestedStream, NoiseIncrement};

/// Separation of two runs driven by the same noise path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinReport {
    pub times: Vec<f64>,
    /// `Y(t) = |u1 - u2|^2 + |c1 - c2|_{H^1}^2 + |n1 - n2|^2`.
    pub y: Vec<f64>,
    /// `sup_{t > 0} ln(Y(t) / Y(0)) / t`, the smallest `G` with
    /// `Y(t) <= Y(0) exp(G t)` on the sampled times. `None` when `Y(0) = 0`.
    pub growth_rate: Option<f64>,
}

/// `Y` between two states.
pub fn separation(a: &State, b: &State) -> Result<f64> {
    let du = a.u.add_scaled(-1.0, &b.u);
    let dc = a.c.add_scaled(-1.0, &b.c);
    let dn = a.n.add_scaled(-1.0, &b.n);
    if !a.grid().same_as(b.grid()) {
        return Err(SimError::GridMismatch);
    }
    Ok(norm(&du, NormKind::L2).powi(2)
        + norm(&dc, NormKind::L2).powi(2)
        + norm(&dc, NormKind::H1Semi).powi(2)
        + norm(&dn, NormKind::L2).powi(2))
}

/// Multiplies `n` and `c` by `1 + amplitude cos(pi x / lx) cos(pi y / ly)`.
pub fn perturb(initial: &State, amplitude: f64) -> State {
    let g = *initial.grid();
    let bump = ScalarField::from_fn(g, |x, y| {
        1.0 + amplitude * (std::f64::consts::PI * x / g.lx).cos() * (std::f64::consts::PI * y / g.ly).cos()
    });
    let mul = |f: &ScalarField| {
        let values = f.values().iter().zip(bump.values()).map(|(a, b)| a * b).collect();
        ScalarField::from_values(g, values).expect("finite product")
    };
    State {
        u: initial.u.clone(),
        c: mul(&initial.c),
        n: mul(&initial.n),
        t: initial.t,
    }
}

/// Twin run with both copies driven by `(seed, replica 0)`.
pub fn twin_run(
    params: &SimParams,
    initial: &State,
    seed: u64,
    perturbation_amplitude: f64,
    t_end: f64,
    dt: f64,
) -> Result<TwinReport> {
    twin_run_seeds(params, initial, seed, seed, perturbation_amplitude, t_end, dt)
}

/// Twin run where the perturbed copy may use a different seed.
pub fn twin_run_seeds(
    params: &SimParams,
    initial: &State,
    seed_a: u64,
    seed_b: u64,
    perturbation_amplitude: f64,
    t_end: f64,
    dt: f64,
) -> Result<TwinReport> {
    let sim = Simulator::new(params.clone())?;
    let k = params.k_modes();
    let src_a = CounterStream { seed: seed_a, replica: 0, k_modes: k };
    let src_b = CounterStream { seed: seed_b, replica: 0, k_modes: k };
    let mut a = initial.clone();
    let mut b = perturb(initial, perturbation_amplitude);
    let y0 = separation(&a, &b)?;
    let mut times = vec![initial.t];
    let mut y = vec![y0];
    let steps = time_steps(initial.t, t_end, dt)?;
    let total = steps.len();
    for (k, h) in steps.into_iter().enumerate() {
        let step = k as u64;
        let fail = |e: SimError| SimError::StepFailed { step, source: Box::new(e) };
        let (na, _) = sim.step(&a, &src_a.increment(step, h).map_err(fail)?, h).map_err(fail)?;
        let (nb, _) = sim.step(&b, &src_b.increment(step, h).map_err(fail)?, h).map_err(fail)?;
        a = na;
        b = nb;
        let t = if k + 1 == total { t_end } else { initial.t + (k + 1) as f64 * dt };
        a.t = t;
        b.t = t;
        times.push(t);
        y.push(separation(&a, &b)?);
    }
    let growth_rate = (y0 > 0.0).then(|| {
        times
            .iter()
            .zip(&y)
            .skip(1)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&t, &v)| (v / y0).ln() / (t - initial.t))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(TwinReport { times, y, growth_rate })
}

/// Final-state errors of coarser time steps against the finest one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Time steps of the compared levels, coarsest first (finest excluded).
    pub levels: Vec<f64>,
    pub finest: f64,
    /// `sqrt(|du|^2 + |dc|^2 + |dn|^2)` against the finest level.
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln dt`.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn state_distance(a: &State, b: &State) -> f64 {
    let du = a.u.add_scaled(-1.0, &b.u);
    let dc = a.c.add_scaled(-1.0, &b.c);
    let dn = a.n.add_scaled(-1.0, &b.n);
    (norm(&du, NormKind::L2).powi(2) + norm(&dc, NormKind::L2).powi(2) + norm(&dn, NormKind::L2).powi(2)).sqrt()
}

/// Strong self-convergence under time-step halving. All levels see the
/// Brownian path of the finest level (coarse increments are sums of fine
/// ones). Levels run in parallel.
pub fn convergence_dt(
    params: &SimParams,
    initial: &State,
    seed: u64,
    dt_levels: &[f64],
    t_end: f64,
) -> Result<ConvergenceReport> {
    if dt_levels.len() < 3 {
        return Err(invalid("dt_levels", format!("need at least 3 levels, got {}", dt_levels.len())));
    }
    let mut levels = dt_levels.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    for w in levels.windows(2) {
        if (w[1] * 2.0 - w[0]).abs() > 1e-12 * w[0] {
            return Err(invalid("dt_levels", format!("levels must be nested by halving, got {} then {}", w[0], w[1])));
        }
    }
    let span = t_end - initial.t;
    let coarse_steps = span / levels[0];
    if !(span > 0.0) || (coarse_steps - coarse_steps.round()).abs() > 1e-9 * coarse_steps.max(1.0) {
        return Err(invalid("t_end", "the interval must be a whole number of coarsest steps"));
    }
    let finest = *levels.last().expect("non-empty");
    let sim = Simulator::new(params.clone())?;
    let finals: Vec<Result<State>> = levels
        .par_iter()
        .map(|&dt| {
            let source = NestedStream {
                seed,
                replica: 0,
                k_modes: params.k_modes(),
                fine_dt: finest,
                ratio: (dt / finest).round() as u64,
            };
            sim.drive(initial, t_end, dt, &source, |_, _, _, _| Ok(()))
        })
        .collect();
    let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = finals.last().expect("non-empty");
    let errors: Vec<f64> = finals[..finals.len() - 1]
        .iter()
        .map(|s| state_distance(s, reference))
        .collect();
    let compared = levels[..levels.len() - 1].to_vec();
    Ok(ConvergenceReport {
        slope: loglog_slope(&compared, &errors),
        levels: compared,
        finest,
        errors,
    })
}

/// Drift of the interior `|c|^2` over one step for one time step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StratonovichLevel {
    pub dt: f64,
    /// With the correction drift (`xi` from the parameters).
    pub drift_corrected: f64,
    /// Without it (`xi = mu`).
    pub drift_uncorrected: f64,
}

impl StratonovichLevel {
    pub fn gap(&self) -> f64 {
        self.drift_uncorrected - self.drift_corrected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratonovichReport {
    /// Coarsest first.
    pub levels: Vec<StratonovichLevel>,
    /// `gamma^2 |grad c0|^2`, the predicted gap.
    pub expected_gap: f64,
    /// `drift_corrected(dt / 2) / drift_corrected(dt)` for consecutive levels.
    pub halving_ratios: Vec<f64>,
    /// `|gap - expected_gap| / expected_gap` at the finest level (0 when `gamma = 0`).
    pub gap_relative_error: f64,
}

fn region_l2_sq(c: &ScalarField, mask: &[bool]) -> f64 {
    c.values()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        * c.grid().cell_area()
}

/// Expected interior `|c|^2` after one step from `initial`. With `u = 0`,
/// `n = 0` and no velocity noise the step is affine in `dbeta`, so the
/// three-point rule `{0, +-sqrt(dt) e_k}` integrates the Gaussian exactly.
fn expected_region_energy(sim: &Simulator, initial: &State, dt: f64, mask: &[bool]) -> Result<f64> {
    let k = sim.params().k_modes();
    let energy = |dbeta: [f64; 2]| -> Result<f64> {
        let mut inc = NoiseIncrement::zero(k, dt);
        inc.dbeta = dbeta;
        Ok(region_l2_sq(&sim.step(initial, &inc, dt)?.0.c, mask))
    };
    let q0 = energy([0.0, 0.0])?;
    let s = dt.sqrt();
    let mut e = q0;
    for axis in 0..2 {
        let mut plus = [0.0; 2];
        plus[axis] = s;
        let mut minus = [0.0; 2];
        minus[axis] = -s;
        e += 0.5 * (energy(plus)? + energy(minus)?) - q0;
    }
    Ok(e)
}

/// Compares the corrected and uncorrected Ito forms on pure transport noise.
pub fn stratonovich_consistency(params: &SimParams, initial: &State, dt_levels: &[f64]) -> Result<StratonovichReport> {
    if norm(&initial.u, NormKind::Linf) != 0.0 || norm(&initial.n, NormKind::Linf) != 0.0 {
        return Err(SimError::Precondition("the consistency test needs u = 0 and n = 0".into()));
    }
    if !params.vnoise.is_disabled() {
        return Err(SimError::Precondition("the consistency test needs zero velocity noise".into()));
    }
    if dt_levels.is_empty() {
        return Err(invalid("dt_levels", "need at least one level"));
    }
    let mut dts = dt_levels.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    let corrected = Simulator::new(params.clone())?;
    let naive = Simulator::new(params.clone().with_xi_mode(XiMode::Uncorrected)?)?;
    let mask = params.sigma.region_mask();
    let e0 = region_l2_sq(&initial.c, &mask);
    let levels = dts
        .iter()
        .map(|&dt| {
            Ok(StratonovichLevel {
                dt,
                drift_corrected: (expected_region_energy(&corrected, initial, dt, &mask)? - e0) / dt,
                drift_uncorrected: (expected_region_energy(&naive, initial, dt, &mask)? - e0) / dt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let expected_gap = params.gamma * params.gamma * norm(&initial.c, NormKind::H1Semi).powi(2);
    let halving_ratios = levels.windows(2).map(|w| w[1].drift_corrected / w[0].drift_corrected).collect();
    let finest = levels.last().expect("non-empty");
    let gap_relative_error = if expected_gap > 0.0 {
        (finest.gap() - expected_gap).abs() / expected_gap
    } else {
        0.0
    };
    Ok(StratonovichReport {
        levels,
        expected_gap,
        halving_ratios,
        gap_relative_error,
    })
}

/// Column of [`DiagnosticsRow`] that an ensemble aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Column {
    MassN,
    MinN,
    MaxC,
    L2U,
    H1C,
    Entropy,
    EnergyResidual,
    ClipCount,
    DivResidual,
}

impl Column {
    pub const ALL: [Column; 9] = [
        Column::MassN,
        Column::MinN,
        Column::MaxC,
        Column::L2U,
        Column::H1C,
        Column::Entropy,
        Column::EnergyResidual,
        Column::ClipCount,
        Column::DivResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::MassN => "mass_n",
            Column::MinN => "min_n",
            Column::MaxC => "max_c",
            Column::L2U => "l2_u",
            Column::H1C => "h1_c",
            Column::Entropy => "entropy",
            Column::EnergyResidual => "energy_residual",
            Column::ClipCount => "clip_count",
            Column::DivResidual => "div_residual",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn value(self, row: &DiagnosticsRow) -> f64 {
        match self {
            Column::MassN => row.mass_n,
            Column::MinN => row.min_n,
            Column::MaxC => row.max_c,
            Column::L2U => row.l2_u,
            Column::H1C => row.h1_c,
            Column::Entropy => row.entropy,
            Column::EnergyResidual => row.energy_residual,
            Column::ClipCount => row.clip_count as f64,
            Column::DivResidual => row.div_residual,
        }
    }
}

/// Independent replicas of one configuration.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub n_replicas: u64,
    /// Replica `r` uses the counter stream `(base_seed, r)`.
    pub base_seed: u64,
    pub params: SimParams,
    pub initial: State,
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub columns: Vec<Column>,
}

/// Per-sample statistics of one column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub column: Column,
    pub mean: Vec<f64>,
    /// Unbiased sample variance (0 for a single replica).
    pub variance: Vec<f64>,
    pub max: Vec<f64>,
    /// Normal-approximation 95% half-width `1.96 sqrt(variance / n)`.
    pub ci95: Vec<f64>,
    /// `sup_t` of the column for each replica.
    pub replica_sup: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_replicas: u64,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub columns: Vec<ColumnStats>,
}

/// Runs all replicas (in parallel) and folds them in replica order.
pub fn ensemble(spec: &EnsembleSpec) -> Result<EnsembleStats> {
    if spec.n_replicas == 0 {
        return Err(invalid("n_replicas", "must be >= 1"));
    }
    let sim = Simulator::new(spec.params.clone())?;
    let runs: Vec<Result<DiagnosticsSeries>> = (0..spec.n_replicas)
        .into_par_iter()
        .map(|r| {
            let source = CounterStream {
                seed: spec.base_seed,
                replica: r,
                k_modes: spec.params.k_modes(),
            };
            sim.run_with(&spec.initial, spec.t_end, spec.dt, &source, spec.sample_every)
                .map(|(_, series)| series)
                .map_err(|e| SimError::ReplicaFailed {
                    replica: r,
                    seed: spec.base_seed,
                    source: Box::new(e),
                })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let first = &runs[0];
    let samples = first.len();
    if runs.iter().any(|s| s.len() != samples) {
        return Err(SimError::Precondition("replicas produced different sample counts".into()));
    }
    let n = spec.n_replicas as f64;
    let columns = spec
        .columns
        .iter()
        .map(|&column| {
            let mut mean = vec![0.0; samples];
            let mut m2 = vec![0.0; samples];
            let mut max = vec![f64::NEG_INFINITY; samples];
            for (r, series) in runs.iter().enumerate() {
                let count = (r + 1) as f64;
                for (k, row) in series.rows.iter().enumerate() {
                    let x = column.value(row);
                    let d = x - mean[k];
                    mean[k] += d / count;
                    m2[k] += d * (x - mean[k]);
                    max[k] = max[k].max(x);
                }
            }
            let variance: Vec<f64> = m2.iter().map(|v| if n > 1.0 { v / (n - 1.0) } else { 0.0 }).collect();
            let ci95 = variance.iter().map(|v| 1.96 * (v / n).sqrt()).collect();
            let replica_sup = runs
                .iter()
                .map(|s| s.rows.iter().map(|r| column.value(r)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            ColumnStats {
                column,
                mean,
                variance,
                max,
                ci95,
                replica_sup,
            }
        })
        .collect();
    Ok(EnsembleStats {
        n_replicas: spec.n_replicas,
        steps: first.rows.iter().map(|r| r.step).collect(),
        times: first.rows.iter().map(|r| r.t).collect(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn column_names_roundtrip() {
        for c in Column::ALL {
            assert_eq!(Column::from_name(c.name()), Some(c));
        }
        assert_eq!(Column::from_name("bogus"), None);
    }
}
