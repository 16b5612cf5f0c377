//! Command implementations. Each writes its human-readable output to `out`
//! and returns the process status.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use stochem_core::diagnostics::{check_conditions, estimate_k0, total_mass, DiagnosticsRow, GateReport, Monitor};
use stochem_core::dynamics::{Simulator, StepReport};
use stochem_core::experiments::{
    convergence_dt, ensemble, stratonovich_consistency, twin_run_seeds, EnsembleSpec,
};
use stochem_core::grid::{norm, NormKind};
use stochem_core::noise::CounterStream;

use crate::config::{parse_config, OutputFormat, RunConfig};
use crate::output;
use crate::snapshot::{read_snapshot, write_snapshot};

/// Largest tolerated relative change of the total cell mass.
pub const MASS_DRIFT_TOL: f64 = 1e-12;
/// Relative slack on `max c <= |c0|_inf`.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The parameters fail the admissibility gate.
    Inadmissible,
    /// A run finished but broke a conservation or bound invariant.
    InvariantViolated,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Inadmissible => 2,
            Status::InvariantViolated => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Twin,
    Convergence,
    Stratonovich,
    Ensemble,
}

/// Command-line values that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        cfg.time.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output.directory = out.clone();
    }
    Ok(cfg)
}

/// Gate evaluation; `Err` carries the reason when `K_f` is undefined.
pub fn evaluate_gate(cfg: &RunConfig) -> Result<GateReport, String> {
    let c0 = norm(&cfg.initial.c, NormKind::Linf);
    let k0 = estimate_k0(&cfg.grid).map_err(|e| e.to_string())?;
    check_conditions(&cfg.params, c0, k0).map_err(|e| e.to_string())
}

pub fn cmd_check_params(cfg: &RunConfig, out: &mut dyn Write) -> Result<Status> {
    match evaluate_gate(cfg) {
        Ok(report) => {
            writeln!(out, "{report}")?;
            Ok(if report.all_ok() { Status::Ok } else { Status::Inadmissible })
        }
        Err(reason) => {
            writeln!(out, "gate cannot be evaluated: {reason}")?;
            Ok(Status::Inadmissible)
        }
    }
}

/// Prints the gate and reports whether the command may proceed.
fn admit(cfg: &RunConfig, allow_inadmissible: bool, out: &mut dyn Write) -> Result<bool> {
    let status = cmd_check_params(cfg, out)?;
    if status == Status::Ok {
        return Ok(true);
    }
    if allow_inadmissible {
        writeln!(out, "warning: parameters are inadmissible; continuing as requested")?;
        return Ok(true);
    }
    writeln!(out, "refusing to run inadmissible parameters (pass --allow-inadmissible to override)")?;
    Ok(false)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_run(cfg: &RunConfig, allow_inadmissible: bool, out: &mut dyn Write) -> Result<Status> {
    if !admit(cfg, allow_inadmissible, out)? {
        return Ok(Status::Inadmissible);
    }
    let dir = &cfg.output.directory;
    prepare_dir(dir)?;
    let params = &cfg.params;
    let sim = Simulator::new(params.clone())?;
    let source = CounterStream { seed: cfg.time.seed, replica: 0, k_modes: params.k_modes() };
    let mut monitor = Monitor::new(&cfg.initial, params)?;
    let initial_report = StepReport { cfl_limit: sim.advective_limit(&cfg.initial), ..StepReport::default() };
    let mut rows: Vec<DiagnosticsRow> = vec![monitor.record(&cfg.initial, &initial_report, params)];
    let snapshots = cfg.output.wants(OutputFormat::Snapshot);
    let every = cfg.output.snapshot_every;
    let sample = cfg.time.sample_every as u64;
    let c0 = norm(&cfg.initial.c, NormKind::Linf);
    let mut max_c = cfg.initial.c.max();
    let result = sim.drive(&cfg.initial, cfg.time.t_end, cfg.time.dt, &source, |k, last, s, rep| {
        monitor.advance(s, rep, params)?;
        max_c = max_c.max(s.c.max());
        if (k + 1) % sample == 0 || last {
            rows.push(monitor.record(s, rep, params));
        }
        if snapshots && ((every > 0 && (k + 1) % every == 0) || last) {
            write_snapshot(s, &dir.join(format!("snapshot_{:08}.cns", k + 1)))
                .map_err(|e| stochem_core::SimError::Precondition(e.to_string()))?;
        }
        Ok(())
    });
    if cfg.output.wants(OutputFormat::Csv) {
        write_file(&dir.join("diagnostics.csv"), output::diagnostics_csv(&rows))?;
    }
    result.context("simulation failed")?;

    let last = rows.last().expect("initial row");
    writeln!(out, "{}", output::DIAGNOSTICS_HEADER)?;
    writeln!(out, "{}", output::diagnostics_row(last))?;

    let m0 = total_mass(&cfg.initial.n);
    let drift = rows.iter().map(|r| (r.mass_n - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE);
    let mut status = Status::Ok;
    if drift > MASS_DRIFT_TOL {
        writeln!(out, "invariant violated: relative mass drift {drift:e} exceeds {MASS_DRIFT_TOL:e}")?;
        status = Status::InvariantViolated;
    }
    if max_c > c0 * (1.0 + MAX_PRINCIPLE_TOL) {
        writeln!(out, "invariant violated: max c = {max_c} exceeds |c0|_inf = {c0}")?;
        status = Status::InvariantViolated;
    }
    Ok(status)
}

pub fn cmd_experiment(cfg: &RunConfig, which: Experiment, allow_inadmissible: bool, out: &mut dyn Write) -> Result<Status> {
    if !admit(cfg, allow_inadmissible, out)? {
        return Ok(Status::Inadmissible);
    }
    let dir = &cfg.output.directory;
    prepare_dir(dir)?;
    let (p, s, t, e) = (&cfg.params, &cfg.initial, &cfg.time, &cfg.experiment);
    match which {
        Experiment::Twin => {
            let seed_b = e.second_seed.unwrap_or(t.seed);
            let r = twin_run_seeds(p, s, t.seed, seed_b, e.perturbation, t.t_end, t.dt)?;
            write_file(&dir.join("twin.csv"), output::twin_csv(&r))?;
            let summary = json!({
                "experiment": "twin",
                "seeds": [t.seed, seed_b],
                "perturbation": e.perturbation,
                "y0": r.y[0],
                "y_final": r.y.last(),
                "growth_rate": r.growth_rate,
            });
            write_file(&dir.join("twin.json"), format!("{summary}\n"))?;
            writeln!(out, "twin: Y(0) = {}, Y(T) = {}, growth rate {:?}", r.y[0], r.y.last().unwrap_or(&0.0), r.growth_rate)?;
        }
        Experiment::Convergence => {
            let r = convergence_dt(p, s, t.seed, &e.dt_levels, t.t_end)?;
            write_file(&dir.join("convergence.csv"), output::convergence_csv(&r))?;
            write_file(&dir.join("convergence.json"), format!("{}\n", serde_json::to_string(&r)?))?;
            writeln!(out, "convergence: slope {} over {} levels (finest dt {})", r.slope, r.levels.len() + 1, r.finest)?;
        }
        Experiment::Stratonovich => {
            let r = stratonovich_consistency(p, s, &e.dt_levels)?;
            write_file(&dir.join("stratonovich.csv"), output::stratonovich_csv(&r))?;
            write_file(&dir.join("stratonovich.json"), format!("{}\n", serde_json::to_string(&r)?))?;
            writeln!(
                out,
                "stratonovich: halving ratios {:?}, gap error {} (expected gap {})",
                r.halving_ratios, r.gap_relative_error, r.expected_gap
            )?;
        }
        Experiment::Ensemble => {
            let spec = EnsembleSpec {
                n_replicas: e.replicas,
                base_seed: t.seed,
                params: p.clone(),
                initial: s.clone(),
                t_end: t.t_end,
                dt: t.dt,
                sample_every: t.sample_every,
                columns: e.columns.clone(),
            };
            let stats = ensemble(&spec)?;
            write_file(&dir.join("ensemble.csv"), output::ensemble_csv(&stats))?;
            let sups: Vec<_> = stats
                .columns
                .iter()
                .map(|c| json!({"column": c.column.name(), "replica_sup": c.replica_sup}))
                .collect();
            let summary = json!({"experiment": "ensemble", "n_replicas": stats.n_replicas, "seed": t.seed, "sup": sups});
            write_file(&dir.join("ensemble.json"), format!("{summary}\n"))?;
            writeln!(out, "ensemble: {} replicas, {} samples", stats.n_replicas, stats.times.len())?;
        }
    }
    Ok(Status::Ok)
}

pub fn cmd_snapshot_info(path: &Path, out: &mut dyn Write) -> Result<Status> {
    let s = read_snapshot(path).with_context(|| format!("reading {}", path.display()))?;
    let g = s.grid();
    writeln!(out, "grid      {} x {} on [0, {}] x [0, {}]", g.nx, g.ny, g.lx, g.ly)?;
    writeln!(out, "t         {}", s.t)?;
    writeln!(out, "mass n    {}", total_mass(&s.n))?;
    writeln!(out, "n range   [{}, {}]", s.n.min(), s.n.max())?;
    writeln!(out, "c range   [{}, {}]", s.c.min(), s.c.max())?;
    writeln!(out, "|u|_L2    {}", norm(&s.u, NormKind::L2))?;
    Ok(Status::Ok)
}
