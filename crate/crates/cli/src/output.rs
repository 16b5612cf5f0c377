//! CSV writers. Floats use the shortest representation that round-trips
//! (`{:?}`, exponent form for very large or small magnitudes), which is
//! locale independent.

use std::fmt::Write as _;

use stochem_core::diagnostics::DiagnosticsRow;
use stochem_core::experiments::{ConvergenceReport, EnsembleStats, StratonovichReport, TwinReport};

pub const DIAGNOSTICS_HEADER: &str = "step,t,mass_n,min_n,max_c,l2_u,h1_c,entropy,energy_residual,clip_count,div_residual";

pub fn diagnostics_row(r: &DiagnosticsRow) -> String {
    format!(
        "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?}",
        r.step, r.t, r.mass_n, r.min_n, r.max_c, r.l2_u, r.h1_c, r.entropy, r.energy_residual, r.clip_count, r.div_residual
    )
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from(DIAGNOSTICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&diagnostics_row(r));
        s.push('\n');
    }
    s
}

pub fn twin_csv(r: &TwinReport) -> String {
    let mut s = String::from("t,y\n");
    for (t, y) in r.times.iter().zip(&r.y) {
        let _ = writeln!(s, "{t:?},{y:?}");
    }
    s
}

pub fn convergence_csv(r: &ConvergenceReport) -> String {
    let mut s = String::from("dt,error\n");
    for (dt, e) in r.levels.iter().zip(&r.errors) {
        let _ = writeln!(s, "{dt:?},{e:?}");
    }
    s
}

pub fn stratonovich_csv(r: &StratonovichReport) -> String {
    let mut s = String::from("dt,drift_corrected,drift_uncorrected,gap\n");
    for l in &r.levels {
        let _ = writeln!(s, "{:?},{:?},{:?},{:?}", l.dt, l.drift_corrected, l.drift_uncorrected, l.gap());
    }
    s
}

/// One row per sampled time; four columns per aggregated diagnostic.
pub fn ensemble_csv(stats: &EnsembleStats) -> String {
    let mut s = String::from("step,t");
    for c in &stats.columns {
        let n = c.column.name();
        let _ = write!(s, ",{n}_mean,{n}_variance,{n}_max,{n}_ci95");
    }
    s.push('\n');
    for (k, (step, t)) in stats.steps.iter().zip(&stats.times).enumerate() {
        let _ = write!(s, "{step},{t:?}");
        for c in &stats.columns {
            let _ = write!(s, ",{:?},{:?},{:?},{:?}", c.mean[k], c.variance[k], c.max[k], c.ci95[k]);
        }
        s.push('\n');
    }
    s
}
