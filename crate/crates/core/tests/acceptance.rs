//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use stochem_core::diagnostics::{admissible_c0_bound, compute_kf, entropy_functional, total_mass};
use stochem_core::dynamics::{Coefficients, ConsumptionLaw, SimParams, Simulator, State, XiMode};
use stochem_core::experiments::{convergence_dt, ensemble, stratonovich_consistency, twin_run, Column, EnsembleSpec};
use stochem_core::grid::{inner_product, make_grid, norm, vector_inner_product, Grid, NormKind, ScalarField, VectorField};
use stochem_core::initial::{cosine_mode, gaussian_blob};
use stochem_core::noise::{make_transport_sigma, CounterStream, VelocityNoiseConfig};
use stochem_core::operators::{
    chemotaxis_div, convect_velocity, divergence, helmholtz_project, laplacian_neumann, scalar_advect,
    AdvectionMode,
};

const MASS_DRIFT_TOL: f64 = 1e-12;
const MAX_PRINCIPLE_SLACK: f64 = 1e-10;
const REF_RUNTIME_TARGET_S: f64 = 60.0;
const HALVING_RATIO: (f64, f64) = (0.4, 0.6);
const STRAT_GAP_TOL: f64 = 0.10;
const ENERGY_ABS_TOL: f64 = 1e-3;
const HEAT_RATE_TOL: f64 = 0.01;
const SLOPE_FLOOR_STOCHASTIC: f64 = 0.45;
const SLOPE_FLOOR_DETERMINISTIC: f64 = 0.9;
const GROWTH_STABILITY: f64 = 0.20;
const C0_BOUND: f64 = 0.408248;
const C0_BOUND_TOL: f64 = 1e-6;
const KF_TOL: f64 = 1e-12;
const ENTROPY_FACTOR: f64 = 50.0;
const ENSEMBLE_MASS_TOL: f64 = 1e-12;
const TRIALS: usize = 100;
const IDEMPOTENCE_TOL: f64 = 1e-12;
const ANNIHILATION_TOL: f64 = 1e-10;
const SKEW_TOL: f64 = 1e-12;
const NEUTRALITY_TOL: f64 = 1e-13;
const SELF_ADJOINT_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Observables of the reference run shared by criteria 1 to 3.
struct ReferenceRun {
    mass_drift: f64,
    max_c: f64,
    c0_linf: f64,
    min_n: f64,
    clips: u64,
    seconds: f64,
}

fn reference_run() -> ReferenceRun {
    let g = unit_grid(64);
    let params = reference_params(g);
    let initial = reference_state(g);
    let sim = Simulator::new(params.clone()).unwrap();
    let source = CounterStream { seed: 7, replica: 0, k_modes: params.k_modes() };
    let m0 = total_mass(&initial.n);
    let c0_linf = norm(&initial.c, NormKind::Linf);
    let (mut max_c, mut min_n, mut clips, mut drift) = (initial.c.max(), initial.n.min(), 0u64, 0.0f64);
    let start = Instant::now();
    sim.drive(&initial, REF_STEPS as f64 * REF_DT, REF_DT, &source, |_, _, s, rep| {
        max_c = max_c.max(s.c.max());
        min_n = min_n.min(s.n.min());
        clips += rep.clip_count;
        drift = drift.max((total_mass(&s.n) - m0).abs() / m0);
        Ok(())
    })
    .unwrap();
    ReferenceRun { mass_drift: drift, max_c, c0_linf, min_n, clips, seconds: start.elapsed().as_secs_f64() }
}

fn criterion_mass(r: &ReferenceRun) -> Outcome {
    outcome(
        r.mass_drift <= MASS_DRIFT_TOL,
        format!(
            "relative drift {:.3e} (tol {MASS_DRIFT_TOL:e}), {REF_STEPS} steps in {:.1}s (target < {REF_RUNTIME_TARGET_S}s)",
            r.mass_drift, r.seconds
        ),
    )
}

fn criterion_max_principle(r: &ReferenceRun) -> Outcome {
    let bound = r.c0_linf * (1.0 + MAX_PRINCIPLE_SLACK);
    outcome(r.max_c <= bound, format!("max_t max_x c = {:.12} vs |c0|_inf = {:.12}", r.max_c, r.c0_linf))
}

fn criterion_positivity(r: &ReferenceRun) -> Outcome {
    outcome(r.min_n >= 0.0 && r.clips == 0, format!("min_t min_x n = {:.6e}, clip_count = {}", r.min_n, r.clips))
}

fn criterion_stratonovich() -> Outcome {
    let g = unit_grid(256);
    let coeffs = Coefficients { eta: 1.0, mu: 1e-9, delta: 1.0, chi: 0.0, gamma: 0.2 };
    let params = SimParams::new(g, coeffs, XiMode::Corrected)
        .unwrap()
        .with_sigma(make_transport_sigma(g, 2).unwrap())
        .unwrap();
    let c = gaussian_blob(g, 0.0, 1.0, 0.5, 0.5, 0.1).unwrap();
    let initial = at_rest(g, c, ScalarField::zeros(g));
    let report = stratonovich_consistency(&params, &initial, &[0.01, 0.005, 0.0025]).unwrap();
    let ratios_ok = report.halving_ratios.iter().all(|r| (HALVING_RATIO.0..=HALVING_RATIO.1).contains(r));
    let drifts: Vec<String> = report.levels.iter().map(|l| format!("{:.3e}", l.drift_corrected)).collect();
    outcome(
        ratios_ok && report.gap_relative_error <= STRAT_GAP_TOL,
        format!(
            "corrected drifts [{}], halving ratios {:?}, gap error {:.3} (tol {STRAT_GAP_TOL})",
            drifts.join(", "),
            report.halving_ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
            report.gap_relative_error
        ),
    )
}

fn energy_residual_at(dt: f64) -> f64 {
    let g = unit_grid(128);
    let coeffs = Coefficients { eta: 0.05, mu: 0.1, delta: 0.1, chi: 0.2, gamma: 0.0 };
    let params = SimParams::new(g, coeffs, XiMode::Corrected).unwrap();
    let c = cosine_mode(g, 0.1, 0.04, 1, 1);
    let n = gaussian_blob(g, 0.5, 1.0, 0.5, 0.5, 0.1).unwrap();
    let initial = at_rest(g, c, n);
    let sim = Simulator::new(params).unwrap();
    let (_, series) = sim.run(&initial, 0.1, dt, 1, usize::MAX).unwrap();
    series.last().unwrap().energy_residual
}

fn criterion_energy() -> Outcome {
    let coarse = energy_residual_at(2e-4);
    let fine = energy_residual_at(1e-4);
    let ratio = fine / coarse;
    outcome(
        (HALVING_RATIO.0..=HALVING_RATIO.1).contains(&ratio) && fine <= ENERGY_ABS_TOL,
        format!("residual {coarse:.3e} at dt=2e-4, {fine:.3e} at dt=1e-4, ratio {ratio:.3}"),
    )
}

fn criterion_heat() -> Outcome {
    let g = make_grid(64, 48, 1.0, 0.75).unwrap();
    let coeffs = Coefficients { eta: 0.1, mu: 0.1, delta: 0.1, chi: 0.0, gamma: 0.0 };
    let params = SimParams::new(g, coeffs, XiMode::Corrected).unwrap();
    let xi = params.xi;
    let mode = cosine_mode(g, 0.0, 1.0, 1, 2);
    let initial = at_rest(g, mode.clone(), ScalarField::zeros(g));
    let t_end = 0.1;
    let sim = Simulator::new(params).unwrap();
    let (last, _) = sim.run(&initial, t_end, 1e-3, 1, usize::MAX).unwrap();
    let amp = |c: &ScalarField| inner_product(c, &mode).unwrap() / inner_product(&mode, &mode).unwrap();
    let measured = -(amp(&last.c) / amp(&initial.c)).ln() / t_end;
    let lambda = 2.0 / (g.dx * g.dx) * (1.0 - (PI * g.dx / g.lx).cos())
        + 2.0 / (g.dy * g.dy) * (1.0 - (2.0 * PI * g.dy / g.ly).cos());
    let expected = xi * lambda;
    let rel = (measured - expected).abs() / expected;
    outcome(rel <= HEAT_RATE_TOL, format!("decay rate {measured:.6} vs {expected:.6}, relative error {rel:.2e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn median_slope(params: &SimParams, initial: &State) -> f64 {
    let levels = [0.01, 0.005, 0.0025, 0.00125];
    let slopes = (0..8u64)
        .map(|r| convergence_dt(params, initial, 100 + r, &levels, 0.2).unwrap().slope)
        .collect();
    median(slopes)
}

fn criterion_convergence() -> Outcome {
    let g = unit_grid(32);
    let initial = reference_state(g);
    let stochastic = median_slope(&reference_params(g), &initial);
    let quiet = reference_params(g)
        .with_gamma(0.0)
        .unwrap()
        .with_velocity_noise(VelocityNoiseConfig::disabled())
        .unwrap();
    let deterministic = median_slope(&quiet, &initial);
    outcome(
        stochastic >= SLOPE_FLOOR_STOCHASTIC && deterministic >= SLOPE_FLOOR_DETERMINISTIC,
        format!("median slope {stochastic:.3} stochastic (floor {SLOPE_FLOOR_STOCHASTIC}), {deterministic:.3} deterministic (floor {SLOPE_FLOOR_DETERMINISTIC})"),
    )
}

fn criterion_uniqueness() -> Outcome {
    let g = unit_grid(64);
    let params = reference_params(g);
    let initial = reference_state(g);
    let t_end = 400.0 * REF_DT;
    let same = twin_run(&params, &initial, 3, 0.0, t_end, REF_DT).unwrap();
    let bitwise = same.y.iter().all(|&y| y == 0.0) && same.growth_rate.is_none();
    let mut rates = Vec::new();
    let mut enveloped = true;
    for seed in [3, 4] {
        let r = twin_run(&params, &initial, seed, 1e-6, t_end, REF_DT).unwrap();
        let gr = r.growth_rate.unwrap_or(f64::NAN);
        let y0 = r.y[0];
        enveloped &= r.times.iter().zip(&r.y).all(|(t, y)| *y <= y0 * (gr * t).exp() * (1.0 + 1e-12));
        rates.push(gr);
    }
    let spread = (rates[0] - rates[1]).abs() / (0.5 * (rates[0] + rates[1])).abs();
    outcome(
        bitwise && enveloped && rates.iter().all(|r| r.is_finite()) && spread <= GROWTH_STABILITY,
        format!("zero perturbation bitwise {bitwise}; G = {:.4} / {:.4} across seeds (spread {spread:.3})", rates[0], rates[1]),
    )
}

fn criterion_gate() -> Outcome {
    let g = unit_grid(8);
    let coeffs = Coefficients { eta: 1.0, mu: 1.0, delta: 1.0, chi: 1.0, gamma: 0.0 };
    let params = SimParams::new(g, coeffs, XiMode::Corrected)
        .unwrap()
        .with_consumption(ConsumptionLaw::Linear { rate: 1.0 });
    let bound = admissible_c0_bound(&params);
    let kf = compute_kf(&params, 0.3).unwrap();
    outcome(
        (bound - C0_BOUND).abs() <= C0_BOUND_TOL && (kf - 1.5).abs() <= KF_TOL,
        format!("c0 bound {bound:.9}, K_f {kf}"),
    )
}

fn criterion_entropy() -> Outcome {
    let g = unit_grid(64);
    let params = reference_params(g);
    let initial = reference_state(g);
    let c0 = norm(&initial.c, NormKind::Linf);
    let e0 = entropy_functional(&initial, &params, c0, params.k_gn).unwrap();
    let m0 = total_mass(&initial.n);
    let spec = EnsembleSpec {
        n_replicas: 16,
        base_seed: 11,
        params,
        initial,
        t_end: 400.0 * REF_DT,
        dt: REF_DT,
        sample_every: 10,
        columns: vec![Column::Entropy, Column::MassN],
    };
    let stats = ensemble(&spec).unwrap();
    let sup = stats.columns[0].replica_sup.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass_err = stats.columns[1].mean.iter().map(|m| (m - m0).abs() / m0).fold(0.0, f64::max);
    outcome(
        sup <= ENTROPY_FACTOR * e0 && mass_err <= ENSEMBLE_MASS_TOL,
        format!("max sup_t E = {sup:.4} vs {ENTROPY_FACTOR} x E(0) = {:.4}; mean mass error {mass_err:.2e}", ENTROPY_FACTOR * e0),
    )
}

fn random_scalar(g: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vector(g: Grid, rng: &mut ChaCha8Rng) -> VectorField {
    let ux = (0..g.ux_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let uy = (0..g.uy_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut v = VectorField::from_components(g, ux, uy).unwrap();
    v.enforce_no_slip();
    v
}

fn criterion_operators() -> Outcome {
    let g = unit_grid(32);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut idem, mut annih, mut skew, mut neutral, mut adjoint) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..TRIALS {
        let v = random_vector(g, &mut rng);
        let w = random_vector(g, &mut rng);
        let phi = random_scalar(g, &mut rng);
        let psi = random_scalar(g, &mut rng);

        let pv = helmholtz_project(&v).unwrap();
        let ppv = helmholtz_project(&pv).unwrap();
        idem = idem.max(norm(&ppv.add_scaled(-1.0, &pv), NormKind::Linf) / norm(&pv, NormKind::Linf));
        annih = annih.max(norm(&divergence(&pv), NormKind::Linf));

        let b = convect_velocity(&v, &w, AdvectionMode::CenteredSkew).unwrap();
        skew = skew.max(vector_inner_product(&b, &w).unwrap().abs() / (norm(&b, NormKind::L2) * norm(&w, NormKind::L2)));
        let s = scalar_advect(&pv, &phi, AdvectionMode::CenteredSkew).unwrap();
        skew = skew.max(inner_product(&s, &phi).unwrap().abs() / (norm(&s, NormKind::L2) * norm(&phi, NormKind::L2)));

        let n = phi.map(|x| x + 1.5);
        for field in [
            divergence(&v),
            laplacian_neumann(&phi),
            scalar_advect(&v, &phi, AdvectionMode::UpwindFlux).unwrap(),
            chemotaxis_div(&n, &psi, 0.7).unwrap(),
        ] {
            let total: f64 = field.values().iter().sum();
            let scale: f64 = field.values().iter().map(|x| x.abs()).sum();
            neutral = neutral.max(total.abs() / scale);
        }

        let a = inner_product(&laplacian_neumann(&phi), &psi).unwrap();
        let b = inner_product(&phi, &laplacian_neumann(&psi)).unwrap();
        let scale = norm(&laplacian_neumann(&phi), NormKind::L2) * norm(&psi, NormKind::L2);
        adjoint = adjoint.max((a - b).abs() / scale);
    }
    let pass = idem <= IDEMPOTENCE_TOL
        && annih <= ANNIHILATION_TOL
        && skew <= SKEW_TOL
        && neutral <= NEUTRALITY_TOL
        && adjoint <= SELF_ADJOINT_TOL;
    outcome(
        pass,
        format!(
            "{TRIALS} trials at 32x32: idempotence {idem:.1e}, div {annih:.1e}, skew {skew:.1e}, neutrality {neutral:.1e}, self-adjoint {adjoint:.1e}"
        ),
    )
}

fn main() {
    let reference = reference_run();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("mass conservation", Box::new(|| criterion_mass(&reference))),
        ("maximum principle", Box::new(|| criterion_max_principle(&reference))),
        ("positivity", Box::new(|| criterion_positivity(&reference))),
        ("Stratonovich correction", Box::new(criterion_stratonovich)),
        ("energy identity", Box::new(criterion_energy)),
        ("heat-equation decay", Box::new(criterion_heat)),
        ("strong convergence", Box::new(criterion_convergence)),
        ("pathwise uniqueness", Box::new(criterion_uniqueness)),
        ("parameter gate", Box::new(criterion_gate)),
        ("entropy boundedness", Box::new(criterion_entropy)),
        ("operator identities", Box::new(criterion_operators)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name}: {} ({:.1}s)", k + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
