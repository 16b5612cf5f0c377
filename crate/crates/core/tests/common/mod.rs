//! Shared scenarios for the integration tests.
#![allow(dead_code)]

use stochem_core::dynamics::{Coefficients, ConsumptionLaw, SimParams, State, XiMode};
use stochem_core::grid::{make_grid, Grid, ScalarField, VectorField};
use stochem_core::initial::{gaussian_blob, linear_gradient, taylor_vortex_pair, Axis};
use stochem_core::noise::{make_transport_sigma, VelocityNoiseConfig};

pub const REF_DT: f64 = 2.5e-3;
pub const REF_STEPS: usize = 2000;

/// Coefficients of the reference scenario.
pub fn reference_coefficients() -> Coefficients {
    Coefficients { eta: 0.05, mu: 0.1, delta: 0.1, chi: 0.2, gamma: 0.04 }
}

/// Admissible parameters with transport noise, multiplicative velocity noise
/// and buoyancy `Phi = y`.
pub fn reference_params(g: Grid) -> SimParams {
    SimParams::new(g, reference_coefficients(), XiMode::Corrected)
        .unwrap()
        .with_consumption(ConsumptionLaw::Linear { rate: 1.0 })
        .with_phi(ScalarField::from_fn(g, |_, y| y))
        .unwrap()
        .with_sigma(make_transport_sigma(g, 2).unwrap())
        .unwrap()
        .with_velocity_noise(VelocityNoiseConfig::new(g, 8, 0.05, 2.0, 0.5).unwrap())
        .unwrap()
}

/// Gaussian cell blob, oxygen ramp along `y`, vortex pair.
pub fn reference_state(g: Grid) -> State {
    let n = gaussian_blob(g, 0.5, 1.0, 0.5 * g.lx, 0.5 * g.ly, 0.1 * g.lx).unwrap();
    let c = linear_gradient(g, 0.04, 0.14, Axis::Y);
    let u = taylor_vortex_pair(g, 0.5).unwrap();
    State::new(u, c, n, 0.0).unwrap()
}

pub fn unit_grid(n: usize) -> Grid {
    make_grid(n, n, 1.0, 1.0).unwrap()
}

pub fn at_rest(g: Grid, c: ScalarField, n: ScalarField) -> State {
    State::new(VectorField::zeros(g), c, n, 0.0).unwrap()
}
