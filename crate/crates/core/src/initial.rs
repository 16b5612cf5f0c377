//! Initial-condition recipes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::operators::helmholtz_project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

pub fn uniform(grid: Grid, value: f64) -> ScalarField {
    ScalarField::constant(grid, value)
}

/// `background + amplitude exp(-|x - x0|^2 / (2 width^2))`.
pub fn gaussian_blob(grid: Grid, background: f64, amplitude: f64, x0: f64, y0: f64, width: f64) -> Result<ScalarField> {
    if !(width > 0.0) {
        return Err(invalid("width", "must be > 0"));
    }
    let s2 = 2.0 * width * width;
    Ok(ScalarField::from_fn(grid, |x, y| {
        background + amplitude * (-((x - x0).powi(2) + (y - y0).powi(2)) / s2).exp()
    }))
}

/// Linear ramp from `low` at the wall `axis = 0` to `high` at the opposite wall.
pub fn linear_gradient(grid: Grid, low: f64, high: f64, axis: Axis) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| match axis {
        Axis::X => low + (high - low) * x / grid.lx,
        Axis::Y => low + (high - low) * y / grid.ly,
    })
}

/// `mean + amplitude cos(p pi x / lx) cos(q pi y / ly)`.
pub fn cosine_mode(grid: Grid, mean: f64, amplitude: f64, p: u32, q: u32) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        mean + amplitude * (p as f64 * PI * x / grid.lx).cos() * (q as f64 * PI * y / grid.ly).cos()
    })
}

/// Two counter-rotating vortices side by side, discretely divergence-free,
/// scaled so that the largest face velocity equals `amplitude`.
pub fn taylor_vortex_pair(grid: Grid, amplitude: f64) -> Result<VectorField> {
    let psi = |i: usize, j: usize| {
        let x = i as f64 / grid.nx as f64;
        let y = j as f64 / grid.ny as f64;
        (2.0 * PI * x).sin() * (PI * y).sin().powi(2)
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
    let (mx, my) = v.max_abs_components();
    let peak = mx.max(my);
    Ok(if peak > 0.0 { v.scaled(amplitude / peak) } else { v })
}

/// Named scalar recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScalarRecipe {
    Uniform { value: f64 },
    GaussianBlob { background: f64, amplitude: f64, x0: f64, y0: f64, width: f64 },
    LinearGradient { low: f64, high: f64, axis: Axis },
    CosineMode { mean: f64, amplitude: f64, p: u32, q: u32 },
}

impl ScalarRecipe {
    pub fn build(&self, grid: Grid) -> Result<ScalarField> {
        match *self {
            Self::Uniform { value } => Ok(uniform(grid, value)),
            Self::GaussianBlob { background, amplitude, x0, y0, width } => {
                gaussian_blob(grid, background, amplitude, x0, y0, width)
            }
            Self::LinearGradient { low, high, axis } => Ok(linear_gradient(grid, low, high, axis)),
            Self::CosineMode { mean, amplitude, p, q } => Ok(cosine_mode(grid, mean, amplitude, p, q)),
        }
    }
}

/// Named velocity recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VelocityRecipe {
    Zero,
    TaylorVortexPair { amplitude: f64 },
}

impl VelocityRecipe {
    pub fn build(&self, grid: Grid) -> Result<VectorField> {
        match *self {
            Self::Zero => Ok(VectorField::zeros(grid)),
            Self::TaylorVortexPair { amplitude } => taylor_vortex_pair(grid, amplitude),
        }
    }
}
