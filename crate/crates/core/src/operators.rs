//! Discrete versions of the transport, coupling and elliptic operators.
//!
//! Sign conventions: `laplacian_neumann` and `stokes_apply` return Laplacians
//! (the negative of the positive operators `A1`, `A0`); `scalar_advect`,
//! `convect_velocity` and `chemotaxis_div` return the quantities that appear
//! on the left-hand side of the balance laws, i.e. `div(u phi)`, `(u.grad) v`
//! and `div(chi n grad c)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ConsumptionLaw, SimParams, State};
use crate::error::{Result, SimError};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::spectral::SpectralSolvers;

/// How convective fluxes pick the transported value on a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvectionMode {
    /// Centred face averages. For velocity the skew-symmetric split
    /// `1/2 [(u.grad) v + div(u (x) v)]` is returned, which makes
    /// `(B0(u, v), v) = 0` hold to round-off for any `u`.
    CenteredSkew,
    /// First-order upwind face values: monotone and dissipative.
    UpwindFlux,
}

/// Discrete divergence of a MAC field at cell centres.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let mut out = ScalarField::zeros(g);
    let d = out.values_mut();
    for j in 0..g.ny {
        for i in 0..g.nx {
            d[g.idx(i, j)] =
                (v.ux(i + 1, j) - v.ux(i, j)) / g.dx + (v.uy(i, j + 1) - v.uy(i, j)) / g.dy;
        }
    }
    out
}

/// Face gradient of a cell-centred field; wall-normal faces are zero.
pub fn gradient(p: &ScalarField) -> VectorField {
    let g = *p.grid();
    let mut v = VectorField::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            v.set_ux(i, j, (p.at(i, j) - p.at(i - 1, j)) / g.dx);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            v.set_uy(i, j, (p.at(i, j) - p.at(i, j - 1)) / g.dy);
        }
    }
    v
}

/// Five-point Neumann Laplacian in flux form (`div grad` with zero wall flux).
pub fn laplacian_neumann(phi: &ScalarField) -> ScalarField {
    divergence(&gradient(phi))
}

/// Componentwise five-point Laplacian of a no-slip MAC field. Tangential
/// ghosts are odd reflections; wall-normal faces stay zero.
pub fn stokes_apply(u: &VectorField) -> VectorField {
    let g = *u.grid();
    let (nx, ny) = (g.nx, g.ny);
    let (idx2, idy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let mut out = VectorField::zeros(g);
    for j in 0..ny {
        for i in 1..nx {
            let c = u.ux(i, j);
            let lap_x = (u.ux(i + 1, j) - 2.0 * c + u.ux(i - 1, j)) * idx2;
            let below = if j > 0 { u.ux(i, j - 1) } else { -c };
            let above = if j + 1 < ny { u.ux(i, j + 1) } else { -c };
            out.set_ux(i, j, lap_x + (above - 2.0 * c + below) * idy2);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = u.uy(i, j);
            let lap_y = (u.uy(i, j + 1) - 2.0 * c + u.uy(i, j - 1)) * idy2;
            let left = if i > 0 { u.uy(i - 1, j) } else { -c };
            let right = if i + 1 < nx { u.uy(i + 1, j) } else { -c };
            out.set_uy(i, j, lap_y + (right - 2.0 * c + left) * idx2);
        }
    }
    out
}

#[inline]
fn face_value(lo: f64, hi: f64, velocity: f64, mode: AdvectionMode) -> f64 {
    match mode {
        AdvectionMode::CenteredSkew => 0.5 * (lo + hi),
        AdvectionMode::UpwindFlux => {
            if velocity > 0.0 {
                lo
            } else if velocity < 0.0 {
                hi
            } else {
                0.5 * (lo + hi)
            }
        }
    }
}

/// Momentum-flux divergence `div(u (x) v)` on the staggered control volumes,
/// together with the control-volume divergence of the advecting field.
fn momentum_flux_divergence(
    u: &VectorField,
    v: &VectorField,
    mode: AdvectionMode,
) -> (VectorField, VectorField) {
    let g = *u.grid();
    let (nx, ny, dx, dy) = (g.nx, g.ny, g.dx, g.dy);
    let mut conv = VectorField::zeros(g);
    let mut dcv = VectorField::zeros(g);

    for j in 0..ny {
        for i in 1..nx {
            let ue = 0.5 * (u.ux(i, j) + u.ux(i + 1, j));
            let uw = 0.5 * (u.ux(i - 1, j) + u.ux(i, j));
            let ae = face_value(v.ux(i, j), v.ux(i + 1, j), ue, mode);
            let aw = face_value(v.ux(i - 1, j), v.ux(i, j), uw, mode);
            let (vn, an) = if j + 1 < ny {
                let vn = 0.5 * (u.uy(i - 1, j + 1) + u.uy(i, j + 1));
                (vn, face_value(v.ux(i, j), v.ux(i, j + 1), vn, mode))
            } else {
                (0.0, 0.0)
            };
            let (vs, as_) = if j > 0 {
                let vs = 0.5 * (u.uy(i - 1, j) + u.uy(i, j));
                (vs, face_value(v.ux(i, j - 1), v.ux(i, j), vs, mode))
            } else {
                (0.0, 0.0)
            };
            conv.set_ux(i, j, (ue * ae - uw * aw) / dx + (vn * an - vs * as_) / dy);
            dcv.set_ux(i, j, (ue - uw) / dx + (vn - vs) / dy);
        }
    }

    for j in 1..ny {
        for i in 0..nx {
            let vn = 0.5 * (u.uy(i, j) + u.uy(i, j + 1));
            let vs = 0.5 * (u.uy(i, j - 1) + u.uy(i, j));
            let an = face_value(v.uy(i, j), v.uy(i, j + 1), vn, mode);
            let as_ = face_value(v.uy(i, j - 1), v.uy(i, j), vs, mode);
            let (ue, ae) = if i + 1 < nx {
                let ue = 0.5 * (u.ux(i + 1, j - 1) + u.ux(i + 1, j));
                (ue, face_value(v.uy(i, j), v.uy(i + 1, j), ue, mode))
            } else {
                (0.0, 0.0)
            };
            let (uw, aw) = if i > 0 {
                let uw = 0.5 * (u.ux(i, j - 1) + u.ux(i, j));
                (uw, face_value(v.uy(i - 1, j), v.uy(i, j), uw, mode))
            } else {
                (0.0, 0.0)
            };
            conv.set_uy(i, j, (vn * an - vs * as_) / dy + (ue * ae - uw * aw) / dx);
            dcv.set_uy(i, j, (vn - vs) / dy + (ue - uw) / dx);
        }
    }
    (conv, dcv)
}

/// Discrete `B0(u, v) = (u.grad) v` on the MAC grid.
pub fn convect_velocity(u: &VectorField, v: &VectorField, mode: AdvectionMode) -> Result<VectorField> {
    u.check_grid(v)?;
    let (conv, dcv) = momentum_flux_divergence(u, v, mode);
    Ok(match mode {
        AdvectionMode::UpwindFlux => conv,
        AdvectionMode::CenteredSkew => {
            // (u.grad) v = div(u (x) v) - v div(u); average the two forms.
            let mut out = conv;
            for (o, (a, d)) in out
                .ux_values_mut()
                .iter_mut()
                .zip(v.ux_values().iter().zip(dcv.ux_values()))
            {
                *o -= 0.5 * a * d;
            }
            for (o, (a, d)) in out
                .uy_values_mut()
                .iter_mut()
                .zip(v.uy_values().iter().zip(dcv.uy_values()))
            {
                *o -= 0.5 * a * d;
            }
            out
        }
    })
}

/// Flux-form transport `div(u phi)` of a cell-centred scalar.
pub fn scalar_advect(u: &VectorField, phi: &ScalarField, mode: AdvectionMode) -> Result<ScalarField> {
    let g = *u.grid();
    if !g.same_as(phi.grid()) {
        return Err(SimError::GridMismatch);
    }
    let mut out = ScalarField::zeros(g);
    let r = out.values_mut();
    for j in 0..g.ny {
        for i in 1..g.nx {
            let vel = u.ux(i, j);
            let f = vel * face_value(phi.at(i - 1, j), phi.at(i, j), vel, mode) / g.dx;
            r[g.idx(i - 1, j)] += f;
            r[g.idx(i, j)] -= f;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let vel = u.uy(i, j);
            let f = vel * face_value(phi.at(i, j - 1), phi.at(i, j), vel, mode) / g.dy;
            r[g.idx(i, j - 1)] += f;
            r[g.idx(i, j)] -= f;
        }
    }
    Ok(out)
}

/// Chemotactic flux divergence `div(chi n grad c)`. The face density is taken
/// from the cell the flux leaves (upwind along `grad c`), so the explicit
/// update of `n` is monotone under the advective time-step limit.
pub fn chemotaxis_div(n: &ScalarField, c: &ScalarField, chi: f64) -> Result<ScalarField> {
    n.check_grid(c)?;
    let g = *n.grid();
    let mut out = ScalarField::zeros(g);
    if chi == 0.0 {
        return Ok(out);
    }
    let r = out.values_mut();
    let face = |lo: usize, hi: usize, h: f64, r: &mut [f64]| {
        let grad = (c.values()[hi] - c.values()[lo]) / h;
        let nf = if grad > 0.0 {
            n.values()[lo]
        } else if grad < 0.0 {
            n.values()[hi]
        } else {
            return;
        };
        let f = chi * nf * grad / h;
        r[lo] += f;
        r[hi] -= f;
    };
    for j in 0..g.ny {
        for i in 1..g.nx {
            face(g.idx(i - 1, j), g.idx(i, j), g.dx, r);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            face(g.idx(i, j - 1), g.idx(i, j), g.dy, r);
        }
    }
    Ok(out)
}

/// Pointwise consumption `n f(c)`.
pub fn consumption(n: &ScalarField, c: &ScalarField, f: &ConsumptionLaw) -> Result<ScalarField> {
    n.check_grid(c)?;
    let values = n
        .values()
        .iter()
        .zip(c.values())
        .map(|(&nv, &cv)| nv * f.eval(cv))
        .collect();
    ScalarField::from_values(*n.grid(), values)
}

/// Buoyancy forcing `n grad(Phi)` on interior faces (before projection).
pub fn buoyancy(n: &ScalarField, phi: &ScalarField) -> Result<VectorField> {
    n.check_grid(phi)?;
    let g = *n.grid();
    let mut v = VectorField::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            let nf = 0.5 * (n.at(i - 1, j) + n.at(i, j));
            v.set_ux(i, j, nf * (phi.at(i, j) - phi.at(i - 1, j)) / g.dx);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let nf = 0.5 * (n.at(i, j - 1) + n.at(i, j));
            v.set_uy(i, j, nf * (phi.at(i, j) - phi.at(i, j - 1)) / g.dy);
        }
    }
    Ok(v)
}

/// Neumann-Poisson solver used by the projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoissonMethod {
    /// Cosine-transform diagonalisation (exact up to round-off).
    Spectral,
    /// Matrix-free conjugate gradients with relative residual `1e-12`.
    ConjugateGradient { max_iterations: usize },
}

/// Result of a Helmholtz projection.
#[derive(Debug, Clone)]
pub struct Projection {
    pub field: VectorField,
    /// `max |div P v|` after the correction.
    pub max_divergence: f64,
    /// Iterations spent by the Poisson solver (0 for the spectral path).
    pub iterations: usize,
}

/// Discrete Leray projector `P = I - G (D G)^{-1} D`.
#[derive(Debug, Clone)]
pub struct Projector {
    grid: Grid,
    solvers: Arc<SpectralSolvers>,
    method: PoissonMethod,
}

/// Relative residual target of the iterative Poisson path.
pub const CG_TOLERANCE: f64 = 1e-12;

impl Projector {
    pub fn new(grid: Grid) -> Self {
        Self::with_solvers(grid, Arc::new(SpectralSolvers::new(&grid)))
    }

    pub fn with_solvers(grid: Grid, solvers: Arc<SpectralSolvers>) -> Self {
        Self {
            grid,
            solvers,
            method: PoissonMethod::Spectral,
        }
    }

    pub fn with_method(mut self, method: PoissonMethod) -> Self {
        self.method = method;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves `lap p = rhs` with zero wall flux. The mean of `rhs` is removed
    /// first and the returned `p` has zero mean.
    pub fn solve_poisson(&self, rhs: &ScalarField) -> Result<(ScalarField, usize)> {
        if !rhs.grid().same_as(&self.grid) {
            return Err(SimError::GridMismatch);
        }
        let mean = rhs.mean();
        let b: Vec<f64> = rhs.values().iter().map(|v| v - mean).collect();
        let (mut p, iterations) = match self.method {
            PoissonMethod::Spectral => {
                let mut p = b;
                self.solvers.scalar.solve_singular(&mut p);
                (p, 0)
            }
            PoissonMethod::ConjugateGradient { max_iterations } => {
                conjugate_gradient_neumann(&self.grid, &b, max_iterations)?
            }
        };
        let pm = p.iter().sum::<f64>() / p.len() as f64;
        p.iter_mut().for_each(|v| *v -= pm);
        Ok((ScalarField::from_values(self.grid, p)?, iterations))
    }

    pub fn project(&self, v: &VectorField) -> Result<Projection> {
        if !v.grid().same_as(&self.grid) {
            return Err(SimError::GridMismatch);
        }
        let mut w = v.clone();
        w.enforce_no_slip();
        let (p, iterations) = self.solve_poisson(&divergence(&w))?;
        let field = w.add_scaled(-1.0, &gradient(&p));
        let max_divergence = divergence(&field)
            .values()
            .iter()
            .fold(0.0_f64, |m, d| m.max(d.abs()));
        Ok(Projection {
            field,
            max_divergence,
            iterations,
        })
    }
}

/// Helmholtz projection onto discretely divergence-free fields with zero
/// normal flow.
pub fn helmholtz_project(v: &VectorField) -> Result<VectorField> {
    Ok(Projector::new(*v.grid()).project(v)?.field)
}

fn conjugate_gradient_neumann(grid: &Grid, b: &[f64], max_iterations: usize) -> Result<(Vec<f64>, usize)> {
    // Solves (-lap) x = -b, which is symmetric positive definite on mean-zero data.
    let apply = |x: &[f64]| -> Vec<f64> {
        let f = ScalarField::from_values(*grid, x.to_vec()).expect("finite iterate");
        laplacian_neumann(&f).into_values().into_iter().map(|v| -v).collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rhs: Vec<f64> = b.iter().map(|v| -v).collect();
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs;
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=max_iterations {
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= CG_TOLERANCE * bnorm {
            return Ok((x, it));
        }
        let beta = rr_new / rr;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Err(SimError::SolverNotConverged {
        iterations: max_iterations,
        residual: rr.sqrt() / bnorm,
    })
}

/// Pressure implied by the deterministic momentum balance: the gradient part
/// of `-B0(u, u) + eta lap u + n grad Phi`, normalised to zero mean.
pub fn recover_pressure(state: &State, params: &SimParams) -> Result<ScalarField> {
    recover_pressure_with(&Projector::new(*state.u.grid()), state, params)
}

pub(crate) fn recover_pressure_with(
    projector: &Projector,
    state: &State,
    params: &SimParams,
) -> Result<ScalarField> {
    let forcing = convect_velocity(&state.u, &state.u, params.velocity_advection)?
        .scaled(-1.0)
        .add_scaled(params.eta, &stokes_apply(&state.u))
        .add_scaled(1.0, &buoyancy(&state.n, &params.phi)?);
    let mut f = forcing;
    f.enforce_no_slip();
    Ok(projector.solve_poisson(&divergence(&f))?.0)
}
