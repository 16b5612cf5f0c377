//! One full step against an independent dense assembly of the same scheme.

use nalgebra::{DMatrix, DVector};

use stochem_core::dynamics::{Coefficients, ConsumptionLaw, SimParams, Simulator, State, XiMode};
use stochem_core::grid::{make_grid, Grid, ScalarField, VectorField};
use stochem_core::noise::{make_transport_sigma, sample_increments, VelocityNoiseConfig};
use stochem_core::operators::{convect_velocity, helmholtz_project, AdvectionMode};

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Five-point Neumann Laplacian on cells, from the stencil.
fn cell_laplacian(g: &Grid) -> DMatrix<f64> {
    let m = g.cells();
    let mut l = DMatrix::zeros(m, m);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let r = g.idx(i, j);
            let mut link = |k: usize, h: f64| {
                l[(r, k)] += 1.0 / (h * h);
                l[(r, r)] -= 1.0 / (h * h);
            };
            if i > 0 {
                link(g.idx(i - 1, j), g.dx);
            }
            if i + 1 < g.nx {
                link(g.idx(i + 1, j), g.dx);
            }
            if j > 0 {
                link(g.idx(i, j - 1), g.dy);
            }
            if j + 1 < g.ny {
                link(g.idx(i, j + 1), g.dy);
            }
        }
    }
    l
}

fn implicit(l: &DMatrix<f64>, a: f64, rhs: &[f64]) -> Vec<f64> {
    let m = DMatrix::identity(l.nrows(), l.ncols()) - l * a;
    m.lu().solve(&DVector::from_column_slice(rhs)).unwrap().iter().copied().collect()
}

/// First-order upwind `div(u phi)`.
fn upwind_transport(u: &VectorField, phi: &[f64], g: &Grid) -> Vec<f64> {
    let mut r = vec![0.0; g.cells()];
    for j in 0..g.ny {
        for i in 1..g.nx {
            let (l, rr) = (g.idx(i - 1, j), g.idx(i, j));
            let v = u.ux(i, j);
            let up = if v > 0.0 { phi[l] } else { phi[rr] };
            r[l] += v * up / g.dx;
            r[rr] -= v * up / g.dx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let (l, rr) = (g.idx(i, j - 1), g.idx(i, j));
            let v = u.uy(i, j);
            let up = if v > 0.0 { phi[l] } else { phi[rr] };
            r[l] += v * up / g.dy;
            r[rr] -= v * up / g.dy;
        }
    }
    r
}

/// `div(chi n grad c)` with `n` taken upwind along `grad c`.
fn chemotaxis(n: &[f64], c: &[f64], chi: f64, g: &Grid) -> Vec<f64> {
    let mut r = vec![0.0; g.cells()];
    let mut face = |l: usize, rr: usize, h: f64| {
        let grad = (c[rr] - c[l]) / h;
        let nf = if grad > 0.0 { n[l] } else { n[rr] };
        let f = chi * nf * grad / h;
        r[l] += f;
        r[rr] -= f;
    };
    for j in 0..g.ny {
        for i in 1..g.nx {
            face(g.idx(i - 1, j), g.idx(i, j), g.dx);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            face(g.idx(i, j - 1), g.idx(i, j), g.dy);
        }
    }
    r
}

/// Face-interior unknowns of one velocity component: `(i, j)` ranges and the
/// spacing along and across the component.
struct FaceBlock {
    cols: Vec<(usize, usize)>,
}

fn face_laplacian(block: &FaceBlock, along: f64, across: f64, along_x: bool) -> DMatrix<f64> {
    let m = block.cols.len();
    let pos = |i: usize, j: usize| block.cols.iter().position(|&p| p == (i, j));
    let mut l = DMatrix::zeros(m, m);
    for (r, &(i, j)) in block.cols.iter().enumerate() {
        let (a, b) = if along_x { (i, j) } else { (j, i) };
        let key = |a: usize, b: usize| if along_x { (a, b) } else { (b, a) };
        // Along the component: wall-normal neighbours are zero.
        for na in [a.wrapping_sub(1), a + 1] {
            l[(r, r)] -= 1.0 / (along * along);
            let (x, y) = key(na, b);
            if let Some(k) = pos(x, y) {
                l[(r, k)] += 1.0 / (along * along);
            }
        }
        // Across: a missing neighbour is a no-slip ghost `-value`.
        for nb in [b.wrapping_sub(1), b + 1] {
            l[(r, r)] -= 1.0 / (across * across);
            let (x, y) = key(a, nb);
            match pos(x, y) {
                Some(k) => l[(r, k)] += 1.0 / (across * across),
                None => l[(r, r)] -= 1.0 / (across * across),
            }
        }
    }
    l
}

#[test]
fn full_step_matches_dense_oracle() {
    let g = make_grid(8, 6, 1.0, 0.8).unwrap();
    let mut r = lcg(5);
    let n0: Vec<f64> = (0..g.cells()).map(|_| 0.5 + r()).collect();
    let c0: Vec<f64> = (0..g.cells()).map(|_| 0.2 + 0.3 * r()).collect();
    let mut raw = VectorField::zeros(g);
    raw.ux_values_mut().iter_mut().for_each(|v| *v = r() - 0.5);
    raw.uy_values_mut().iter_mut().for_each(|v| *v = r() - 0.5);
    raw.enforce_no_slip();
    let u0 = helmholtz_project(&raw).unwrap().scaled(0.3);
    let state = State::new(
        u0.clone(),
        ScalarField::from_values(g, c0.clone()).unwrap(),
        ScalarField::from_values(g, n0.clone()).unwrap(),
        0.0,
    )
    .unwrap();

    let coeffs = Coefficients { eta: 0.1, mu: 0.2, delta: 0.15, chi: 0.3, gamma: 0.1 };
    let phi = ScalarField::from_fn(g, |x, y| y + 0.3 * x * x);
    let params = SimParams::new(g, coeffs, XiMode::Corrected)
        .unwrap()
        .with_consumption(ConsumptionLaw::Linear { rate: 1.0 })
        .with_phi(phi.clone())
        .unwrap()
        .with_sigma(make_transport_sigma(g, 1).unwrap())
        .unwrap()
        .with_velocity_noise(VelocityNoiseConfig::new(g, 3, 0.1, 1.0, 0.5).unwrap())
        .unwrap()
        .with_advection(AdvectionMode::UpwindFlux, AdvectionMode::CenteredSkew);
    let dt = 0.004;
    let inc = sample_increments(9, 0, 0, dt, 3).unwrap();
    let (next, report) = Simulator::new(params.clone()).unwrap().step(&state, &inc, dt).unwrap();

    // Cells.
    let lap = cell_laplacian(&g);
    let adv_n = upwind_transport(&u0, &n0, &g);
    let chem = chemotaxis(&n0, &c0, coeffs.chi, &g);
    let n_star: Vec<f64> = (0..g.cells()).map(|k| n0[k] - dt * adv_n[k] - dt * chem[k]).collect();
    let n1 = implicit(&lap, dt * coeffs.delta, &n_star);

    // Oxygen.
    let adv_c = upwind_transport(&u0, &c0, &g);
    let mut c_star: Vec<f64> = (0..g.cells()).map(|k| c0[k] - dt * adv_c[k]).collect();
    for (s, db) in [(&params.sigma.sigma1, inc.dbeta[0]), (&params.sigma.sigma2, inc.dbeta[1])] {
        for j in 0..g.ny {
            for i in 1..g.nx {
                let d = 0.5 * s.ux(i, j) * (c0[g.idx(i, j)] - c0[g.idx(i - 1, j)]) / g.dx * coeffs.gamma * db;
                c_star[g.idx(i - 1, j)] += d;
                c_star[g.idx(i, j)] += d;
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let d = 0.5 * s.uy(i, j) * (c0[g.idx(i, j)] - c0[g.idx(i, j - 1)]) / g.dy * coeffs.gamma * db;
                c_star[g.idx(i, j - 1)] += d;
                c_star[g.idx(i, j)] += d;
            }
        }
    }
    let mut clips = 0;
    for k in 0..g.cells() {
        let demand = dt * n1[k] * c0[k];
        if demand > c_star[k].max(0.0) {
            clips += 1;
            c_star[k] -= c_star[k].max(0.0);
        } else {
            c_star[k] -= demand;
        }
    }
    let c1 = implicit(&lap, dt * params.xi, &c_star);

    // Velocity.
    let conv = convect_velocity(&u0, &u0, AdvectionMode::CenteredSkew).unwrap();
    let pre = params.vnoise.prefactor(&u0);
    let mut ustar = u0.add_scaled(-dt, &conv);
    for ((mode, w), dw) in params.vnoise.modes().iter().zip(params.vnoise.weights()).zip(&inc.dw) {
        ustar = ustar.add_scaled(pre * w * dw, mode);
    }
    let xs = FaceBlock { cols: (0..g.ny).flat_map(|j| (1..g.nx).map(move |i| (i, j))).collect() };
    let ys = FaceBlock { cols: (1..g.ny).flat_map(|j| (0..g.nx).map(move |i| (i, j))).collect() };
    let bx: Vec<f64> = xs
        .cols
        .iter()
        .map(|&(i, j)| {
            let nf = 0.5 * (n1[g.idx(i - 1, j)] + n1[g.idx(i, j)]);
            ustar.ux(i, j) + dt * nf * (phi.at(i, j) - phi.at(i - 1, j)) / g.dx
        })
        .collect();
    let by: Vec<f64> = ys
        .cols
        .iter()
        .map(|&(i, j)| {
            let nf = 0.5 * (n1[g.idx(i, j - 1)] + n1[g.idx(i, j)]);
            ustar.uy(i, j) + dt * nf * (phi.at(i, j) - phi.at(i, j - 1)) / g.dy
        })
        .collect();
    let vx = implicit(&face_laplacian(&xs, g.dx, g.dy, true), dt * coeffs.eta, &bx);
    let vy = implicit(&face_laplacian(&ys, g.dy, g.dx, false), dt * coeffs.eta, &by);
    let mut visc = VectorField::zeros(g);
    for (&(i, j), v) in xs.cols.iter().zip(&vx) {
        visc.set_ux(i, j, *v);
    }
    for (&(i, j), v) in ys.cols.iter().zip(&vy) {
        visc.set_uy(i, j, *v);
    }
    let div: Vec<f64> = (0..g.ny)
        .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
        .map(|(i, j)| (visc.ux(i + 1, j) - visc.ux(i, j)) / g.dx + (visc.uy(i, j + 1) - visc.uy(i, j)) / g.dy)
        .collect();
    // Pin the constant mode: (L + 1 1^T) p = div has the mean-zero solution.
    let pinned = &lap + DMatrix::from_element(g.cells(), g.cells(), 1.0);
    let p = pinned.lu().solve(&DVector::from_column_slice(&div)).unwrap();
    let mut u1 = visc.clone();
    for &(i, j) in &xs.cols {
        u1.set_ux(i, j, visc.ux(i, j) - (p[g.idx(i, j)] - p[g.idx(i - 1, j)]) / g.dx);
    }
    for &(i, j) in &ys.cols {
        u1.set_uy(i, j, visc.uy(i, j) - (p[g.idx(i, j)] - p[g.idx(i, j - 1)]) / g.dy);
    }

    let close = |a: &[f64], b: &[f64], what: &str| {
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() < 1e-11, "{what}[{k}]: {x} vs {y}");
        }
    };
    close(next.n.values(), &n1, "n");
    close(next.c.values(), &c1, "c");
    close(next.u.ux_values(), u1.ux_values(), "ux");
    close(next.u.uy_values(), u1.uy_values(), "uy");
    assert_eq!(report.clip_count, clips);
    assert!((next.t - dt).abs() < 1e-15);
}
