//! Fast diagonalisation of the grid Laplacians.
//!
//! Every Laplacian on the MAC grid is a sum of 1D three-point operators whose
//! eigenvectors are trigonometric: cosines (cell-centred, mirrored ghosts),
//! half-shifted sines (cell-centred, reflected ghosts) and plain sines
//! (face-centred, Dirichlet ends). Implicit diffusion and the projection
//! Poisson problem are therefore solved exactly by a pair of real-to-real
//! transforms and a diagonal scaling.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{Dst1, DctPlanner, TransformType2And3};

use crate::grid::Grid;

/// 1D eigenbasis family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `n` cell-centred unknowns with zero boundary flux: `cos(pi k (i + 1/2) / n)`.
    NeumannCell,
    /// `n` cell-centred unknowns with odd reflection at both ends:
    /// `sin(pi (k + 1) (i + 1/2) / n)`.
    DirichletCell,
    /// `n - 1` interior face unknowns, zero on the two end faces:
    /// `sin(pi (k + 1) (i + 1) / n)`.
    DirichletFace,
}

#[derive(Clone)]
enum Plan {
    Type23(Arc<dyn TransformType2And3<f64>>),
    Type1(Arc<dyn Dst1<f64>>),
}

/// One-dimensional transform plus the matching eigenvalues of the three-point
/// second difference (all `<= 0`).
#[derive(Clone)]
pub struct Transform1d {
    basis: Basis,
    len: usize,
    plan: Plan,
    inverse_scale: f64,
    eigenvalues: Vec<f64>,
}

impl std::fmt::Debug for Transform1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform1d")
            .field("basis", &self.basis)
            .field("len", &self.len)
            .finish()
    }
}

impl Transform1d {
    /// `cells` is the number of grid cells along the axis, `h` the spacing.
    pub fn new(planner: &mut DctPlanner<f64>, basis: Basis, cells: usize, h: f64) -> Self {
        let n = cells as f64;
        let symbol = |m: f64| -(2.0 / (h * h)) * (1.0 - (PI * m / n).cos());
        match basis {
            Basis::NeumannCell => Self {
                basis,
                len: cells,
                plan: Plan::Type23(planner.plan_dct2(cells)),
                inverse_scale: 2.0 / n,
                eigenvalues: (0..cells).map(|k| symbol(k as f64)).collect(),
            },
            Basis::DirichletCell => Self {
                basis,
                len: cells,
                plan: Plan::Type23(planner.plan_dst2(cells)),
                inverse_scale: 2.0 / n,
                eigenvalues: (0..cells).map(|k| symbol(k as f64 + 1.0)).collect(),
            },
            Basis::DirichletFace => Self {
                basis,
                len: cells - 1,
                plan: Plan::Type1(planner.plan_dst1(cells - 1)),
                inverse_scale: 2.0 / n,
                eigenvalues: (0..cells - 1).map(|k| symbol(k as f64 + 1.0)).collect(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn forward(&self, buf: &mut [f64]) {
        match (&self.plan, self.basis) {
            (Plan::Type23(p), Basis::NeumannCell) => p.process_dct2(buf),
            (Plan::Type23(p), _) => p.process_dst2(buf),
            (Plan::Type1(p), _) => p.process_dst1(buf),
        }
    }

    fn inverse(&self, buf: &mut [f64]) {
        match (&self.plan, self.basis) {
            (Plan::Type23(p), Basis::NeumannCell) => p.process_dct3(buf),
            (Plan::Type23(p), _) => p.process_dst3(buf),
            (Plan::Type1(p), _) => p.process_dst1(buf),
        }
        for v in buf.iter_mut() {
            *v *= self.inverse_scale;
        }
    }
}

/// Tensor-product eigenbasis of a 2D operator `L = Lx (x) I + I (x) Ly` acting on
/// row-major data of shape `height x width`.
#[derive(Clone, Debug)]
pub struct Separable2d {
    x: Transform1d,
    y: Transform1d,
}

impl Separable2d {
    pub fn new(x: Transform1d, y: Transform1d) -> Self {
        Self { x, y }
    }

    pub fn width(&self) -> usize {
        self.x.len()
    }

    pub fn height(&self) -> usize {
        self.y.len()
    }

    /// Replaces `data` by `m(L) data`, where `m` maps an eigenvalue of `L` (and
    /// the mode's `(kx, ky)` index) to a multiplier.
    pub fn apply(&self, data: &mut [f64], m: impl Fn(f64, usize, usize) -> f64) {
        let (w, h) = (self.width(), self.height());
        debug_assert_eq!(data.len(), w * h);
        for row in data.chunks_exact_mut(w) {
            self.x.forward(row);
        }
        let mut t = transpose(data, w, h);
        for col in t.chunks_exact_mut(h) {
            self.y.forward(col);
        }
        let (ex, ey) = (self.x.eigenvalues(), self.y.eigenvalues());
        for (kx, col) in t.chunks_exact_mut(h).enumerate() {
            for (ky, v) in col.iter_mut().enumerate() {
                *v *= m(ex[kx] + ey[ky], kx, ky);
            }
        }
        for col in t.chunks_exact_mut(h) {
            self.y.inverse(col);
        }
        let back = transpose(&t, h, w);
        data.copy_from_slice(&back);
        for row in data.chunks_exact_mut(w) {
            self.x.inverse(row);
        }
    }

    /// Solves `(I - a L) x = data` in place.
    pub fn solve_shifted(&self, data: &mut [f64], a: f64) {
        self.apply(data, |lambda, _, _| 1.0 / (1.0 - a * lambda));
    }

    /// Solves `L x = data` on the complement of the kernel; the zero mode of a
    /// pure-Neumann operator is set to zero (mean-zero pinning).
    pub fn solve_singular(&self, data: &mut [f64]) {
        self.apply(data, |lambda, kx, ky| {
            if kx == 0 && ky == 0 && lambda == 0.0 {
                0.0
            } else {
                1.0 / lambda
            }
        });
    }
}

fn transpose(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            out[i * h + j] = data[j * w + i];
        }
    }
    out
}

/// Cached eigenbases for everything the time stepper inverts.
#[derive(Clone, Debug)]
pub struct SpectralSolvers {
    /// Neumann Laplacian on cell centres.
    pub scalar: Separable2d,
    /// No-slip Laplacian on the interior `u_x` faces, `(nx - 1) x ny` unknowns.
    pub ux: Separable2d,
    /// No-slip Laplacian on the interior `u_y` faces, `nx x (ny - 1)` unknowns.
    pub uy: Separable2d,
}

impl SpectralSolvers {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = DctPlanner::new();
        let (nx, ny, dx, dy) = (grid.nx, grid.ny, grid.dx, grid.dy);
        let scalar = Separable2d::new(
            Transform1d::new(&mut planner, Basis::NeumannCell, nx, dx),
            Transform1d::new(&mut planner, Basis::NeumannCell, ny, dy),
        );
        let ux = Separable2d::new(
            Transform1d::new(&mut planner, Basis::DirichletFace, nx, dx),
            Transform1d::new(&mut planner, Basis::DirichletCell, ny, dy),
        );
        let uy = Separable2d::new(
            Transform1d::new(&mut planner, Basis::DirichletCell, nx, dx),
            Transform1d::new(&mut planner, Basis::DirichletFace, ny, dy),
        );
        Self { scalar, ux, uy }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense three-point operator for the given 1D basis.
    fn dense_1d(basis: Basis, cells: usize, h: f64) -> Vec<Vec<f64>> {
        let m = match basis {
            Basis::DirichletFace => cells - 1,
            _ => cells,
        };
        let mut a = vec![vec![0.0; m]; m];
        let s = 1.0 / (h * h);
        for i in 0..m {
            a[i][i] = -2.0 * s;
            if i > 0 {
                a[i][i - 1] = s;
            }
            if i + 1 < m {
                a[i][i + 1] = s;
            }
        }
        match basis {
            Basis::NeumannCell => {
                a[0][0] += s;
                a[m - 1][m - 1] += s;
            }
            Basis::DirichletCell => {
                a[0][0] -= s;
                a[m - 1][m - 1] -= s;
            }
            Basis::DirichletFace => {}
        }
        a
    }

    fn apply_dense_2d(ax: &[Vec<f64>], ay: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let (w, h) = (ax.len(), ay.len());
        let mut out = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let mut s = 0.0;
                for k in 0..w {
                    s += ax[i][k] * x[j * w + k];
                }
                for k in 0..h {
                    s += ay[j][k] * x[k * w + i];
                }
                out[j * w + i] = s;
            }
        }
        out
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn shifted_solves_invert_the_dense_operators() {
        let mut planner = DctPlanner::new();
        for &(bx, by) in &[
            (Basis::NeumannCell, Basis::NeumannCell),
            (Basis::DirichletFace, Basis::DirichletCell),
            (Basis::DirichletCell, Basis::DirichletFace),
        ] {
            let (nx, ny, dx, dy) = (7, 6, 0.3, 0.2);
            let sep = Separable2d::new(
                Transform1d::new(&mut planner, bx, nx, dx),
                Transform1d::new(&mut planner, by, ny, dy),
            );
            let ax = dense_1d(bx, nx, dx);
            let ay = dense_1d(by, ny, dy);
            let b = pseudo_random(sep.width() * sep.height(), 7);
            let mut x = b.clone();
            let a = 0.37;
            sep.solve_shifted(&mut x, a);
            let lx = apply_dense_2d(&ax, &ay, &x);
            for k in 0..b.len() {
                let r = x[k] - a * lx[k] - b[k];
                assert!(r.abs() < 1e-12, "{bx:?}/{by:?} residual {r}");
            }
        }
    }

    #[test]
    fn singular_solve_returns_mean_zero_solution() {
        let mut planner = DctPlanner::new();
        let (nx, ny, dx, dy) = (8, 5, 0.25, 0.4);
        let sep = Separable2d::new(
            Transform1d::new(&mut planner, Basis::NeumannCell, nx, dx),
            Transform1d::new(&mut planner, Basis::NeumannCell, ny, dy),
        );
        let mut b = pseudo_random(nx * ny, 3);
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        let mut x = b.clone();
        sep.solve_singular(&mut x);
        let lx = apply_dense_2d(
            &dense_1d(Basis::NeumannCell, nx, dx),
            &dense_1d(Basis::NeumannCell, ny, dy),
            &x,
        );
        for k in 0..b.len() {
            assert!((lx[k] - b[k]).abs() < 1e-12);
        }
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
    }
}
