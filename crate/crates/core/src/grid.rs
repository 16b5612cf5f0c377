//! Rectangular MAC grid, cell-centred scalar fields and face-staggered vector
//! fields, together with the discrete inner products and norms every other
//! module measures things with.
//!
//! Storage is row-major with `y` as the slow index:
//!
//! * scalars: `nx * ny` values, index `j * nx + i`, located at cell centres
//!   `((i + 1/2) dx, (j + 1/2) dy)`;
//! * `u_x`: `(nx + 1) * ny` values, index `j * (nx + 1) + i`, on the vertical
//!   face `x = i dx`;
//! * `u_y`: `nx * (ny + 1)` values, index `j * nx + i`, on the horizontal face
//!   `y = j dy`.
//!
//! Wall-normal faces (`i = 0, nx` for `u_x`, `j = 0, ny` for `u_y`) carry the
//! no-slip value zero. Tangential no-slip enters through reflected ghosts in
//! the operators, and homogeneous Neumann data for scalars through mirrored
//! ghosts (zero boundary flux).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Boundary condition attached to scalar unknowns (oxygen, cell density).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarBoundary {
    /// Zero normal derivative on every wall.
    HomogeneousNeumann,
}

/// Boundary condition attached to the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelocityBoundary {
    /// `u = 0` on every wall.
    NoSlip,
}

/// Uniform discretisation of `[0, lx] x [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
    pub bc_scalar: ScalarBoundary,
    pub bc_velocity: VelocityBoundary,
}

/// Smallest admissible cell count per direction.
pub const MIN_CELLS: usize = 4;

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < MIN_CELLS || ny < MIN_CELLS {
            return Err(SimError::InvalidGrid(format!(
                "too few cells: {nx} x {ny} (need at least {MIN_CELLS} per direction)"
            )));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(SimError::InvalidGrid(format!(
                "domain lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
            bc_scalar: ScalarBoundary::HomogeneousNeumann,
            bc_velocity: VelocityBoundary::NoSlip,
        })
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Measure of a single cell.
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Measure of the domain `|O|`.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn ux_len(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn uy_len(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ux_idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn uy_idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn ux_position(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn uy_position(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, j as f64 * self.dy)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.lx == other.lx && self.ly == other.ly
    }
}

/// Builds a grid; see [`Grid::new`].
pub fn make_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid> {
    Grid::new(nx, ny, lx, ly)
}

/// Cell-centred scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.cells()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(SimError::Precondition(format!(
                "scalar field needs {} values, got {}",
                grid.cells(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("scalar field"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &ScalarField) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(SimError::GridMismatch)
        }
    }
}

/// Face-staggered (MAC) vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            ux: vec![0.0; grid.ux_len()],
            uy: vec![0.0; grid.uy_len()],
        }
    }

    /// Samples `fx` on vertical faces and `fy` on horizontal faces; wall-normal
    /// faces are set to zero regardless of the sampled value.
    pub fn from_fns(grid: Grid, fx: impl Fn(f64, f64) -> f64, fy: impl Fn(f64, f64) -> f64) -> Self {
        let mut v = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 1..grid.nx {
                let (x, y) = grid.ux_position(i, j);
                v.ux[grid.ux_idx(i, j)] = fx(x, y);
            }
        }
        for j in 1..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.uy_position(i, j);
                v.uy[grid.uy_idx(i, j)] = fy(x, y);
            }
        }
        v
    }

    pub fn from_components(grid: Grid, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != grid.ux_len() || uy.len() != grid.uy_len() {
            return Err(SimError::Precondition(format!(
                "vector field needs {} + {} values, got {} + {}",
                grid.ux_len(),
                grid.uy_len(),
                ux.len(),
                uy.len()
            )));
        }
        if ux.iter().chain(&uy).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("vector field"));
        }
        Ok(Self { grid, ux, uy })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ux_values(&self) -> &[f64] {
        &self.ux
    }

    pub fn uy_values(&self) -> &[f64] {
        &self.uy
    }

    pub fn ux_values_mut(&mut self) -> &mut [f64] {
        &mut self.ux
    }

    pub fn uy_values_mut(&mut self) -> &mut [f64] {
        &mut self.uy
    }

    #[inline]
    pub fn ux(&self, i: usize, j: usize) -> f64 {
        self.ux[self.grid.ux_idx(i, j)]
    }

    #[inline]
    pub fn uy(&self, i: usize, j: usize) -> f64 {
        self.uy[self.grid.uy_idx(i, j)]
    }

    #[inline]
    pub fn set_ux(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.ux_idx(i, j);
        self.ux[k] = v;
    }

    #[inline]
    pub fn set_uy(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.uy_idx(i, j);
        self.uy[k] = v;
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            ux: self.ux.iter().map(|v| a * v).collect(),
            uy: self.uy.iter().map(|v| a * v).collect(),
        }
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &VectorField) -> Self {
        Self {
            grid: self.grid,
            ux: self.ux.iter().zip(&other.ux).map(|(x, y)| x + a * y).collect(),
            uy: self.uy.iter().zip(&other.uy).map(|(x, y)| x + a * y).collect(),
        }
    }

    /// Largest face speed per direction.
    pub fn max_abs_components(&self) -> (f64, f64) {
        let mx = self.ux.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let my = self.uy.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (mx, my)
    }

    /// Number of wall-normal faces carrying a nonzero value.
    pub fn wall_violations(&self) -> usize {
        let g = &self.grid;
        let mut count = 0;
        for j in 0..g.ny {
            count += (self.ux(0, j) != 0.0) as usize + (self.ux(g.nx, j) != 0.0) as usize;
        }
        for i in 0..g.nx {
            count += (self.uy(i, 0) != 0.0) as usize + (self.uy(i, g.ny) != 0.0) as usize;
        }
        count
    }

    /// Sets every wall-normal face to zero.
    pub fn enforce_no_slip(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.set_ux(0, j, 0.0);
            self.set_ux(g.nx, j, 0.0);
        }
        for i in 0..g.nx {
            self.set_uy(i, 0, 0.0);
            self.set_uy(i, g.ny, 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    pub(crate) fn check_grid(&self, other: &VectorField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(SimError::GridMismatch)
        }
    }
}

/// Which discrete norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Linf,
    /// Seminorm `|grad f|_{L2}` with the field's own boundary condition.
    H1Semi,
}

/// Discrete `(a, b) = sum a_i b_i dx dy`.
pub fn inner_product(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_grid(b)?;
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(s * a.grid.cell_area())
}

/// Discrete `L2` pairing of two MAC fields; every face carries weight `dx dy`.
pub fn vector_inner_product(a: &VectorField, b: &VectorField) -> Result<f64> {
    a.check_grid(b)?;
    let sx: f64 = a.ux.iter().zip(&b.ux).map(|(x, y)| x * y).sum();
    let sy: f64 = a.uy.iter().zip(&b.uy).map(|(x, y)| x * y).sum();
    Ok((sx + sy) * a.grid.cell_area())
}

/// Fields that carry the discrete norms of [`NormKind`].
pub trait Normed {
    fn norm(&self, kind: NormKind) -> f64;
}

impl Normed for ScalarField {
    fn norm(&self, kind: NormKind) -> f64 {
        let g = &self.grid;
        match kind {
            NormKind::L2 => (self.values.iter().map(|v| v * v).sum::<f64>() * g.cell_area()).sqrt(),
            NormKind::Linf => self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            NormKind::H1Semi => scalar_gradient_sq(self).sqrt(),
        }
    }
}

impl Normed for VectorField {
    fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => vector_inner_product(self, self).unwrap_or(f64::NAN).sqrt(),
            NormKind::Linf => {
                let (mx, my) = self.max_abs_components();
                mx.max(my)
            }
            NormKind::H1Semi => vector_gradient_sq(self).sqrt(),
        }
    }
}

/// Evaluates `norm(field, kind)`.
pub fn norm<F: Normed>(field: &F, kind: NormKind) -> f64 {
    field.norm(kind)
}

/// `|grad c|^2` over interior faces; boundary faces carry no flux.
pub(crate) fn scalar_gradient_sq(c: &ScalarField) -> f64 {
    let g = &c.grid;
    let (nx, ny) = (g.nx, g.ny);
    let v = &c.values;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for j in 0..ny {
        let row = &v[j * nx..(j + 1) * nx];
        for w in row.windows(2) {
            let d = w[1] - w[0];
            sx += d * d;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let d = v[j * nx + i] - v[(j - 1) * nx + i];
            sy += d * d;
        }
    }
    (sx / (g.dx * g.dx) + sy / (g.dy * g.dy)) * g.cell_area()
}

/// `|grad u|^2` consistent with the no-slip vector Laplacian, so that
/// `-(lap u, u) = |grad u|^2` holds exactly.
pub(crate) fn vector_gradient_sq(u: &VectorField) -> f64 {
    let g = &u.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (idx2, idy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let mut s = 0.0;
    // u_x: Dirichlet faces in x, reflected ghosts in y.
    for j in 0..ny {
        for i in 0..nx {
            let d = u.ux(i + 1, j) - u.ux(i, j);
            s += d * d * idx2;
        }
    }
    for i in 1..nx {
        for j in 1..ny {
            let d = u.ux(i, j) - u.ux(i, j - 1);
            s += d * d * idy2;
        }
        let (a, b) = (u.ux(i, 0), u.ux(i, ny - 1));
        s += 2.0 * (a * a + b * b) * idy2;
    }
    // u_y: Dirichlet faces in y, reflected ghosts in x.
    for i in 0..nx {
        for j in 0..ny {
            let d = u.uy(i, j + 1) - u.uy(i, j);
            s += d * d * idy2;
        }
    }
    for j in 1..ny {
        for i in 1..nx {
            let d = u.uy(i, j) - u.uy(i - 1, j);
            s += d * d * idx2;
        }
        let (a, b) = (u.uy(0, j), u.uy(nx - 1, j));
        s += 2.0 * (a * a + b * b) * idx2;
    }
    s * g.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_spacings() {
        let g = make_grid(64, 64, 1.0, 1.0).unwrap();
        assert_eq!(g.dx, 1.0 / 64.0);
        assert_eq!(g.dy, 1.0 / 64.0);
        let g = make_grid(4, 8, 2.0, 1.0).unwrap();
        assert_eq!(g.dx, 0.5);
        assert_eq!(g.dy, 0.125);
    }

    #[test]
    fn grid_rejects_bad_dimensions() {
        assert!(matches!(make_grid(2, 64, 1.0, 1.0), Err(SimError::InvalidGrid(_))));
        assert!(make_grid(8, 3, 1.0, 1.0).is_err());
        assert!(make_grid(8, 8, 0.0, 1.0).is_err());
        assert!(make_grid(8, 8, 1.0, -2.0).is_err());
        assert!(make_grid(8, 8, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn constant_inner_products() {
        let g = make_grid(16, 16, 1.0, 1.0).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let zero = ScalarField::zeros(g);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(inner_product(&one, &zero).unwrap(), 0.0);

        let g = make_grid(8, 4, 2.0, 1.0).unwrap();
        let a = ScalarField::constant(g, 2.0);
        let b = ScalarField::constant(g, 3.0);
        assert!((inner_product(&a, &b).unwrap() - 12.0).abs() < 1e-13);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = ScalarField::zeros(make_grid(8, 8, 1.0, 1.0).unwrap());
        let b = ScalarField::zeros(make_grid(8, 8, 2.0, 1.0).unwrap());
        assert!(matches!(inner_product(&a, &b), Err(SimError::GridMismatch)));
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = make_grid(16, 16, 1.0, 1.0).unwrap();
        let five = ScalarField::constant(g, 5.0);
        assert_eq!(norm(&five, NormKind::H1Semi), 0.0);
        assert_eq!(norm(&five, NormKind::Linf), 5.0);
        let one = ScalarField::constant(g, 1.0);
        assert!((norm(&one, NormKind::L2) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cosine_l2_norm_midpoint_quadrature() {
        let g = make_grid(256, 256, 1.0, 1.0).unwrap();
        let c = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let expected = 0.5_f64.sqrt();
        assert!((norm(&c, NormKind::L2) - expected).abs() < 1e-4);
    }

    #[test]
    fn vector_fields_keep_walls_zero() {
        let g = make_grid(6, 5, 1.0, 1.0).unwrap();
        let v = VectorField::from_fns(g, |_, _| 1.0, |_, _| -2.0);
        assert_eq!(v.wall_violations(), 0);
        assert_eq!(v.ux(3, 2), 1.0);
        assert_eq!(v.uy(3, 2), -2.0);
        assert_eq!(v.ux(0, 2), 0.0);
        assert_eq!(v.uy(3, 5), 0.0);
    }

    #[test]
    fn vector_h1_of_zero_and_l2_of_uniform_interior() {
        let g = make_grid(8, 8, 1.0, 1.0).unwrap();
        let z = VectorField::zeros(g);
        assert_eq!(norm(&z, NormKind::H1Semi), 0.0);
        assert_eq!(norm(&z, NormKind::L2), 0.0);
        let v = VectorField::from_fns(g, |_, _| 1.0, |_, _| 0.0);
        // 7 interior columns of 8 faces each, each face weighted dx dy.
        let expected = (7.0 * 8.0 / 64.0_f64).sqrt();
        assert!((norm(&v, NormKind::L2) - expected).abs() < 1e-14);
        assert!(norm(&v, NormKind::H1Semi) > 0.0);
    }
}
