//! Cubes, uniform grids, grid functions and the finite-difference
//! derivatives, norms and averages the regularity estimates are stated in.
//!
//! Conventions: `Q_r` is the cube of half-side `r` centered at a point
//! (so the side length is `2r`), grids have an odd number of nodes per
//! axis so the center is always a node, and subcube node selection uses
//! closed membership with a half-cell tolerance. All derivative stencils
//! are second-order centered; queries at boundary nodes are rejected.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cube halfwidth must be positive and finite, got {0}")]
    BadHalfwidth(f64),
    #[error("dimension must be at least 1")]
    BadDimension,
    #[error("points per axis must be an odd integer >= 5, got {0}")]
    BadGridSize(usize),
    #[error("non-finite value {value} sampled at node {node:?} (coords {coords:?})")]
    NonFiniteValue {
        node: Vec<usize>,
        coords: Vec<f64>,
        value: f64,
    },
    #[error("centered stencil out of range at node {0:?}")]
    StencilOutOfRange(Vec<usize>),
    #[error("subcube holds {found} nodes but at least {needed} are required")]
    InsufficientResolution { found: usize, needed: usize },
    #[error("degenerate node set: affine fit design matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("value count {0} does not match grid node count {1}")]
    ValueCount(usize, usize),
}

/// Axis-aligned cube `center + (-halfwidth, halfwidth)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Vec<f64>,
    pub halfwidth: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, halfwidth: f64) -> Result<Self, GridError> {
        if center.is_empty() {
            return Err(GridError::BadDimension);
        }
        if !(halfwidth > 0.0) || !halfwidth.is_finite() {
            return Err(GridError::BadHalfwidth(halfwidth));
        }
        Ok(Cube { center, halfwidth })
    }

    /// Unit cube `Q_1` centered at the origin.
    pub fn unit(dim: usize) -> Self {
        Cube {
            center: vec![0.0; dim],
            halfwidth: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Concentric subcube of the given halfwidth.
    pub fn concentric(&self, halfwidth: f64) -> Result<Self, GridError> {
        Cube::new(self.center.clone(), halfwidth)
    }

    /// Closed membership test with an absolute tolerance per axis.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(xi, ci)| (xi - ci).abs() <= self.halfwidth + tol)
    }
}

/// Uniform tensor grid over a cube, odd node count per axis so the
/// center is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub cube: Cube,
    pub m: usize,
}

impl UniformGrid {
    pub fn new(cube: Cube, m: usize) -> Result<Self, GridError> {
        if m < 5 || m % 2 == 0 {
            return Err(GridError::BadGridSize(m));
        }
        Ok(UniformGrid { cube, m })
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.cube.halfwidth / (self.m - 1) as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.m.pow(self.dim() as u32)
    }

    pub fn center_index(&self) -> Vec<usize> {
        vec![(self.m - 1) / 2; self.dim()]
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for &i in idx.iter().rev() {
            flat = flat * self.m + i;
        }
        flat
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim()];
        for slot in idx.iter_mut() {
            *slot = flat % self.m;
            flat /= self.m;
        }
        idx
    }

    /// Coordinates of the node with the given multi-index. Signed offsets
    /// from the center node guarantee exact symmetry under negation.
    pub fn node_coords(&self, idx: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        let half = ((self.m - 1) / 2) as isize;
        idx.iter()
            .zip(&self.cube.center)
            .map(|(&i, ci)| ci + (i as isize - half) as f64 * h)
            .collect()
    }

    pub fn is_boundary(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| i == 0 || i == self.m - 1)
    }

    /// Mirror of a multi-index through the center node.
    pub fn mirror(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.m - 1 - i).collect()
    }

    /// Flat indices of nodes inside `sub`, using closed membership with
    /// tolerance `h/2` per axis.
    pub fn nodes_in(&self, sub: &Cube) -> Result<Vec<usize>, GridError> {
        if sub.dim() != self.dim() {
            return Err(GridError::DimensionMismatch(sub.dim(), self.dim()));
        }
        let tol = 0.5 * self.spacing();
        let mut out = Vec::new();
        for flat in 0..self.num_nodes() {
            let idx = self.unflatten(flat);
            if sub.contains(&self.node_coords(&idx), tol) {
                out.push(flat);
            }
        }
        Ok(out)
    }
}

/// Scalar field sampled on a uniform grid; the carrier of u, f, h, v_k.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.num_nodes() {
            return Err(GridError::ValueCount(values.len(), grid.num_nodes()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let idx = grid.unflatten(pos);
            let coords = grid.node_coords(&idx);
            return Err(GridError::NonFiniteValue {
                node: idx,
                coords,
                value: values[pos],
            });
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: UniformGrid) -> Self {
        let n = grid.num_nodes();
        GridFunction {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flatten(idx)]
    }

    /// Value at the center node.
    pub fn center_value(&self) -> f64 {
        self.at(&self.grid.center_index())
    }

    /// Pointwise difference with an affine function.
    pub fn minus_affine(&self, ell: &AffineFunction) -> GridFunction {
        let mut values = Vec::with_capacity(self.values.len());
        for flat in 0..self.values.len() {
            let idx = self.grid.unflatten(flat);
            let x = self.grid.node_coords(&idx);
            values.push(self.values[flat] - ell.eval(&x));
        }
        GridFunction {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Point evaluation of `field` at the nodes of an `m`-per-axis grid on `cube`.
pub fn sample(
    field: impl Fn(&[f64]) -> f64,
    cube: &Cube,
    m: usize,
) -> Result<GridFunction, GridError> {
    let grid = UniformGrid::new(cube.clone(), m)?;
    let mut values = Vec::with_capacity(grid.num_nodes());
    for flat in 0..grid.num_nodes() {
        let idx = grid.unflatten(flat);
        let x = grid.node_coords(&idx);
        let v = field(&x);
        if !v.is_finite() {
            return Err(GridError::NonFiniteValue {
                node: idx,
                coords: x,
                value: v,
            });
        }
        values.push(v);
    }
    Ok(GridFunction { grid, values })
}

fn require_interior(grid: &UniformGrid, node: &[usize]) -> Result<(), GridError> {
    if node.len() != grid.dim() {
        return Err(GridError::DimensionMismatch(node.len(), grid.dim()));
    }
    if node.iter().any(|&i| i == 0 || i >= grid.m - 1) {
        return Err(GridError::StencilOutOfRange(node.to_vec()));
    }
    Ok(())
}

/// Centered second-order gradient at an interior node.
pub fn gradient_at(u: &GridFunction, node: &[usize]) -> Result<Vec<f64>, GridError> {
    require_interior(&u.grid, node)?;
    let h = u.grid.spacing();
    let d = u.grid.dim();
    let mut g = vec![0.0; d];
    let mut idx = node.to_vec();
    for (k, gk) in g.iter_mut().enumerate() {
        idx[k] = node[k] + 1;
        let plus = u.at(&idx);
        idx[k] = node[k] - 1;
        let minus = u.at(&idx);
        idx[k] = node[k];
        *gk = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Centered second-order Hessian at an interior node: second differences on
/// the diagonal, cross differences off the diagonal. Exactly symmetric.
pub fn hessian_at(u: &GridFunction, node: &[usize]) -> Result<SymMatrix, GridError> {
    require_interior(&u.grid, node)?;
    let h = u.grid.spacing();
    let h2 = h * h;
    let d = u.grid.dim();
    let mut m = SymMatrix::zeros(d);
    let u0 = u.at(node);
    let mut idx = node.to_vec();
    for i in 0..d {
        idx[i] = node[i] + 1;
        let plus = u.at(&idx);
        idx[i] = node[i] - 1;
        let minus = u.at(&idx);
        idx[i] = node[i];
        m.set(i, i, (plus - 2.0 * u0 + minus) / h2);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            idx[i] = node[i] + 1;
            idx[j] = node[j] + 1;
            let pp = u.at(&idx);
            idx[i] = node[i] - 1;
            idx[j] = node[j] - 1;
            let mm = u.at(&idx);
            idx[i] = node[i] + 1;
            let pm = u.at(&idx);
            idx[i] = node[i] - 1;
            idx[j] = node[j] + 1;
            let mp = u.at(&idx);
            idx[i] = node[i];
            idx[j] = node[j];
            m.set(i, j, (pp + mm - pm - mp) / (4.0 * h2));
        }
    }
    Ok(m)
}

fn selected(u: &GridFunction, sub: &Cube) -> Result<Vec<usize>, GridError> {
    let nodes = u.grid.nodes_in(sub)?;
    let needed = 3usize.pow(u.grid.dim() as u32);
    if nodes.len() < needed {
        return Err(GridError::InsufficientResolution {
            found: nodes.len(),
            needed,
        });
    }
    Ok(nodes)
}

/// Maximum of |u| over the nodes inside `sub`.
pub fn sup_norm(u: &GridFunction, sub: &Cube) -> Result<f64, GridError> {
    let nodes = selected(u, sub)?;
    Ok(nodes
        .into_iter()
        .map(|flat| u.values[flat].abs())
        .fold(0.0, f64::max))
}

/// Discrete `(average over Q_r of |g|^n)^(1/n)` with plain node averaging
/// as the quadrature rule.
pub fn ln_average(g: &GridFunction, sub: &Cube, n: u32) -> Result<f64, GridError> {
    assert!(n >= 1, "ln_average needs n >= 1");
    let nodes = selected(g, sub)?;
    let count = nodes.len() as f64;
    let sum: f64 = nodes
        .into_iter()
        .map(|flat| g.values[flat].abs().powi(n as i32))
        .sum();
    Ok((sum / count).powf(1.0 / n as f64))
}

/// Affine function `a + b . X`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineFunction {
    pub a: f64,
    pub b: Vec<f64>,
}

impl AffineFunction {
    pub fn zero(dim: usize) -> Self {
        AffineFunction {
            a: 0.0,
            b: vec![0.0; dim],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.a + self.b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>()
    }

    pub fn add(&self, other: &AffineFunction) -> AffineFunction {
        AffineFunction {
            a: self.a + other.a,
            b: self
                .b
                .iter()
                .zip(&other.b)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }
}

/// Least-squares fit of `a + b . X` to the node values of `u` over `sub`.
pub fn best_affine_fit(u: &GridFunction, sub: &Cube) -> Result<AffineFunction, GridError> {
    let nodes = selected(u, sub)?;
    let d = u.grid.dim();
    let p = d + 1;
    // normal equations on the (1, x) design
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = nalgebra::DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for &flat in &nodes {
        let idx = u.grid.unflatten(flat);
        let x = u.grid.node_coords(&idx);
        row[0] = 1.0;
        row[1..].copy_from_slice(&x);
        let y = u.values[flat];
        for i in 0..p {
            xty[i] += row[i] * y;
            for j in 0..p {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    let chol = xtx.cholesky().ok_or(GridError::RankDeficient)?;
    let sol = chol.solve(&xty);
    Ok(AffineFunction {
        a: sol[0],
        b: sol.iter().skip(1).copied().collect(),
    })
}

/// d x d real symmetric matrix with exact symmetry by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = SymMatrix::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Build from an arbitrary entry function, symmetrized as (f(i,j)+f(j,i))/2.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, 0.5 * (f(i, j) + f(j, i)));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both (i, j) and (j, i).
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        self.add(&other.scale(-1.0))
    }

    /// Frobenius inner product; equals trace(A M) for symmetric A, M.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j));
        let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eig
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.eigenvalues().into_iter().map(f64::abs).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit2() -> Cube {
        Cube::unit(2)
    }

    #[test]
    fn sample_zero_field() {
        let u = sample(|_| 0.0, &unit2(), 5).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_linear_field_nodes() {
        let u = sample(|x| x[0], &unit2(), 5).unwrap();
        assert_eq!(u.center_value(), 0.0);
        assert_eq!(u.at(&[4, 0]), 1.0);
        assert_eq!(u.at(&[0, 4]), -1.0);
    }

    #[test]
    fn sample_radial_power_corners() {
        let u = sample(|x| norm(x).powf(0.1), &unit2(), 33).unwrap();
        assert_eq!(u.center_value(), 0.0);
        let max = u.values.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(max, 2f64.sqrt().powf(0.1), epsilon = 1e-12);
    }

    #[test]
    fn sample_rejects_non_finite() {
        let err = sample(|x| 1.0 / x[0], &unit2(), 5).unwrap_err();
        match err {
            GridError::NonFiniteValue { node, .. } => assert_eq!(node, vec![2, 0]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn gradient_exact_on_affine_and_even() {
        let u = sample(|x| x[0], &unit2(), 9).unwrap();
        let g = gradient_at(&u, &[4, 4]).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        let u = sample(|x| x[0] * x[0], &unit2(), 9).unwrap();
        let g = gradient_at(&u, &[4, 4]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_taylor_error_on_sine() {
        // m = 21 on the unit cube gives h = 0.1
        let u = sample(|x| x[0].sin(), &unit2(), 21).unwrap();
        let g = gradient_at(&u, &[10, 10]).unwrap();
        let h = u.grid.spacing();
        assert_relative_eq!(h, 0.1, epsilon = 1e-15);
        // centered difference of sin at 0 is exactly sin(h)/h
        assert_relative_eq!(g[0], h.sin() / h, epsilon = 1e-14);
        assert!((g[0] - (1.0 - h * h / 6.0)).abs() < h.powi(4));
    }

    #[test]
    fn gradient_rejects_boundary() {
        let u = sample(|x| x[0], &unit2(), 5).unwrap();
        assert!(matches!(
            gradient_at(&u, &[0, 2]),
            Err(GridError::StencilOutOfRange(_))
        ));
    }

    #[test]
    fn hessian_exact_on_bilinear() {
        let u = sample(|x| x[0] * x[1], &unit2(), 9).unwrap();
        let m = hessian_at(&u, &[4, 4]).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 1.0);
    }

    #[test]
    fn hessian_zero_at_center_of_odd_function() {
        let u = sample(|x| x[0].powi(3) - 3.0 * x[0] * x[1] * x[1] + x[1].powi(5), &unit2(), 17)
            .unwrap();
        let m = hessian_at(&u, &[8, 8]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn hessian_exact_on_cubic_entry() {
        let u = sample(|x| x[0].powi(3), &unit2(), 9).unwrap();
        let m0 = hessian_at(&u, &[4, 4]).unwrap();
        assert_eq!(m0.get(0, 0), 0.0);
        // node x1 = 0.5 is index 6 with m = 9
        let m1 = hessian_at(&u, &[6, 4]).unwrap();
        assert_relative_eq!(m1.get(0, 0), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sup_norm_on_subcubes() {
        let zero = sample(|_| 0.0, &unit2(), 9).unwrap();
        let sub = unit2().concentric(0.5).unwrap();
        assert_eq!(sup_norm(&zero, &sub).unwrap(), 0.0);
        let u = sample(|x| x[0], &unit2(), 9).unwrap();
        assert_eq!(sup_norm(&u, &sub).unwrap(), 0.5);
    }

    #[test]
    fn sup_norm_radial_square() {
        let u = sample(|x| x.iter().map(|v| v * v).sum::<f64>(), &unit2(), 33).unwrap();
        let sub = unit2().concentric(0.25).unwrap();
        let got = sup_norm(&u, &sub).unwrap();
        // corner value 2 * 0.25^2 = 0.125 within one cell (selection tol h/2)
        let h = u.grid.spacing();
        assert!((got - 0.125).abs() <= 2.0 * 0.3 * h + 1e-12, "got {got}");
    }

    #[test]
    fn sup_norm_insufficient_resolution() {
        let u = sample(|x| x[0], &unit2(), 9).unwrap();
        let sub = unit2().concentric(1e-3).unwrap();
        assert!(matches!(
            sup_norm(&u, &sub),
            Err(GridError::InsufficientResolution { .. })
        ));
    }

    #[test]
    fn ln_average_constants() {
        let g = sample(|_| 3.0, &unit2(), 9).unwrap();
        let sub = unit2().concentric(0.5).unwrap();
        assert_relative_eq!(ln_average(&g, &sub, 2).unwrap(), 3.0, epsilon = 1e-13);
        let z = sample(|_| 0.0, &unit2(), 9).unwrap();
        assert_eq!(ln_average(&z, &sub, 2).unwrap(), 0.0);
    }

    #[test]
    fn ln_average_power_slope() {
        let g = sample(|x| norm(x).powf(0.3), &unit2(), 321).unwrap();
        let radii = [0.4, 0.2, 0.1];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in radii {
            let sub = unit2().concentric(r).unwrap();
            let a = ln_average(&g, &sub, 2).unwrap();
            xs.push(r.ln());
            ys.push(a.ln());
        }
        let slope = ols_slope(&xs, &ys);
        assert!((slope - 0.3).abs() < 0.05, "slope {slope}");
    }

    fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        num / den
    }

    #[test]
    fn affine_fit_recovers_affine_exactly() {
        let ell = AffineFunction {
            a: 0.7,
            b: vec![-1.2, 0.4],
        };
        let u = sample(|x| ell.eval(x), &unit2(), 9).unwrap();
        let fit = best_affine_fit(&u, &unit2()).unwrap();
        assert_relative_eq!(fit.a, ell.a, epsilon = 1e-12);
        assert_relative_eq!(fit.b[0], ell.b[0], epsilon = 1e-12);
        assert_relative_eq!(fit.b[1], ell.b[1], epsilon = 1e-12);
    }

    #[test]
    fn affine_fit_quadratic_mean() {
        // fit of x1^2 over Q_r: b = 0 by symmetry, a -> r^2/3 as m grows
        let u = sample(|x| x[0] * x[0], &unit2(), 201).unwrap();
        let r = 0.5;
        let fit = best_affine_fit(&u, &unit2().concentric(r).unwrap()).unwrap();
        assert!(fit.b[0].abs() < 1e-12);
        assert!((fit.a - r * r / 3.0).abs() < 0.02 * r * r, "a = {}", fit.a);
    }

    #[test]
    fn affine_fit_cubic_slope() {
        // fit of x1^3 over Q_r: a = 0 by oddness, b1 -> 3 r^2 / 5
        let u = sample(|x| x[0].powi(3), &unit2(), 201).unwrap();
        let r = 0.5;
        let fit = best_affine_fit(&u, &unit2().concentric(r).unwrap()).unwrap();
        assert!(fit.a.abs() < 1e-12);
        assert!(
            (fit.b[0] - 3.0 * r * r / 5.0).abs() < 0.02 * r * r,
            "b1 = {}",
            fit.b[0]
        );
    }

    #[test]
    fn affine_fit_shift_invariance() {
        let u = sample(|x| (x[0] * 3.0).sin() + x[1] * x[1], &unit2(), 17).unwrap();
        let ell = AffineFunction {
            a: 1.5,
            b: vec![0.3, -0.8],
        };
        let shifted = GridFunction::new(
            u.grid.clone(),
            (0..u.values.len())
                .map(|flat| {
                    let idx = u.grid.unflatten(flat);
                    u.values[flat] + ell.eval(&u.grid.node_coords(&idx))
                })
                .collect(),
        )
        .unwrap();
        let f0 = best_affine_fit(&u, &unit2()).unwrap();
        let f1 = best_affine_fit(&shifted, &unit2()).unwrap();
        assert_relative_eq!(f1.a, f0.a + ell.a, epsilon = 1e-10);
        assert_relative_eq!(f1.b[0], f0.b[0] + ell.b[0], epsilon = 1e-10);
        assert_relative_eq!(f1.b[1], f0.b[1] + ell.b[1], epsilon = 1e-10);
    }

    #[test]
    fn norms_monotone_under_inclusion_and_in_n() {
        let g = sample(|x| (x[0] * 2.0).cos() + x[1], &unit2(), 33).unwrap();
        let small = unit2().concentric(0.3).unwrap();
        let large = unit2().concentric(0.8).unwrap();
        assert!(sup_norm(&g, &small).unwrap() <= sup_norm(&g, &large).unwrap());
        assert!(ln_average(&g, &small, 2).unwrap() <= sup_norm(&g, &small).unwrap() + 1e-14);
        // ln_average nondecreasing in n, approaching sup from below
        let sub = small;
        let mut prev = 0.0;
        for n in [1u32, 2, 4, 8] {
            let a = ln_average(&g, &sub, n).unwrap();
            assert!(a + 1e-13 >= prev, "n = {n}");
            assert!(a <= sup_norm(&g, &sub).unwrap() + 1e-13);
            prev = a;
        }
    }

    #[test]
    fn sym_matrix_eigen_norms() {
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 1, -1.0);
        m.set(0, 1, 0.0);
        assert_relative_eq!(m.spectral_norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.nuclear_norm(), 2.0, epsilon = 1e-12);
        assert_eq!(m.trace(), 0.0);
    }
}
