//! Dirichlet solvers producing the discrete solution surrogates on which
//! all regularity measurements run.
//!
//! The discrete operator is `F(X, D^2_h u)` with the same centered
//! stencils as `grid::hessian_at`, so an independent residual recheck
//! through `residual` agrees with the solver's own convergence test.
//! Iteration is red-black successive relaxation; the relaxation factor
//! defaults to the classical optimum for the grid and is cut back
//! whenever the residual grows. Scenarios are required to satisfy the
//! nodewise dominance condition `a_ii - sum_{j != i} |a_ij| >= 0`, which
//! keeps the discrete comparison principle exact.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{hessian_at, GridError, GridFunction, UniformGrid};
use crate::operators::{EllipticOperator, OperatorError, OperatorKind};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("operator kind {found} not supported by {solver}")]
    WrongKind {
        solver: &'static str,
        found: &'static str,
    },
    #[error("non-monotone stencil at node {node:?}: a_{axis}{axis} - sum |a_ij| = {slack}")]
    NonMonotoneStencil {
        node: Vec<usize>,
        axis: usize,
        slack: f64,
    },
    #[error("negative boundary value {value} at node {node:?}")]
    NegativeBoundary { node: Vec<usize>, value: f64 },
    #[error("exponent mu must lie in (0, 1), got {0}")]
    MuOutOfRange(f64),
    #[error("source grid does not match problem grid")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Dirichlet problem `F(X, D^2 u) = f` on a uniform grid with boundary
/// values taken from a scalar function on the boundary nodes.
#[derive(Clone)]
pub struct DirichletProblem {
    pub operator: EllipticOperator,
    pub source: GridFunction,
    pub boundary: ScalarField,
}

impl DirichletProblem {
    pub fn grid(&self) -> &UniformGrid {
        &self.source.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation factor; `None` selects the classical optimum for the grid.
    pub relaxation: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol: 1e-10,
            max_iter: 500_000,
            relaxation: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Per-node stencil coefficients of `trace(A(X) D^2_h .)`.
struct LinearStencil {
    /// flat indices of interior nodes
    interior: Vec<usize>,
    /// d diagonal coefficients per interior node
    diag: Vec<f64>,
    /// d(d-1)/2 off-diagonal coefficients per interior node (pairs i < j)
    off: Vec<f64>,
    strides: Vec<usize>,
    h2: f64,
    dim: usize,
    npairs: usize,
}

impl LinearStencil {
    fn assemble(
        grid: &UniformGrid,
        coeff_at: &dyn Fn(&[f64]) -> crate::grid::SymMatrix,
    ) -> Result<Self, SolverError> {
        let d = grid.dim();
        let npairs = d * (d - 1) / 2;
        let mut strides = vec![1usize; d];
        for k in 1..d {
            strides[k] = strides[k - 1] * grid.m;
        }
        let mut interior = Vec::new();
        let mut diag = Vec::new();
        let mut off = Vec::new();
        for flat in 0..grid.num_nodes() {
            let idx = grid.unflatten(flat);
            if grid.is_boundary(&idx) {
                continue;
            }
            let a = coeff_at(&grid.node_coords(&idx));
            for i in 0..d {
                let mut slack = a.get(i, i);
                for j in 0..d {
                    if j != i {
                        slack -= a.get(i, j).abs();
                    }
                }
                if slack < -1e-12 {
                    return Err(SolverError::NonMonotoneStencil {
                        node: idx,
                        axis: i,
                        slack,
                    });
                }
                diag.push(a.get(i, i));
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    off.push(a.get(i, j));
                }
            }
            interior.push(flat);
        }
        let h = grid.spacing();
        Ok(LinearStencil {
            interior,
            diag,
            off,
            strides,
            h2: h * h,
            dim: d,
            npairs,
        })
    }

    /// `trace(A D^2_h u)` at interior slot `s` whose flat index is `flat`.
    #[inline]
    fn apply(&self, s: usize, flat: usize, u: &[f64]) -> f64 {
        let d = self.dim;
        let u0 = u[flat];
        let mut lu = 0.0;
        for i in 0..d {
            let si = self.strides[i];
            lu += self.diag[s * d + i] * (u[flat + si] - 2.0 * u0 + u[flat - si]);
        }
        let mut p = 0;
        for i in 0..d {
            let si = self.strides[i];
            for j in (i + 1)..d {
                let sj = self.strides[j];
                let cross =
                    u[flat + si + sj] + u[flat - si - sj] - u[flat + si - sj] - u[flat - si + sj];
                // trace picks up a_ij twice; centered cross difference has 4h^2
                lu += self.off[s * self.npairs + p] * cross * 0.5;
                p += 1;
            }
        }
        lu / self.h2
    }

    /// Center-coefficient magnitude of the stencil at slot `s`.
    #[inline]
    fn center(&self, s: usize) -> f64 {
        let d = self.dim;
        let sum: f64 = (0..d).map(|i| self.diag[s * d + i]).sum();
        2.0 * sum / self.h2
    }
}

fn boundary_fill(
    grid: &UniformGrid,
    g: &ScalarField,
) -> (Vec<f64>, Vec<bool>) {
    let mut u = vec![0.0; grid.num_nodes()];
    let mut is_boundary = vec![false; grid.num_nodes()];
    for flat in 0..grid.num_nodes() {
        let idx = grid.unflatten(flat);
        if grid.is_boundary(&idx) {
            u[flat] = g(&grid.node_coords(&idx));
            is_boundary[flat] = true;
        }
    }
    (u, is_boundary)
}

fn auto_relaxation(grid: &UniformGrid, params: &SolverParams) -> f64 {
    params.relaxation.unwrap_or_else(|| {
        let h = grid.spacing();
        let ratio = std::f64::consts::PI * h / (2.0 * grid.cube.halfwidth);
        (2.0 / (1.0 + ratio.sin())).min(1.95)
    })
}

fn node_colors(grid: &UniformGrid, interior: &[usize]) -> Vec<u8> {
    interior
        .iter()
        .map(|&flat| (grid.unflatten(flat).iter().sum::<usize>() % 2) as u8)
        .collect()
}

/// Red-black relaxation sweeps for a fixed linear stencil. Returns
/// (iterations, final residual, converged).
fn relax_linear(
    stencil: &LinearStencil,
    colors: &[u8],
    u: &mut [f64],
    rhs: &[f64],
    mut omega: f64,
    tol: f64,
    max_iter: usize,
) -> (usize, f64, bool) {
    let mut last_check = f64::INFINITY;
    for sweep in 1..=max_iter {
        let mut max_r: f64 = 0.0;
        for color in 0..2u8 {
            for (s, &flat) in stencil.interior.iter().enumerate() {
                if colors[s] != color {
                    continue;
                }
                let r = stencil.apply(s, flat, u) - rhs[s];
                max_r = max_r.max(r.abs());
                u[flat] += omega * r / stencil.center(s);
            }
        }
        if max_r <= tol {
            // verification pass without updates
            let mut verified: f64 = 0.0;
            for (s, &flat) in stencil.interior.iter().enumerate() {
                verified = verified.max((stencil.apply(s, flat, u) - rhs[s]).abs());
            }
            if verified <= tol {
                return (sweep, verified, true);
            }
        }
        if sweep % 200 == 0 {
            if max_r > 10.0 * last_check && omega > 0.05 {
                // residual grew: pull the relaxation back toward (and below) 1
                omega = if omega > 1.0 { 1.0 + (omega - 1.0) / 2.0 } else { omega / 2.0 };
            }
            last_check = max_r;
        }
    }
    let mut final_r: f64 = 0.0;
    for (s, &flat) in stencil.interior.iter().enumerate() {
        final_r = final_r.max((stencil.apply(s, flat, u) - rhs[s]).abs());
    }
    (max_iter, final_r, false)
}

/// Solves `trace(A(X) D^2_h u) = f` with Dirichlet data.
pub fn solve_linear(p: &DirichletProblem, params: &SolverParams) -> Result<SolveReport, SolverError> {
    let coeff = match &p.operator.kind {
        OperatorKind::Linear { coeff } => coeff.clone(),
        OperatorKind::Pucci { .. } => {
            return Err(SolverError::WrongKind {
                solver: "solve_linear",
                found: "Pucci",
            })
        }
        OperatorKind::Bellman { .. } => {
            return Err(SolverError::WrongKind {
                solver: "solve_linear",
                found: "Bellman",
            })
        }
    };
    let grid = p.grid().clone();
    let stencil = LinearStencil::assemble(&grid, &*coeff)?;
    let colors = node_colors(&grid, &stencil.interior);
    let rhs: Vec<f64> = stencil
        .interior
        .iter()
        .map(|&flat| p.source.values[flat])
        .collect();
    let (mut u, _) = boundary_fill(&grid, &p.boundary);
    let omega = auto_relaxation(&grid, params);
    let (iterations, final_residual, converged) = relax_linear(
        &stencil,
        &colors,
        &mut u,
        &rhs,
        omega,
        params.tol,
        params.max_iter,
    );
    Ok(SolveReport {
        solution: GridFunction::new(grid, u)?,
        iterations,
        final_residual,
        converged,
    })
}

/// Policy iteration for `min_i [trace(A_i(X) D^2 u) + c_i] = f`.
pub fn solve_bellman(
    p: &DirichletProblem,
    params: &SolverParams,
) -> Result<SolveReport, SolverError> {
    let pieces = match &p.operator.kind {
        OperatorKind::Bellman { pieces } => pieces.clone(),
        OperatorKind::Linear { .. } => {
            return Err(SolverError::WrongKind {
                solver: "solve_bellman",
                found: "Linear",
            })
        }
        OperatorKind::Pucci { .. } => {
            return Err(SolverError::WrongKind {
                solver: "solve_bellman",
                found: "Pucci",
            })
        }
    };
    let grid = p.grid().clone();
    let stencils: Vec<(LinearStencil, f64)> = pieces
        .iter()
        .map(|(a, c)| LinearStencil::assemble(&grid, &**a).map(|s| (s, *c)))
        .collect::<Result<_, _>>()?;
    let interior = stencils[0].0.interior.clone();
    let colors = node_colors(&grid, &interior);
    let d = grid.dim();
    let npairs = d * (d - 1) / 2;
    let f: Vec<f64> = interior.iter().map(|&flat| p.source.values[flat]).collect();
    let (mut u, _) = boundary_fill(&grid, &p.boundary);
    let omega = auto_relaxation(&grid, params);

    let mut policy = vec![0usize; interior.len()];
    let mut total_sweeps = 0usize;
    let max_policy_iters = 100usize;
    for _ in 0..max_policy_iters {
        // linear stage for the current policy
        let mut current = LinearStencil {
            interior: interior.clone(),
            diag: vec![0.0; interior.len() * d],
            off: vec![0.0; interior.len() * npairs],
            strides: stencils[0].0.strides.clone(),
            h2: stencils[0].0.h2,
            dim: d,
            npairs,
        };
        let mut rhs = vec![0.0; interior.len()];
        for s in 0..interior.len() {
            let (stencil, c) = &stencils[policy[s]];
            current.diag[s * d..(s + 1) * d].copy_from_slice(&stencil.diag[s * d..(s + 1) * d]);
            current.off[s * npairs..(s + 1) * npairs]
                .copy_from_slice(&stencil.off[s * npairs..(s + 1) * npairs]);
            rhs[s] = f[s] - c;
        }
        let budget = params.max_iter.saturating_sub(total_sweeps).max(1);
        let (sweeps, _, inner_ok) = relax_linear(
            &current,
            &colors,
            &mut u,
            &rhs,
            omega,
            params.tol,
            budget,
        );
        total_sweeps += sweeps;

        // policy improvement and Bellman residual
        let mut changed = false;
        let mut residual: f64 = 0.0;
        for (s, &flat) in interior.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_i = policy[s];
            for (i, (stencil, c)) in stencils.iter().enumerate() {
                let v = stencil.apply(s, flat, &u) + c;
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            residual = residual.max((best - f[s]).abs());
            if best_i != policy[s] {
                policy[s] = best_i;
                changed = true;
            }
        }
        if !changed && residual <= params.tol && inner_ok {
            return Ok(SolveReport {
                solution: GridFunction::new(grid, u)?,
                iterations: total_sweeps,
                final_residual: residual,
                converged: true,
            });
        }
        if total_sweeps >= params.max_iter {
            break;
        }
    }
    // policy cycling or sweep budget exhausted
    let mut residual: f64 = 0.0;
    for (s, &flat) in interior.iter().enumerate() {
        let best = stencils
            .iter()
            .map(|(stencil, c)| stencil.apply(s, flat, &u) + c)
            .fold(f64::INFINITY, f64::min);
        residual = residual.max((best - f[s]).abs());
    }
    Ok(SolveReport {
        solution: GridFunction::new(grid, u)?,
        iterations: total_sweeps,
        final_residual: residual,
        converged: false,
    })
}

#[derive(Debug, Clone)]
pub struct PseudoFbReport {
    pub report: SolveReport,
    /// Multi-indices of nodes with phi > tol_fb adjacent to a node with
    /// phi <= tol_fb.
    pub free_boundary: Vec<Vec<usize>>,
    pub tol_fb: f64,
}

/// Projected relaxation for `max{ L phi - phi^mu, -phi } = 0` with
/// nonnegative Dirichlet data; `phi^mu` is evaluated as `max(phi, 0)^mu`.
pub fn solve_pseudo_fb(
    op: &EllipticOperator,
    mu: f64,
    boundary: &ScalarField,
    grid: &UniformGrid,
    params: &SolverParams,
) -> Result<PseudoFbReport, SolverError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(SolverError::MuOutOfRange(mu));
    }
    let coeff = match &op.kind {
        OperatorKind::Linear { coeff } => coeff.clone(),
        _ => {
            return Err(SolverError::WrongKind {
                solver: "solve_pseudo_fb",
                found: "non-linear",
            })
        }
    };
    let stencil = LinearStencil::assemble(grid, &*coeff)?;
    let colors = node_colors(grid, &stencil.interior);
    let (mut u, _) = boundary_fill(grid, boundary);
    for flat in 0..grid.num_nodes() {
        let idx = grid.unflatten(flat);
        if grid.is_boundary(&idx) && u[flat] < 0.0 {
            return Err(SolverError::NegativeBoundary {
                node: idx,
                value: u[flat],
            });
        }
    }
    let omega = auto_relaxation(grid, params);

    let residual_at = |s: usize, flat: usize, u: &[f64]| -> f64 {
        let phi = u[flat];
        let lu = stencil.apply(s, flat, u);
        (lu - phi.max(0.0).powf(mu)).max(-phi)
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut final_residual = f64::INFINITY;
    for sweep in 1..=params.max_iter {
        iterations = sweep;
        let mut max_r: f64 = 0.0;
        for color in 0..2u8 {
            for (s, &flat) in stencil.interior.iter().enumerate() {
                if colors[s] != color {
                    continue;
                }
                max_r = max_r.max(residual_at(s, flat, &u).abs());
                let d_center = stencil.center(s);
                // neighbor load: L phi = load - D * phi_0
                let load = stencil.apply(s, flat, &u) + d_center * u[flat];
                let target = if load <= 0.0 {
                    0.0
                } else {
                    solve_scalar(d_center, mu, load, u[flat].max(0.0))
                };
                u[flat] = (u[flat] + omega * (target - u[flat])).max(0.0);
            }
        }
        if max_r <= params.tol {
            let mut verified: f64 = 0.0;
            for (s, &flat) in stencil.interior.iter().enumerate() {
                verified = verified.max(residual_at(s, flat, &u).abs());
            }
            final_residual = verified;
            if verified <= params.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        let mut verified: f64 = 0.0;
        for (s, &flat) in stencil.interior.iter().enumerate() {
            verified = verified.max(residual_at(s, flat, &u).abs());
        }
        final_residual = verified;
    }

    let tol_fb = 10.0 * params.tol;
    let mut free_boundary = Vec::new();
    for &flat in &stencil.interior {
        if u[flat] <= tol_fb {
            continue;
        }
        let idx = grid.unflatten(flat);
        let mut adjacent_core = false;
        for k in 0..grid.dim() {
            for step in [-1isize, 1] {
                let nflat = (flat as isize + step * stencil.strides[k] as isize) as usize;
                if u[nflat] <= tol_fb {
                    adjacent_core = true;
                }
            }
        }
        if adjacent_core {
            free_boundary.push(idx);
        }
    }

    Ok(PseudoFbReport {
        report: SolveReport {
            solution: GridFunction::new(grid.clone(), u)?,
            iterations,
            final_residual,
            converged,
        },
        free_boundary,
        tol_fb,
    })
}

/// Root of `D t + t^mu = load` on `t >= 0` by bisection-safeguarded Newton.
fn solve_scalar(d_center: f64, mu: f64, load: f64, guess: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = load / d_center;
    let psi = |t: f64| d_center * t + t.powf(mu) - load;
    let mut t = guess.clamp(lo, hi).max(1e-300);
    for _ in 0..60 {
        let v = psi(t);
        if v.abs() < 1e-15 * (1.0 + load) {
            return t;
        }
        if v > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = d_center + mu * t.powf(mu - 1.0);
        let next = t - v / slope;
        t = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    t
}

/// Max over interior nodes of `|F(X, D^2_h u) - f|`, evaluated through
/// `hessian_at` independently of the solver loop.
pub fn residual(
    op: &EllipticOperator,
    u: &GridFunction,
    f: &GridFunction,
) -> Result<f64, SolverError> {
    if u.grid != f.grid {
        return Err(SolverError::GridMismatch);
    }
    let grid = &u.grid;
    let mut worst: f64 = 0.0;
    for flat in 0..grid.num_nodes() {
        let idx = grid.unflatten(flat);
        if grid.is_boundary(&idx) {
            continue;
        }
        let hess = hessian_at(u, &idx)?;
        let x = grid.node_coords(&idx);
        worst = worst.max((op.evaluate(&x, &hess)? - f.values[flat]).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub grid_sizes: Vec<usize>,
    pub errors: Vec<f64>,
    /// Observed order per refinement; `None` when both errors vanish.
    pub orders: Vec<Option<f64>>,
}

/// Observed refinement orders against a known exact solution.
pub fn convergence_study(
    build: impl Fn(usize) -> Result<DirichletProblem, SolverError>,
    grid_sizes: &[usize],
    exact: impl Fn(&[f64]) -> f64,
    params: &SolverParams,
) -> Result<ConvergenceStudy, SolverError> {
    let mut errors = Vec::new();
    for &m in grid_sizes {
        let p = build(m)?;
        let report = solve_linear(&p, params)?;
        let grid = report.solution.grid.clone();
        let mut err: f64 = 0.0;
        for flat in 0..grid.num_nodes() {
            let idx = grid.unflatten(flat);
            let x = grid.node_coords(&idx);
            err = err.max((report.solution.values[flat] - exact(&x)).abs());
        }
        errors.push(err);
    }
    let orders = errors
        .windows(2)
        .map(|w| {
            if w[0] <= 1e-13 && w[1] <= 1e-13 {
                None
            } else {
                Some((w[0] / w[1]).log2())
            }
        })
        .collect();
    Ok(ConvergenceStudy {
        grid_sizes: grid_sizes.to_vec(),
        errors,
        orders,
    })
}
