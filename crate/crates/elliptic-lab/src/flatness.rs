//! The flatness-improvement machinery: frozen-coefficient approximation,
//! affine extraction, the explicit theta/delta selection, the rescaling
//! cascade with its affine updates, multiscale exponent fitting and the
//! Dini modulus test.
//!
//! Two iteration modes are provided. Cascade mode follows the induction
//! literally: normalize, approximate by a frozen-coefficient solution on
//! the half cube, extract an affine function at the center, rescale and
//! repeat. It is faithful but resolution-limited. Measure mode skips the
//! PDE surrogate and records the decay of the best-affine-fit error on
//! shrinking cubes, which reaches much deeper radii. Exponents are read
//! off as log-log slopes with steps at the solver noise floor excluded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    best_affine_fit, gradient_at, hessian_at, sup_norm, AffineFunction, Cube, GridError,
    GridFunction, UniformGrid,
};
use crate::operators::{freeze, ols, EllipticOperator, OperatorError, OperatorKind};
use crate::solver::{
    solve_bellman, solve_linear, DirichletProblem, ScalarField, SolverError, SolverParams,
};

#[derive(Debug, Error)]
pub enum FlatnessError {
    #[error("invalid budget: need 0 < beta < alpha_F <= 1, beta <= gamma < 1 and Theta > 0")]
    InvalidBudget,
    #[error("selected theta = {0} is not contractive; override Theta (> 1/2 required)")]
    NonContractiveTheta(f64),
    #[error("frozen operator of kind Pucci has no discrete solver")]
    UnsupportedFrozenKind,
    #[error("cascade needs the distinguished point at the grid center")]
    OffCenter,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// The constants of the a priori estimate and the exponent targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityBudget {
    /// A priori interior-estimate constant of the frozen operator.
    #[serde(rename = "Theta")]
    pub theta_big: f64,
    /// A priori Hessian-Holder exponent of the frozen operator, in (0, 1].
    pub alpha_f: f64,
    /// Target exponent, 0 < beta < alpha_F and beta <= gamma.
    pub beta: f64,
    /// Source exponent in (0, 1).
    pub gamma: f64,
    /// Coefficient oscillation exponent, small.
    pub eps_bar: f64,
}

impl Default for RegularityBudget {
    fn default() -> Self {
        RegularityBudget {
            theta_big: 2.0,
            alpha_f: 1.0,
            beta: 0.5,
            gamma: 0.99,
            eps_bar: 0.1,
        }
    }
}

impl RegularityBudget {
    pub fn validate(&self) -> Result<(), FlatnessError> {
        let ok = self.theta_big > 0.0
            && 0.0 < self.beta
            && self.beta < self.alpha_f
            && self.alpha_f <= 1.0
            && self.beta <= self.gamma
            && self.gamma < 1.0
            && 0.0 < self.eps_bar
            && self.eps_bar < 1.0;
        if ok {
            Ok(())
        } else {
            Err(FlatnessError::InvalidBudget)
        }
    }
}

/// `base^e`, routed through integer powers when `e` is integral so the
/// dyadic selections come out bit-exact.
fn pow_exact(base: f64, e: f64) -> f64 {
    let rounded = e.round();
    if (e - rounded).abs() < 1e-12 && rounded.abs() <= 64.0 {
        base.powi(rounded as i32)
    } else {
        base.powf(e)
    }
}

/// The explicit scale selection
/// `theta = (1/(2 Theta))^(1/(alpha_F - beta))`,
/// `delta = (1/2) (1/(2 Theta))^((2+beta)/(alpha_F - beta))`.
pub fn select_theta_delta(
    theta_big: f64,
    alpha_f: f64,
    beta: f64,
) -> Result<(f64, f64), FlatnessError> {
    if !(theta_big > 0.0 && beta > 0.0 && beta < alpha_f) {
        return Err(FlatnessError::InvalidBudget);
    }
    let base = 1.0 / (2.0 * theta_big);
    let theta = pow_exact(base, 1.0 / (alpha_f - beta));
    let delta = 0.5 * pow_exact(base, (2.0 + beta) / (alpha_f - beta));
    if theta >= 1.0 {
        return Err(FlatnessError::NonContractiveTheta(theta));
    }
    Ok((theta, delta))
}

/// One step of a flatness trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessStep {
    pub k: u32,
    /// Cube halfwidth `theta^k * halfwidth` of this step.
    pub radius: f64,
    pub ell: AffineFunction,
    /// `sup over Q_radius of |u - ell|` (of the normalized function in
    /// cascade mode).
    pub sup_error: f64,
    /// `sup |v_k - h|` of this step's frozen-coefficient approximation.
    pub frozen_gap: Option<f64>,
    /// Spectral norm of the discrete Hessian of `h` at the center.
    pub hess0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Cascade,
    Measure,
}

/// Per-step record of a flatness iteration with the fitted exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessTrace {
    pub budget: RegularityBudget,
    pub mode: TraceMode,
    /// Contraction ratio actually used for the radii.
    pub theta: f64,
    /// The selected flatness scale; absent when the budget does not
    /// admit a contractive theta.
    pub delta: Option<f64>,
    /// Cascade mode divides u by this factor up front so |u| <= 1.
    pub normalization: f64,
    pub steps: Vec<FlatnessStep>,
    pub fitted_exponent: Option<f64>,
    pub fitted_constant: Option<f64>,
    pub cascade_ok: bool,
    /// True when the requested depth exceeded the grid resolution.
    pub truncated: bool,
    /// True when every step sat at the noise floor.
    pub exact_to_tolerance: bool,
    pub noise_floor: f64,
}

/// Outcome of the frozen-coefficient half-cube approximation.
#[derive(Debug, Clone)]
pub struct FrozenApprox {
    pub h: GridFunction,
    pub gap: f64,
    pub hess0: f64,
}

/// Concentric subgrid of `u` spanning `n` cells each side of the center,
/// optionally rescaled by `1/scale` so it sits at unit size.
fn restrict(u: &GridFunction, n: usize, scale: f64) -> Result<UniformGrid, GridError> {
    let grid = &u.grid;
    let h = grid.spacing();
    let cube = Cube::new(grid.cube.center.iter().map(|c| c / scale).collect(), n as f64 * h / scale)?;
    UniformGrid::new(cube, 2 * n + 1)
}

fn restricted_values(
    u: &GridFunction,
    n: usize,
    mut value: impl FnMut(&[f64], f64) -> f64,
) -> Vec<f64> {
    let grid = &u.grid;
    let center = grid.center_index();
    let sub_m = 2 * n + 1;
    let d = grid.dim();
    let count = sub_m.pow(d as u32);
    let mut values = Vec::with_capacity(count);
    let mut idx = vec![0usize; d];
    for flat in 0..count {
        let mut rest = flat;
        for slot in idx.iter_mut() {
            *slot = rest % sub_m;
            rest /= sub_m;
        }
        let parent: Vec<usize> = idx
            .iter()
            .zip(&center)
            .map(|(&i, &c)| c + i - n)
            .collect();
        let x = grid.node_coords(&parent);
        values.push(value(&x, u.at(&parent)));
    }
    values
}

/// The normalized function `v_k(Y) = (u(theta^k Y) - ell_k(theta^k Y)) /
/// theta^(k(2+beta))`, realized on the parent nodes inside `Q_(theta^k)`
/// rescaled to unit size (no interpolation).
pub fn normalized_function(
    u: &GridFunction,
    ell_k: &AffineFunction,
    theta: f64,
    k: u32,
    beta: f64,
) -> Result<GridFunction, FlatnessError> {
    let grid = &u.grid;
    let h = grid.spacing();
    let scale = theta.powi(k as i32);
    let n = ((scale * grid.cube.halfwidth) / h + 1e-9).floor() as usize;
    if n < 2 {
        return Err(GridError::InsufficientResolution {
            found: 2 * n + 1,
            needed: 5,
        }
        .into());
    }
    let sub = restrict(u, n, scale)?;
    let amp = theta.powf(k as f64 * (2.0 + beta));
    let values = restricted_values(u, n, |x, v| (v - ell_k.eval(x)) / amp);
    Ok(GridFunction::new(sub, values)?)
}

/// Rescaled source `f_k(X) = theta^(-k beta) f(theta^k X)`.
pub fn rescale_source(f: ScalarField, theta: f64, k: u32, beta: f64) -> ScalarField {
    let space = theta.powi(k as i32);
    let value = theta.powf(-(k as f64) * beta);
    std::sync::Arc::new(move |x: &[f64]| {
        let y: Vec<f64> = x.iter().map(|v| v * space).collect();
        value * f(&y)
    })
}

/// Full problem rescale: `(F_k, f_k)` of the induction step.
pub fn rescale_problem(
    op: &EllipticOperator,
    f: ScalarField,
    theta: f64,
    k: u32,
    beta: f64,
) -> (EllipticOperator, ScalarField) {
    (op.rescale(theta, k, beta), rescale_source(f, theta, k, beta))
}

/// Solves the frozen operator on the concentric half cube of `u`'s domain
/// with `u` as boundary data. The Hessian of `h` at the center is NOT
/// constrained to vanish; its norm is returned as a diagnostic.
pub fn approximate_frozen_harmonic(
    u: &GridFunction,
    op: &EllipticOperator,
    solver: &SolverParams,
) -> Result<FrozenApprox, FlatnessError> {
    let grid = &u.grid;
    let half = (grid.m - 1) / 2;
    let n = half / 2;
    if 2 * n + 1 < 5 {
        return Err(GridError::InsufficientResolution {
            found: 2 * n + 1,
            needed: 5,
        }
        .into());
    }
    let sub = restrict(u, n, 1.0)?;
    let boundary_values = GridFunction::new(sub.clone(), restricted_values(u, n, |_, v| v))?;
    let frozen = freeze(op);
    let zero = GridFunction::zeros(sub.clone());
    let bv = boundary_values.clone();
    let sub_for_boundary = sub.clone();
    let boundary: ScalarField = std::sync::Arc::new(move |x: &[f64]| {
        // boundary nodes are exact nodes of the subgrid
        let h = sub_for_boundary.spacing();
        let half = ((sub_for_boundary.m - 1) / 2) as isize;
        let idx: Vec<usize> = x
            .iter()
            .zip(&sub_for_boundary.cube.center)
            .map(|(xi, ci)| (((xi - ci) / h).round() as isize + half) as usize)
            .collect();
        bv.at(&idx)
    });
    let problem = DirichletProblem {
        operator: frozen.as_operator().clone(),
        source: zero,
        boundary,
    };
    let report = match &frozen.as_operator().kind {
        OperatorKind::Linear { .. } => solve_linear(&problem, solver)?,
        OperatorKind::Bellman { .. } => solve_bellman(&problem, solver)?,
        OperatorKind::Pucci { .. } => return Err(FlatnessError::UnsupportedFrozenKind),
    };
    let h = report.solution;
    let gap = boundary_values
        .values
        .iter()
        .zip(&h.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let hess0 = hessian_at(&h, &h.grid.center_index())?.spectral_norm();
    Ok(FrozenApprox { h, gap, hess0 })
}

/// `ell(X) = h(center) + grad h(center) . X`.
pub fn extract_affine(h: &GridFunction) -> Result<AffineFunction, FlatnessError> {
    let center = h.grid.center_index();
    Ok(AffineFunction {
        a: h.at(&center),
        b: gradient_at(h, &center)?,
    })
}

/// `ell_(k+1)(X) = ell_k(X) + theta^(k(2+beta)) ell_star(theta^(-k) X)`.
pub fn update_affine(
    ell_k: &AffineFunction,
    ell_star: &AffineFunction,
    theta: f64,
    k: u32,
    beta: f64,
) -> AffineFunction {
    let kf = k as f64;
    let a_scale = theta.powf(kf * (2.0 + beta));
    let b_scale = theta.powf(kf * (1.0 + beta));
    AffineFunction {
        a: ell_k.a + a_scale * ell_star.a,
        b: ell_k
            .b
            .iter()
            .zip(&ell_star.b)
            .map(|(bk, bs)| bk + b_scale * bs)
            .collect(),
    }
}

/// `|a_k - a_(k-1)| + theta^k |b_k - b_(k-1)| <= C theta^(k(2+beta))`
/// for every recorded step.
pub fn check_cascade_bounds(trace: &FlatnessTrace, c: f64, theta: f64, beta: f64) -> bool {
    trace.steps.windows(2).all(|w| {
        let k = w[1].k as f64;
        let da = (w[1].ell.a - w[0].ell.a).abs();
        let db: f64 = w[1]
            .ell
            .b
            .iter()
            .zip(&w[0].ell.b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        da + theta.powf(k) * db <= c * theta.powf(k * (2.0 + beta))
    })
}

pub enum FitOutcome {
    Fitted { alpha_hat: f64, c_hat: f64 },
    AllAtNoiseFloor,
    TooFewSteps,
}

/// Least-squares fit of `log(sup_error)` against `log(radius)`; the slope
/// minus 2 is the measured Hessian-Holder exponent. Steps at or below the
/// noise floor are excluded.
pub fn fit_exponent(steps: &[FlatnessStep], noise_floor: f64) -> FitOutcome {
    let live: Vec<&FlatnessStep> = steps
        .iter()
        .filter(|s| s.sup_error > noise_floor)
        .collect();
    if live.len() < 3 {
        return if steps.len() >= 3 && live.is_empty() {
            FitOutcome::AllAtNoiseFloor
        } else {
            FitOutcome::TooFewSteps
        };
    }
    let xs: Vec<f64> = live.iter().map(|s| s.radius.ln()).collect();
    let ys: Vec<f64> = live.iter().map(|s| s.sup_error.ln()).collect();
    let (slope, intercept) = ols(&xs, &ys);
    FitOutcome::Fitted {
        alpha_hat: slope - 2.0,
        c_hat: intercept.exp(),
    }
}

#[derive(Debug, Clone)]
pub enum FlatnessMode {
    /// Best-affine-fit error decay on shrinking cubes around `center`.
    Measure { theta: f64, center: Vec<f64> },
    /// The literal induction with frozen-coefficient solves.
    Cascade,
}

/// Default bound constant used for the cascade structural check.
pub const CASCADE_BOUND_C: f64 = 100.0;

/// Runs the flatness iteration to `depth` steps (or the resolution cap,
/// whichever comes first) and fits the exponent.
pub fn iterate_flatness(
    u: &GridFunction,
    op: &EllipticOperator,
    budget: &RegularityBudget,
    depth: u32,
    mode: FlatnessMode,
    solver: &SolverParams,
) -> Result<FlatnessTrace, FlatnessError> {
    budget.validate()?;
    let noise_floor = 10.0 * solver.tol;
    match mode {
        FlatnessMode::Measure { theta, center } => {
            measure_trace(u, budget, theta, &center, depth, noise_floor)
        }
        FlatnessMode::Cascade => cascade_trace(u, op, budget, depth, solver, noise_floor),
    }
}

fn finalize(mut trace: FlatnessTrace) -> FlatnessTrace {
    match fit_exponent(&trace.steps, trace.noise_floor) {
        FitOutcome::Fitted { alpha_hat, c_hat } => {
            trace.fitted_exponent = Some(alpha_hat);
            trace.fitted_constant = Some(c_hat);
        }
        FitOutcome::AllAtNoiseFloor => trace.exact_to_tolerance = true,
        FitOutcome::TooFewSteps => {}
    }
    trace
}

fn measure_trace(
    u: &GridFunction,
    budget: &RegularityBudget,
    theta: f64,
    center: &[f64],
    depth: u32,
    noise_floor: f64,
) -> Result<FlatnessTrace, FlatnessError> {
    let grid = &u.grid;
    // largest centered cube that stays inside the domain
    let slack: f64 = grid
        .cube
        .center
        .iter()
        .zip(center)
        .map(|(c, p)| (c - p).abs())
        .fold(0.0, f64::max);
    let r0 = grid.cube.halfwidth - slack;
    let delta = select_theta_delta(budget.theta_big, budget.alpha_f, budget.beta)
        .ok()
        .map(|(_, d)| d);
    let mut steps = Vec::new();
    let mut truncated = false;
    for k in 0..=depth {
        let r = r0 * theta.powi(k as i32);
        // below one spacing the node selection stops shrinking and would
        // duplicate the previous step in the fit
        if r < grid.spacing() {
            truncated = true;
            break;
        }
        let sub = match Cube::new(center.to_vec(), r) {
            Ok(c) => c,
            Err(_) => {
                truncated = true;
                break;
            }
        };
        let ell = match best_affine_fit(u, &sub) {
            Ok(ell) => ell,
            Err(GridError::InsufficientResolution { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let sup_error = sup_norm(&u.minus_affine(&ell), &sub)?;
        steps.push(FlatnessStep {
            k,
            radius: r,
            ell,
            sup_error,
            frozen_gap: None,
            hess0: None,
        });
    }
    Ok(finalize(FlatnessTrace {
        budget: *budget,
        mode: TraceMode::Measure,
        theta,
        delta,
        normalization: 1.0,
        steps,
        fitted_exponent: None,
        fitted_constant: None,
        cascade_ok: true,
        truncated,
        exact_to_tolerance: false,
        noise_floor,
    }))
}

fn cascade_trace(
    u: &GridFunction,
    op: &EllipticOperator,
    budget: &RegularityBudget,
    depth: u32,
    solver: &SolverParams,
    noise_floor: f64,
) -> Result<FlatnessTrace, FlatnessError> {
    let grid = &u.grid;
    if grid
        .cube
        .center
        .iter()
        .any(|&c| c.abs() > 1e-12 * grid.cube.halfwidth)
    {
        return Err(FlatnessError::OffCenter);
    }
    let (theta, delta) = select_theta_delta(budget.theta_big, budget.alpha_f, budget.beta)?;
    let h = grid.spacing();
    let hw = grid.cube.halfwidth;
    // |u| <= 1 normalization of the induction's base step
    let sup_u = sup_norm(u, &grid.cube)?;
    let normalization = sup_u.max(1.0);
    let u_norm = GridFunction::new(
        grid.clone(),
        u.values.iter().map(|v| v / normalization).collect(),
    )?;

    let mut steps: Vec<FlatnessStep> = Vec::new();
    let mut ell = AffineFunction::zero(grid.dim());
    let mut truncated = false;
    for k in 0..=depth {
        let scale = theta.powi(k as i32);
        let r = scale * hw;
        let n = (r / h + 1e-9).floor() as usize;
        if n < 1 {
            truncated = true;
            break;
        }
        let sub = grid.cube.concentric(r)?;
        let sup_error = match sup_norm(&u_norm.minus_affine(&ell), &sub) {
            Ok(v) => v,
            Err(GridError::InsufficientResolution { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        steps.push(FlatnessStep {
            k,
            radius: r,
            ell: ell.clone(),
            sup_error,
            frozen_gap: None,
            hess0: None,
        });
        if k == depth {
            break;
        }
        // the half-cube solve needs at least a 5-node subgrid
        if n < 4 {
            truncated = true;
            break;
        }
        let v_k = normalized_function(&u_norm, &ell, theta, k, budget.beta)?;
        let op_k = op.rescale(theta, k, budget.beta);
        let approx = approximate_frozen_harmonic(&v_k, &op_k, solver)?;
        let last = steps.last_mut().expect("step just pushed");
        last.frozen_gap = Some(approx.gap);
        last.hess0 = Some(approx.hess0);
        let ell_star = extract_affine(&approx.h)?;
        ell = update_affine(&ell, &ell_star, theta, k, budget.beta);
    }

    let mut trace = FlatnessTrace {
        budget: *budget,
        mode: TraceMode::Cascade,
        theta,
        delta: Some(delta),
        normalization,
        steps,
        fitted_exponent: None,
        fitted_constant: None,
        cascade_ok: false,
        truncated,
        exact_to_tolerance: false,
        noise_floor,
    };
    trace.cascade_ok = check_cascade_bounds(&trace, CASCADE_BOUND_C, theta, budget.beta);
    Ok(finalize(trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiniResult {
    pub value: f64,
    pub converged: bool,
}

/// `int_{t_min}^{1} omega(t)/t dt` by quadrature after the substitution
/// `t = e^s`; `converged` records whether halving `t_min` moves the value
/// by less than 1%.
pub fn dini_integral(omega: impl Fn(f64) -> f64, t_min: f64) -> DiniResult {
    assert!(t_min > 0.0 && t_min < 1.0);
    let value = dini_quad(&omega, t_min);
    let refined = dini_quad(&omega, t_min / 2.0);
    let converged = (refined - value).abs() < 0.01 * refined.abs().max(1e-300);
    DiniResult { value, converged }
}

fn dini_quad(omega: &impl Fn(f64) -> f64, t_min: f64) -> f64 {
    // composite Simpson in s = ln t, refined until stable
    let a = t_min.ln();
    let mut panels = 512usize;
    let mut prev = f64::INFINITY;
    loop {
        let n = 2 * panels;
        let ds = -a / n as f64;
        let mut sum = omega(t_min) + omega(1.0);
        for i in 1..n {
            let s = a + i as f64 * ds;
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * omega(s.exp());
        }
        let value = sum * ds / 3.0;
        if (value - prev).abs() <= 1e-10 * value.abs().max(1.0) || panels >= 1 << 16 {
            return value;
        }
        prev = value;
        panels *= 2;
    }
}
