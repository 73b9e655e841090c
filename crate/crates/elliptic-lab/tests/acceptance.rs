//! Acceptance gate: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`) before asserting.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use elliptic_lab::flatness::{
    dini_integral, iterate_flatness, select_theta_delta, FlatnessMode, RegularityBudget,
};
use elliptic_lab::grid::{hessian_at, sample, Cube, GridFunction, SymMatrix, UniformGrid};
use elliptic_lab::operators::{
    default_dictionary, estimate_oscillation_seminorm, estimate_source_seminorm, EllipticOperator,
    EllipticityPair, MatrixField,
};
use elliptic_lab::solver::{
    convergence_study, solve_linear, solve_pseudo_fb, DirichletProblem, ScalarField, SolverParams,
};
use elliptic_lab::harness::{
    run_experiment, BoundarySpec, CoefficientSpec, FlatnessConfig, ScenarioSpec, SourceSpec,
};

fn gate(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {n} [{name}]: {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance {n} [{name}] failed: {detail}");
}

fn rough_coeff(c: f64, e: f64, dim: usize) -> EllipticOperator {
    let field: MatrixField = Arc::new(move |x: &[f64]| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        SymMatrix::scaled_identity(x.len(), 1.0 + c * r.powf(e))
    });
    let lam_big = 1.0 + c * (dim as f64).sqrt().powf(e);
    EllipticOperator::linear(field, EllipticityPair::new(1.0, lam_big).unwrap(), dim)
}

fn illustration_spec(name: &str, boundary: &str, m: usize) -> ScenarioSpec {
    let mut coeff = CoefficientSpec::named("holder_even");
    coeff.c = Some(0.5);
    coeff.eps_bar = Some(0.1);
    ScenarioSpec {
        name: name.to_string(),
        dimension: 2,
        coefficients: coeff,
        source: SourceSpec::zero(),
        boundary: BoundarySpec::named(boundary),
        grid_m: m,
        budget: RegularityBudget::default(),
        solver: SolverParams::default(),
        flatness: FlatnessConfig::default(),
        marked_points: vec![],
        seed: 7,
    }
}

#[test]
fn criterion_01_scale_selection_formulas() {
    let (theta, delta) = select_theta_delta(2.0, 1.0, 0.5).unwrap();
    let mut ok = theta == 0.0625 && delta == 1.0 / 2048.0;
    let mut detail = format!("pinned case gave ({theta}, {delta})");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let big: f64 = rng.gen_range(0.6..8.0);
        let alpha: f64 = rng.gen_range(0.3..1.0);
        let beta: f64 = rng.gen_range(0.05..alpha - 0.05);
        let (t, d) = select_theta_delta(big, alpha, beta).unwrap();
        // independent evaluation through logarithms
        let base = (1.0 / (2.0 * big)).ln();
        let t_ind = (base / (alpha - beta)).exp();
        let d_ind = 0.5 * (base * (2.0 + beta) / (alpha - beta)).exp();
        if (t - t_ind).abs() > 1e-14 * t_ind.max(1.0) || (d - d_ind).abs() > 1e-14 {
            ok = false;
            detail = format!("sweep mismatch at ({big}, {alpha}, {beta}): ({t}, {d})");
            break;
        }
    }
    gate(1, "scale selection formulas", ok, &detail);
}

#[test]
fn criterion_02_solver_order() {
    use std::f64::consts::PI;
    let params = SolverParams::default();
    let build = |m: usize| {
        let cube = Cube::unit(2);
        let source = sample(
            |x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
            &cube,
            m,
        )
        .unwrap();
        Ok(DirichletProblem {
            operator: EllipticOperator::laplacian(2),
            source,
            boundary: Arc::new(|x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin()) as ScalarField,
        })
    };
    let study = convergence_study(
        build,
        &[65, 129, 257],
        |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
        &params,
    )
    .unwrap();
    let orders_ok = study
        .orders
        .iter()
        .all(|o| o.is_some_and(|v| (1.8..=2.2).contains(&v)));

    // quadratic harmonic data is reproduced exactly
    let cube = Cube::unit(2);
    let p = DirichletProblem {
        operator: EllipticOperator::laplacian(2),
        source: GridFunction::zeros(UniformGrid::new(cube.clone(), 65).unwrap()),
        boundary: Arc::new(|x: &[f64]| x[0] * x[0] - x[1] * x[1]) as ScalarField,
    };
    let rep = solve_linear(&p, &params).unwrap();
    let grid = rep.solution.grid.clone();
    let exact_err = (0..grid.num_nodes())
        .map(|f| {
            let x = grid.node_coords(&grid.unflatten(f));
            (rep.solution.values[f] - (x[0] * x[0] - x[1] * x[1])).abs()
        })
        .fold(0.0, f64::max);
    let ok = orders_ok && exact_err <= 1e-10;
    gate(
        2,
        "solver order",
        ok,
        &format!("orders {:?}, quadratic error {exact_err:e}", study.orders),
    );
}

#[test]
fn criterion_03_scaling_algebra() {
    let d = 2;
    let op = rough_coeff(0.5, 0.1, d);
    let lap = EllipticOperator::laplacian(d);
    let (lambda, lambda_big) = (op.ellipticity.lambda, op.ellipticity.lambda_big);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (theta, beta) = (0.5, 0.2);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for k in [1u32, 3, 7] {
        let fk = op.rescale(theta, k, beta);
        let lk = lap.rescale(theta, k, beta);
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = SymMatrix::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let g: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = SymMatrix::from_fn(d, |i, j| {
                (0..d).map(|r| g[r * d + i] * g[r * d + j]).sum::<f64>()
            });
            let pnorm = p.spectral_norm();
            let inc = fk.evaluate(&x, &m.add(&p)).unwrap() - fk.evaluate(&x, &m).unwrap();
            if inc < lambda * pnorm - 1e-12 || inc > d as f64 * lambda_big * pnorm + 1e-12 {
                violations += 1;
            }
            // the rescaled increment equals the original operator's
            // increment at the mapped point
            let y: Vec<f64> = x.iter().map(|v| v * theta.powi(k as i32)).collect();
            let direct = op.evaluate(&y, &m.add(&p)).unwrap() - op.evaluate(&y, &m).unwrap();
            worst = worst.max((inc - direct).abs());
            // Laplacian invariance
            let gap = (lk.evaluate(&x, &m).unwrap() - lap.evaluate(&x, &m).unwrap()).abs();
            worst = worst.max(gap);
        }
    }

    // source seminorm contraction for beta <= gamma
    let gamma = 0.3;
    let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma);
    let cube = Cube::unit(d);
    let f0 = sample(f, &cube, 161).unwrap();
    let k = 3;
    let fk = sample(
        |x: &[f64]| {
            let y: Vec<f64> = x.iter().map(|v| v * theta.powi(k)).collect();
            theta.powf(-(k as f64) * beta) * f(&y)
        },
        &cube,
        161,
    )
    .unwrap();
    let radii: Vec<f64> = (0..6).map(|i| 0.7f64.powi(i)).collect();
    let s0 = estimate_source_seminorm(&f0, gamma, &radii, d as u32).unwrap();
    let sk = estimate_source_seminorm(&fk, gamma, &radii, d as u32).unwrap();
    let contraction_ok = sk.seminorm <= s0.seminorm * (1.0 + 1e-6);

    let ok = violations == 0 && worst <= 1e-12 && contraction_ok;
    gate(
        3,
        "scaling algebra",
        ok,
        &format!(
            "violations {violations}, worst identity gap {worst:e}, seminorms {} vs {}",
            sk.seminorm, s0.seminorm
        ),
    );
}

#[test]
fn criterion_04_exponent_fitting_sanity() {
    let params = SolverParams::default();
    let budget = RegularityBudget::default();
    let measure = |u: &GridFunction| {
        iterate_flatness(
            u,
            &EllipticOperator::laplacian(2),
            &budget,
            5,
            FlatnessMode::Measure {
                theta: 0.5,
                center: vec![0.0, 0.0],
            },
            &params,
        )
        .unwrap()
    };
    let cubic = sample(
        |x| x[0].powi(3) - 3.0 * x[0] * x[1] * x[1],
        &Cube::unit(2),
        257,
    )
    .unwrap();
    let a_cubic = measure(&cubic).fitted_exponent.unwrap();
    let quad = sample(|x| x[0] * x[0], &Cube::unit(2), 257).unwrap();
    let a_quad = measure(&quad).fitted_exponent.unwrap();
    let ok = (a_cubic - 1.0).abs() <= 0.05 && a_quad.abs() <= 0.05;
    gate(
        4,
        "exponent fitting sanity",
        ok,
        &format!("cubic {a_cubic}, quadratic {a_quad}"),
    );
}

#[test]
fn criterion_05_illustration_degenerate_vs_generic() {
    let (degenerate, _) =
        run_experiment(&illustration_spec("acc5_degenerate", "odd_cubic", 257)).unwrap();
    let dp = &degenerate.points[0];
    let degen_ok = dp.hessian_norm <= 1e-12 && dp.alpha_hat.is_some_and(|a| a >= 0.5);

    let (generic, _) =
        run_experiment(&illustration_spec("acc5_generic", "generic_quad", 257)).unwrap();
    let gp = &generic.points[0];
    let generic_ok =
        gp.hessian_norm >= 0.5 && gp.alpha_hat.is_some_and(|a| (2.0 + a - 2.0).abs() <= 0.1);

    gate(
        5,
        "illustration degenerate vs generic",
        degen_ok && generic_ok,
        &format!(
            "degenerate |D2u| {:e} alpha {:?}; generic |D2u| {:e} alpha {:?}",
            dp.hessian_norm, dp.alpha_hat, gp.hessian_norm, gp.alpha_hat
        ),
    );
}

#[test]
fn criterion_06_cascade_structural() {
    let (result, _) =
        run_experiment(&illustration_spec("acc6_cascade", "odd_cubic", 257)).unwrap();
    let cascade = result.points[0].cascade.as_ref().expect("cascade trace");
    let delta = cascade.delta.expect("delta scale");
    let gaps_ok = cascade
        .steps
        .iter()
        .filter_map(|s| s.frozen_gap)
        .all(|g| g <= 1.5 * delta);
    let hess_ok = cascade
        .steps
        .iter()
        .filter_map(|s| s.hess0)
        .all(|h| h <= 1e-6);
    let some_solves = cascade.steps.iter().any(|s| s.frozen_gap.is_some());
    let ok = cascade.cascade_ok && gaps_ok && hess_ok && some_solves;
    gate(
        6,
        "cascade structural",
        ok,
        &format!(
            "bounds {}, delta {delta:e}, steps {:?}",
            cascade.cascade_ok, cascade.steps
        ),
    );
}

#[test]
fn criterion_07_seminorm_estimators() {
    let d = 2;
    let radii: Vec<f64> = (0..7).map(|i| 0.7f64.powi(i)).collect();
    let dict = default_dictionary(d);
    let rough = rough_coeff(0.5, 0.1, d);
    let osc = estimate_oscillation_seminorm(&rough, 0.1, &radii, d as u32, &dict, 161).unwrap();
    let osc_ok = osc
        .fitted_exponent
        .is_some_and(|e| (e - 0.10).abs() <= 0.03);

    let f = sample(
        |x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(0.3),
        &Cube::unit(d),
        321,
    )
    .unwrap();
    let src = estimate_source_seminorm(&f, 0.3, &radii, d as u32).unwrap();
    let src_ok = src
        .fitted_exponent
        .is_some_and(|e| (e - 0.30).abs() <= 0.05);

    let flat_op = rough_coeff(0.0, 0.1, d);
    let osc0 = estimate_oscillation_seminorm(&flat_op, 0.1, &radii, d as u32, &dict, 33).unwrap();
    let fc = sample(|_| 3.0, &Cube::unit(d), 33).unwrap();
    let src0 = estimate_source_seminorm(&fc, 0.3, &radii, d as u32).unwrap();
    let zeros_ok = osc0.seminorm == 0.0 && src0.seminorm == 0.0;

    gate(
        7,
        "seminorm estimators",
        osc_ok && src_ok && zeros_ok,
        &format!(
            "oscillation {:?}, source {:?}, constants ({}, {})",
            osc.fitted_exponent, src.fitted_exponent, osc0.seminorm, src0.seminorm
        ),
    );
}

#[test]
fn criterion_08_dini_gate() {
    let sqrt = dini_integral(|t| t.sqrt(), 1e-8);
    let log = dini_integral(|t| 1.0 / (std::f64::consts::E / t).ln(), 1e-8);
    let ok = (sqrt.value - 2.0).abs() <= 0.02 && sqrt.converged && !log.converged;
    gate(
        8,
        "Dini gate",
        ok,
        &format!("sqrt {sqrt:?}, log {log:?}"),
    );
}

#[test]
fn criterion_09_pseudo_free_boundary() {
    let params = SolverParams::default();
    let mu = 0.5;
    let a = 0.3;
    let c = (1.0f64 - a).powi(4) / 144.0;
    let exact = |x: f64| ((x.abs() - a).max(0.0)).powi(4) / 144.0;

    // 1D profile refinement: error should drop ~4x per halving
    let mut errs = Vec::new();
    for m in [65usize, 129, 257] {
        let grid = UniformGrid::new(Cube::unit(1), m).unwrap();
        let g: ScalarField = Arc::new(move |_: &[f64]| c);
        let rep = solve_pseudo_fb(&EllipticOperator::laplacian(1), mu, &g, &grid, &params).unwrap();
        let err = (0..grid.num_nodes())
            .map(|f| {
                let x = grid.node_coords(&grid.unflatten(f))[0];
                (rep.report.solution.values[f] - exact(x)).abs()
            })
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let ratio = errs[1] / errs[2];
    let profile_ok = errs[0] > errs[1] && errs[1] > errs[2] && (2.5..=6.0).contains(&ratio);

    // 2D: nonnegativity, complementarity, quartic Hessian bound near the
    // free boundary
    let m = 65;
    let grid = UniformGrid::new(Cube::unit(2), m).unwrap();
    let h = grid.spacing();
    let g: ScalarField = Arc::new(|_: &[f64]| 5e-4);
    let rep = solve_pseudo_fb(&EllipticOperator::laplacian(2), mu, &g, &grid, &params).unwrap();
    let tol_fb = 10.0 * params.tol;
    let nonneg = rep.report.solution.values.iter().all(|&v| v >= 0.0);
    let comp_ok = rep.report.final_residual <= tol_fb;
    let quartic_dd = |s: f64| {
        let psi = |t: f64| t.max(0.0).powi(4) / 144.0;
        (psi(s + h) - 2.0 * psi(s) + psi(s - h)) / (h * h)
    };
    let bound = 10.0 * quartic_dd(2.0 * h);
    let mut hess_ok = true;
    let mut sampled = 0;
    for idx in &rep.free_boundary {
        if idx.iter().any(|&i| i < 2 || i >= m - 2) {
            continue;
        }
        let norm = hessian_at(&rep.report.solution, idx).unwrap().spectral_norm();
        if norm > bound {
            hess_ok = false;
        }
        sampled += 1;
        if sampled >= 20 {
            break;
        }
    }
    let ok = profile_ok && nonneg && comp_ok && hess_ok && sampled > 0;
    gate(
        9,
        "pseudo free boundary",
        ok,
        &format!(
            "errors {errs:?} ratio {ratio}, nonneg {nonneg}, residual {:e}, sampled {sampled}",
            rep.report.final_residual
        ),
    );
}

#[test]
fn criterion_10_comparison_principle() {
    let op = rough_coeff(0.5, 0.1, 2);
    let params = SolverParams::default();
    let grid = UniformGrid::new(Cube::unit(2), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut violations = 0usize;
    for _ in 0..50 {
        let (p, q, r) = (
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let bump: f64 = rng.gen_range(0.0..1.0);
        let g1: ScalarField =
            Arc::new(move |x: &[f64]| p * x[0] + q * x[1] * x[1] + r * (2.0 * x[0]).sin());
        let g1c = g1.clone();
        let g2: ScalarField =
            Arc::new(move |x: &[f64]| g1c(x) + bump * (1.2 + (3.0 * x[1]).cos()));
        let solve = |g: ScalarField| {
            let problem = DirichletProblem {
                operator: op.clone(),
                source: GridFunction::zeros(grid.clone()),
                boundary: g,
            };
            solve_linear(&problem, &params).unwrap().solution
        };
        let u1 = solve(g1);
        let u2 = solve(g2);
        if u1
            .values
            .iter()
            .zip(&u2.values)
            .any(|(a, b)| *a > b + 1e-8)
        {
            violations += 1;
        }
    }
    gate(
        10,
        "comparison principle",
        violations == 0,
        &format!("{violations} ordered pairs violated"),
    );
}
