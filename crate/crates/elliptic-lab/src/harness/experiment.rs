//! Experiment orchestration: solve, estimate seminorms, run the flatness
//! iterations at every marked point, persist, and re-validate persisted
//! results independently.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::flatness::{
    dini_integral, iterate_flatness, DiniResult, FlatnessMode, FlatnessTrace, TraceMode,
};
use crate::grid::hessian_at;
use crate::operators::{
    default_dictionary, estimate_oscillation_seminorm, estimate_source_seminorm, ols,
    EllipticityReport, SeminormEstimate,
};
use crate::solver::residual;

use super::report::emit_report;
use super::scenario::{build_scenario, solve_built, ScenarioSpec};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub final_residual: f64,
    /// Residual recomputed independently from discrete Hessians.
    pub recheck_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: Vec<f64>,
    /// Spectral norm of the discrete Hessian of u at the point.
    pub hessian_norm: f64,
    pub alpha_hat: Option<f64>,
    pub c_hat: Option<f64>,
    pub measure: FlatnessTrace,
    /// Present only for the center point when the budget admits a
    /// contractive theta.
    pub cascade: Option<FlatnessTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ScenarioSpec,
    pub solve: SolveSummary,
    pub ellipticity: EllipticityReport,
    pub oscillation: SeminormEstimate,
    pub source_seminorm: SeminormEstimate,
    pub dini: Option<DiniResult>,
    pub points: Vec<PointResult>,
}

/// Wall-clock milliseconds, persisted separately so result.json stays
/// byte-identical across reruns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub build_ms: u128,
    pub solve_ms: u128,
    pub analysis_ms: u128,
}

fn seminorm_radii(h: f64) -> Vec<f64> {
    let r_min = (2.0 * h).clamp(0.06, 0.5);
    let n = 8;
    let ratio = (r_min / 1.0f64).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| ratio.powi(i)).collect()
}

pub fn run_experiment(spec: &ScenarioSpec) -> Result<(ExperimentResult, Timings), HarnessError> {
    let t0 = Instant::now();
    let built = build_scenario(spec)?;
    let build_ms = t0.elapsed().as_millis();

    let t1 = Instant::now();
    let report = solve_built(&built, &spec.solver)?;
    let solve_ms = t1.elapsed().as_millis();

    let t2 = Instant::now();
    let u = &report.solution;
    let grid = &u.grid;
    let recheck = residual(&built.problem.operator, u, &built.problem.source)?;
    let solve = SolveSummary {
        iterations: report.iterations,
        final_residual: report.final_residual,
        recheck_residual: recheck,
        converged: report.converged,
    };

    let radii = seminorm_radii(grid.spacing());
    let n = spec.dimension as u32;
    let dict = default_dictionary(spec.dimension);
    let sample_m = spec.grid_m.min(65) | 1;
    let oscillation = estimate_oscillation_seminorm(
        &built.problem.operator,
        spec.budget.eps_bar,
        &radii,
        n,
        &dict,
        sample_m.max(5),
    )?;
    let source_seminorm =
        estimate_source_seminorm(&built.problem.source, spec.budget.gamma, &radii, n)?;
    let dini = built.modulus.as_ref().map(|w| dini_integral(|t| w(t), 1e-8));

    let mut points = Vec::new();
    let center = grid.center_index();
    for node in &built.marked_nodes {
        let coords = grid.node_coords(node);
        let hessian_norm = hessian_at(u, node)?.spectral_norm();
        let measure = iterate_flatness(
            u,
            &built.problem.operator,
            &spec.budget,
            spec.flatness.depth,
            FlatnessMode::Measure {
                theta: spec.flatness.theta,
                center: coords.clone(),
            },
            &spec.solver,
        )?;
        let cascade = if *node == center {
            match iterate_flatness(
                u,
                &built.problem.operator,
                &spec.budget,
                spec.flatness.depth,
                FlatnessMode::Cascade,
                &spec.solver,
            ) {
                Ok(trace) => Some(trace),
                Err(crate::flatness::FlatnessError::NonContractiveTheta(_)) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        points.push(PointResult {
            point: coords,
            hessian_norm,
            alpha_hat: measure.fitted_exponent,
            c_hat: measure.fitted_constant,
            measure,
            cascade,
        });
    }
    let analysis_ms = t2.elapsed().as_millis();

    Ok((
        ExperimentResult {
            spec: spec.clone(),
            solve,
            ellipticity: built.ellipticity,
            oscillation,
            source_seminorm,
            dini,
            points,
        },
        Timings {
            build_ms,
            solve_ms,
            analysis_ms,
        },
    ))
}

fn fresh_dir(root: &Path, name: &str) -> Result<PathBuf, std::io::Error> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    let mut n = 0u32;
    loop {
        let stamp = if n == 0 {
            format!("{}_{:09}", now.as_secs(), now.subsec_nanos())
        } else {
            format!("{}_{:09}_{n}", now.as_secs(), now.subsec_nanos())
        };
        let dir = root.join(name).join(stamp);
        if !dir.exists() {
            fs::create_dir_all(&dir)?;
            return Ok(dir);
        }
        n += 1;
    }
}

fn trace_csv(measure: &FlatnessTrace, cascade: Option<&FlatnessTrace>, dim: usize) -> String {
    let mut out = String::from("mode,k,radius,a");
    for i in 0..dim {
        out.push_str(&format!(",b{i}"));
    }
    out.push_str(",sup_error,frozen_gap,hess0\n");
    let mut push = |trace: &FlatnessTrace| {
        let tag = match trace.mode {
            TraceMode::Measure => "measure",
            TraceMode::Cascade => "cascade",
        };
        for s in &trace.steps {
            out.push_str(&format!("{tag},{},{:.17e},{:.17e}", s.k, s.radius, s.ell.a));
            for b in &s.ell.b {
                out.push_str(&format!(",{b:.17e}"));
            }
            match s.frozen_gap {
                Some(g) => out.push_str(&format!(",{:.17e},{g:.17e}", s.sup_error)),
                None => out.push_str(&format!(",{:.17e},", s.sup_error)),
            }
            match s.hess0 {
                Some(h0) => out.push_str(&format!(",{h0:.17e}\n")),
                None => out.push_str(",\n"),
            }
        }
    };
    push(measure);
    if let Some(c) = cascade {
        push(c);
    }
    out
}

fn plot_dat(trace: &FlatnessTrace) -> String {
    let mut out = String::from("# log_radius log_error\n");
    for s in &trace.steps {
        if s.sup_error > 0.0 {
            out.push_str(&format!("{:.17e} {:.17e}\n", s.radius.ln(), s.sup_error.ln()));
        }
    }
    out
}

/// Writes result.json, per-point trace CSVs and plot data, report.txt and
/// timings.json under `<out_root>/<scenario name>/<timestamp>/`.
pub fn persist_result(
    result: &ExperimentResult,
    timings: &Timings,
    out_root: &Path,
) -> Result<PathBuf, HarnessError> {
    let dir = fresh_dir(out_root, &result.spec.name)?;
    fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(result)?,
    )?;
    fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(timings)?,
    )?;
    for (i, p) in result.points.iter().enumerate() {
        fs::write(
            dir.join(format!("trace_{i}.csv")),
            trace_csv(&p.measure, p.cascade.as_ref(), result.spec.dimension),
        )?;
        fs::write(dir.join(format!("plot_{i}.dat")), plot_dat(&p.measure))?;
    }
    fs::write(dir.join("report.txt"), emit_report(result))?;
    Ok(dir)
}

/// Independent re-validation of a persisted result directory: residual
/// recheck within tolerance, strictly decreasing trace radii, and the
/// fitted exponent recomputable from the CSV trace to 1e-12.
pub fn revalidate(dir: &Path) -> Result<(), HarnessError> {
    let text = fs::read_to_string(dir.join("result.json"))?;
    let result: ExperimentResult = serde_json::from_str(&text)?;
    let fail = |msg: String| Err(HarnessError::Spec(msg));

    if result.solve.recheck_residual > 1.5 * result.spec.solver.tol {
        return fail(format!(
            "recheck residual {:e} exceeds tolerance {:e}",
            result.solve.recheck_residual, result.spec.solver.tol
        ));
    }
    for (i, p) in result.points.iter().enumerate() {
        for w in p.measure.steps.windows(2) {
            if !(w[1].radius < w[0].radius) {
                return fail(format!("point {i}: trace radii not decreasing"));
            }
        }
        let csv = fs::read_to_string(dir.join(format!("trace_{i}.csv")))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for line in csv.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.first() != Some(&"measure") {
                continue;
            }
            let radius: f64 = cells[2].parse().map_err(|_| {
                HarnessError::Spec(format!("point {i}: bad radius cell {:?}", cells[2]))
            })?;
            let err: f64 = cells[3 + result.spec.dimension + 1].parse().map_err(|_| {
                HarnessError::Spec(format!("point {i}: bad error cell"))
            })?;
            if err > p.measure.noise_floor {
                xs.push(radius.ln());
                ys.push(err.ln());
            }
        }
        if let Some(stored) = p.measure.fitted_exponent {
            if xs.len() < 3 {
                return fail(format!("point {i}: CSV has too few live steps"));
            }
            let (slope, _) = ols(&xs, &ys);
            if (slope - 2.0 - stored).abs() > 1e-12 {
                return fail(format!(
                    "point {i}: CSV refit {} vs stored {stored}",
                    slope - 2.0
                ));
            }
        }
    }
    Ok(())
}
