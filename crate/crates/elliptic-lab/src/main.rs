use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use elliptic_lab::flatness::{dini_integral, TraceMode};
use elliptic_lab::harness::{
    build_scenario, compare_points, comparison_csv, comparison_text, persist_result,
    run_experiment, ExperimentResult, HarnessError, ScenarioSpec,
};

#[derive(Parser)]
#[command(
    name = "elliptic-lab",
    about = "Numerical laboratory for Hessian-Holder exponents of uniformly elliptic equations"
)]
struct Cli {
    /// Root directory for persisted results.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Override the scenario's solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Override the scenario's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a scenario and persist the full result.
    Solve { spec: PathBuf },
    /// Print fitted exponents for every marked point.
    Exponent {
        spec: PathBuf,
        #[arg(long, default_value = "measure")]
        mode: String,
    },
    /// Run the flatness iteration to a requested depth and print the trace.
    Iterate {
        spec: PathBuf,
        #[arg(long)]
        depth: u32,
    },
    /// Run every spec in a directory and write a comparison table.
    Sweep {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Hypotheses only: ellipticity sampling, seminorm fits, Dini test.
    Check { spec: PathBuf },
}

fn load_spec(path: &Path, cli: &Cli) -> Result<ScenarioSpec, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut spec = ScenarioSpec::from_json(&text)?;
    if let Some(tol) = cli.tol {
        spec.solver.tol = tol;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn print_points(result: &ExperimentResult, mode: &str, quiet: bool) {
    if quiet {
        return;
    }
    for p in &result.points {
        let trace = match mode {
            "cascade" => match &p.cascade {
                Some(t) => t,
                None => {
                    println!("point {:?}: no cascade trace (off-center point)", p.point);
                    continue;
                }
            },
            _ => &p.measure,
        };
        let alpha = trace
            .fitted_exponent
            .map_or("n/a".to_string(), |a| format!("{a:.4}"));
        println!(
            "point {:?}: |D2u| = {:.3e}, alpha = {alpha}, steps = {}{}",
            p.point,
            p.hessian_norm,
            trace.steps.len(),
            if trace.truncated { " (depth-capped)" } else { "" }
        );
    }
}

fn cmd_solve(cli: &Cli, spec_path: &Path) -> Result<(), HarnessError> {
    let spec = load_spec(spec_path, cli)?;
    let (result, timings) = run_experiment(&spec)?;
    let dir = persist_result(&result, &timings, &cli.out)?;
    if !cli.quiet {
        println!(
            "solved {} in {} iterations (residual {:.3e})",
            spec.name, result.solve.iterations, result.solve.final_residual
        );
        print_points(&result, "measure", cli.quiet);
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_exponent(cli: &Cli, spec_path: &Path, mode: &str) -> Result<(), HarnessError> {
    if mode != "measure" && mode != "cascade" {
        return Err(HarnessError::Spec(format!(
            "unknown mode {mode:?}; expected \"measure\" or \"cascade\""
        )));
    }
    let spec = load_spec(spec_path, cli)?;
    let (result, _) = run_experiment(&spec)?;
    print_points(&result, mode, false);
    Ok(())
}

fn cmd_iterate(cli: &Cli, spec_path: &Path, depth: u32) -> Result<(), HarnessError> {
    let mut spec = load_spec(spec_path, cli)?;
    spec.flatness.depth = depth;
    let (result, _) = run_experiment(&spec)?;
    for p in &result.points {
        let traces: Vec<_> = [Some(&p.measure), p.cascade.as_ref()]
            .into_iter()
            .flatten()
            .collect();
        for trace in traces {
            let tag = match trace.mode {
                TraceMode::Measure => "measure",
                TraceMode::Cascade => "cascade",
            };
            println!("point {:?} [{tag}]", p.point);
            for s in &trace.steps {
                println!(
                    "  k = {:>2}  radius = {:.6e}  sup_error = {:.6e}",
                    s.k, s.radius, s.sup_error
                );
            }
        }
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, dir: &Path, jobs: usize) -> Result<(), HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Spec(format!(
            "no .json scenario files in {}",
            dir.display()
        )));
    }
    let specs: Vec<ScenarioSpec> = paths
        .iter()
        .map(|p| load_spec(p, cli))
        .collect::<Result<_, _>>()?;

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..specs.len()).collect());
    let slots: Vec<Mutex<Option<Result<ExperimentResult, String>>>> =
        specs.iter().map(|_| Mutex::new(None)).collect();
    let workers = jobs.max(1).min(specs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop_front();
                let Some(i) = next else { break };
                let outcome = run_experiment(&specs[i])
                    .and_then(|(result, timings)| {
                        persist_result(&result, &timings, &cli.out)?;
                        Ok(result)
                    })
                    .map_err(|e| e.to_string());
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    let mut results = Vec::new();
    for (path, slot) in paths.iter().zip(&slots) {
        match slot.lock().expect("slot lock").take() {
            Some(Ok(result)) => results.push(result),
            Some(Err(msg)) => eprintln!("{}: {msg}", path.display()),
            None => eprintln!("{}: not run", path.display()),
        }
    }
    let rows = compare_points(&results);
    if rows.is_empty() {
        eprintln!("warning: no fitted exponents to compare");
    }
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("comparison.csv"), comparison_csv(&rows))?;
    fs::write(cli.out.join("comparison.txt"), comparison_text(&rows))?;
    if !cli.quiet {
        print!("{}", comparison_text(&rows));
        println!("wrote {}", cli.out.join("comparison.csv").display());
    }
    if results.len() < specs.len() {
        return Err(HarnessError::Spec(format!(
            "{} of {} scenarios failed",
            specs.len() - results.len(),
            specs.len()
        )));
    }
    Ok(())
}

fn cmd_check(cli: &Cli, spec_path: &Path) -> Result<(), HarnessError> {
    let spec = load_spec(spec_path, cli)?;
    let built = build_scenario(&spec)?;
    println!(
        "ellipticity: declared [{}, {}], empirical [{:.6}, {:.6}] over {} trials ({})",
        built.declared.lambda,
        built.declared.lambda_big,
        built.ellipticity.lambda_star,
        built.ellipticity.lambda_big_star,
        built.ellipticity.trials,
        if built.ellipticity.holds { "ok" } else { "VIOLATED" }
    );
    let radii: Vec<f64> = (0..8).map(|i| 0.7f64.powi(i)).collect();
    let dict = elliptic_lab::operators::default_dictionary(spec.dimension);
    let osc = elliptic_lab::operators::estimate_oscillation_seminorm(
        &built.problem.operator,
        spec.budget.eps_bar,
        &radii,
        spec.dimension as u32,
        &dict,
        33,
    )?;
    println!(
        "[F] seminorm {:.6e}, fitted exponent {:?} (declared eps_bar {})",
        osc.seminorm, osc.fitted_exponent, spec.budget.eps_bar
    );
    let src = elliptic_lab::operators::estimate_source_seminorm(
        &built.problem.source,
        spec.budget.gamma,
        &radii,
        spec.dimension as u32,
    )?;
    println!(
        "[f] seminorm {:.6e}, fitted exponent {:?} (declared gamma {})",
        src.seminorm, src.fitted_exponent, spec.budget.gamma
    );
    match &built.modulus {
        Some(w) => {
            let d = dini_integral(|t| w(t), 1e-8);
            println!(
                "Dini integral {:.6} ({})",
                d.value,
                if d.converged { "converges" } else { "diverges" }
            );
        }
        None => println!("no coefficient modulus declared; Dini test skipped"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Solve { spec } => cmd_solve(&cli, spec),
        Cmd::Exponent { spec, mode } => cmd_exponent(&cli, spec, mode),
        Cmd::Iterate { spec, depth } => cmd_iterate(&cli, spec, *depth),
        Cmd::Sweep { dir, jobs } => cmd_sweep(&cli, dir, *jobs),
        Cmd::Check { spec } => cmd_check(&cli, spec),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
