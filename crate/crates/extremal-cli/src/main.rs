//! Command-line front door: load a problem document, run one of the
//! four analyses and emit JSON (and CSV trajectories) deterministically
//! for a fixed seed.
//!
//! Exit codes: 0 ok, 1 usage, 2 invalid problem or out-of-class,
//! 3 no solution / no convergence, 4 identity check failed.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use extremal::identities::{run_identity_suite, IdentityError};
use extremal::integrability::{enumerate_piecewise, IntegrabilityError, PiecewiseSolution};
use extremal::pontryagin::{build_hamiltonian, classify, morse_matrix, Hamiltonian, MorseReport};
use extremal::problem::{load_problem, Mode, OcProblem};
use extremal::sample::halton_box;
use extremal::solver::{shoot, SolverError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NO_SOLUTION: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "extremal",
    about = "Geometric analysis of optimal control problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank classification of the stationarity matrix over a sample grid.
    Analyze(CommonArgs),
    /// Two-point boundary-value shooting on the initial costate.
    Solve(CommonArgs),
    /// Enumeration of piecewise-constant extremals.
    Enumerate(CommonArgs),
    /// Cross-identity suite between the Hamiltonian and velocity sides.
    Check(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Problem document (UTF-8 JSON).
    problem: PathBuf,
    /// Number of sample points (grids and identity suites).
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    /// Seed for all deterministic sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of the sampling box, per coordinate.
    #[arg(long = "box", default_value_t = 2.0)]
    box_half_width: f64,
    /// Integration steps for trajectories.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Numeric tolerance (rank decisions, residuals, shooting).
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Switch budget for the enumerator (0, 1 or 2).
    #[arg(long, default_value_t = 1)]
    max_switches: usize,
    /// Override the problem's declared mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Inject an exact sample point, e.g. `--probe q=0,p=0,u=0`
    /// (unnamed coordinates default to 0; repeatable).
    #[arg(long)]
    probe: Vec<String>,
    /// Directory for report and trajectory files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shift identity-check samples off the stationarity set by this
    /// amount (validation aid: a nonzero value must fail the check).
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "normal" => Ok(Mode::Normal),
        "abnormal" => Ok(Mode::Abnormal),
        other => Err(format!("unknown mode `{other}` (use normal or abnormal)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::from(EXIT_OK)
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };

    let (args, run): (&CommonArgs, fn(&CommonArgs, OcProblem) -> u8) = match &cli.command {
        Command::Analyze(a) => (a, cmd_analyze),
        Command::Solve(a) => (a, cmd_solve),
        Command::Enumerate(a) => (a, cmd_enumerate),
        Command::Check(a) => (a, cmd_check),
    };

    if args.samples == 0
        || args.steps == 0
        || !(args.tol > 0.0)
        || !(args.box_half_width > 0.0)
    {
        eprintln!("error: --samples, --steps, --tol and --box must be positive");
        return ExitCode::from(EXIT_USAGE);
    }

    let text = match std::fs::read_to_string(&args.problem) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.problem.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let mut problem = match load_problem(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Some(mode) = args.mode {
        problem = problem.with_mode(mode);
    }

    ExitCode::from(run(args, problem))
}

/// Resolves one `k=v,...` probe string into a full `(q, p, u)` point.
fn parse_probe(
    spec: &str,
    problem: &OcProblem,
    h: &Hamiltonian,
) -> Result<Vec<f64>, String> {
    let (n, m) = (problem.n(), problem.m());
    let mut point = vec![0.0; 2 * n + m];
    for pair in spec.split(',') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("probe entry `{pair}` is not of the form name=value"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| format!("probe value in `{pair}` is not a number"))?;
        let key = key.trim();
        let index = if let Some(i) = problem.states.iter().position(|s| s == key) {
            i
        } else if let Some(i) = h.costates.iter().position(|c| c == key) {
            n + i
        } else if let Some(i) = problem.controls.iter().position(|c| c == key) {
            2 * n + i
        } else if key == "q" && n == 1 {
            0
        } else if key == "p" && n == 1 {
            n
        } else if key == "u" && m == 1 {
            2 * n
        } else {
            return Err(format!("probe key `{key}` names no coordinate"));
        };
        point[index] = value;
    }
    Ok(point)
}

fn emit_report<T: Serialize>(args: &CommonArgs, file_name: &str, report: &T) -> Result<(), String> {
    let json = serde_json::to_string_pretty(report).expect("serializable report");
    println!("{json}");
    if let Some(dir) = &args.out {
        write_file(dir, file_name, &json)?;
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct AnalyzeReport {
    problem: String,
    mode: Mode,
    morse_matrix: Vec<Vec<String>>,
    report: MorseReport,
}

fn cmd_analyze(args: &CommonArgs, problem: OcProblem) -> u8 {
    let h = match build_hamiltonian(&problem) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let dim = 2 * problem.n() + problem.m();
    let mut samples = halton_box(dim, args.samples, args.box_half_width, args.seed);
    for spec in &args.probe {
        match parse_probe(spec, &problem, &h) {
            Ok(point) => samples.push(point),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
    }
    let report = match classify(&h, &samples, args.tol) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let out = AnalyzeReport {
        problem: problem.name.clone(),
        mode: problem.mode,
        morse_matrix: morse_matrix(&h).to_strings(),
        report,
    };
    match emit_report(args, &format!("{}_analyze.json", problem.name), &out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

#[derive(Serialize)]
struct SolveSummary {
    problem: String,
    converged: bool,
    p0: Vec<f64>,
    cost: f64,
    hamiltonian_t0: f64,
    hamiltonian_drift: f64,
    endpoint_residual: f64,
    iterations: usize,
    steps: usize,
    tol: f64,
    caustic_warnings: usize,
}

fn cmd_solve(args: &CommonArgs, problem: OcProblem) -> u8 {
    let h = match build_hamiltonian(&problem) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let guess = vec![0.0; problem.n()];
    let (summary, trajectory, code) = match shoot(&problem, &guess, args.steps, args.tol) {
        Ok(result) => {
            let s = SolveSummary {
                problem: problem.name.clone(),
                converged: true,
                p0: result.p0.clone(),
                cost: result.trajectory.cost,
                hamiltonian_t0: result.trajectory.hamiltonian[0],
                hamiltonian_drift: result.trajectory.hamiltonian_drift(),
                endpoint_residual: result.endpoint_residual,
                iterations: result.iterations,
                steps: args.steps,
                tol: args.tol,
                caustic_warnings: result.trajectory.caustic_warnings,
            };
            (s, result.trajectory, EXIT_OK)
        }
        Err(SolverError::ShootNoConvergence {
            best,
            p0,
            iterations,
            residual,
        }) => {
            let s = SolveSummary {
                problem: problem.name.clone(),
                converged: false,
                p0,
                cost: best.cost,
                hamiltonian_t0: best.hamiltonian[0],
                hamiltonian_drift: best.hamiltonian_drift(),
                endpoint_residual: residual,
                iterations,
                steps: args.steps,
                tol: args.tol,
                caustic_warnings: best.caustic_warnings,
            };
            (s, *best, EXIT_NO_SOLUTION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };

    if let Err(e) = emit_report(args, &format!("{}_summary.json", problem.name), &summary) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    if let Some(dir) = &args.out {
        let csv = trajectory.to_csv(&h);
        if let Err(e) = write_file(dir, &format!("{}_trajectory.csv", problem.name), &csv) {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    }
    code
}

#[derive(Serialize)]
struct EnumerateReport {
    problem: String,
    max_switches: usize,
    tol: f64,
    solutions: Vec<PiecewiseSolution>,
}

fn cmd_enumerate(args: &CommonArgs, problem: OcProblem) -> u8 {
    let solutions = match enumerate_piecewise(&problem, args.max_switches, args.tol) {
        Ok(s) => s,
        Err(IntegrabilityError::ClassViolation(reasons)) => {
            eprintln!("error: problem is outside the enumerator's class:");
            for r in &reasons {
                eprintln!("  - {r}");
            }
            return EXIT_INVALID;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let empty = solutions.is_empty();
    let report = EnumerateReport {
        problem: problem.name.clone(),
        max_switches: args.max_switches,
        tol: args.tol,
        solutions,
    };
    if let Err(e) = emit_report(args, &format!("{}_solutions.json", problem.name), &report) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    if let Some(dir) = &args.out {
        for (i, sol) in report.solutions.iter().enumerate() {
            let mut csv = String::from("t");
            for name in problem
                .states
                .iter()
                .map(|s| s.clone())
                .chain(problem.states.iter().map(|s| format!("p_{s}")))
                .chain(problem.controls.iter().cloned())
            {
                csv.push(',');
                csv.push_str(&name);
            }
            csv.push('\n');
            for [t, q, p, u] in &sol.samples {
                csv.push_str(&format!("{t:.16e},{q:.16e},{p:.16e},{u:.16e}\n"));
            }
            let name = format!("{}_solution_{i}.csv", problem.name);
            if let Err(e) = write_file(dir, &name, &csv) {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        }
    }
    if empty {
        EXIT_NO_SOLUTION
    } else {
        EXIT_OK
    }
}

fn cmd_check(args: &CommonArgs, problem: OcProblem) -> u8 {
    let report = match run_identity_suite(
        &problem,
        args.samples,
        args.seed,
        args.box_half_width,
        args.perturb,
    ) {
        Ok(r) => r,
        Err(IdentityError::NotEnoughSamples { got, want }) => {
            eprintln!(
                "error: identity sampler produced only {got} of {want} points; \
                 widen --box or reduce --samples"
            );
            return EXIT_INVALID;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let passed = report.all_passed;
    if let Err(e) = emit_report(args, &format!("{}_check.json", problem.name), &report) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    if passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
