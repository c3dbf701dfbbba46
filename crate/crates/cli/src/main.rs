use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lvdelay::model::History;
use lvdelay::{load_spec, HistorySpec, SpecError, SystemSpec};
use lvdelay::matrices::MatrixError;
use lvdelay::simulator::{write_csv, SimError};
use serde::Serialize;
use thiserror::Error;

mod fixtures;
mod report;
mod run;

use report::{AnalysisReport, TOOL};
use run::{RunOutcome, SimSettings};

#[derive(Parser)]
#[command(name = "lvdelay", version, about = "Equilibria, attractivity certificates and simulation for delayed Lotka-Volterra systems with feedback controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Matrix classifications, saturated equilibria and the attractivity verdict.
    Analyze {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Integrate the system and summarize convergence, rates and Lyapunov checks.
    Simulate {
        spec: PathBuf,
        #[arg(long = "T", default_value_t = 100.0)]
        t_end: f64,
        #[arg(long)]
        h: Option<f64>,
        /// Constant history `x_1,..,x_n[;u_1,..,u_n]`; default is the spec's.
        #[arg(long)]
        history: Option<String>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Gamma kernels by truncated quadrature instead of the chain trick.
        #[arg(long)]
        quadrature: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Analyze, then check the verdict against simulations from random histories.
    Verify {
        spec: PathBuf,
        /// Default 200, or 20000 when the certified equilibrium is degenerate.
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(3..))]
        runs: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Replace the certified x* by `x_1,..,x_n` (harness self-test).
        #[arg(long)]
        inject_equilibrium: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// List the built-in fixtures, or print (or write) one of them.
    Examples {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Spec { path: String, source: SpecError },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
}

fn read_spec(path: &PathBuf) -> Result<SystemSpec, CliError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: p.clone(), source })?;
    load_spec(&text).map_err(|source| CliError::Spec { path: p, source })
}

fn parse_list(s: &str, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    if v.len() != n {
        return Err(CliError::Usage(format!("{what}: expected {n} values, found {}", v.len())));
    }
    Ok(v)
}

fn parse_history(s: &str, spec: &SystemSpec) -> Result<HistorySpec, CliError> {
    let n = spec.n();
    let (xs, us) = match s.split_once(';') {
        Some((x, u)) => (x, Some(u)),
        None => (s, None),
    };
    let x = parse_list(xs, n, "--history")?;
    let u = match us {
        Some(u) => parse_list(u, n, "--history")?,
        None => (0..n).map(|i| spec.d()[i] * x[i] / spec.e()[i]).collect(),
    };
    let h = HistorySpec {
        x: x.into_iter().map(History::Constant).collect(),
        u: u.into_iter().map(History::Constant).collect(),
    };
    h.validate(n).map_err(|e| CliError::Usage(format!("--history: {e}")))?;
    Ok(h)
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce(&mut String)) {
    match format {
        Format::Structured => {
            let s = serde_json::to_string_pretty(value).expect("reports serialize");
            println!("{s}");
        }
        Format::Text => {
            let mut s = String::new();
            text(&mut s);
            print!("{s}");
        }
    }
}

fn cmd_analyze(spec_path: &PathBuf, format: Format) -> Result<ExitCode, CliError> {
    let spec = read_spec(spec_path)?;
    let report = AnalysisReport::build(&spec)?;
    emit(format, &report, |s| report.render_text(s));
    Ok(if report.indeterminate() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

#[derive(Serialize)]
struct SimulateReport {
    tool: report::Tool,
    verdict: lvdelay::attractivity::Theorem,
    simulation: report::SimulationSummary,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    spec_path: &PathBuf,
    t_end: f64,
    h: Option<f64>,
    history: Option<&str>,
    out: Option<&PathBuf>,
    stride: usize,
    tol: f64,
    quadrature: bool,
    format: Format,
) -> Result<ExitCode, CliError> {
    let spec = read_spec(spec_path)?;
    let analysis = AnalysisReport::build(&spec)?;
    let (hist, label) = match history {
        Some(s) => (parse_history(s, &spec)?, format!("constant {s}")),
        None => (spec.history().clone(), "from spec".to_string()),
    };
    let settings = SimSettings::new(&spec, t_end, h, tol, quadrature);
    let lyap_stride = if out.is_some() { stride.max(1) } else { 0 };
    let RunOutcome { summary, traj, trace } = run::simulate(&spec, &analysis.verdict, &hist, label, &settings, None, lyap_stride)?;
    if let Some(path) = out {
        let p = path.display().to_string();
        let file = fs::File::create(path).map_err(|source| CliError::Io { path: p.clone(), source })?;
        let mut w = BufWriter::new(file);
        match &trace {
            Some(tr) => write_csv(&mut w, &traj, Some(tr), 1),
            None => write_csv(&mut w, &traj, None, stride),
        }
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Io { path: p, source })?;
    }
    let report = SimulateReport {
        tool: TOOL,
        verdict: analysis.verdict.theorem,
        simulation: summary,
    };
    emit(format, &report, |s| {
        use std::fmt::Write as _;
        let _ = writeln!(s, "verdict: {}", report.verdict.label());
        report.simulation.render_text(s);
    });
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    spec_path: &PathBuf,
    t_end: Option<f64>,
    h: Option<f64>,
    seed: u64,
    runs: u64,
    tol: f64,
    inject: Option<&str>,
    format: Format,
) -> Result<ExitCode, CliError> {
    let spec = read_spec(spec_path)?;
    let analysis = AnalysisReport::build(&spec)?;
    let injected = inject.map(|s| parse_list(s, spec.n(), "--inject-equilibrium")).transpose()?;
    let degenerate = analysis.verdict.equilibrium.as_ref().is_some_and(|e| e.degenerate);
    let t_end = t_end.unwrap_or(if degenerate { run::VERIFY_T_DEGENERATE } else { run::VERIFY_T });
    let settings = SimSettings::new(&spec, t_end, h, tol, false);
    let report = run::verify(&spec, analysis, &settings, seed, runs, injected)?;
    emit(format, &report, |s| report.render_text(s));
    Ok(match report.status {
        run::Status::Pass | run::Status::Skip => ExitCode::SUCCESS,
        run::Status::Indeterminate => ExitCode::from(2),
        run::Status::Fail => ExitCode::from(3),
    })
}

fn cmd_examples(name: Option<&str>, out: Option<&PathBuf>) -> Result<ExitCode, CliError> {
    let Some(name) = name else {
        for f in fixtures::FIXTURES {
            println!("{:<22} {}", f.name, f.summary);
        }
        return Ok(ExitCode::SUCCESS);
    };
    let f = fixtures::find(name).ok_or_else(|| {
        let known: Vec<&str> = fixtures::FIXTURES.iter().map(|f| f.name).collect();
        CliError::Usage(format!("unknown example `{name}` (known: {})", known.join(", ")))
    })?;
    match out {
        Some(path) => fs::write(path, f.config).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => print!("{}", f.config),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are input errors (exit 1); exit 2 is reserved for
    // indeterminate classifications.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Analyze { spec, format } => cmd_analyze(spec, *format),
        Command::Simulate {
            spec,
            t_end,
            h,
            history,
            out,
            stride,
            tol,
            quadrature,
            format,
        } => cmd_simulate(spec, *t_end, *h, history.as_deref(), out.as_ref(), *stride, *tol, *quadrature, *format),
        Command::Verify {
            spec,
            t_end,
            h,
            seed,
            runs,
            tol,
            inject_equilibrium,
            format,
        } => cmd_verify(spec, *t_end, *h, *seed, *runs, *tol, inject_equilibrium.as_deref(), *format),
        Command::Examples { name, out } => cmd_examples(name.as_deref(), out.as_ref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
