//! Command-line front end. Four verbs: `verify` proves the envelope
//! conditions with the interval solver, `simulate` runs the adversarial
//! falsification campaign, `export-smt2` writes the task suite for
//! external solvers, and `report` re-renders a saved machine report.
//!
//! Exit status: 0 when every requested task reached a verdict (SAT is a
//! verdict; safety interpretation lives in the report), 1 when some task
//! ran out of budget, 2 on errors.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use octoverify::alloc::AllocError;
use octoverify::config::{ConfigError, ConfigFile, RunConfig};
use octoverify::conditions::{ScenarioSpec, SuiteOptions};
use octoverify::report::Report;
use octoverify::run::{
    run_export, run_simulate, run_verify, RunError, SimulateOptions, VerifyOptions,
};
use octoverify::FailureScenario;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("--scenario {text:?}: {source}")]
    Scenario {
        text: String,
        #[source]
        source: AllocError,
    },
    #[error("--mu-max {value} must be a finite number >= 1")]
    MuMax { value: f64 },
    #[error("{}: not a report file: {source}", path.display())]
    BadReport {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(
    name = "octoverify",
    version,
    about = "Interval-based flight-envelope verification for an octorotor inner loop",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON configuration file; omitting it runs the stock setup (`{}`).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Default precision override. Per-scenario `delta` entries in the
    /// configuration still take priority for their own task.
    #[arg(long, global = true, value_name = "DELTA")]
    delta: Option<f64>,

    /// Solver worker count and simulation job count.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Substring filter on task names (or report rows).
    #[arg(long, global = true, value_name = "SUBSTRING")]
    filter: Option<String>,

    /// Directory of resumable search state, one file per task; tasks
    /// resume from their file and remove it on completion.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,

    /// Simulation seed override.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Prove the envelope conditions with the interval solver.
    Verify(VerifyArgs),
    /// Search for counterexamples with adversarial simulations.
    Simulate(SimulateArgs),
    /// Write the task suite as SMT-LIB2 files without solving.
    ExportSmt2(ExportArgs),
    /// Render a saved machine report (exit status reflects its rows).
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Additional failure scenario as comma-separated `index:thrust`
    /// pairs, e.g. `1:0,8:1.4715`. Repeatable.
    #[arg(long, value_name = "SPEC")]
    scenario: Vec<String>,

    /// Region-scale cap for the scenarios added with `--scenario`.
    #[arg(long, value_name = "MU", requires = "scenario")]
    mu_max: Option<f64>,
}

#[derive(Args)]
struct OutputArgs {
    /// Print the machine JSON report instead of the aligned text table.
    #[arg(long)]
    json: bool,

    /// Also save the machine JSON report to this file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenarios: ScenarioArgs,

    /// Prove the roll and pitch invariance tasks over the full region
    /// range instead of the default cap. Expect a long run; combine
    /// with --checkpoint.
    #[arg(long)]
    full_attitude_range: bool,

    /// Also write each executed task as SMT-LIB2 into this directory.
    #[arg(long, value_name = "DIR")]
    smt2_dir: Option<PathBuf>,

    /// For rotor-bound tasks that did not verify, bisect for the largest
    /// region scale that does.
    #[arg(long)]
    auto_bisect: bool,

    /// Bracket width at which --auto-bisect stops.
    #[arg(long, value_name = "TOL", default_value_t = 0.05)]
    bisect_tol: f64,

    /// Boxes processed between checkpoint saves.
    #[arg(long, value_name = "N", default_value_t = 200_000)]
    checkpoint_every: u64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenarios: ScenarioArgs,

    /// Directory for counterexample trajectories (CSV).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Output directory for the `.smt2` files.
    #[arg(value_name = "DIR")]
    dir: PathBuf,

    #[command(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved machine report (the `--out` of verify or simulate).
    #[arg(value_name = "REPORT.json")]
    path: PathBuf,

    /// Re-emit machine JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn load_config(global: &Global) -> Result<RunConfig, CliError> {
    let text = match &global.config {
        Some(path) => fs::read_to_string(path).map_err(io_at(path))?,
        None => "{}".into(),
    };
    Ok(ConfigFile::parse(&text)?.resolve()?)
}

fn append_scenarios(cfg: &mut RunConfig, args: &ScenarioArgs) -> Result<(), CliError> {
    if let Some(m) = args.mu_max {
        if !(m >= 1.0) || !m.is_finite() {
            return Err(CliError::MuMax { value: m });
        }
    }
    for text in &args.scenario {
        let scenario = FailureScenario::parse(text)
            .and_then(|s| s.validate(&cfg.params).map(|()| s))
            .map_err(|source| CliError::Scenario {
                text: text.clone(),
                source,
            })?;
        cfg.scenarios.push(ScenarioSpec {
            scenario,
            mu_max: args.mu_max,
            delta: None,
        });
    }
    Ok(())
}

fn emit(report: &Report, out: &OutputArgs) -> Result<(), CliError> {
    if let Some(path) = &out.out {
        fs::write(path, report.render_json()).map_err(io_at(path))?;
    }
    if out.json {
        println!("{}", report.render_json());
    } else {
        print!("{}", report.render_text());
    }
    Ok(())
}

fn status_of(report: &Report) -> ExitCode {
    if report.all_decided() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn verify(global: &Global, args: &VerifyArgs) -> Result<ExitCode, CliError> {
    let mut cfg = load_config(global)?;
    append_scenarios(&mut cfg, &args.scenarios)?;
    let suite = SuiteOptions {
        phi_theta_mu_cap: if args.full_attitude_range {
            None
        } else {
            SuiteOptions::default().phi_theta_mu_cap
        },
    };
    let opts = VerifyOptions {
        filter: global.filter.clone(),
        delta: global.delta,
        workers: global.jobs,
        checkpoint_dir: global.checkpoint.clone(),
        checkpoint_every: args.checkpoint_every,
        suite,
        smt2_dir: args.smt2_dir.clone(),
        auto_bisect: args.auto_bisect,
        bisect_tol: args.bisect_tol,
    };
    let report = run_verify(&cfg, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit(&report, &args.output)?;
    Ok(status_of(&report))
}

fn simulate(global: &Global, args: &SimulateArgs) -> Result<ExitCode, CliError> {
    let mut cfg = load_config(global)?;
    append_scenarios(&mut cfg, &args.scenarios)?;
    let opts = SimulateOptions {
        filter: global.filter.clone(),
        out_dir: args.out_dir.clone(),
        seed: global.seed,
        jobs: global.jobs,
    };
    let report = run_simulate(&cfg, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit(&report, &args.output)?;
    Ok(status_of(&report))
}

fn export(global: &Global, args: &ExportArgs) -> Result<ExitCode, CliError> {
    let mut cfg = load_config(global)?;
    append_scenarios(&mut cfg, &args.scenarios)?;
    let opts = VerifyOptions {
        filter: global.filter.clone(),
        delta: global.delta,
        ..Default::default()
    };
    let paths = run_export(&cfg, &opts, &args.dir)?;
    if paths.is_empty() {
        eprintln!(
            "warning: filter {:?} matched no tasks; nothing exported",
            global.filter.as_deref().unwrap_or("")
        );
    }
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn render_report(global: &Global, args: &ReportArgs) -> Result<ExitCode, CliError> {
    let text = fs::read_to_string(&args.path).map_err(io_at(&args.path))?;
    let mut report: Report =
        serde_json::from_str(&text).map_err(|source| CliError::BadReport {
            path: args.path.clone(),
            source,
        })?;
    if let Some(f) = &global.filter {
        report.rows.retain(|r| r.name.contains(f));
    }
    if args.json {
        println!("{}", report.render_json());
    } else {
        print!("{}", report.render_text());
    }
    Ok(status_of(&report))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Verify(args) => verify(&cli.global, args),
        Cmd::Simulate(args) => simulate(&cli.global, args),
        Cmd::ExportSmt2(args) => export(&cli.global, args),
        Cmd::Report(args) => render_report(&cli.global, args),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
