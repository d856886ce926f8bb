//! End-to-end orchestration: resolves a configuration into the task
//! suite, executes it under optional filters, precision overrides and a
//! checkpointed box budget, and collects a [`Report`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::alloc::FailureScenario;
use crate::barrier::{octorotor_barriers, AffineBarrier, BarrierError, BarrierParams};
use crate::conditions::{
    condition_suite, rotor_bound_violation, ConditionError, QueryVars, ScenarioSpec, SuiteOptions,
    VerifyTask, VAR_NAMES,
};
use crate::config::RunConfig;
use crate::expr::{IntervalBox, VarSet};
use crate::report::{Report, TaskReport};
use crate::sim::{falsify, SimError, ViolationKind};
use crate::smt2::export_smt2;
use crate::solver::checkpoint::{self, CheckpointError};
use crate::solver::{
    bisect_mu_max, solve_from, BisectError, Frontier, Outcome, SolveStats, SolverConfig,
    SolverError, Verdict,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bisect(#[from] BisectError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Options for [`run_verify`] and [`run_export`].
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Substring filter on task names; `None` runs everything.
    pub filter: Option<String>,
    /// Overrides the configured default precision. Per-task precisions
    /// from failure entries still take priority.
    pub delta: Option<f64>,
    pub workers: Option<usize>,
    /// Directory holding resumable search state, one file per task. A
    /// task whose checkpoint file exists resumes from it; on completion
    /// the file is removed.
    pub checkpoint_dir: Option<PathBuf>,
    /// Boxes between checkpoint saves.
    pub checkpoint_every: u64,
    pub suite: SuiteOptions,
    /// Also write each executed task as an SMT-LIB2 file here.
    pub smt2_dir: Option<PathBuf>,
    /// For each rotor-bound task that did not verify, search for the
    /// largest region scale that does.
    pub auto_bisect: bool,
    /// Bracket width at which the scale search stops.
    pub bisect_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            filter: None,
            delta: None,
            workers: None,
            checkpoint_dir: None,
            checkpoint_every: 200_000,
            suite: SuiteOptions::default(),
            smt2_dir: None,
            auto_bisect: false,
            bisect_tol: 0.05,
        }
    }
}

/// Task names double as file names: anything outside `[A-Za-z0-9._,=-]`
/// becomes `_`.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | ',' | '=' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn witness_map(vars: &VarSet, witness: &[f64]) -> BTreeMap<String, f64> {
    vars.names()
        .zip(witness)
        .map(|(n, v)| (n.to_string(), *v))
        .collect()
}

fn enclosure_map(vars: &VarSet, bx: &IntervalBox) -> BTreeMap<String, [f64; 2]> {
    vars.names()
        .zip(&bx.0)
        .map(|(n, iv)| (n.to_string(), [iv.lo, iv.hi]))
        .collect()
}

struct TaskContext<'a> {
    vars: &'a VarSet,
    cfg: SolverConfig,
    checkpoint: Option<PathBuf>,
    checkpoint_every: u64,
}

fn execute(task: &VerifyTask, ctx: &TaskContext) -> Result<TaskReport, RunError> {
    let started = Instant::now();
    let outcome: Result<_, SolveStats> = match &ctx.checkpoint {
        Some(path) => {
            let mut frontier = if path.exists() {
                checkpoint::load(path, ctx.cfg.delta, ctx.vars)?
            } else {
                Frontier::root(&task.domain)
            };
            loop {
                let cap = frontier
                    .processed
                    .saturating_add(ctx.checkpoint_every)
                    .min(ctx.cfg.max_boxes);
                let chunk = SolverConfig {
                    max_boxes: cap,
                    ..ctx.cfg
                };
                match solve_from(&task.formula, &task.domain, &chunk, frontier)? {
                    Outcome::Done(sol) => {
                        let _ = fs::remove_file(path);
                        break Ok(sol);
                    }
                    Outcome::Budget {
                        frontier: rest,
                        stats,
                    } => {
                        checkpoint::save(path, ctx.cfg.delta, ctx.vars, &rest)?;
                        if rest.processed >= ctx.cfg.max_boxes {
                            break Err(stats);
                        }
                        frontier = rest;
                    }
                }
            }
        }
        None => match solve_from(
            &task.formula,
            &task.domain,
            &ctx.cfg,
            Frontier::root(&task.domain),
        )? {
            Outcome::Done(sol) => Ok(sol),
            Outcome::Budget { stats, .. } => Err(stats),
        },
    };
    let wall_seconds = started.elapsed().as_secs_f64();
    let row = match outcome {
        Ok(sol) => {
            let (witness, enclosure) = match &sol.verdict {
                Verdict::Sat { witness } => (Some(witness_map(ctx.vars, witness)), None),
                Verdict::DeltaSat { enclosure } => (None, Some(enclosure_map(ctx.vars, enclosure))),
                Verdict::Unsat => (None, None),
            };
            TaskReport {
                name: task.name.clone(),
                verdict: sol.verdict.class().to_string(),
                delta: Some(ctx.cfg.delta),
                witness,
                enclosure,
                note: None,
                work: sol.stats.boxes,
                wall_seconds,
                workers: ctx.cfg.workers,
            }
        }
        Err(stats) => TaskReport {
            name: task.name.clone(),
            verdict: "BUDGET-EXHAUSTED".into(),
            delta: Some(ctx.cfg.delta),
            witness: None,
            enclosure: None,
            note: Some(match &ctx.checkpoint {
                Some(p) => format!(
                    "box budget of {} spent; resume from {}",
                    ctx.cfg.max_boxes,
                    p.display()
                ),
                None => format!(
                    "box budget of {} spent; rerun with a checkpoint directory to resume",
                    ctx.cfg.max_boxes
                ),
            }),
            work: stats.boxes,
            wall_seconds,
            workers: ctx.cfg.workers,
        },
    };
    Ok(row)
}

fn filtered_suite(
    qv: &QueryVars,
    comps: &[AffineBarrier],
    cfg: &RunConfig,
    opts: &VerifyOptions,
) -> Result<(Vec<VerifyTask>, usize), RunError> {
    let all = condition_suite(
        qv,
        comps,
        &cfg.search,
        &cfg.barrier,
        &cfg.gains,
        &cfg.params,
        &cfg.scenarios,
        &opts.suite,
    )?;
    let total = all.len();
    let tasks = all
        .into_iter()
        .filter(|t| {
            opts.filter
                .as_deref()
                .map_or(true, |f| t.name.contains(f))
        })
        .collect();
    Ok((tasks, total))
}

/// Runs the verification suite and reports one row per task. Exit
/// status policy belongs to the caller: [`Report::all_decided`] says
/// whether every requested task reached a verdict.
pub fn run_verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Report, RunError> {
    let qv = QueryVars::new();
    let comps = octorotor_barriers(&cfg.barrier, &cfg.gains, &cfg.params)?;
    let (tasks, total) = filtered_suite(&qv, &comps, cfg, opts)?;
    let mut report = Report::default();
    if tasks.is_empty() {
        report.warnings.push(format!(
            "filter {:?} matched none of the {total} tasks; nothing verified",
            opts.filter.as_deref().unwrap_or("")
        ));
        return Ok(report);
    }
    let base = SolverConfig {
        delta: opts.delta.unwrap_or(cfg.solver.delta),
        workers: opts.workers.unwrap_or(cfg.solver.workers),
        ..cfg.solver
    };
    for dir in [&opts.smt2_dir, &opts.checkpoint_dir].into_iter().flatten() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    for task in &tasks {
        let tcfg = SolverConfig {
            delta: task.delta.unwrap_or(base.delta),
            ..base
        };
        if let Some(dir) = &opts.smt2_dir {
            let path = dir.join(format!("{}.smt2", sanitize(&task.name)));
            let text = export_smt2(&qv.vars, &task.formula, &task.domain, tcfg.delta);
            fs::write(&path, text).map_err(io_at(&path))?;
        }
        let ctx = TaskContext {
            vars: &qv.vars,
            cfg: tcfg,
            checkpoint: opts
                .checkpoint_dir
                .as_ref()
                .map(|d| d.join(format!("{}.ckpt", sanitize(&task.name)))),
            checkpoint_every: opts.checkpoint_every.max(1),
        };
        report.rows.push(execute(task, &ctx)?);
    }
    if opts.auto_bisect {
        auto_bisect(&qv, &comps, cfg, &base, opts.bisect_tol, &mut report)?;
    }
    Ok(report)
}

/// Writes the (filtered) suite as SMT-LIB2 files without solving
/// anything. Returns the written paths in task order.
pub fn run_export(
    cfg: &RunConfig,
    opts: &VerifyOptions,
    dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    let qv = QueryVars::new();
    let comps = octorotor_barriers(&cfg.barrier, &cfg.gains, &cfg.params)?;
    let (tasks, _) = filtered_suite(&qv, &comps, cfg, opts)?;
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let default_delta = opts.delta.unwrap_or(cfg.solver.delta);
    let mut paths = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let delta = task.delta.unwrap_or(default_delta);
        let path = dir.join(format!("{}.smt2", sanitize(&task.name)));
        let text = export_smt2(&qv.vars, &task.formula, &task.domain, delta);
        fs::write(&path, text).map_err(io_at(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

fn auto_bisect(
    qv: &QueryVars,
    comps: &[AffineBarrier],
    cfg: &RunConfig,
    base: &SolverConfig,
    tol: f64,
    report: &mut Report,
) -> Result<(), RunError> {
    let mut specs = vec![ScenarioSpec::new(FailureScenario::none())];
    specs.extend(cfg.scenarios.iter().cloned());
    for spec in specs {
        let prefix = format!("rotor-bounds/{}", spec.scenario.label());
        let suffixed = format!("{prefix};");
        let Some(row) = report
            .rows
            .iter_mut()
            .find(|r| r.name == prefix || r.name.starts_with(&suffixed))
        else {
            continue;
        };
        if row.verdict == "UNSAT" {
            continue;
        }
        let hi = spec.mu_max.unwrap_or(cfg.barrier.mu_max).min(cfg.barrier.mu_max);
        let formula =
            rotor_bound_violation(qv, &spec.scenario, comps, &cfg.barrier, &cfg.gains, &cfg.params)
                .map_err(ConditionError::from)?;
        let family = |mu: f64| -> Result<Vec<VerifyTask>, ConditionError> {
            Ok(vec![VerifyTask {
                name: prefix.clone(),
                formula: formula.clone(),
                domain: cfg.search.domain(&cfg.params, &cfg.barrier, 1.0, mu),
                delta: spec.delta,
            }])
        };
        match bisect_mu_max(family, 1.0, hi, tol, base) {
            Ok(b) => {
                row.note = Some(format!(
                    "auto-bisect: largest verified region scale mu_max = {:.4} \
                     (bracket {:.4}..{:.4}, {} evaluations)",
                    b.mu_max,
                    b.bracket.0,
                    b.bracket.1,
                    b.evaluations.len()
                ));
                report.warnings.extend(b.warnings);
            }
            Err(BisectError::LowerNotUnsat { mu, task, class }) => {
                row.note = Some(format!(
                    "auto-bisect: {task} is {class} even at mu_max = {mu}"
                ));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Options for [`run_simulate`].
#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// Substring filter on scenario labels.
    pub filter: Option<String>,
    /// Directory for counterexample trajectories (CSV).
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Runs the falsification campaign for the no-failure case and every
/// configured scenario, one report row each.
pub fn run_simulate(cfg: &RunConfig, opts: &SimulateOptions) -> Result<Report, RunError> {
    let comps = octorotor_barriers(&cfg.barrier, &cfg.gains, &cfg.params)?;
    let mut specs = vec![ScenarioSpec::new(FailureScenario::none())];
    specs.extend(cfg.scenarios.iter().cloned());
    let total = specs.len();
    specs.retain(|s| {
        opts.filter
            .as_deref()
            .map_or(true, |f| s.scenario.label().contains(f))
    });
    let mut report = Report::default();
    if specs.is_empty() {
        report.warnings.push(format!(
            "filter {:?} matched none of the {total} scenarios; nothing simulated",
            opts.filter.as_deref().unwrap_or("")
        ));
        return Ok(report);
    }
    let mut settings = cfg.sim;
    if let Some(seed) = opts.seed {
        settings.seed = seed;
    }
    if let Some(jobs) = opts.jobs {
        settings.jobs = jobs;
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    for spec in &specs {
        let mu_hi = spec.mu_max.unwrap_or(cfg.barrier.mu_max).min(cfg.barrier.mu_max);
        let bp = BarrierParams {
            mu_max: mu_hi,
            ..cfg.barrier
        };
        let name = format!("falsify/{}", spec.scenario.label());
        let started = Instant::now();
        let found = falsify(
            &comps,
            &bp,
            &spec.scenario,
            &settings,
            &cfg.gains,
            &cfg.params,
        )?;
        let wall_seconds = started.elapsed().as_secs_f64();
        let row = match found {
            None => TaskReport {
                name,
                verdict: "NO-COUNTEREXAMPLE".into(),
                delta: None,
                witness: None,
                enclosure: None,
                note: Some(format!(
                    "{} adversarial trials over {}s stayed invariant (seed {})",
                    settings.trials, settings.horizon, settings.seed
                )),
                work: settings.trials as u64,
                wall_seconds,
                workers: settings.jobs.max(1),
            },
            Some(c) => {
                let kind = match c.kind {
                    ViolationKind::EscapedRegion => "escaped the outermost region",
                    ViolationKind::LevelIncrease => "raised its level past the running bound",
                };
                let mut note = format!(
                    "trial {} {kind} at t = {:.3}: mu = {:.6}, bound = {:.6}",
                    c.trial, c.t, c.mu, c.bound
                );
                if let Some(dir) = &opts.out_dir {
                    let path =
                        dir.join(format!("counterexample-{}.csv", sanitize(&spec.scenario.label())));
                    let file = fs::File::create(&path).map_err(io_at(&path))?;
                    c.trajectory
                        .write_csv(BufWriter::new(file))
                        .map_err(io_at(&path))?;
                    note.push_str(&format!("; trajectory written to {}", path.display()));
                }
                let mut witness = BTreeMap::new();
                for (name, value) in VAR_NAMES.iter().zip(c.initial.as_array()) {
                    witness.insert((*name).to_string(), value);
                }
                witness.insert("v_z_d".into(), c.command.v_z_d);
                witness.insert("phi_d".into(), c.command.phi_d);
                witness.insert("theta_d".into(), c.command.theta_d);
                witness.insert("psi_d".into(), c.command.psi_d);
                TaskReport {
                    name,
                    verdict: "COUNTEREXAMPLE".into(),
                    delta: None,
                    witness: Some(witness),
                    enclosure: None,
                    note: Some(note),
                    work: settings.trials as u64,
                    wall_seconds,
                    workers: settings.jobs.max(1),
                }
            }
        };
        report.rows.push(row);
    }
    Ok(report)
}
