//! δ-decision by interval branch-and-prune with midpoint polling.
//!
//! A query is a strict-inequality formula over a box. The engine keeps a
//! frontier of sub-boxes ordered by their branch path (the bit string of
//! left/right choices from the root). Each box is contracted by
//! constraint propagation, refuted outright when its enclosure excludes
//! the formula, polled at its midpoint for an exact witness, and
//! otherwise split along the most relevant dimension. Three outcomes are
//! possible:
//!
//! * `Unsat`: every sub-box was refuted. Interval evaluation and
//!   contraction are outward-rounded, so this certifies that no real
//!   point in the box satisfies the formula.
//! * `Sat`: some polled point satisfied the formula under exact floating
//!   evaluation; the witness is returned and the search stops early.
//! * `DeltaSat`: the box tree was fully explored and some boxes thinner
//!   than `delta` could neither be refuted nor produce a witness; the
//!   first such box in depth-first, lowest-branch-first order is
//!   returned.
//!
//! Verdicts are schedule-independent: `Unsat` and `DeltaSat` require
//! full exploration (the `DeltaSat` record is the path-minimal one), and
//! a `Sat` under one worker count implies some poll succeeds, which any
//! full exploration would also reach. Only the witness point and the
//! resource error are schedule-dependent.
//!
//! Two refinements beyond plain branch-and-prune are on by default and
//! can be disabled for a minimal trusted core (`contraction: false`,
//! `poll_every_box: false`): HC4 constraint propagation before each
//! certainty test, and polling every box rather than only δ-thin ones.
//! Both only remove provably infeasible regions or add candidate
//! witnesses, so `Unsat` soundness is unaffected; without contraction
//! the high-dimensional flight-envelope queries do not finish in
//! realistic time.

pub mod checkpoint;
mod contract;

use crate::conditions::{ConditionError, VerifyTask};
use crate::expr::{Certainty, Expr, Formula, IntervalBox};
use crate::interval::Interval;
use contract::{contract, CompiledFormula, Scratch};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Condvar, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// No point in the box satisfies the formula.
    Unsat,
    /// `witness` (in variable declaration order) satisfies the formula
    /// under exact floating-point evaluation.
    Sat { witness: Vec<f64> },
    /// A box of max width below `delta` that could not be refuted; its
    /// midpoint does not satisfy the formula exactly.
    DeltaSat { enclosure: IntervalBox },
}

impl Verdict {
    pub fn class(&self) -> &'static str {
        match self {
            Verdict::Unsat => "UNSAT",
            Verdict::Sat { .. } => "SAT",
            Verdict::DeltaSat { .. } => "DELTA-SAT",
        }
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.class())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    /// Widest dimension relative to its width in the root box.
    WidestNormalized,
    /// Interval-gradient magnitude times width (smear); falls back to
    /// widest-normalized when every score vanishes.
    Smear,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Boxes thinner than this in every dimension stop the search.
    /// Must exceed the floating-point resolution of the domain.
    pub delta: f64,
    /// Total processed-box budget, counted across resumed runs.
    pub max_boxes: u64,
    pub workers: usize,
    pub branch: BranchRule,
    /// Enables HC4 propagation (and with it the guided disjunct polls).
    pub contraction: bool,
    /// Polls the midpoint of every box, not only δ-thin ones.
    pub poll_every_box: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 1e-2,
            max_boxes: 100_000_000,
            workers: 1,
            branch: BranchRule::Smear,
            contraction: true,
            poll_every_box: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(SolverError::InvalidDelta(self.delta));
        }
        if self.max_boxes == 0 {
            return Err(SolverError::InvalidBudget);
        }
        if self.workers == 0 {
            return Err(SolverError::InvalidWorkers);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// Boxes processed, including those of resumed runs.
    pub boxes: u64,
    /// Midpoint polls in this run.
    pub polls: u64,
    /// Deepest branch path in this run.
    pub max_depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub verdict: Verdict,
    pub stats: SolveStats,
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("precision delta = {0} must be positive and finite")]
    InvalidDelta(f64),
    #[error("box budget must be positive")]
    InvalidBudget,
    #[error("worker count must be at least 1")]
    InvalidWorkers,
    #[error("formula references variable {var} but the box has {len} intervals")]
    DomainMismatch { var: usize, len: usize },
    #[error("domain interval {index} must have finite endpoints")]
    NonFiniteDomain { index: usize },
    #[error("frontier box {index} does not fit the {len}-variable domain")]
    FrontierMismatch { index: usize, len: usize },
    #[error("budget of {max_boxes} boxes exhausted after {processed} without a verdict")]
    BudgetExhausted { max_boxes: u64, processed: u64 },
}

/// One unexplored sub-box together with its branch path from the root
/// (0 = lower half, 1 = upper half).
#[derive(Debug, Clone, PartialEq)]
pub struct WorkItem {
    pub path: Vec<u8>,
    pub enclosure: IntervalBox,
}

/// Serializable search state: the unexplored boxes, the best δ-thin
/// record so far and the cumulative processed-box count.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub items: Vec<WorkItem>,
    pub record: Option<WorkItem>,
    pub processed: u64,
}

impl Frontier {
    pub fn root(domain: &IntervalBox) -> Self {
        Self {
            items: vec![WorkItem {
                path: Vec::new(),
                enclosure: domain.clone(),
            }],
            record: None,
            processed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done(Solution),
    /// Budget ran out with work remaining; resume by passing the
    /// frontier back to [`solve_from`] with a larger budget.
    Budget { frontier: Frontier, stats: SolveStats },
}

struct QueueEntry(WorkItem);

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0.path == other.0.path
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: the max-heap then pops the path-minimal item, which
        // makes single-worker processing exactly depth-first.
        other.0.path.cmp(&self.0.path)
    }
}

struct Shared {
    queue: BinaryHeap<QueueEntry>,
    active: usize,
    processed: u64,
    polls: u64,
    max_depth: u32,
    record: Option<WorkItem>,
    sat: Option<Vec<f64>>,
    over_budget: bool,
}

struct Ctx<'a> {
    formula: &'a Formula,
    croot: CompiledFormula,
    guided: Vec<CompiledFormula>,
    cfg: SolverConfig,
    root_widths: Vec<f64>,
}

fn expr_max_var(e: &Expr, acc: &mut Option<usize>) {
    match e {
        Expr::Const(_) => {}
        Expr::Var(v) => *acc = Some(acc.map_or(v.0, |a| a.max(v.0))),
        Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Tan(a) => expr_max_var(a, acc),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            expr_max_var(a, acc);
            expr_max_var(b, acc);
        }
    }
}

fn formula_max_var(f: &Formula, acc: &mut Option<usize>) {
    match f {
        Formula::Atom(e, _) => expr_max_var(e, acc),
        Formula::And(parts) | Formula::Or(parts) => {
            for p in parts {
                formula_max_var(p, acc);
            }
        }
    }
}

/// Per-disjunct restrictions of the formula, used to aim extra polls at
/// each branch of a top-level disjunction.
fn guided_variants(f: &Formula) -> Vec<Formula> {
    match f {
        Formula::Or(ds) if ds.len() > 1 => ds.to_vec(),
        Formula::And(parts) => {
            let mut out = Vec::new();
            for (i, p) in parts.iter().enumerate() {
                if let Formula::Or(ds) = p {
                    if ds.len() > 1 {
                        for d in ds {
                            let mut np = parts.clone();
                            np[i] = d.clone();
                            out.push(Formula::And(np));
                        }
                    }
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

enum Kind {
    Refuted,
    Sat(Vec<f64>),
    Record(WorkItem),
    Split(WorkItem, WorkItem),
}

struct ProcessResult {
    kind: Kind,
    polls: u32,
}

fn choose_dim(ctx: &Ctx, bx: &IntervalBox, s: &mut Scratch) -> Option<usize> {
    let delta = ctx.cfg.delta;
    let mut best: Option<(usize, f64)> = None;
    if ctx.cfg.branch == BranchRule::Smear {
        let mut scores = vec![0.0; bx.0.len()];
        ctx.croot.smear_scores(bx, s, &mut scores);
        for (d, iv) in bx.0.iter().enumerate() {
            let w = iv.width();
            if w < delta || !w.is_finite() {
                continue;
            }
            let key = scores[d] * w;
            if key > 0.0 && best.is_none_or(|(_, bk)| key > bk) {
                best = Some((d, key));
            }
        }
        if best.is_some() {
            return best.map(|(d, _)| d);
        }
    }
    for (d, iv) in bx.0.iter().enumerate() {
        let w = iv.width();
        if w < delta || !w.is_finite() {
            continue;
        }
        let rw = ctx.root_widths[d];
        let key = if rw > 0.0 { w / rw } else { w };
        if best.is_none_or(|(_, bk)| key > bk) {
            best = Some((d, key));
        }
    }
    best.map(|(d, _)| d)
}

fn process(ctx: &Ctx, item: WorkItem, s: &mut Scratch) -> ProcessResult {
    let WorkItem {
        path,
        enclosure: mut bx,
    } = item;
    let mut polls = 0u32;
    let done = |kind: Kind, polls: u32| ProcessResult { kind, polls };
    if ctx.cfg.contraction && !contract(&ctx.croot, &mut bx, s) {
        return done(Kind::Refuted, polls);
    }
    if ctx.croot.certainty(&bx, s) == Certainty::CertainlyFalse {
        return done(Kind::Refuted, polls);
    }
    let small = bx.max_width() < ctx.cfg.delta;
    if ctx.cfg.poll_every_box || small {
        polls += 1;
        let mid = bx.midpoint();
        if matches!(ctx.formula.holds_at(&mid), Ok(true)) {
            return done(Kind::Sat(mid), polls);
        }
    }
    if ctx.cfg.contraction && (small || path.is_empty()) {
        for g in &ctx.guided {
            let mut alt = bx.clone();
            if contract(g, &mut alt, s) {
                polls += 1;
                let mid = alt.midpoint();
                if matches!(ctx.formula.holds_at(&mid), Ok(true)) {
                    return done(Kind::Sat(mid), polls);
                }
            }
        }
    }
    if small {
        return done(Kind::Record(WorkItem { path, enclosure: bx }), polls);
    }
    let Some(dim) = choose_dim(ctx, &bx, s) else {
        return done(Kind::Record(WorkItem { path, enclosure: bx }), polls);
    };
    let iv = bx.0[dim];
    let mid = iv.midpoint();
    if !(mid > iv.lo && mid < iv.hi) {
        return done(Kind::Record(WorkItem { path, enclosure: bx }), polls);
    }
    let mut lo_path = path.clone();
    lo_path.push(0);
    let mut hi_path = path;
    hi_path.push(1);
    let mut lo_bx = bx.clone();
    lo_bx.0[dim] = Interval::new(iv.lo, mid);
    let mut hi_bx = bx;
    hi_bx.0[dim] = Interval::new(mid, iv.hi);
    done(
        Kind::Split(
            WorkItem {
                path: lo_path,
                enclosure: lo_bx,
            },
            WorkItem {
                path: hi_path,
                enclosure: hi_bx,
            },
        ),
        polls,
    )
}

fn worker(ctx: &Ctx, state: &Mutex<Shared>, cv: &Condvar) {
    let mut scratch = Scratch::default();
    loop {
        let item = {
            let mut g = state.lock().unwrap();
            loop {
                if g.sat.is_some() || g.over_budget {
                    return;
                }
                if let Some(e) = g.queue.pop() {
                    g.active += 1;
                    break e.0;
                }
                if g.active == 0 {
                    cv.notify_all();
                    return;
                }
                g = cv.wait(g).unwrap();
            }
        };
        let depth = item.path.len() as u32;
        let res = process(ctx, item, &mut scratch);
        let mut g = state.lock().unwrap();
        g.processed += 1;
        g.polls += u64::from(res.polls);
        if depth > g.max_depth {
            g.max_depth = depth;
        }
        match res.kind {
            Kind::Refuted => {}
            Kind::Sat(w) => g.sat = Some(w),
            Kind::Record(it) => match &g.record {
                Some(r) if r.path <= it.path => {}
                _ => g.record = Some(it),
            },
            Kind::Split(a, b) => {
                g.queue.push(QueueEntry(b));
                g.queue.push(QueueEntry(a));
            }
        }
        if g.processed >= ctx.cfg.max_boxes {
            g.over_budget = true;
        }
        g.active -= 1;
        cv.notify_all();
    }
}

/// Decides the formula on the domain box from a fresh root frontier.
/// Budget exhaustion is an error; use [`solve_from`] to keep the
/// partially explored frontier instead.
pub fn solve(
    f: &Formula,
    domain: &IntervalBox,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    match solve_from(f, domain, cfg, Frontier::root(domain))? {
        Outcome::Done(sol) => Ok(sol),
        Outcome::Budget { frontier, .. } => Err(SolverError::BudgetExhausted {
            max_boxes: cfg.max_boxes,
            processed: frontier.processed,
        }),
    }
}

/// Runs the search from an explicit frontier (a fresh root or a resumed
/// checkpoint). The budget bounds the cumulative processed-box count,
/// including boxes accounted in `start.processed`.
pub fn solve_from(
    f: &Formula,
    domain: &IntervalBox,
    cfg: &SolverConfig,
    start: Frontier,
) -> Result<Outcome, SolverError> {
    cfg.validate()?;
    let len = domain.0.len();
    for (index, iv) in domain.0.iter().enumerate() {
        if !iv.lo.is_finite() || !iv.hi.is_finite() {
            return Err(SolverError::NonFiniteDomain { index });
        }
    }
    let mut max_var = None;
    formula_max_var(f, &mut max_var);
    if let Some(var) = max_var {
        if var >= len {
            return Err(SolverError::DomainMismatch { var, len });
        }
    }
    for (index, it) in start.items.iter().enumerate() {
        if it.enclosure.0.len() != len {
            return Err(SolverError::FrontierMismatch { index, len });
        }
    }
    let stats0 = SolveStats {
        boxes: start.processed,
        polls: 0,
        max_depth: 0,
    };
    if start.items.is_empty() {
        // Fully explored frontier: the verdict is already determined.
        let verdict = match start.record {
            Some(it) => Verdict::DeltaSat {
                enclosure: it.enclosure,
            },
            None => Verdict::Unsat,
        };
        return Ok(Outcome::Done(Solution {
            verdict,
            stats: stats0,
        }));
    }
    if start.processed >= cfg.max_boxes {
        return Ok(Outcome::Budget {
            frontier: start,
            stats: stats0,
        });
    }
    let ctx = Ctx {
        formula: f,
        croot: CompiledFormula::compile(f),
        guided: guided_variants(f)
            .iter()
            .map(CompiledFormula::compile)
            .collect(),
        cfg: *cfg,
        root_widths: domain.0.iter().map(Interval::width).collect(),
    };
    let state = Mutex::new(Shared {
        queue: start.items.into_iter().map(QueueEntry).collect(),
        active: 0,
        processed: start.processed,
        polls: 0,
        max_depth: 0,
        record: start.record,
        sat: None,
        over_budget: false,
    });
    let cv = Condvar::new();
    std::thread::scope(|sc| {
        for _ in 0..cfg.workers {
            sc.spawn(|| worker(&ctx, &state, &cv));
        }
    });
    let sh = state.into_inner().unwrap();
    let stats = SolveStats {
        boxes: sh.processed,
        polls: sh.polls,
        max_depth: sh.max_depth,
    };
    if let Some(witness) = sh.sat {
        return Ok(Outcome::Done(Solution {
            verdict: Verdict::Sat { witness },
            stats,
        }));
    }
    if !sh.queue.is_empty() {
        let mut items: Vec<WorkItem> = sh.queue.into_iter().map(|e| e.0).collect();
        items.sort_by(|a, b| a.path.cmp(&b.path));
        return Ok(Outcome::Budget {
            frontier: Frontier {
                items,
                record: sh.record,
                processed: sh.processed,
            },
            stats,
        });
    }
    let verdict = match sh.record {
        Some(it) => Verdict::DeltaSat {
            enclosure: it.enclosure,
        },
        None => Verdict::Unsat,
    };
    Ok(Outcome::Done(Solution { verdict, stats }))
}

#[derive(Debug, Error)]
pub enum BisectError {
    #[error("bisection bracket [{lo}, {hi}] is not a finite ordered pair")]
    BadBracket { lo: f64, hi: f64 },
    #[error("bisection tolerance must be positive and finite")]
    BadTolerance,
    #[error("task {task} at mu_max = {mu} returned {class}; the lower bracket must verify")]
    LowerNotUnsat {
        mu: f64,
        task: String,
        class: &'static str,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectReport {
    /// Largest region scale whose full task set verified.
    pub mu_max: f64,
    /// Final bracket: verified low end, unverified high end.
    pub bracket: (f64, f64),
    /// Every evaluated scale with whether all its tasks were `Unsat`.
    pub evaluations: Vec<(f64, bool)>,
    pub warnings: Vec<String>,
}

fn all_unsat<F>(
    tasks_at: &mut F,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<Result<(), (String, &'static str)>, BisectError>
where
    F: FnMut(f64) -> Result<Vec<VerifyTask>, ConditionError>,
{
    for task in tasks_at(mu)? {
        let tcfg = SolverConfig {
            delta: task.delta.unwrap_or(cfg.delta),
            ..*cfg
        };
        let sol = solve(&task.formula, &task.domain, &tcfg)?;
        if !sol.verdict.is_unsat() {
            return Ok(Err((task.name, sol.verdict.class())));
        }
    }
    Ok(Ok(()))
}

/// Finds, within `tol`, the largest region scale in `[lo, hi]` whose
/// task set verifies, assuming verification is monotone in the scale.
/// The scale at `lo` must verify. Observations inconsistent with
/// monotonicity are reported as warnings; the returned bracket is
/// correct regardless.
pub fn bisect_mu_max<F>(
    mut tasks_at: F,
    lo: f64,
    hi: f64,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<BisectReport, BisectError>
where
    F: FnMut(f64) -> Result<Vec<VerifyTask>, ConditionError>,
{
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(BisectError::BadBracket { lo, hi });
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(BisectError::BadTolerance);
    }
    let mut evaluations = Vec::new();
    if let Err((task, class)) = all_unsat(&mut tasks_at, lo, cfg)? {
        return Err(BisectError::LowerNotUnsat {
            mu: lo,
            task,
            class,
        });
    }
    evaluations.push((lo, true));
    let (mut lo, mut hi) = (lo, hi);
    if lo < hi && all_unsat(&mut tasks_at, hi, cfg)?.is_ok() {
        evaluations.push((hi, true));
        lo = hi;
    } else if lo < hi {
        evaluations.push((hi, false));
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let ok = all_unsat(&mut tasks_at, mid, cfg)?.is_ok();
            evaluations.push((mid, ok));
            if ok {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let mut warnings = Vec::new();
    for &(mu_a, ok_a) in &evaluations {
        for &(mu_b, ok_b) in &evaluations {
            if mu_a < mu_b && !ok_a && ok_b {
                warnings.push(format!(
                    "non-monotone verdicts: mu_max = {mu_a} failed but {mu_b} verified"
                ));
            }
        }
    }
    Ok(BisectReport {
        mu_max: lo,
        bracket: (lo, hi),
        evaluations,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSet;
    use std::f64::consts::PI;

    fn baseline(delta: f64) -> SolverConfig {
        SolverConfig {
            delta,
            branch: BranchRule::WidestNormalized,
            contraction: false,
            poll_every_box: false,
            ..Default::default()
        }
    }

    fn x() -> Expr {
        let mut vs = VarSet::new();
        Expr::var(vs.declare("x"))
    }

    fn bx1(lo: f64, hi: f64) -> IntervalBox {
        IntervalBox(vec![Interval::new(lo, hi)])
    }

    #[test]
    fn refutes_at_root() {
        // x^2 - 4 > 0 on [-1,1]: the enclosure [-4,-3] refutes directly.
        let f = Formula::gt_zero(x().clone() * x() - Expr::constant(4.0));
        for cfg in [SolverConfig::default(), baseline(1e-2)] {
            let sol = solve(&f, &bx1(-1.0, 1.0), &cfg).unwrap();
            assert_eq!(sol.verdict, Verdict::Unsat);
            assert_eq!(sol.stats.boxes, 1);
        }
    }

    #[test]
    fn finds_witness_near_peak() {
        let f = Formula::gt_zero(x().sin() - Expr::constant(0.999));
        for cfg in [SolverConfig::default(), baseline(1e-3)] {
            let sol = solve(&f, &bx1(0.0, PI), &cfg).unwrap();
            let Verdict::Sat { witness } = sol.verdict else {
                panic!("expected SAT, got {}", sol.verdict.class())
            };
            assert!(f.holds_at(&witness).unwrap());
            assert!((witness[0] - PI / 2.0).abs() < 0.05);
        }
    }

    #[test]
    fn thin_conjunction_class_depends_on_polling() {
        // x > 0 and x < delta/10: feasible set thinner than delta.
        let delta = 1e-2;
        let f = Formula::And(vec![
            Formula::gt_zero(x()),
            Formula::lt_zero(x() - Expr::constant(delta / 10.0)),
        ]);
        let dom = bx1(-1.0, 1.0);
        let sol = solve(&f, &dom, &SolverConfig::default()).unwrap();
        let Verdict::Sat { witness } = sol.verdict else {
            panic!("contraction narrows to the feasible sliver; poll must hit it")
        };
        assert!(f.holds_at(&witness).unwrap());
        let sol = solve(&f, &dom, &baseline(delta)).unwrap();
        let Verdict::DeltaSat { enclosure } = sol.verdict else {
            panic!("baseline midpoints all miss the sliver")
        };
        assert!(enclosure.max_width() < delta);
        assert_ne!(f.certainty(&enclosure), Certainty::CertainlyFalse);
    }

    #[test]
    fn unsat_survives_smaller_delta() {
        // x*x < -0.5 needs one split before both halves refute.
        let f = Formula::lt_zero(x().clone() * x() + Expr::constant(0.5));
        for delta in [0.5, 5e-2, 5e-4] {
            for cfg in [
                SolverConfig {
                    delta,
                    ..Default::default()
                },
                baseline(delta),
            ] {
                let sol = solve(&f, &bx1(-1.0, 1.0), &cfg).unwrap();
                assert_eq!(sol.verdict, Verdict::Unsat, "delta = {delta}");
            }
        }
    }

    #[test]
    fn budget_is_an_error_not_a_verdict() {
        let delta = 1e-2;
        let f = Formula::And(vec![
            Formula::gt_zero(x()),
            Formula::lt_zero(x() - Expr::constant(delta / 10.0)),
        ]);
        let cfg = SolverConfig {
            max_boxes: 2,
            ..baseline(delta)
        };
        let err = solve(&f, &bx1(-1.0, 1.0), &cfg).unwrap_err();
        assert!(matches!(err, SolverError::BudgetExhausted { .. }));
    }

    #[test]
    fn chunked_resume_matches_one_shot() {
        let delta = 1e-2;
        let f = Formula::And(vec![
            Formula::gt_zero(x()),
            Formula::lt_zero(x() - Expr::constant(delta / 10.0)),
        ]);
        let dom = bx1(-1.0, 1.0);
        let direct = solve(&f, &dom, &baseline(delta)).unwrap();
        let mut frontier = Frontier::root(&dom);
        let chunked = loop {
            let cfg = SolverConfig {
                max_boxes: frontier.processed + 3,
                ..baseline(delta)
            };
            match solve_from(&f, &dom, &cfg, frontier).unwrap() {
                Outcome::Done(sol) => break sol,
                Outcome::Budget { frontier: fr, .. } => frontier = fr,
            }
        };
        assert_eq!(chunked.verdict, direct.verdict);
        assert_eq!(chunked.stats.boxes, direct.stats.boxes);
    }

    #[test]
    fn verdict_class_independent_of_workers() {
        let cases = [
            (
                Formula::gt_zero(x().sin() - Expr::constant(0.999)),
                bx1(0.0, PI),
                "SAT",
            ),
            (
                Formula::lt_zero(x().clone() * x() + Expr::constant(0.5)),
                bx1(-1.0, 1.0),
                "UNSAT",
            ),
        ];
        for (f, dom, expect) in cases {
            for workers in [1, 4, 16] {
                let cfg = SolverConfig {
                    workers,
                    ..Default::default()
                };
                let sol = solve(&f, &dom, &cfg).unwrap();
                assert_eq!(sol.verdict.class(), expect, "workers = {workers}");
            }
        }
    }

    #[test]
    fn deltasat_enclosure_identical_across_workers() {
        let delta = 1e-2;
        let f = Formula::And(vec![
            Formula::gt_zero(x()),
            Formula::lt_zero(x() - Expr::constant(delta / 10.0)),
        ]);
        let dom = bx1(-1.0, 1.0);
        let reference = solve(&f, &dom, &baseline(delta)).unwrap();
        for workers in [4, 16] {
            let cfg = SolverConfig {
                workers,
                ..baseline(delta)
            };
            let sol = solve(&f, &dom, &cfg).unwrap();
            assert_eq!(sol.verdict, reference.verdict, "workers = {workers}");
        }
    }

    #[test]
    fn guided_poll_resolves_disjunction_at_root() {
        let f = Formula::Or(vec![
            Formula::gt_zero(x() - Expr::constant(0.9)),
            Formula::lt_zero(x() + Expr::constant(0.9)),
        ]);
        let sol = solve(&f, &bx1(-1.0, 1.0), &SolverConfig::default()).unwrap();
        let Verdict::Sat { witness } = sol.verdict else {
            panic!("expected SAT")
        };
        assert_eq!(sol.stats.boxes, 1, "guided polls should finish at the root");
        assert!(f.holds_at(&witness).unwrap());
    }

    #[test]
    fn empty_conjunction_is_sat() {
        let sol = solve(&Formula::And(vec![]), &bx1(0.0, 1.0), &SolverConfig::default()).unwrap();
        assert!(matches!(sol.verdict, Verdict::Sat { .. }));
    }

    #[test]
    fn config_and_domain_validation() {
        let f = Formula::gt_zero(x());
        let bad = SolverConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert_eq!(
            solve(&f, &bx1(0.0, 1.0), &bad).unwrap_err(),
            SolverError::InvalidDelta(0.0)
        );
        let err = solve(&f, &IntervalBox(vec![]), &SolverConfig::default()).unwrap_err();
        assert_eq!(err, SolverError::DomainMismatch { var: 0, len: 0 });
        let err = solve(
            &f,
            &IntervalBox(vec![Interval::new(0.0, f64::INFINITY)]),
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, SolverError::NonFiniteDomain { index: 0 });
    }

    #[test]
    fn bisect_finds_threshold() {
        // Violation family: "exists x in [0, 0.9] with x > 3 - mu" is
        // refutable exactly when 3 - mu clears the box, so the largest
        // verified mu is 2.1. The threshold sits strictly inside the
        // domain and the dyadic probe points never land on it, keeping
        // every probe robustly decidable despite outward rounding.
        let mut vs = VarSet::new();
        let xv = vs.declare("x");
        let family = |mu: f64| {
            Ok(vec![VerifyTask {
                name: format!("threshold at {mu}"),
                formula: Formula::gt_zero(Expr::var(xv) - Expr::constant(3.0 - mu)),
                domain: bx1(0.0, 0.9),
                delta: None,
            }])
        };
        let report = bisect_mu_max(family, 1.0, 3.0, 1e-3, &SolverConfig::default()).unwrap();
        assert!((report.mu_max - 2.1).abs() < 2e-3, "got {}", report.mu_max);
        assert!(report.warnings.is_empty());
        // Degenerate bracket: only checks the single point.
        let report = bisect_mu_max(family, 1.0, 1.0, 0.1, &SolverConfig::default()).unwrap();
        assert_eq!(report.mu_max, 1.0);
        // A bracket whose lower end is already violated is a usage error.
        let err = bisect_mu_max(family, 2.5, 3.0, 0.1, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, BisectError::LowerNotUnsat { .. }));
    }
}
