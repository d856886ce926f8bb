//! Constraint propagation over compiled expression slabs.
//!
//! Each atom is flattened once into a postfix instruction list; a box is
//! then processed with two linear sweeps. The forward sweep computes an
//! interval for every node. The backward sweep intersects each node with
//! the projection implied by its parent, starting from the relation's
//! target at the root, and folds the leaf results back into the box
//! (HC4-revise). Backward projection is skipped through `sin`, `cos` and
//! `tan`: inverting periodic functions over wide arguments buys little
//! and is easy to get wrong, and skipping is a sound no-op.
//!
//! All projections use the outward-rounded interval arithmetic, and every
//! node intersection only ever shrinks toward the forward value, so the
//! contracted box contains every point of the input box that satisfies
//! the formula. An empty intersection anywhere proves the atom (and, in
//! a conjunction, the whole box) infeasible.
//!
//! The same slabs drive branching: a reverse-mode sweep with interval
//! partial derivatives yields, per variable, the magnitude of the atom
//! gradient over the box, which the solver multiplies by the variable's
//! width to rank split candidates (the smear heuristic).

use crate::expr::{Certainty, Expr, Formula, IntervalBox, Rel};
use crate::interval::Interval;

/// Fixpoint passes stop when no dimension shrinks below this fraction of
/// its previous width.
const PROGRESS_RATIO: f64 = 0.9;
const MAX_PASSES: usize = 20;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Sin(usize),
    Cos(usize),
    Tan(usize),
}

#[derive(Debug, Clone)]
pub struct CompiledAtom {
    ops: Vec<Op>,
    rel: Rel,
}

#[derive(Debug, Clone)]
pub enum CompiledFormula {
    Atom(CompiledAtom),
    And(Vec<CompiledFormula>),
    Or(Vec<CompiledFormula>),
}

/// Reusable per-worker buffers; one instance per thread avoids any
/// allocation in the per-box hot path beyond `Or` branch copies.
#[derive(Debug, Default)]
pub struct Scratch {
    vals: Vec<Interval>,
    down: Vec<Interval>,
    adj: Vec<Interval>,
    var_adj: Vec<Interval>,
    widths: Vec<f64>,
    masks: Vec<u128>,
    dirty: Vec<bool>,
}

fn push_expr(e: &Expr, ops: &mut Vec<Op>) -> usize {
    let op = match e {
        Expr::Const(c) => Op::Const(*c),
        Expr::Var(v) => Op::Var(v.0),
        Expr::Neg(a) => Op::Neg(push_expr(a, ops)),
        Expr::Add(a, b) => {
            let (ia, ib) = (push_expr(a, ops), push_expr(b, ops));
            Op::Add(ia, ib)
        }
        Expr::Sub(a, b) => {
            let (ia, ib) = (push_expr(a, ops), push_expr(b, ops));
            Op::Sub(ia, ib)
        }
        Expr::Mul(a, b) => {
            let (ia, ib) = (push_expr(a, ops), push_expr(b, ops));
            Op::Mul(ia, ib)
        }
        Expr::Div(a, b) => {
            let (ia, ib) = (push_expr(a, ops), push_expr(b, ops));
            Op::Div(ia, ib)
        }
        Expr::Sin(a) => Op::Sin(push_expr(a, ops)),
        Expr::Cos(a) => Op::Cos(push_expr(a, ops)),
        Expr::Tan(a) => Op::Tan(push_expr(a, ops)),
    };
    ops.push(op);
    ops.len() - 1
}

fn mag(iv: Interval) -> f64 {
    iv.lo.abs().max(iv.hi.abs())
}

impl CompiledAtom {
    fn compile(e: &Expr, rel: Rel) -> Self {
        let mut ops = Vec::new();
        push_expr(e, &mut ops);
        Self { ops, rel }
    }

    fn target(&self) -> Interval {
        match self.rel {
            Rel::Gt => Interval::new(0.0, f64::INFINITY),
            Rel::Lt => Interval::new(f64::NEG_INFINITY, 0.0),
        }
    }

    fn forward(&self, bx: &IntervalBox, vals: &mut Vec<Interval>) -> Interval {
        vals.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => Interval::point(c),
                Op::Var(i) => bx.0[i],
                Op::Neg(a) => vals[a].neg(),
                Op::Add(a, b) => vals[a].add(&vals[b]),
                Op::Sub(a, b) => vals[a].sub(&vals[b]),
                Op::Mul(a, b) => vals[a].mul(&vals[b]),
                Op::Div(a, b) => vals[a].div(&vals[b]),
                Op::Sin(a) => vals[a].sin(),
                Op::Cos(a) => vals[a].cos(),
                Op::Tan(a) => vals[a].tan(),
            };
            vals.push(v);
        }
        *vals.last().expect("atom has at least one node")
    }

    fn certainty(&self, bx: &IntervalBox, s: &mut Scratch) -> Certainty {
        let root = self.forward(bx, &mut s.vals);
        match self.rel {
            Rel::Gt if root.lo > 0.0 => Certainty::CertainlyTrue,
            Rel::Gt if root.hi <= 0.0 => Certainty::CertainlyFalse,
            Rel::Lt if root.hi < 0.0 => Certainty::CertainlyTrue,
            Rel::Lt if root.lo >= 0.0 => Certainty::CertainlyFalse,
            _ => Certainty::Unknown,
        }
    }

    /// One HC4 revision. Returns false when the atom has no solution in
    /// the box; otherwise the box is intersected with the projections.
    fn revise(&self, bx: &mut IntervalBox, s: &mut Scratch) -> bool {
        let root = self.forward(bx, &mut s.vals);
        s.down.clear();
        s.down.extend_from_slice(&s.vals);
        let n = self.ops.len();
        match root.intersect(&self.target()) {
            Some(iv) => s.down[n - 1] = iv,
            None => return false,
        }
        // Postfix order puts children before parents, so a reverse scan
        // sees every node after all of its parents' refinements.
        for i in (0..n).rev() {
            let t = s.down[i];
            let shrink = |down: &mut Vec<Interval>, idx: usize, iv: Interval| -> bool {
                match down[idx].intersect(&iv) {
                    Some(r) => {
                        down[idx] = r;
                        true
                    }
                    None => false,
                }
            };
            let ok = match self.ops[i] {
                Op::Const(_) => true,
                Op::Var(v) => match bx.0[v].intersect(&t) {
                    Some(r) => {
                        bx.0[v] = r;
                        true
                    }
                    None => false,
                },
                Op::Neg(a) => shrink(&mut s.down, a, t.neg()),
                Op::Add(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    shrink(&mut s.down, a, t.sub(&fb)) && shrink(&mut s.down, b, t.sub(&fa))
                }
                Op::Sub(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    shrink(&mut s.down, a, t.add(&fb)) && shrink(&mut s.down, b, fa.sub(&t))
                }
                Op::Mul(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    // div yields the entire line when the denominator
                    // spans zero, making the intersection a sound no-op.
                    shrink(&mut s.down, a, t.div(&fb)) && shrink(&mut s.down, b, t.div(&fa))
                }
                Op::Div(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    shrink(&mut s.down, a, t.mul(&fb)) && shrink(&mut s.down, b, fa.div(&t))
                }
                Op::Sin(_) | Op::Cos(_) | Op::Tan(_) => true,
            };
            if !ok {
                return false;
            }
        }
        true
    }

    /// Reverse-mode interval gradient; raises `scores[v]` to at least the
    /// magnitude of this atom's partial derivative with respect to `v`.
    /// An atom that already holds over the whole box cannot steer the
    /// verdict, so it contributes nothing to branching.
    fn smear(&self, bx: &IntervalBox, s: &mut Scratch, scores: &mut [f64]) {
        let root = self.forward(bx, &mut s.vals);
        match self.rel {
            Rel::Gt if root.lo > 0.0 => return,
            Rel::Lt if root.hi < 0.0 => return,
            _ => {}
        }
        let n = self.ops.len();
        s.adj.clear();
        s.adj.resize(n, Interval::point(0.0));
        s.var_adj.clear();
        s.var_adj.resize(scores.len(), Interval::point(0.0));
        s.adj[n - 1] = Interval::point(1.0);
        for i in (0..n).rev() {
            let ai = s.adj[i];
            if ai.lo == 0.0 && ai.hi == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Const(_) => {}
                Op::Var(v) => s.var_adj[v] = s.var_adj[v].add(&ai),
                Op::Neg(a) => s.adj[a] = s.adj[a].add(&ai.neg()),
                Op::Add(a, b) => {
                    s.adj[a] = s.adj[a].add(&ai);
                    s.adj[b] = s.adj[b].add(&ai);
                }
                Op::Sub(a, b) => {
                    s.adj[a] = s.adj[a].add(&ai);
                    s.adj[b] = s.adj[b].add(&ai.neg());
                }
                Op::Mul(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    s.adj[a] = s.adj[a].add(&ai.mul(&fb));
                    s.adj[b] = s.adj[b].add(&ai.mul(&fa));
                }
                Op::Div(a, b) => {
                    let (fa, fb) = (s.vals[a], s.vals[b]);
                    s.adj[a] = s.adj[a].add(&ai.div(&fb));
                    s.adj[b] = s.adj[b].add(&ai.mul(&fa).div(&fb.mul(&fb)).neg());
                }
                Op::Sin(a) => s.adj[a] = s.adj[a].add(&ai.mul(&s.vals[a].cos())),
                Op::Cos(a) => s.adj[a] = s.adj[a].add(&ai.mul(&s.vals[a].sin()).neg()),
                Op::Tan(a) => {
                    let tn = s.vals[a].tan();
                    let sec2 = Interval::point(1.0).add(&tn.mul(&tn));
                    s.adj[a] = s.adj[a].add(&ai.mul(&sec2));
                }
            }
        }
        for (v, adj) in s.var_adj.iter().enumerate() {
            let m = mag(*adj);
            if m > scores[v] {
                scores[v] = m;
            }
        }
    }
}

impl CompiledFormula {
    pub fn compile(f: &Formula) -> Self {
        match f {
            Formula::Atom(e, rel) => CompiledFormula::Atom(CompiledAtom::compile(e, *rel)),
            Formula::And(parts) => {
                CompiledFormula::And(parts.iter().map(Self::compile).collect())
            }
            Formula::Or(parts) => CompiledFormula::Or(parts.iter().map(Self::compile).collect()),
        }
    }

    pub fn certainty(&self, bx: &IntervalBox, s: &mut Scratch) -> Certainty {
        match self {
            CompiledFormula::Atom(a) => a.certainty(bx, s),
            CompiledFormula::And(parts) => {
                let mut all_true = true;
                for p in parts {
                    match p.certainty(bx, s) {
                        Certainty::CertainlyFalse => return Certainty::CertainlyFalse,
                        Certainty::Unknown => all_true = false,
                        Certainty::CertainlyTrue => {}
                    }
                }
                if all_true {
                    Certainty::CertainlyTrue
                } else {
                    Certainty::Unknown
                }
            }
            CompiledFormula::Or(parts) => {
                let mut all_false = true;
                for p in parts {
                    match p.certainty(bx, s) {
                        Certainty::CertainlyTrue => return Certainty::CertainlyTrue,
                        Certainty::Unknown => all_false = false,
                        Certainty::CertainlyFalse => {}
                    }
                }
                if all_false {
                    Certainty::CertainlyFalse
                } else {
                    Certainty::Unknown
                }
            }
        }
    }

    /// One propagation pass. A conjunction revises its parts in order on
    /// the shared box; a disjunction contracts a copy per branch and
    /// hulls the survivors. Returns false when the box is infeasible.
    fn pass(&self, bx: &mut IntervalBox, s: &mut Scratch) -> bool {
        match self {
            CompiledFormula::Atom(a) => a.revise(bx, s),
            CompiledFormula::And(parts) => parts.iter().all(|p| p.pass(bx, s)),
            CompiledFormula::Or(parts) => {
                let mut hull: Option<IntervalBox> = None;
                for p in parts {
                    let mut alt = bx.clone();
                    if p.pass(&mut alt, s) {
                        hull = Some(match hull {
                            None => alt,
                            Some(mut h) => {
                                for (hi, ai) in h.0.iter_mut().zip(alt.0.iter()) {
                                    *hi = hi.hull(ai);
                                }
                                h
                            }
                        });
                    }
                }
                match hull {
                    Some(h) => {
                        *bx = h;
                        true
                    }
                    None => false,
                }
            }
        }
    }

    pub fn smear_scores(&self, bx: &IntervalBox, s: &mut Scratch, scores: &mut [f64]) {
        match self {
            CompiledFormula::Atom(a) => a.smear(bx, s, scores),
            CompiledFormula::And(parts) | CompiledFormula::Or(parts) => {
                for p in parts {
                    p.smear_scores(bx, s, scores);
                }
            }
        }
    }
}

fn collect_mask(f: &CompiledFormula, mask: &mut u128) -> bool {
    match f {
        CompiledFormula::Atom(a) => {
            for op in &a.ops {
                if let Op::Var(v) = op {
                    if *v >= 128 {
                        return false;
                    }
                    *mask |= 1 << v;
                }
            }
            true
        }
        CompiledFormula::And(parts) | CompiledFormula::Or(parts) => {
            parts.iter().all(|p| collect_mask(p, mask))
        }
    }
}

/// Fixpoint over a top-level conjunction with variable-aware scheduling:
/// a conjunct is revisited only while a variable it reads keeps
/// shrinking. Same fixpoint as the uniform passes, reached with far
/// fewer revisions when most conjuncts touch disjoint variables.
fn contract_and(parts: &[CompiledFormula], bx: &mut IntervalBox, s: &mut Scratch) -> bool {
    let n = parts.len();
    s.masks.clear();
    for p in parts {
        let mut mask = 0u128;
        if !collect_mask(p, &mut mask) {
            s.masks.clear();
            return contract_parts_uniform(parts, bx, s);
        }
        s.masks.push(mask);
    }
    s.dirty.clear();
    s.dirty.resize(n, true);
    let mut budget = MAX_PASSES * n;
    loop {
        let mut changed = 0u128;
        let mut swept = false;
        for i in 0..n {
            if !s.dirty[i] {
                continue;
            }
            s.dirty[i] = false;
            swept = true;
            if budget == 0 {
                return true;
            }
            budget -= 1;
            s.widths.clear();
            s.widths
                .extend(bx.0.iter().map(Interval::width));
            let ok = match &parts[i] {
                CompiledFormula::Atom(a) => a.revise(bx, s),
                other => other.pass(bx, s),
            };
            if !ok {
                return false;
            }
            for (v, &w) in s.widths.iter().enumerate() {
                if w > 0.0 && bx.0[v].width() < PROGRESS_RATIO * w {
                    changed |= 1 << v.min(127);
                }
            }
        }
        if !swept || changed == 0 {
            return true;
        }
        for (i, mask) in s.masks.iter().enumerate() {
            if mask & changed != 0 {
                s.dirty[i] = true;
            }
        }
    }
}

fn contract_parts_uniform(
    parts: &[CompiledFormula],
    bx: &mut IntervalBox,
    s: &mut Scratch,
) -> bool {
    for _ in 0..MAX_PASSES {
        s.widths.clear();
        s.widths.extend(bx.0.iter().map(Interval::width));
        if !parts.iter().all(|p| p.pass(bx, s)) {
            return false;
        }
        let progressed = bx
            .0
            .iter()
            .zip(s.widths.iter())
            .any(|(iv, &w)| w > 0.0 && iv.width() < PROGRESS_RATIO * w);
        if !progressed {
            break;
        }
    }
    true
}

fn contract_uniform(f: &CompiledFormula, bx: &mut IntervalBox, s: &mut Scratch) -> bool {
    for _ in 0..MAX_PASSES {
        s.widths.clear();
        s.widths.extend(bx.0.iter().map(Interval::width));
        if !f.pass(bx, s) {
            return false;
        }
        let progressed = bx
            .0
            .iter()
            .zip(s.widths.iter())
            .any(|(iv, &w)| w > 0.0 && iv.width() < PROGRESS_RATIO * w);
        if !progressed {
            break;
        }
    }
    true
}

/// Contracts the box to fixpoint. Returns false when the box provably
/// contains no satisfying point.
pub fn contract(f: &CompiledFormula, bx: &mut IntervalBox, s: &mut Scratch) -> bool {
    match f {
        CompiledFormula::And(parts) if bx.0.len() <= 128 => contract_and(parts, bx, s),
        _ => contract_uniform(f, bx, s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{VarId, VarSet};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn xy() -> (Expr, Expr) {
        let mut vs = VarSet::new();
        let x = vs.declare("x");
        let y = vs.declare("y");
        (Expr::var(x), Expr::var(y))
    }

    fn bx2(x: (f64, f64), y: (f64, f64)) -> IntervalBox {
        IntervalBox(vec![Interval::new(x.0, x.1), Interval::new(y.0, y.1)])
    }

    #[test]
    fn revise_tightens_linear_difference() {
        // x - y > 0 with x in [0,1], y in [0.6,2] forces both into [0.6,1].
        let (x, y) = xy();
        let f = CompiledFormula::compile(&Formula::gt_zero(x - y));
        let mut s = Scratch::default();
        let mut bx = bx2((0.0, 1.0), (0.6, 2.0));
        assert!(contract(&f, &mut bx, &mut s));
        assert!(bx.0[0].lo >= 0.6 - 1e-9 && bx.0[0].hi <= 1.0);
        assert!(bx.0[1].lo >= 0.6 - 1e-9 && bx.0[1].hi <= 1.0 + 1e-9);
    }

    #[test]
    fn revise_refutes_infeasible_atom() {
        let (x, _) = xy();
        let f = CompiledFormula::compile(&Formula::gt_zero(x - Expr::constant(5.0)));
        let mut s = Scratch::default();
        let mut bx = bx2((0.0, 1.0), (0.0, 1.0));
        assert!(!contract(&f, &mut bx, &mut s));
    }

    #[test]
    fn disjunction_hulls_branches() {
        // x > 0.9 or x < -0.9 contracts [-1,1] to nothing narrower than
        // the hull [-1,1]; pairing with y > 0.5 still contracts y.
        let (x, y) = xy();
        let f = Formula::And(vec![
            Formula::Or(vec![
                Formula::gt_zero(x.clone() - Expr::constant(0.9)),
                Formula::lt_zero(x + Expr::constant(0.9)),
            ]),
            Formula::gt_zero(y - Expr::constant(0.5)),
        ]);
        let cf = CompiledFormula::compile(&f);
        let mut s = Scratch::default();
        let mut bx = bx2((-1.0, 1.0), (-1.0, 1.0));
        assert!(contract(&cf, &mut bx, &mut s));
        assert!((bx.0[0].lo, bx.0[0].hi) == (-1.0, 1.0));
        assert!(bx.0[1].lo >= 0.5 - 1e-9);
    }

    #[test]
    fn disjunction_with_all_dead_branches_refutes() {
        let (x, _) = xy();
        let f = Formula::Or(vec![
            Formula::gt_zero(x.clone() - Expr::constant(5.0)),
            Formula::lt_zero(x + Expr::constant(5.0)),
        ]);
        let cf = CompiledFormula::compile(&f);
        let mut s = Scratch::default();
        let mut bx = bx2((-1.0, 1.0), (0.0, 1.0));
        assert!(!contract(&cf, &mut bx, &mut s));
    }

    #[test]
    fn contraction_never_loses_solutions() {
        // Random polynomial-and-trig conjunctions: every sampled point of
        // the original box that satisfies the formula must survive.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for round in 0..200 {
            let e = random_expr(&mut rng, 0, 4);
            let f = if rng.gen_bool(0.5) {
                Formula::gt_zero(e)
            } else {
                Formula::lt_zero(e)
            };
            let cf = CompiledFormula::compile(&f);
            let bx = bx2(
                (-1.0 - rng.gen::<f64>(), rng.gen::<f64>()),
                (-rng.gen::<f64>(), 1.0 + rng.gen::<f64>()),
            );
            let mut contracted = bx.clone();
            let mut s = Scratch::default();
            let feasible = contract(&cf, &mut contracted, &mut s);
            for _ in 0..300 {
                let p = [
                    rng.gen_range(bx.0[0].lo..=bx.0[0].hi),
                    rng.gen_range(bx.0[1].lo..=bx.0[1].hi),
                ];
                if f.holds_at(&p) == Ok(true) {
                    assert!(
                        feasible && contracted.0[0].contains(p[0]) && contracted.0[1].contains(p[1]),
                        "round {round}: lost solution {p:?}"
                    );
                }
            }
        }
    }

    fn random_expr(rng: &mut ChaCha8Rng, depth: usize, max_depth: usize) -> Expr {
        if depth >= max_depth || rng.gen_bool(0.3) {
            return match rng.gen_range(0..3) {
                0 => Expr::var(VarId(0)),
                1 => Expr::var(VarId(1)),
                _ => Expr::constant(rng.gen_range(-2.0..2.0)),
            };
        }
        let a = random_expr(rng, depth + 1, max_depth);
        match rng.gen_range(0..7) {
            0 => a + random_expr(rng, depth + 1, max_depth),
            1 => a - random_expr(rng, depth + 1, max_depth),
            2 => a * random_expr(rng, depth + 1, max_depth),
            3 => a / random_expr(rng, depth + 1, max_depth),
            4 => a.sin(),
            5 => a.cos(),
            _ => -a,
        }
    }

    #[test]
    fn certainty_matches_uncompiled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e = random_expr(&mut rng, 0, 4);
            let f = Formula::gt_zero(e);
            let cf = CompiledFormula::compile(&f);
            let bx = bx2((-1.5, 0.7), (-0.3, 2.0));
            let mut s = Scratch::default();
            assert_eq!(cf.certainty(&bx, &mut s), f.certainty(&bx));
        }
    }

    #[test]
    fn smear_ranks_dominant_variable() {
        let (x, y) = xy();
        let f = CompiledFormula::compile(&Formula::gt_zero(
            Expr::constant(1000.0) * x + y - Expr::constant(0.5),
        ));
        let mut s = Scratch::default();
        let mut scores = [0.0, 0.0];
        f.smear_scores(&bx2((0.0, 1.0), (0.0, 1.0)), &mut s, &mut scores);
        assert!(scores[0] > 900.0 && scores[1] < 2.0);
    }
}
