//! Symbolic real-valued expressions and quantifier-free formulas.
//!
//! Expressions are trees over `+ - * /`, negation and `sin cos tan` with
//! `f64` constants and named variables. They support exact point
//! evaluation (which reports division by zero and tangent poles instead
//! of silently producing infinities) and natural interval extension over
//! a box of variable intervals, which is total: singular subterms widen
//! to the whole line instead of failing.
//!
//! Formulas are conjunctions and disjunctions of strict sign atoms
//! `e > 0` / `e < 0`. Interval evaluation of a formula yields a sound
//! three-valued verdict: `CertainlyTrue` and `CertainlyFalse` hold for
//! every point of the box, `Unknown` means the box must be refined.

use crate::interval::Interval;
use std::fmt;
use std::ops;
use thiserror::Error;

/// Any point with |cos x| at or below this is treated as a tangent pole:
/// such points lie within ~1e-12 of a true singularity, where tan exceeds
/// 1e11 and a point evaluation would be numerically meaningless.
const TAN_POLE_COS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("tangent pole at argument {arg}")]
    TanPole { arg: f64 },
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
}

/// Index of a variable inside a [`VarSet`]. Declaration order is
/// load-bearing: it breaks ties in the solver's branching rule and fixes
/// the record layout of checkpoint files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

/// Ordered table of declared variable names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarSet {
    names: Vec<String>,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable and returns its id. Names must be unique.
    pub fn declare(&mut self, name: &str) -> VarId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "variable {name:?} declared twice"
        );
        self.names.push(name.to_string());
        VarId(self.names.len() - 1)
    }

    pub fn id_of(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(VarId)
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Axis-aligned box assigning one interval per declared variable,
/// indexed by [`VarId`] in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox(pub Vec<Interval>);

impl IntervalBox {
    pub fn get(&self, id: VarId) -> Interval {
        self.0[id.0]
    }

    pub fn set(&mut self, id: VarId, v: Interval) {
        self.0[id.0] = v;
    }

    /// Largest absolute width over all dimensions.
    pub fn max_width(&self) -> f64 {
        self.0.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.0.iter().map(Interval::midpoint).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(VarId),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tan(Box<Expr>),
}

impl Expr {
    pub fn var(id: VarId) -> Expr {
        Expr::Var(id)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Box::new(self))
    }

    pub fn tan(self) -> Expr {
        Expr::Tan(Box::new(self))
    }

    /// Exact evaluation at a point given in declaration order.
    pub fn eval_point(&self, vals: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(id) => vals[id.0],
            Expr::Neg(a) => -a.eval_point(vals)?,
            Expr::Add(a, b) => a.eval_point(vals)? + b.eval_point(vals)?,
            Expr::Sub(a, b) => a.eval_point(vals)? - b.eval_point(vals)?,
            Expr::Mul(a, b) => a.eval_point(vals)? * b.eval_point(vals)?,
            Expr::Div(a, b) => {
                let d = b.eval_point(vals)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_point(vals)? / d
            }
            Expr::Sin(a) => a.eval_point(vals)?.sin(),
            Expr::Cos(a) => a.eval_point(vals)?.cos(),
            Expr::Tan(a) => {
                let x = a.eval_point(vals)?;
                if x.cos().abs() <= TAN_POLE_COS {
                    return Err(EvalError::TanPole { arg: x });
                }
                x.tan()
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Natural interval extension over a box. Total: never fails, returns
    /// the whole line for singular subterms.
    pub fn eval_interval(&self, bx: &IntervalBox) -> Interval {
        match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(id) => bx.get(*id),
            Expr::Neg(a) => a.eval_interval(bx).neg(),
            Expr::Add(a, b) => a.eval_interval(bx).add(&b.eval_interval(bx)),
            Expr::Sub(a, b) => a.eval_interval(bx).sub(&b.eval_interval(bx)),
            Expr::Mul(a, b) => a.eval_interval(bx).mul(&b.eval_interval(bx)),
            Expr::Div(a, b) => a.eval_interval(bx).div(&b.eval_interval(bx)),
            Expr::Sin(a) => a.eval_interval(bx).sin(),
            Expr::Cos(a) => a.eval_interval(bx).cos(),
            Expr::Tan(a) => a.eval_interval(bx).tan(),
        }
    }

    /// Marks every variable occurring in the expression.
    pub fn mark_vars(&self, seen: &mut [bool]) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(id) => seen[id.0] = true,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Tan(a) => a.mark_vars(seen),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.mark_vars(seen);
                b.mark_vars(seen);
            }
        }
    }

    /// Value of a variable-free expression, `None` if any variable occurs
    /// or a singular constant subterm (division by zero, tangent pole)
    /// makes the value undefined.
    pub fn const_value(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Var(_) => None,
            Expr::Neg(a) => a.const_value().map(|v| -v),
            Expr::Add(a, b) => Some(a.const_value()? + b.const_value()?),
            Expr::Sub(a, b) => Some(a.const_value()? - b.const_value()?),
            Expr::Mul(a, b) => Some(a.const_value()? * b.const_value()?),
            Expr::Div(a, b) => {
                let d = b.const_value()?;
                if d == 0.0 {
                    return None;
                }
                Some(a.const_value()? / d)
            }
            Expr::Sin(a) => a.const_value().map(f64::sin),
            Expr::Cos(a) => a.const_value().map(f64::cos),
            Expr::Tan(a) => {
                let x = a.const_value()?;
                (x.cos().abs() > TAN_POLE_COS).then(|| x.tan())
            }
        }
    }

    /// Writes the expression as `a . x + b` when it is affine in the
    /// variables: sums, differences, negation, scaling by constant
    /// subexpressions and division by a nonzero constant. Returns dense
    /// coefficients over `n` variables plus the constant term; `None`
    /// for anything nonlinear in a variable.
    pub fn affine_coeffs(&self, n: usize) -> Option<(Vec<f64>, f64)> {
        fn walk(e: &Expr, scale: f64, a: &mut [f64], b: &mut f64) -> bool {
            if let Some(c) = e.const_value() {
                *b += scale * c;
                return true;
            }
            match e {
                Expr::Var(id) => {
                    if id.0 >= a.len() {
                        return false;
                    }
                    a[id.0] += scale;
                    true
                }
                Expr::Neg(x) => walk(x, -scale, a, b),
                Expr::Add(x, y) => walk(x, scale, a, b) && walk(y, scale, a, b),
                Expr::Sub(x, y) => walk(x, scale, a, b) && walk(y, -scale, a, b),
                Expr::Mul(x, y) => match (x.const_value(), y.const_value()) {
                    (Some(c), _) => walk(y, scale * c, a, b),
                    (_, Some(c)) => walk(x, scale * c, a, b),
                    _ => false,
                },
                Expr::Div(x, y) => match y.const_value() {
                    Some(c) if c != 0.0 => walk(x, scale / c, a, b),
                    _ => false,
                },
                _ => false,
            }
        }
        let mut a = vec![0.0; n];
        let mut b = 0.0;
        walk(self, 1.0, &mut a, &mut b).then_some((a, b))
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

/// Strict comparison of an expression against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    /// `expr > 0`
    Gt,
    /// `expr < 0`
    Lt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(Expr, Rel),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

/// Sound three-valued verdict of a formula over a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certainty {
    CertainlyTrue,
    CertainlyFalse,
    Unknown,
}

impl Formula {
    pub fn gt_zero(e: Expr) -> Formula {
        Formula::Atom(e, Rel::Gt)
    }

    pub fn lt_zero(e: Expr) -> Formula {
        Formula::Atom(e, Rel::Lt)
    }

    /// Exact satisfaction at a point. Evaluation errors propagate so a
    /// caller never mistakes a singular point for a witness.
    pub fn holds_at(&self, vals: &[f64]) -> Result<bool, EvalError> {
        match self {
            Formula::Atom(e, rel) => {
                let v = e.eval_point(vals)?;
                Ok(match rel {
                    Rel::Gt => v > 0.0,
                    Rel::Lt => v < 0.0,
                })
            }
            Formula::And(fs) => {
                for f in fs {
                    if !f.holds_at(vals)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Or(fs) => {
                for f in fs {
                    if f.holds_at(vals)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Interval verdict over a box.
    ///
    /// An empty conjunction is `CertainlyTrue` and an empty disjunction is
    /// `CertainlyFalse`, matching the point semantics.
    pub fn certainty(&self, bx: &IntervalBox) -> Certainty {
        match self {
            Formula::Atom(e, rel) => {
                let r = e.eval_interval(bx);
                match rel {
                    Rel::Gt => {
                        if r.lo > 0.0 {
                            Certainty::CertainlyTrue
                        } else if r.hi <= 0.0 {
                            Certainty::CertainlyFalse
                        } else {
                            Certainty::Unknown
                        }
                    }
                    Rel::Lt => {
                        if r.hi < 0.0 {
                            Certainty::CertainlyTrue
                        } else if r.lo >= 0.0 {
                            Certainty::CertainlyFalse
                        } else {
                            Certainty::Unknown
                        }
                    }
                }
            }
            Formula::And(fs) => {
                let mut all_true = true;
                for f in fs {
                    match f.certainty(bx) {
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
            Formula::Or(fs) => {
                let mut all_false = true;
                for f in fs {
                    match f.certainty(bx) {
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

    pub fn mark_vars(&self, seen: &mut [bool]) {
        match self {
            Formula::Atom(e, _) => e.mark_vars(seen),
            Formula::And(fs) | Formula::Or(fs) => {
                for f in fs {
                    f.mark_vars(seen);
                }
            }
        }
    }
}

impl fmt::Display for Rel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rel::Gt => write!(f, ">"),
            Rel::Lt => write!(f, "<"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> (VarSet, VarId, VarId) {
        let mut vs = VarSet::new();
        let x = vs.declare("x");
        let y = vs.declare("y");
        (vs, x, y)
    }

    #[test]
    fn point_eval_polynomial() {
        let (_, x, y) = xy();
        // x^2 + y
        let e = Expr::var(x) * Expr::var(x) + Expr::var(y);
        assert_eq!(e.eval_point(&[3.0, 1.0]), Ok(10.0));
    }

    #[test]
    fn division_by_zero_reported() {
        let (_, x, _) = xy();
        let e = Expr::constant(1.0) / Expr::var(x);
        assert_eq!(e.eval_point(&[0.0, 0.0]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn tan_pole_reported() {
        let (_, x, _) = xy();
        let e = Expr::var(x).tan();
        let r = e.eval_point(&[std::f64::consts::FRAC_PI_2, 0.0]);
        assert!(matches!(r, Err(EvalError::TanPole { .. })), "got {r:?}");
        // Away from the pole tan evaluates normally.
        assert!(e.eval_point(&[0.5, 0.0]).unwrap() - 0.5f64.tan() == 0.0);
    }

    #[test]
    fn interval_eval_encloses_square() {
        let (_, x, _) = xy();
        let e = Expr::var(x) * Expr::var(x);
        let bx = IntervalBox(vec![Interval::new(-2.0, 1.0), Interval::point(0.0)]);
        let r = e.eval_interval(&bx);
        // Natural extension of x*x over [-2,1] is [-2,4]; enclosure holds.
        assert!(r.contains(0.0) && r.contains(4.0));
    }

    #[test]
    fn singular_division_is_total() {
        let (_, x, y) = xy();
        let e = Expr::var(x) / Expr::var(y);
        let bx = IntervalBox(vec![Interval::point(1.0), Interval::new(-1.0, 1.0)]);
        assert_eq!(e.eval_interval(&bx), Interval::entire());
    }

    #[test]
    fn atom_certainty_three_ways() {
        let (_, x, _) = xy();
        // x^2 - 4 > 0
        let e = Expr::var(x) * Expr::var(x) - Expr::constant(4.0);
        let f = Formula::gt_zero(e);
        let unknown = IntervalBox(vec![Interval::new(-3.0, 3.0), Interval::point(0.0)]);
        let fals = IntervalBox(vec![Interval::new(-1.0, 1.0), Interval::point(0.0)]);
        let tru = IntervalBox(vec![Interval::new(3.0, 4.0), Interval::point(0.0)]);
        assert_eq!(f.certainty(&unknown), Certainty::Unknown);
        assert_eq!(f.certainty(&fals), Certainty::CertainlyFalse);
        assert_eq!(f.certainty(&tru), Certainty::CertainlyTrue);
    }

    #[test]
    fn empty_connectives() {
        let bx = IntervalBox(vec![]);
        assert_eq!(Formula::And(vec![]).certainty(&bx), Certainty::CertainlyTrue);
        assert_eq!(Formula::Or(vec![]).certainty(&bx), Certainty::CertainlyFalse);
        assert_eq!(Formula::And(vec![]).holds_at(&[]), Ok(true));
        assert_eq!(Formula::Or(vec![]).holds_at(&[]), Ok(false));
    }

    #[test]
    fn conjunction_short_circuits_on_false() {
        let (_, x, _) = xy();
        let f = Formula::And(vec![
            Formula::lt_zero(Expr::var(x) - Expr::constant(10.0)),
            Formula::gt_zero(Expr::var(x)),
        ]);
        assert_eq!(f.holds_at(&[5.0, 0.0]), Ok(true));
        assert_eq!(f.holds_at(&[-5.0, 0.0]), Ok(false));
    }
}
