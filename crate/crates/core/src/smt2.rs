//! SMT-LIB2 export of verification queries for external cross-checking.
//!
//! The script is self-contained: `QF_NRA` logic, a precision hint, one
//! real constant per variable, the box bounds as assertions and the
//! formula as nested `and`/`or` over strict comparisons with `sin`,
//! `cos` and `tan` left symbolic. Output is byte-identical for equal
//! inputs: declarations and bounds are sorted by variable name and every
//! number is rendered as a plain decimal with exactly 17 significant
//! digits, which round-trips any finite binary64 value.

use crate::expr::{Expr, Formula, IntervalBox, Rel, VarSet};
use std::fmt::Write;

/// Plain-decimal rendering (SMT-LIB has no exponent literals) with 17
/// significant digits. Negative values become `(- abs)` since SMT-LIB
/// has no signed numerals.
fn numeral(x: f64) -> String {
    assert!(x.is_finite(), "SMT-LIB cannot express {x}");
    if x == 0.0 {
        return "0.0".to_string();
    }
    if x < 0.0 {
        return format!("(- {})", numeral(-x));
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always emits an e");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 17);
    if exp >= 16 {
        let zeros = "0".repeat((exp - 16) as usize);
        format!("{digits}{zeros}.0")
    } else if exp >= 0 {
        let point = (exp + 1) as usize;
        format!("{}.{}", &digits[..point], &digits[point..])
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("0.{zeros}{digits}")
    }
}

fn term(e: &Expr, vars: &VarSet, out: &mut String) {
    match e {
        Expr::Const(c) => out.push_str(&numeral(*c)),
        Expr::Var(v) => out.push_str(vars.name(*v)),
        Expr::Neg(a) => unary("-", a, vars, out),
        Expr::Sin(a) => unary("sin", a, vars, out),
        Expr::Cos(a) => unary("cos", a, vars, out),
        Expr::Tan(a) => unary("tan", a, vars, out),
        Expr::Add(a, b) => binary("+", a, b, vars, out),
        Expr::Sub(a, b) => binary("-", a, b, vars, out),
        Expr::Mul(a, b) => binary("*", a, b, vars, out),
        Expr::Div(a, b) => binary("/", a, b, vars, out),
    }
}

fn unary(op: &str, a: &Expr, vars: &VarSet, out: &mut String) {
    out.push('(');
    out.push_str(op);
    out.push(' ');
    term(a, vars, out);
    out.push(')');
}

fn binary(op: &str, a: &Expr, b: &Expr, vars: &VarSet, out: &mut String) {
    out.push('(');
    out.push_str(op);
    out.push(' ');
    term(a, vars, out);
    out.push(' ');
    term(b, vars, out);
    out.push(')');
}

fn formula(f: &Formula, vars: &VarSet, out: &mut String) {
    match f {
        Formula::Atom(e, rel) => {
            out.push_str(match rel {
                Rel::Gt => "(> ",
                Rel::Lt => "(< ",
            });
            term(e, vars, out);
            out.push_str(" 0)");
        }
        Formula::And(parts) => nary("and", "true", parts, vars, out),
        Formula::Or(parts) => nary("or", "false", parts, vars, out),
    }
}

fn nary(op: &str, empty: &str, parts: &[Formula], vars: &VarSet, out: &mut String) {
    match parts {
        [] => out.push_str(empty),
        [single] => formula(single, vars, out),
        _ => {
            out.push('(');
            out.push_str(op);
            for p in parts {
                out.push(' ');
                formula(p, vars, out);
            }
            out.push(')');
        }
    }
}

/// Renders the query as a complete SMT-LIB2 script.
pub fn export_smt2(vars: &VarSet, f: &Formula, domain: &IntervalBox, delta: f64) -> String {
    assert_eq!(
        vars.len(),
        domain.0.len(),
        "domain must assign every declared variable"
    );
    let mut order: Vec<usize> = (0..vars.len()).collect();
    order.sort_by_key(|&i| vars.name(crate::expr::VarId(i)));
    let mut out = String::new();
    out.push_str("(set-logic QF_NRA)\n");
    let _ = writeln!(out, "(set-info :precision {})", numeral(delta));
    for &i in &order {
        let _ = writeln!(out, "(declare-fun {} () Real)", vars.name(crate::expr::VarId(i)));
    }
    for &i in &order {
        let name = vars.name(crate::expr::VarId(i));
        let iv = domain.0[i];
        let _ = writeln!(out, "(assert (>= {name} {}))", numeral(iv.lo));
        let _ = writeln!(out, "(assert (<= {name} {}))", numeral(iv.hi));
    }
    out.push_str("(assert ");
    formula(f, vars, &mut out);
    out.push_str(")\n(check-sat)\n(exit)\n");
    out
}
