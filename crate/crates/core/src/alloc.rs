//! Thrust allocation under stuck-rotor failures.
//!
//! Given a commanded wrench `u_d` and a set `W` of rotors stuck at known
//! thrusts, the allocator computes the minimum-norm correction over the
//! healthy rotors: with `Lambda_W` the mixing matrix with the columns in
//! `W` zeroed and `f_bar` the stuck thrusts (zero elsewhere),
//!
//! ```text
//! f_tilde = f_bar + Lambda_W^+ (u_d - Lambda f_bar)
//! ```
//!
//! where the pseudo-inverse is formed through the 4x4 Gram system
//! `Lambda_W^+ = Lambda_W' (Lambda_W Lambda_W')^{-1}`, solved by Gaussian
//! elimination with partial pivoting. Healthy thrusts are clamped to the
//! actuator range afterwards; the `exact` flag records whether clamping
//! was a no-op, in which case the achieved wrench equals `u_d`.

use crate::model::{
    apply_mixing, mixing_matrix, ControlInput, Matrix4x8, OctorotorParams, RotorThrusts,
    ROTOR_COUNT,
};
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative tolerance classifying the Gram matrix as rank deficient.
const RANK_REL_TOL: f64 = 1e-9;

pub type Matrix8x4 = [[f64; 4]; ROTOR_COUNT];

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("rotor index {index} outside 1..=8")]
    IndexOutOfRange { index: usize },
    #[error("rotor {index} listed twice")]
    DuplicateIndex { index: usize },
    #[error("stuck thrust {value} for rotor {index} outside [{lo}, {hi}]")]
    StuckOutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("masked mixing matrix is rank deficient for W = {w:?}")]
    RankDeficient { w: Vec<usize> },
    #[error("bad failure scenario syntax {text:?}: expected comma-separated index:thrust pairs")]
    Syntax { text: String },
}

/// Set of rotors stuck at fixed thrusts, keyed by 1-based rotor index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FailureScenario {
    pub stuck: BTreeMap<usize, f64>,
}

impl FailureScenario {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, AllocError> {
        let mut stuck = BTreeMap::new();
        for (index, value) in entries {
            if !(1..=ROTOR_COUNT).contains(&index) {
                return Err(AllocError::IndexOutOfRange { index });
            }
            if stuck.insert(index, value).is_some() {
                return Err(AllocError::DuplicateIndex { index });
            }
        }
        Ok(Self { stuck })
    }

    /// Parses the command-line syntax `1:0,8:1.4715`.
    pub fn parse(text: &str) -> Result<Self, AllocError> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Self::none());
        }
        let mut entries = Vec::new();
        for part in text.split(',') {
            let (idx, val) = part
                .split_once(':')
                .ok_or_else(|| AllocError::Syntax { text: text.into() })?;
            let index: usize = idx
                .trim()
                .parse()
                .map_err(|_| AllocError::Syntax { text: text.into() })?;
            let value: f64 = val
                .trim()
                .parse()
                .map_err(|_| AllocError::Syntax { text: text.into() })?;
            entries.push((index, value));
        }
        Self::new(entries)
    }

    pub fn validate(&self, p: &OctorotorParams) -> Result<(), AllocError> {
        for (&index, &value) in &self.stuck {
            if !(p.f_min..=p.f_max).contains(&value) || !value.is_finite() {
                return Err(AllocError::StuckOutOfRange {
                    index,
                    value,
                    lo: p.f_min,
                    hi: p.f_max,
                });
            }
        }
        Ok(())
    }

    /// Stuck rotor indices, ascending, 1-based.
    pub fn indices(&self) -> Vec<usize> {
        self.stuck.keys().copied().collect()
    }

    pub fn is_stuck(&self, index: usize) -> bool {
        self.stuck.contains_key(&index)
    }

    /// Stuck thrusts padded with zeros for healthy rotors.
    pub fn f_bar(&self) -> RotorThrusts {
        let mut f = [0.0; ROTOR_COUNT];
        for (&index, &value) in &self.stuck {
            f[index - 1] = value;
        }
        RotorThrusts(f)
    }

    /// Canonical label used in task names, e.g. `W=1,2;stuck=0,0`.
    pub fn label(&self) -> String {
        if self.stuck.is_empty() {
            return "no-failures".into();
        }
        let idx: Vec<String> = self.stuck.keys().map(|i| i.to_string()).collect();
        let val: Vec<String> = self.stuck.values().map(|v| format!("{v}")).collect();
        format!("W={};stuck={}", idx.join(","), val.join(","))
    }
}

/// Zeroes the columns of the stuck rotors.
pub fn masked_matrix(lambda: &Matrix4x8, w: &[usize]) -> Result<Matrix4x8, AllocError> {
    let mut out = *lambda;
    for &index in w {
        if !(1..=ROTOR_COUNT).contains(&index) {
            return Err(AllocError::IndexOutOfRange { index });
        }
        for row in out.iter_mut() {
            row[index - 1] = 0.0;
        }
    }
    Ok(out)
}

fn frobenius_sq(m: &Matrix4x8) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

fn gram(m: &Matrix4x8) -> [[f64; 4]; 4] {
    let mut g = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            g[i][j] = (0..ROTOR_COUNT).map(|k| m[i][k] * m[j][k]).sum();
        }
    }
    g
}

/// Solves the 4x4 system `a x = b` in place by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot falls below `tol`.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4], tol: f64) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot_row = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..4 {
            let m = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// True when the masked mixing matrix still spans all four wrench
/// directions. The pivot tolerance scales with the squared Frobenius
/// norm because the Gram matrix is quadratic in the entries.
pub fn is_rank_four(masked: &Matrix4x8) -> bool {
    let tol = RANK_REL_TOL * frobenius_sq(masked);
    let g = gram(masked);
    // Elimination succeeds on all four columns iff rank is four.
    solve4(g, [0.0; 4], tol).is_some()
}

/// Moore-Penrose pseudo-inverse of the masked mixing matrix via the Gram
/// system; rows of stuck rotors are identically zero.
pub fn pseudo_inverse(masked: &Matrix4x8, w: &[usize]) -> Result<Matrix8x4, AllocError> {
    let tol = RANK_REL_TOL * frobenius_sq(masked);
    let g = gram(masked);
    let mut ginv_cols = [[0.0; 4]; 4];
    for (col, out) in ginv_cols.iter_mut().enumerate() {
        let mut e = [0.0; 4];
        e[col] = 1.0;
        *out = solve4(g, e, tol).ok_or_else(|| AllocError::RankDeficient { w: w.to_vec() })?;
    }
    let mut pinv = [[0.0; 4]; ROTOR_COUNT];
    for j in 0..ROTOR_COUNT {
        for k in 0..4 {
            pinv[j][k] = (0..4).map(|i| masked[i][j] * ginv_cols[k][i]).sum();
        }
    }
    Ok(pinv)
}

/// Middle of three values with `lo <= hi`: the clamp of `x` to `[lo, hi]`.
fn mid(lo: f64, x: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Allocation state for a fixed failure scenario. The pseudo-inverse
/// depends only on the stuck set, so callers that allocate repeatedly
/// (simulation loops in particular) should construct this once.
#[derive(Debug, Clone)]
pub struct Allocator {
    pinv: Matrix8x4,
    f_bar: RotorThrusts,
    u_bar: [f64; 4],
    lambda: Matrix4x8,
    stuck: [bool; ROTOR_COUNT],
    f_min: f64,
    f_max: f64,
}

impl Allocator {
    pub fn new(p: &OctorotorParams, scenario: &FailureScenario) -> Result<Self, AllocError> {
        scenario.validate(p)?;
        let lambda = mixing_matrix(p);
        let w = scenario.indices();
        let masked = masked_matrix(&lambda, &w)?;
        let pinv = pseudo_inverse(&masked, &w)?;
        let f_bar = scenario.f_bar();
        let u_bar = apply_mixing(&lambda, &f_bar).as_array();
        let mut stuck = [false; ROTOR_COUNT];
        for j in 0..ROTOR_COUNT {
            stuck[j] = scenario.is_stuck(j + 1);
        }
        Ok(Self {
            pinv,
            f_bar,
            u_bar,
            lambda,
            stuck,
            f_min: p.f_min,
            f_max: p.f_max,
        })
    }

    pub fn allocate(&self, u_d: &ControlInput) -> AllocationResult {
        let u = u_d.as_array();
        let residual = [
            u[0] - self.u_bar[0],
            u[1] - self.u_bar[1],
            u[2] - self.u_bar[2],
            u[3] - self.u_bar[3],
        ];
        let mut f_tilde = self.f_bar.0;
        let mut f_all = self.f_bar.0;
        let mut exact = true;
        for j in 0..ROTOR_COUNT {
            if self.stuck[j] {
                continue;
            }
            let v: f64 = (0..4).map(|k| self.pinv[j][k] * residual[k]).sum();
            f_tilde[j] = v;
            f_all[j] = mid(self.f_min, v, self.f_max);
            if v < self.f_min || v > self.f_max {
                exact = false;
            }
        }
        let f_tilde = RotorThrusts(f_tilde);
        let f_all = RotorThrusts(f_all);
        let u_achieved = apply_mixing(&self.lambda, &f_all);
        AllocationResult {
            f_tilde,
            f_all,
            u_achieved,
            exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationResult {
    /// Unclamped minimum-norm solution; entries in `W` hold the stuck values.
    pub f_tilde: RotorThrusts,
    /// Deliverable thrusts after clamping healthy rotors to `[f_min, f_max]`.
    pub f_all: RotorThrusts,
    /// Wrench actually produced by `f_all`.
    pub u_achieved: ControlInput,
    /// True iff no healthy rotor needed clamping.
    pub exact: bool,
}

/// Allocates rotor thrusts realizing `u_d` as closely as the failure
/// scenario and actuator limits allow.
pub fn allocate(
    u_d: &ControlInput,
    scenario: &FailureScenario,
    p: &OctorotorParams,
) -> Result<AllocationResult, AllocError> {
    Ok(Allocator::new(p, scenario)?.allocate(u_d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover_wrench(p: &OctorotorParams) -> ControlInput {
        ControlInput {
            thrust: p.hover_thrust(),
            ..Default::default()
        }
    }

    #[test]
    fn hover_splits_evenly() {
        let p = OctorotorParams::default();
        let r = allocate(&hover_wrench(&p), &FailureScenario::none(), &p).unwrap();
        for f in r.f_all.0 {
            assert!((f - 1.47150).abs() < 1e-12);
        }
        assert!(r.exact);
        assert!((r.u_achieved.thrust - 11.772).abs() < 1e-9);
    }

    #[test]
    fn exact_allocation_reproduces_wrench() {
        let p = OctorotorParams::default();
        let u = ControlInput {
            thrust: 12.0,
            tau1: 0.1,
            tau2: -0.05,
            tau3: 0.02,
        };
        let sc = FailureScenario::new([(3, 1.0)]).unwrap();
        let r = allocate(&u, &sc, &p).unwrap();
        assert!(r.exact);
        for (a, b) in r.u_achieved.as_array().iter().zip(u.as_array().iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert_eq!(r.f_all.0[2], 1.0);
    }

    #[test]
    fn clamping_clears_exact_flag() {
        let p = OctorotorParams::default();
        // Strong yaw torque demand saturates rotors.
        let u = ControlInput {
            thrust: p.hover_thrust(),
            tau3: 2.0,
            ..Default::default()
        };
        let r = allocate(&u, &FailureScenario::none(), &p).unwrap();
        assert!(!r.exact);
        for f in r.f_all.0 {
            assert!((p.f_min..=p.f_max).contains(&f));
        }
        assert!((r.u_achieved.tau3 - u.tau3).abs() > 1e-6);
    }

    #[test]
    fn mid_clamps_both_sides() {
        assert_eq!(mid(0.0, -0.3, 5.886), 0.0);
        assert_eq!(mid(0.0, 6.1, 5.886), 5.886);
        assert_eq!(mid(0.0, 1.5, 5.886), 1.5);
    }

    #[test]
    fn rank_deficient_quad() {
        let p = OctorotorParams::default();
        let lambda = mixing_matrix(&p);
        let masked = masked_matrix(&lambda, &[2, 3, 4, 5]).unwrap();
        assert!(!is_rank_four(&masked));
        let sc = FailureScenario::new([(2, 0.0), (3, 0.0), (4, 0.0), (5, 0.0)]).unwrap();
        let r = allocate(&hover_wrench(&p), &sc, &p);
        assert_eq!(
            r,
            Err(AllocError::RankDeficient {
                w: vec![2, 3, 4, 5]
            })
        );
    }

    #[test]
    fn single_failures_keep_rank() {
        let p = OctorotorParams::default();
        let lambda = mixing_matrix(&p);
        for i in 1..=ROTOR_COUNT {
            let masked = masked_matrix(&lambda, &[i]).unwrap();
            assert!(is_rank_four(&masked), "rotor {i}");
        }
    }

    #[test]
    fn index_errors() {
        let lambda = mixing_matrix(&OctorotorParams::default());
        assert_eq!(
            masked_matrix(&lambda, &[9]),
            Err(AllocError::IndexOutOfRange { index: 9 })
        );
        assert_eq!(
            FailureScenario::new([(0, 0.0)]),
            Err(AllocError::IndexOutOfRange { index: 0 })
        );
        assert_eq!(
            FailureScenario::new([(1, 0.0), (1, 0.1)]),
            Err(AllocError::DuplicateIndex { index: 1 })
        );
    }

    #[test]
    fn parse_cli_syntax() {
        let sc = FailureScenario::parse("1:0,8:1.4715").unwrap();
        assert_eq!(sc.indices(), vec![1, 8]);
        assert_eq!(sc.stuck[&8], 1.4715);
        assert_eq!(FailureScenario::parse("").unwrap(), FailureScenario::none());
        assert!(matches!(
            FailureScenario::parse("1;0"),
            Err(AllocError::Syntax { .. })
        ));
    }

    #[test]
    fn stuck_value_validated_against_limits() {
        let p = OctorotorParams::default();
        let sc = FailureScenario::new([(1, 7.0)]).unwrap();
        assert!(matches!(
            sc.validate(&p),
            Err(AllocError::StuckOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn label_formats() {
        assert_eq!(FailureScenario::none().label(), "no-failures");
        let sc = FailureScenario::new([(2, 0.0), (1, 0.0)]).unwrap();
        assert_eq!(sc.label(), "W=1,2;stuck=0,0");
    }
}
