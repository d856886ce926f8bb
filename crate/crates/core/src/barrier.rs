//! Exponential barrier certificates for the inner loop.
//!
//! A barrier family starts from a signed affine function
//! `P (x - x_d) + D` of the tracking error and extends it along the
//! closed-loop linearization `A`: the depth-`j` member has numerator row
//! `P (I + p_1 A) ... (I + p_j A)` and denominator `D - delta_1 - ... -
//! delta_j`. Members are normalized by their denominator and shifted by
//! the scale parameter `mu`, so
//!
//! ```text
//! h(x, x_d, mu) = (row . (x - x_d)) / denom + mu
//! ```
//!
//! and the sublevel family `I(mu) = { x : all h >= 0 }` grows linearly
//! with `mu`. Under the linear closed loop each member telescopes
//! against the previous one: `h~_j = h~_{j-1} + p_j d/dt h~_{j-1} -
//! delta_j`, with equality of the first two terms when `delta_j = 0`,
//! which is what makes depth-`j` nonnegativity propagate forward in time.

use crate::control::{block_k, Command, Gains};
use crate::model::{
    closed_loop_linear, inner_dynamics, Disturbance, InnerState, ModelError, OctorotorParams,
    STATE_DIM,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    #[error("margins consume the boundary width: sum of deltas {total} >= D = {d}")]
    MarginOverflow { total: f64, d: f64 },
    #[error("boundary width D = {d} must be positive")]
    NonPositiveWidth { d: f64 },
    #[error("barrier parameter {name} = {value} invalid: {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

/// Which command scalar a barrier family tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandVar {
    VzD,
    PhiD,
    ThetaD,
    PsiD,
}

impl CommandVar {
    /// Index of the commanded state component inside `InnerState`.
    pub fn state_index(self) -> usize {
        match self {
            CommandVar::VzD => 0,
            CommandVar::PhiD => 1,
            CommandVar::ThetaD => 2,
            CommandVar::PsiD => 3,
        }
    }

    pub fn value(self, cmd: &Command) -> f64 {
        match self {
            CommandVar::VzD => cmd.v_z_d,
            CommandVar::PhiD => cmd.phi_d,
            CommandVar::ThetaD => cmd.theta_d,
            CommandVar::PsiD => cmd.psi_d,
        }
    }
}

/// One normalized barrier component.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBarrier {
    /// Label such as `phi,1,+` (family, depth, sign).
    pub id: String,
    /// Numerator coefficients over the state components.
    pub state_coeffs: [f64; STATE_DIM],
    /// Command scalar entering the numerator, if any.
    pub command: Option<CommandVar>,
    /// Coefficient multiplying that command scalar.
    pub command_coeff: f64,
    /// Positive denominator `D - sum(delta)`.
    pub denominator: f64,
    /// Extension depth within its family.
    pub depth: usize,
}

impl AffineBarrier {
    fn numerator(&self, s: &InnerState, cmd: &Command) -> f64 {
        let x = s.as_array();
        let mut acc = 0.0;
        for (c, v) in self.state_coeffs.iter().zip(x.iter()) {
            acc += c * v;
        }
        if let Some(cv) = self.command {
            acc += self.command_coeff * cv.value(cmd);
        }
        acc
    }
}

/// Parameters of the stock barrier set: boundary widths per tracked
/// component, command ranges, extension coefficients and margins.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierParams {
    pub d_vz: f64,
    pub d_vz_cmd: f64,
    pub d_phi: f64,
    pub d_theta: f64,
    pub d_psi: f64,
    pub d_phi_cmd: f64,
    pub d_theta_cmd: f64,
    pub d_psi_cmd: f64,
    pub d_omega: f64,
    /// Depth-1 extension coefficient shared by the angle families.
    pub p1: f64,
    /// Depth-1 margin shared by the angle families.
    pub delta1: f64,
    /// Largest region scale the verification conditions quantify over.
    pub mu_max: f64,
    /// Strictness slack used by the verification conditions.
    pub epsilon: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        let epsilon = 1e-8;
        Self {
            d_vz: 0.25,
            d_vz_cmd: 1.0,
            d_phi: 0.05,
            d_theta: 0.05,
            d_psi: 0.05,
            d_phi_cmd: 0.15,
            d_theta_cmd: 0.15,
            d_psi_cmd: epsilon,
            d_omega: 0.09,
            p1: 0.7,
            delta1: 0.017,
            mu_max: 2.0,
            epsilon,
        }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<(), BarrierError> {
        let widths: [(&'static str, f64); 6] = [
            ("d_vz", self.d_vz),
            ("d_phi", self.d_phi),
            ("d_theta", self.d_theta),
            ("d_psi", self.d_psi),
            ("d_omega", self.d_omega),
            ("epsilon", self.epsilon),
        ];
        for (name, value) in widths {
            if !(value > 0.0) || !value.is_finite() {
                return Err(BarrierError::Parameter {
                    name,
                    value,
                    constraint: "> 0",
                });
            }
        }
        for (name, value) in [
            ("d_vz_cmd", self.d_vz_cmd),
            ("d_phi_cmd", self.d_phi_cmd),
            ("d_theta_cmd", self.d_theta_cmd),
            ("d_psi_cmd", self.d_psi_cmd),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(BarrierError::Parameter {
                    name,
                    value,
                    constraint: ">= 0",
                });
            }
        }
        if !(self.mu_max >= 1.0) {
            return Err(BarrierError::Parameter {
                name: "mu_max",
                value: self.mu_max,
                constraint: ">= 1",
            });
        }
        if !(self.p1 > 0.0) {
            return Err(BarrierError::Parameter {
                name: "p1",
                value: self.p1,
                constraint: "> 0",
            });
        }
        for (d, delta) in [
            (self.d_phi, self.delta1),
            (self.d_theta, self.delta1),
            (self.d_psi, self.delta1),
        ] {
            if delta >= d {
                return Err(BarrierError::MarginOverflow {
                    total: delta,
                    d,
                });
            }
        }
        Ok(())
    }
}

/// Builds the extension sequence of one signed family: depth 0 through
/// `p_list.len()`, sharing the closed-loop matrix `a`.
///
/// `command` names the command scalar whose error the family tracks; its
/// numerator coefficient at every depth is the negated coefficient of
/// the corresponding state component, because the command enters only
/// through the tracking error `x - x_d`.
pub fn build_sequence(
    id_prefix: &str,
    sign: f64,
    p_row: [f64; STATE_DIM],
    d: f64,
    p_list: &[f64],
    delta_list: &[f64],
    a: &[[f64; STATE_DIM]; STATE_DIM],
    command: Option<CommandVar>,
) -> Result<Vec<AffineBarrier>, BarrierError> {
    assert_eq!(p_list.len(), delta_list.len(), "one margin per extension");
    if !(d > 0.0) {
        return Err(BarrierError::NonPositiveWidth { d });
    }
    let total: f64 = delta_list.iter().sum();
    if total >= d {
        return Err(BarrierError::MarginOverflow { total, d });
    }
    let sign_label = if sign >= 0.0 { "+" } else { "-" };
    let mut row: [f64; STATE_DIM] = p_row.map(|v| sign * v);
    let mut denom = d;
    let mut out = Vec::with_capacity(p_list.len() + 1);
    let make = |row: [f64; STATE_DIM], denom: f64, depth: usize| AffineBarrier {
        id: format!("{id_prefix},{depth},{sign_label}"),
        state_coeffs: row,
        command,
        command_coeff: command.map_or(0.0, |cv| -row[cv.state_index()]),
        denominator: denom,
        depth,
    };
    out.push(make(row, denom, 0));
    for (j, (&p, &delta)) in p_list.iter().zip(delta_list.iter()).enumerate() {
        // row <- row (I + p A)
        let mut next = row;
        for (col, entry) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..STATE_DIM {
                acc += row[k] * a[k][col];
            }
            *entry += p * acc;
        }
        row = next;
        denom -= delta;
        out.push(make(row, denom, j + 1));
    }
    Ok(out)
}

/// The stock barrier set: signed pairs for the vertical channel (depth
/// 0), each attitude angle (depths 0 and 1) and each body rate (depth
/// 0), twenty components in all.
pub fn octorotor_barriers(
    bp: &BarrierParams,
    gains: &Gains,
    p: &OctorotorParams,
) -> Result<Vec<AffineBarrier>, BarrierError> {
    bp.validate()?;
    let a = closed_loop_linear(p, gains).full_matrix();
    let e = |i: usize| {
        let mut row = [0.0; STATE_DIM];
        row[i] = 1.0;
        row
    };
    let mut comps = Vec::with_capacity(20);
    for sign in [1.0, -1.0] {
        comps.extend(build_sequence(
            "vz",
            sign,
            e(0),
            bp.d_vz,
            &[],
            &[],
            &a,
            Some(CommandVar::VzD),
        )?);
    }
    let angle_families = [
        ("phi", 1, bp.d_phi, CommandVar::PhiD),
        ("theta", 2, bp.d_theta, CommandVar::ThetaD),
        ("psi", 3, bp.d_psi, CommandVar::PsiD),
    ];
    for (name, idx, d, cv) in angle_families {
        for sign in [1.0, -1.0] {
            comps.extend(build_sequence(
                name,
                sign,
                e(idx),
                d,
                &[bp.p1],
                &[bp.delta1],
                &a,
                Some(cv),
            )?);
        }
    }
    for (name, idx) in [("Omega1", 4), ("Omega2", 5), ("Omega3", 6)] {
        for sign in [1.0, -1.0] {
            comps.extend(build_sequence(name, sign, e(idx), bp.d_omega, &[], &[], &a, None)?);
        }
    }
    Ok(comps)
}

/// Value of one component at a state, command and scale.
pub fn eval_barrier(b: &AffineBarrier, s: &InnerState, cmd: &Command, mu: f64) -> f64 {
    b.numerator(s, cmd) / b.denominator + mu
}

/// True when every component is nonnegative, i.e. the state lies in `I(mu)`.
pub fn membership(comps: &[AffineBarrier], s: &InnerState, cmd: &Command, mu: f64) -> bool {
    comps.iter().all(|b| eval_barrier(b, s, cmd, mu) >= 0.0)
}

/// Least scale `mu >= 0` at which the state enters `I(mu)`.
pub fn mu_level(comps: &[AffineBarrier], s: &InnerState, cmd: &Command) -> f64 {
    comps
        .iter()
        .map(|b| -b.numerator(s, cmd) / b.denominator)
        .fold(0.0, f64::max)
}

/// Time derivative of one component along the closed loop: the constant
/// gradient dotted with the disturbed nonlinear dynamics under the PD
/// controller. Commands are constant in time, so they contribute nothing.
pub fn barrier_dot(
    b: &AffineBarrier,
    s: &InnerState,
    cmd: &Command,
    dist: &Disturbance,
    gains: &Gains,
    p: &OctorotorParams,
) -> Result<f64, ModelError> {
    let u = block_k(s, cmd, gains, p).map_err(|_| ModelError::PitchDomain { theta: s.theta })?;
    let ds = inner_dynamics(s, &u, dist, p)?;
    let mut acc = 0.0;
    for (c, d) in b.state_coeffs.iter().zip(ds.iter()) {
        acc += c * d;
    }
    Ok(acc / b.denominator)
}

/// The disturbance corner minimizing the component's derivative. Each
/// disturbance channel enters its dynamics row linearly, so the gradient
/// sign is the sign of the matching state coefficient and the minimizing
/// value is the opposing bound.
pub fn adversarial_disturbance(b: &AffineBarrier, p: &OctorotorParams) -> Disturbance {
    let against = |coeff: f64, bound: f64| if coeff > 0.0 { -bound } else { bound };
    let c = &b.state_coeffs;
    Disturbance {
        delta_z: against(c[0], p.delta_r_max),
        delta_r1: against(c[4], p.delta_r12_max),
        delta_r2: against(c[5], p.delta_r12_max),
        delta_r3: against(c[6], p.delta_r3_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (BarrierParams, Gains, OctorotorParams, Vec<AffineBarrier>) {
        let bp = BarrierParams::default();
        let p = OctorotorParams::default();
        let g = Gains::rounded_nominal();
        let comps = octorotor_barriers(&bp, &g, &p).unwrap();
        (bp, g, p, comps)
    }

    fn find<'a>(comps: &'a [AffineBarrier], id: &str) -> &'a AffineBarrier {
        comps.iter().find(|b| b.id == id).unwrap()
    }

    #[test]
    fn stock_set_has_twenty_components() {
        let (_, _, _, comps) = setup();
        assert_eq!(comps.len(), 20);
        let depth1: Vec<&str> = comps
            .iter()
            .filter(|b| b.depth == 1)
            .map(|b| b.id.as_str())
            .collect();
        assert_eq!(depth1.len(), 6);
        assert!(depth1.contains(&"phi,1,+") && depth1.contains(&"psi,1,-"));
    }

    #[test]
    fn depth_one_roll_coefficients() {
        // Starting row (0,1,0,...) picks up p * (block first row) = (1, 0.7)
        // over (phi, Omega1), with denominator 0.05 - 0.017.
        let (_, _, _, comps) = setup();
        let b = find(&comps, "phi,1,+");
        assert!((b.state_coeffs[1] - 1.0).abs() < 1e-15);
        assert!((b.state_coeffs[4] - 0.7).abs() < 1e-15);
        assert!((b.denominator - 0.033).abs() < 1e-15);
        assert_eq!(b.command, Some(CommandVar::PhiD));
        assert!((b.command_coeff - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn vz_boundary_value() {
        let (_, _, _, comps) = setup();
        let b = find(&comps, "vz,0,+");
        let s = InnerState {
            v_z: -0.25,
            ..Default::default()
        };
        assert_eq!(eval_barrier(b, &s, &Command::default(), 1.0), 0.0);
    }

    #[test]
    fn negative_roll_component_value() {
        let (_, _, _, comps) = setup();
        let b = find(&comps, "phi,1,-");
        let s = InnerState {
            phi: 0.033,
            ..Default::default()
        };
        let v = eval_barrier(b, &s, &Command::default(), 2.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signed_pairs_negate_exactly() {
        // The +/- members of a pair share coefficients up to sign, and
        // negation commutes with every rounding step, so their normalized
        // values at mu = 0 are exact negatives bit for bit. With mu added
        // back the pair sums to 2*mu only up to the two independent final
        // roundings.
        let (_, _, _, comps) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let s = InnerState {
                v_z: rng.gen_range(-1.5..1.5),
                phi: rng.gen_range(-0.3..0.3),
                theta: rng.gen_range(-0.3..0.3),
                psi: rng.gen_range(-0.12..0.12),
                omega1: rng.gen_range(-0.2..0.2),
                omega2: rng.gen_range(-0.2..0.2),
                omega3: rng.gen_range(-0.2..0.2),
            };
            let cmd = Command {
                v_z_d: rng.gen_range(-1.0..1.0),
                phi_d: rng.gen_range(-0.15..0.15),
                theta_d: rng.gen_range(-0.15..0.15),
                psi_d: 0.0,
            };
            let mu = rng.gen_range(1.0..2.0);
            for plus in comps.iter().filter(|b| b.id.ends_with('+')) {
                let minus_id = format!("{}-", &plus.id[..plus.id.len() - 1]);
                let minus = find(&comps, &minus_id);
                let ap = eval_barrier(plus, &s, &cmd, 0.0);
                let am = eval_barrier(minus, &s, &cmd, 0.0);
                assert_eq!(ap, -am, "{}", plus.id);
                let sum = eval_barrier(plus, &s, &cmd, mu) + eval_barrier(minus, &s, &cmd, mu);
                let tol = 4.0 * f64::EPSILON * (ap.abs() + mu);
                assert!((sum - 2.0 * mu).abs() <= tol, "{}: {sum} vs {}", plus.id, 2.0 * mu);
            }
        }
    }

    #[test]
    fn mu_level_examples() {
        let (_, _, _, comps) = setup();
        let cmd = Command::default();
        let s = InnerState {
            v_z: 0.25,
            ..Default::default()
        };
        assert!((mu_level(&comps, &s, &cmd) - 1.0).abs() < 1e-12);
        let s2 = InnerState {
            v_z: 0.5,
            ..Default::default()
        };
        assert!((mu_level(&comps, &s2, &cmd) - 2.0).abs() < 1e-12);
        assert!(membership(&comps, &s, &cmd, 1.0));
        assert!(!membership(&comps, &s2, &cmd, 1.9));
        assert!(membership(&comps, &s2, &cmd, 2.0));
    }

    #[test]
    fn mu_level_floors_at_zero() {
        let (_, _, _, comps) = setup();
        assert_eq!(
            mu_level(&comps, &InnerState::default(), &Command::default()),
            0.0
        );
    }

    /// Telescoping along the linear closed loop: the unnormalized depth-1
    /// member equals the depth-0 member plus `p` times its linear-flow
    /// derivative, minus the margin.
    #[test]
    fn extension_telescopes_against_linear_flow() {
        let (bp, g, p, comps) = setup();
        let a = closed_loop_linear(&p, &g).full_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let err: [f64; STATE_DIM] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
            let s = InnerState::from_array(err);
            let cmd = Command::default();
            for fam in ["phi", "theta", "psi"] {
                for sign in ["+", "-"] {
                    let b0 = find(&comps, &format!("{fam},0,{sign}"));
                    let b1 = find(&comps, &format!("{fam},1,{sign}"));
                    // Unnormalized member: numerator + denominator.
                    let h0 = b0.numerator(&s, &cmd) + b0.denominator;
                    let h1 = b1.numerator(&s, &cmd) + b1.denominator;
                    // d/dt of the depth-0 numerator along x' = A x.
                    let mut flow = [0.0; STATE_DIM];
                    for (row, f) in a.iter().zip(flow.iter_mut()) {
                        *f = row.iter().zip(err.iter()).map(|(x, y)| x * y).sum();
                    }
                    let h0_dot: f64 =
                        b0.state_coeffs.iter().zip(flow.iter()).map(|(x, y)| x * y).sum();
                    let lhs = h1 + bp.delta1;
                    let rhs = h0 + bp.p1 * h0_dot;
                    assert!((lhs - rhs).abs() < 1e-12, "{fam}{sign}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn vz_recovery_rate_at_boundary() {
        // Descending boundary state, level attitude, worst vertical
        // disturbance: the component still recovers at a known rate.
        let (_, g, p, comps) = setup();
        let b = find(&comps, "vz,0,+");
        let s = InnerState {
            v_z: -0.25,
            ..Default::default()
        };
        let dist = Disturbance {
            delta_z: -p.delta_r_max,
            ..Default::default()
        };
        let hd = barrier_dot(b, &s, &Command::default(), &dist, &g, &p).unwrap();
        assert!((hd - 1.3426666666666667).abs() < 1e-9, "got {hd}");
    }

    #[test]
    fn margin_overflow_rejected() {
        let (_, g, p, _) = setup();
        let bad = BarrierParams {
            delta1: 0.05,
            ..Default::default()
        };
        assert!(matches!(
            octorotor_barriers(&bad, &g, &p),
            Err(BarrierError::MarginOverflow { .. })
        ));
    }

    #[test]
    fn nested_membership_is_monotone_in_mu() {
        let (_, _, _, comps) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = InnerState {
                v_z: rng.gen_range(-0.6..0.6),
                phi: rng.gen_range(-0.2..0.2),
                omega1: rng.gen_range(-0.2..0.2),
                ..Default::default()
            };
            let cmd = Command::default();
            let (m1, m2): (f64, f64) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let (lo, hi) = (m1.min(m2), m1.max(m2));
            if membership(&comps, &s, &cmd, lo) {
                assert!(membership(&comps, &s, &cmd, hi));
            }
        }
    }
}
