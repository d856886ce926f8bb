//! Verification conditions over the barrier set, phrased as violation
//! searches: each query is satisfiable exactly when the claimed property
//! fails, so `Unsat` from the solver certifies the property.
//!
//! Three query shapes share one variable table (seven states, four
//! disturbances, four command scalars and the region scale `mu`):
//!
//! * support containment: some state coordinate is within `epsilon` of
//!   the search boundary while every barrier component is nonnegative;
//! * invariance violation: a target component sits on its zero level
//!   while its time derivative fails to be positive, inside the joint
//!   support;
//! * rotor bound violation: inside the joint support, some healthy
//!   rotor's allocated thrust leaves the actuator range.
//!
//! The derivative in the invariance query is fully symbolic: the PD
//! control law is substituted into the nonlinear dynamics. The thrust
//! feedforward `m g / (cos phi cos theta)` cancels exactly against the
//! `cos phi cos theta` factor of the vertical equation, and the builder
//! performs that cancellation algebraically; leaving the quotient in
//! place would be mathematically identical but inflates every interval
//! enclosure by the spread of `sec phi sec theta`, enough to mask the
//! recovery margin the query is meant to exhibit.

use crate::alloc::{masked_matrix, pseudo_inverse, AllocError, FailureScenario};
use crate::barrier::{adversarial_disturbance, AffineBarrier, BarrierParams, CommandVar};
use crate::control::Gains;
use crate::expr::{Expr, Formula, IntervalBox, VarId, VarSet};
use crate::interval::Interval;
use crate::model::{apply_mixing, mixing_matrix, OctorotorParams, STATE_DIM};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("barrier set is empty")]
    EmptyBarrierSet,
    #[error("search bound for {name} = {value} must be positive")]
    Bound { name: &'static str, value: f64 },
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// Fixed declaration order of the query variables. Branching tie-breaks,
/// checkpoint records and witness vectors all follow this order.
pub const VAR_NAMES: [&str; 16] = [
    "v_z", "phi", "theta", "psi", "Omega1", "Omega2", "Omega3", "delta_z", "delta_R1",
    "delta_R2", "delta_R3", "v_z_d", "phi_d", "theta_d", "psi_d", "mu",
];

/// The shared variable table of all verification queries.
#[derive(Debug, Clone)]
pub struct QueryVars {
    pub vars: VarSet,
    pub state: [VarId; STATE_DIM],
    pub dist: [VarId; 4],
    pub cmd: [VarId; 4],
    pub mu: VarId,
}

impl QueryVars {
    pub fn new() -> Self {
        let mut vars = VarSet::new();
        let ids: Vec<VarId> = VAR_NAMES.iter().map(|n| vars.declare(n)).collect();
        Self {
            vars,
            state: std::array::from_fn(|i| ids[i]),
            dist: std::array::from_fn(|i| ids[STATE_DIM + i]),
            cmd: std::array::from_fn(|i| ids[STATE_DIM + 4 + i]),
            mu: ids[15],
        }
    }

    fn cmd_id(&self, cv: CommandVar) -> VarId {
        self.cmd[cv.state_index()]
    }
}

impl Default for QueryVars {
    fn default() -> Self {
        Self::new()
    }
}

/// Symmetric search bounds on the seven state coordinates. Disturbance
/// and command bounds are not stored: they are taken from the vehicle
/// and barrier parameters when the box is built, so they cannot drift
/// out of sync with the model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub state_max: [f64; STATE_DIM],
}

impl Default for SearchSpace {
    fn default() -> Self {
        // Wide enough to contain the largest support with visible margin:
        // |v_z| < d_vz_cmd + mu_max d_vz = 1.5, |phi|,|theta| < 0.25,
        // |psi| < 0.1, |Omega| < 0.18 under the stock parameters.
        Self {
            state_max: [1.6, 0.3, 0.3, 0.12, 0.2, 0.2, 0.2],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ConditionError> {
        for (i, &value) in self.state_max.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConditionError::Bound {
                    name: VAR_NAMES[i],
                    value,
                });
            }
        }
        Ok(())
    }

    /// Box over all sixteen variables with `mu` in `(1 - eps, mu_hi + eps)`.
    pub fn domain(
        &self,
        p: &OctorotorParams,
        bp: &BarrierParams,
        mu_lo: f64,
        mu_hi: f64,
    ) -> IntervalBox {
        let sym = |b: f64| Interval::new(-b, b);
        let mut iv = Vec::with_capacity(16);
        for b in self.state_max {
            iv.push(sym(b));
        }
        iv.push(sym(p.delta_r_max));
        iv.push(sym(p.delta_r12_max));
        iv.push(sym(p.delta_r12_max));
        iv.push(sym(p.delta_r3_max));
        iv.push(sym(bp.d_vz_cmd));
        iv.push(sym(bp.d_phi_cmd));
        iv.push(sym(bp.d_theta_cmd));
        iv.push(sym(bp.d_psi_cmd));
        iv.push(Interval::new(mu_lo - bp.epsilon, mu_hi + bp.epsilon));
        IntervalBox(iv)
    }
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

fn v(id: VarId) -> Expr {
    Expr::var(id)
}

/// Value of one barrier component as an expression over the shared
/// variables: `(coeffs . s + command term) / denom + mu`.
pub fn barrier_value_expr(qv: &QueryVars, b: &AffineBarrier) -> Expr {
    let mut num: Option<Expr> = None;
    for (i, &coef) in b.state_coeffs.iter().enumerate() {
        if coef == 0.0 {
            continue;
        }
        let term = c(coef) * v(qv.state[i]);
        num = Some(match num {
            Some(acc) => acc + term,
            None => term,
        });
    }
    if let Some(cv) = b.command {
        if b.command_coeff != 0.0 {
            let term = c(b.command_coeff) * v(qv.cmd_id(cv));
            num = Some(match num {
                Some(acc) => acc + term,
                None => term,
            });
        }
    }
    num.unwrap_or_else(|| c(0.0)) / c(b.denominator) + v(qv.mu)
}

/// The seven state derivatives with the PD law substituted, as
/// expressions over states, commands and disturbances.
pub fn closed_loop_derivatives(
    qv: &QueryVars,
    g: &Gains,
    p: &OctorotorParams,
) -> [Expr; STATE_DIM] {
    let [vz, phi, theta, psi, o1, o2, o3] = qv.state.map(v);
    let [vzd, phid, thetad, psid] = qv.cmd.map(v);
    let [dz, dr1, dr2, dr3] = qv.dist.map(v);
    let lateral = phi.clone().sin() * o2.clone() + phi.clone().cos() * o3.clone();
    [
        // Thrust feedforward cancelled exactly: only the feedback term
        // scaled by the tilt factor and the force disturbance remain.
        c(-g.k_dz / p.mass) * (vz - vzd) * phi.clone().cos() * theta.clone().cos()
            + dz / c(p.mass),
        o1.clone() + theta.clone().tan() * lateral.clone(),
        phi.clone().cos() * o2.clone() - phi.clone().sin() * o3.clone(),
        lateral / theta.clone().cos(),
        (c(-g.k_p_phi) * (phi.clone() - phid) - c(g.k_d_phi) * o1.clone()
            + c(p.j2 - p.j3) * o2.clone() * o3.clone()
            + dr1)
            / c(p.j1),
        (c(-g.k_p_theta) * (theta.clone() - thetad) - c(g.k_d_theta) * o2.clone()
            + c(p.j3 - p.j1) * o1.clone() * o3.clone()
            + dr2)
            / c(p.j2),
        (c(-g.k_p_psi) * (psi - psid) - c(g.k_d_psi) * o3.clone()
            + c(p.j1 - p.j2) * o1 * o2
            + dr3)
            / c(p.j3),
    ]
}

/// Symbolic time derivative of one component: its constant gradient
/// dotted with the closed-loop derivatives.
pub fn barrier_dot_expr(
    qv: &QueryVars,
    b: &AffineBarrier,
    g: &Gains,
    p: &OctorotorParams,
) -> Expr {
    let derivs = closed_loop_derivatives(qv, g, p);
    let mut acc: Option<Expr> = None;
    for (coef, deriv) in b.state_coeffs.iter().zip(derivs.into_iter()) {
        if *coef == 0.0 {
            continue;
        }
        let term = c(coef / b.denominator) * deriv;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.unwrap_or_else(|| c(0.0))
}

/// The commanded wrench `(F, tau1, tau2, tau3)` as expressions.
pub fn wrench_exprs(qv: &QueryVars, g: &Gains, p: &OctorotorParams) -> [Expr; 4] {
    let [vz, phi, theta, psi, o1, o2, o3] = qv.state.map(v);
    let [vzd, phid, thetad, psid] = qv.cmd.map(v);
    [
        c(p.mass * p.gravity) / (phi.clone().cos() * theta.clone().cos())
            + c(g.k_dz) * (vz - vzd),
        c(-g.k_p_phi) * (phi - phid) - c(g.k_d_phi) * o1,
        c(-g.k_p_theta) * (theta - thetad) - c(g.k_d_theta) * o2,
        c(-g.k_p_psi) * (psi - psid) - c(g.k_d_psi) * o3,
    ]
}

/// Allocated thrust of each healthy rotor as an expression: the numeric
/// pseudo-inverse row applied to the symbolic wrench plus the constant
/// offset from the stuck rotors.
pub fn rotor_thrust_exprs(
    qv: &QueryVars,
    scenario: &FailureScenario,
    g: &Gains,
    p: &OctorotorParams,
) -> Result<Vec<(usize, Expr)>, AllocError> {
    let lambda = mixing_matrix(p);
    let w = scenario.indices();
    let masked = masked_matrix(&lambda, &w)?;
    let pinv = pseudo_inverse(&masked, &w)?;
    let u_bar = apply_mixing(&lambda, &scenario.f_bar()).as_array();
    let wrench = wrench_exprs(qv, g, p);
    let mut out = Vec::new();
    for (j, row) in pinv.iter().enumerate() {
        if scenario.is_stuck(j + 1) {
            continue;
        }
        let offset: f64 = -(0..4).map(|k| row[k] * u_bar[k]).sum::<f64>();
        let mut e = c(offset);
        for (k, coef) in row.iter().enumerate() {
            if *coef == 0.0 {
                continue;
            }
            e = e + c(*coef) * wrench[k].clone();
        }
        out.push((j + 1, e));
    }
    Ok(out)
}

/// Conjunction stating the point lies inside the joint support with
/// slack `epsilon`: every component strictly above `-epsilon`.
fn membership_conjuncts(qv: &QueryVars, comps: &[AffineBarrier], eps: f64) -> Vec<Formula> {
    comps
        .iter()
        .map(|b| Formula::gt_zero(barrier_value_expr(qv, b) + c(eps)))
        .collect()
}

/// Violation query: a state within `epsilon` of the search boundary that
/// still satisfies every barrier component. `Unsat` certifies that the
/// joint support stays strictly inside the search space.
pub fn support_containment(
    qv: &QueryVars,
    comps: &[AffineBarrier],
    space: &SearchSpace,
    bp: &BarrierParams,
) -> Formula {
    let eps = bp.epsilon;
    let mut boundary = Vec::with_capacity(2 * STATE_DIM);
    for (i, &bound) in space.state_max.iter().enumerate() {
        boundary.push(Formula::gt_zero(v(qv.state[i]) - c(bound - eps)));
        boundary.push(Formula::lt_zero(v(qv.state[i]) + c(bound - eps)));
    }
    let mut parts = vec![Formula::Or(boundary)];
    parts.extend(membership_conjuncts(qv, comps, eps));
    Formula::And(parts)
}

/// Violation query for one component's forward invariance: the component
/// sits on its zero level inside the joint support while its derivative
/// fails to clear `epsilon`. `Unsat` certifies the component recovers on
/// its boundary for every admissible disturbance and command.
pub fn invariance_violation(
    qv: &QueryVars,
    target: &AffineBarrier,
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    g: &Gains,
    p: &OctorotorParams,
) -> Formula {
    let eps = bp.epsilon;
    let mut parts = membership_conjuncts(qv, comps, eps);
    parts.push(Formula::lt_zero(barrier_value_expr(qv, target) - c(eps)));
    parts.push(Formula::lt_zero(barrier_dot_expr(qv, target, g, p) - c(eps)));
    if let Some(cut) = successor_cut(qv, target, comps, eps) {
        parts.push(cut);
    }
    Formula::And(parts)
}

/// Redundant affine consequence of two conjuncts already in the
/// invariance query: the target's near-zero value atom and its depth-one
/// extension's membership. Eliminating the shared numerator between them
/// bounds the extension direction (the tracked rate) by `mu` alone:
///
/// ```text
/// succ_num > -den1 (mu + eps)  and  t_num < den0 (eps - mu)
///   =>  succ_num - t_num > (den1 - den0) mu  - (den1 + den0) eps
/// ```
///
/// Interval contraction cannot see this bound through the original pair:
/// each conjunct is revised against the hull of the other's variables,
/// which leaks the full width of the command interval into the rate.
/// The cut states the eliminated form directly, so the rate's lower
/// bound tightens to its true value in one revision. Without it the
/// roll and pitch searches must branch the command and `mu` down to the
/// recovery margin, orders of magnitude more boxes.
fn successor_cut(
    qv: &QueryVars,
    target: &AffineBarrier,
    comps: &[AffineBarrier],
    eps: f64,
) -> Option<Formula> {
    let mut it = target.id.split(',');
    let (family, sign) = (it.next()?, it.nth(1)?);
    let succ = comps.iter().find(|b| {
        b.depth == target.depth + 1 && b.id == format!("{family},{},{sign}", b.depth)
    })?;
    let mut e = c(succ.denominator - target.denominator) * v(qv.mu)
        + c((succ.denominator + target.denominator) * eps);
    for (i, (&cs, &ct)) in succ
        .state_coeffs
        .iter()
        .zip(target.state_coeffs.iter())
        .enumerate()
    {
        if cs != ct {
            e = e + c(cs - ct) * v(qv.state[i]);
        }
    }
    if let (Some(cv), d) = (succ.command, succ.command_coeff - target.command_coeff) {
        if d != 0.0 {
            e = e + c(d) * v(qv.cmd_id(cv));
        }
    }
    Some(Formula::gt_zero(e))
}

/// Variables that can influence the invariance query's verdict: those of
/// the target's value and derivative atoms, grown through memberships
/// that share a variable until nothing new is reached. `mu` sits in
/// every conjunct and is excluded from the sharing relation; it is
/// always live.
///
/// A membership outside this set constrains a cluster of variables that
/// appears nowhere else, and the cluster's conjuncts are all satisfied
/// at the tracking equilibrium (numerator zero, value `mu >= 1 - eps`),
/// so they never prune the search. Pinning their variables to the
/// equilibrium is an equivalent query with fewer dimensions to branch
/// on, and any witness of the pinned query witnesses the original.
fn live_invariance_vars(
    qv: &QueryVars,
    target: &AffineBarrier,
    comps: &[AffineBarrier],
    g: &Gains,
    p: &OctorotorParams,
) -> Vec<bool> {
    let n = qv.vars.len();
    let support = |e: &Expr| {
        let mut s = vec![false; n];
        e.mark_vars(&mut s);
        s[qv.mu.0] = false;
        s
    };
    let mut live = support(&barrier_value_expr(qv, target));
    for (i, flag) in support(&barrier_dot_expr(qv, target, g, p)).iter().enumerate() {
        if *flag {
            live[i] = true;
        }
    }
    let members: Vec<Vec<bool>> = comps
        .iter()
        .map(|b| support(&barrier_value_expr(qv, b)))
        .collect();
    let mut grew = true;
    while grew {
        grew = false;
        for s in &members {
            if s.iter().zip(&live).any(|(a, b)| *a && *b)
                && s.iter().zip(&live).any(|(a, b)| *a && !*b)
            {
                for (i, flag) in s.iter().enumerate() {
                    if *flag && !live[i] {
                        live[i] = true;
                    }
                }
                grew = true;
            }
        }
    }
    live[qv.mu.0] = true;
    live
}

/// Violation query for actuator feasibility under a failure scenario:
/// inside the joint support, some healthy rotor's allocated thrust comes
/// within `epsilon` of leaving `[f_min, f_max]`.
pub fn rotor_bound_violation(
    qv: &QueryVars,
    scenario: &FailureScenario,
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    g: &Gains,
    p: &OctorotorParams,
) -> Result<Formula, AllocError> {
    let eps = bp.epsilon;
    let thrusts = rotor_thrust_exprs(qv, scenario, g, p)?;
    let mut violations = Vec::with_capacity(2 * thrusts.len());
    for (_, e) in &thrusts {
        violations.push(Formula::gt_zero(e.clone() - c(p.f_max) + c(eps)));
        violations.push(Formula::lt_zero(e.clone() - c(p.f_min) - c(eps)));
    }
    let mut parts = membership_conjuncts(qv, comps, eps);
    parts.push(Formula::Or(violations));
    Ok(Formula::And(parts))
}

/// One named query with its search box and an optional per-task
/// precision override.
#[derive(Debug, Clone)]
pub struct VerifyTask {
    pub name: String,
    pub formula: Formula,
    pub domain: IntervalBox,
    pub delta: Option<f64>,
}

/// A failure scenario scheduled for rotor-bound verification, optionally
/// at a reduced region scale or precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: FailureScenario,
    pub mu_max: Option<f64>,
    pub delta: Option<f64>,
}

impl ScenarioSpec {
    pub fn new(scenario: FailureScenario) -> Self {
        Self {
            scenario,
            mu_max: None,
            delta: None,
        }
    }
}

/// Suite-level options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    /// Cap on the `mu` range of the roll and pitch invariance tasks.
    /// Their full-range proofs take orders of magnitude longer than the
    /// rest of the suite, so by default they are checked on `[1, cap]`
    /// and the full range is left to an explicit long-running job.
    pub phi_theta_mu_cap: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            phi_theta_mu_cap: Some(1.2),
        }
    }
}

/// Subsystem label of a component, following the reporting convention:
/// the rate component of each axis belongs to that axis's group.
pub fn component_group(id: &str) -> &'static str {
    if id.starts_with("vz") {
        "vz"
    } else if id.starts_with("phi") || id.starts_with("Omega1") {
        "phi-Omega1"
    } else if id.starts_with("theta") || id.starts_with("Omega2") {
        "theta-Omega2"
    } else {
        "psi-Omega3"
    }
}

/// Builds the full suite: one support-containment task, one invariance
/// task per component and one rotor-bound task for the no-failure case
/// plus each configured scenario.
pub fn condition_suite(
    qv: &QueryVars,
    comps: &[AffineBarrier],
    space: &SearchSpace,
    bp: &BarrierParams,
    g: &Gains,
    p: &OctorotorParams,
    scenarios: &[ScenarioSpec],
    opts: &SuiteOptions,
) -> Result<Vec<VerifyTask>, ConditionError> {
    if comps.is_empty() {
        return Err(ConditionError::EmptyBarrierSet);
    }
    space.validate()?;
    let full = space.domain(p, bp, 1.0, bp.mu_max);
    let mut tasks = Vec::new();
    tasks.push(VerifyTask {
        name: "support".into(),
        formula: support_containment(qv, comps, space, bp),
        domain: full.clone(),
        delta: None,
    });
    for b in comps {
        let group = component_group(&b.id);
        let capped = matches!(group, "phi-Omega1" | "theta-Omega2");
        let (mut domain, suffix) = match (capped, opts.phi_theta_mu_cap) {
            (true, Some(cap)) if cap < bp.mu_max => (
                space.domain(p, bp, 1.0, cap),
                format!(";mu<={cap}"),
            ),
            _ => (full.clone(), String::new()),
        };
        // The violation query is monotone in each disturbance channel
        // (linear, single occurrence in the derivative), so the search
        // box collapses to the corner opposing this component's recovery.
        // Equivalent query, four fewer dimensions to branch on.
        let worst = adversarial_disturbance(b, p);
        for (i, v) in [worst.delta_z, worst.delta_r1, worst.delta_r2, worst.delta_r3]
            .into_iter()
            .enumerate()
        {
            domain.0[7 + i] = Interval::new(v, v);
        }
        // States and commands whose membership cluster never reaches the
        // target's atoms collapse to the tracking equilibrium.
        let live = live_invariance_vars(qv, b, comps, g, p);
        for id in qv.state.iter().chain(qv.cmd.iter()) {
            if !live[id.0] {
                domain.0[id.0] = Interval::new(0.0, 0.0);
            }
        }
        tasks.push(VerifyTask {
            name: format!("invariance/{group}/{}{suffix}", b.id),
            formula: invariance_violation(qv, b, comps, bp, g, p),
            domain,
            delta: None,
        });
    }
    let mut rotor_specs = vec![ScenarioSpec::new(FailureScenario::none())];
    rotor_specs.extend(scenarios.iter().cloned());
    for spec in rotor_specs {
        let mu_hi = spec.mu_max.unwrap_or(bp.mu_max).min(bp.mu_max);
        let mut name = format!("rotor-bounds/{}", spec.scenario.label());
        if spec.mu_max.is_some() {
            name.push_str(&format!(";mu_max={mu_hi}"));
        }
        tasks.push(VerifyTask {
            name,
            formula: rotor_bound_violation(qv, &spec.scenario, comps, bp, g, p)?,
            domain: space.domain(p, bp, 1.0, mu_hi),
            delta: spec.delta,
        });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::octorotor_barriers;
    use crate::expr::Certainty;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (
        QueryVars,
        Vec<AffineBarrier>,
        SearchSpace,
        BarrierParams,
        Gains,
        OctorotorParams,
    ) {
        let bp = BarrierParams::default();
        let p = OctorotorParams::default();
        let g = Gains::rounded_nominal();
        (
            QueryVars::new(),
            octorotor_barriers(&bp, &g, &p).unwrap(),
            SearchSpace::default(),
            bp,
            g,
            p,
        )
    }

    #[test]
    fn suite_counts() {
        let (qv, comps, space, bp, g, p) = setup();
        let tasks = condition_suite(
            &qv,
            &comps,
            &space,
            &bp,
            &g,
            &p,
            &[],
            &SuiteOptions::default(),
        )
        .unwrap();
        assert_eq!(tasks.len(), 22); // support + 20 invariance + no-failure rotors
        let specs: Vec<ScenarioSpec> = (1..=8)
            .map(|i| ScenarioSpec::new(FailureScenario::new([(i, 0.0)]).unwrap()))
            .collect();
        let tasks = condition_suite(
            &qv,
            &comps,
            &space,
            &bp,
            &g,
            &p,
            &specs,
            &SuiteOptions::default(),
        )
        .unwrap();
        assert_eq!(tasks.len(), 30);
    }

    #[test]
    fn empty_barrier_set_rejected() {
        let (qv, _, space, bp, g, p) = setup();
        let r = condition_suite(&qv, &[], &space, &bp, &g, &p, &[], &SuiteOptions::default());
        assert!(matches!(r, Err(ConditionError::EmptyBarrierSet)));
    }

    #[test]
    fn task_names_follow_grouping() {
        let (qv, comps, space, bp, g, p) = setup();
        let tasks = condition_suite(
            &qv,
            &comps,
            &space,
            &bp,
            &g,
            &p,
            &[ScenarioSpec::new(
                FailureScenario::new([(1, 0.0), (2, 0.0)]).unwrap(),
            )],
            &SuiteOptions::default(),
        )
        .unwrap();
        let names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
        assert!(names.contains(&"support"));
        assert!(names.contains(&"invariance/vz/vz,0,+"));
        assert!(names.contains(&"invariance/phi-Omega1/Omega1,0,-;mu<=1.2"));
        assert!(names.contains(&"invariance/psi-Omega3/psi,1,+"));
        assert!(names.contains(&"rotor-bounds/no-failures"));
        assert!(names.contains(&"rotor-bounds/W=1,2;stuck=0,0"));
    }

    #[test]
    fn shared_command_variables() {
        // Every phi-family conjunct references the same phi_d variable.
        let (qv, comps, space, bp, _, _) = setup();
        let f = support_containment(&qv, &comps, &space, &bp);
        let mut seen = vec![false; qv.vars.len()];
        f.mark_vars(&mut seen);
        // Barrier values depend on states, commands and mu; the support
        // query has no derivative terms, so disturbances never appear.
        for id in qv.state.iter().chain(qv.cmd.iter()) {
            assert!(seen[id.0], "missing {}", qv.vars.name(*id));
        }
        assert!(seen[qv.mu.0]);
        for id in &qv.dist {
            assert!(!seen[id.0], "unexpected {}", qv.vars.name(*id));
        }
        let Formula::And(parts) = &f else {
            panic!("expected conjunction")
        };
        let phi_d = qv.vars.id_of("phi_d").unwrap();
        let mut count = 0;
        for part in parts {
            let mut s = vec![false; qv.vars.len()];
            part.mark_vars(&mut s);
            if s[phi_d.0] {
                count += 1;
            }
        }
        assert_eq!(count, 4, "phi_d should appear in the four phi conjuncts");
    }

    #[test]
    fn symbolic_dot_matches_numeric() {
        use crate::barrier::barrier_dot;
        use crate::control::Command;
        use crate::model::{Disturbance, InnerState};
        let (qv, comps, _, _, g, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let vals: Vec<f64> = vec![
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.18..0.18),
                rng.gen_range(-0.18..0.18),
                rng.gen_range(-0.18..0.18),
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-0.004..0.004),
                rng.gen_range(-0.004..0.004),
                rng.gen_range(-0.007..0.007),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
                0.0,
                rng.gen_range(1.0..2.0),
            ];
            let s = InnerState::from_array(std::array::from_fn(|i| vals[i]));
            let dist = Disturbance {
                delta_z: vals[7],
                delta_r1: vals[8],
                delta_r2: vals[9],
                delta_r3: vals[10],
            };
            let cmd = Command {
                v_z_d: vals[11],
                phi_d: vals[12],
                theta_d: vals[13],
                psi_d: vals[14],
            };
            for b in &comps {
                let sym = barrier_dot_expr(&qv, b, &g, &p).eval_point(&vals).unwrap();
                let num = barrier_dot(b, &s, &cmd, &dist, &g, &p).unwrap();
                let scale = num.abs().max(1.0);
                assert!(
                    (sym - num).abs() <= 1e-9 * scale,
                    "{}: {sym} vs {num}",
                    b.id
                );
            }
        }
    }

    #[test]
    fn symbolic_thrusts_match_allocator() {
        use crate::alloc::allocate;
        use crate::control::{block_k, Command};
        use crate::model::InnerState;
        let (qv, _, _, _, g, p) = setup();
        let scenario = FailureScenario::new([(1, 0.0), (4, 1.0)]).unwrap();
        let exprs = rotor_thrust_exprs(&qv, &scenario, &g, &p).unwrap();
        assert_eq!(exprs.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let vals: Vec<f64> = (0..16)
                .map(|i| match i {
                    0 => rng.gen_range(-1.0..1.0),
                    1..=3 => rng.gen_range(-0.2..0.2),
                    4..=6 => rng.gen_range(-0.15..0.15),
                    11 => rng.gen_range(-0.5..0.5),
                    12 | 13 => rng.gen_range(-0.1..0.1),
                    _ => 0.0,
                })
                .collect();
            let s = InnerState::from_array(std::array::from_fn(|i| vals[i]));
            let cmd = Command {
                v_z_d: vals[11],
                phi_d: vals[12],
                theta_d: vals[13],
                psi_d: vals[14],
            };
            let u = block_k(&s, &cmd, &g, &p).unwrap();
            let r = allocate(&u, &scenario, &p).unwrap();
            for (j, e) in &exprs {
                let sym = e.eval_point(&vals).unwrap();
                let num = r.f_tilde.0[j - 1];
                assert!(
                    (sym - num).abs() <= 1e-9 * num.abs().max(1.0),
                    "rotor {j}: {sym} vs {num}"
                );
            }
        }
    }

    #[test]
    fn boundary_state_is_unknown_interior_is_false() {
        // Certainty of the support query distinguishes a box hugging the
        // search boundary from one strictly inside the support.
        let (qv, comps, space, bp, _, p) = setup();
        let f = support_containment(&qv, &comps, &space, &bp);
        let interior = {
            let mut bx = space.domain(&p, &bp, 1.0, bp.mu_max);
            for i in 0..STATE_DIM {
                bx.0[i] = Interval::new(-0.01, 0.01);
            }
            bx
        };
        assert_eq!(f.certainty(&interior), Certainty::CertainlyFalse);
        let boundary = space.domain(&p, &bp, 1.0, bp.mu_max);
        assert_eq!(f.certainty(&boundary), Certainty::Unknown);
    }

    #[test]
    fn epsilon_weakening_preserves_witnesses() {
        // A point satisfying the query built with a smaller epsilon also
        // satisfies the query built with the stock epsilon.
        let (qv, comps, _, bp, g, p) = setup();
        let loose = bp;
        let tight = BarrierParams {
            epsilon: 1e-9,
            ..bp
        };
        // Oversized disturbance makes violations easy to sample.
        let p_bad = OctorotorParams {
            delta_r_max: p.mass * p.gravity,
            ..p
        };
        let target = comps.iter().find(|b| b.id == "vz,0,+").unwrap();
        let f_tight = invariance_violation(&qv, target, &comps, &tight, &g, &p_bad);
        let f_loose = invariance_violation(&qv, target, &comps, &loose, &g, &p_bad);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hits = 0;
        for _ in 0..20000 {
            let mu: f64 = rng.gen_range(1.0..2.0);
            let vzd: f64 = rng.gen_range(-1.0..1.0);
            let mut vals = vec![0.0; 16];
            vals[0] = vzd - 0.25 * mu + rng.gen_range(-1e-9..1e-9);
            vals[7] = rng.gen_range(-11.772..-9.0);
            vals[11] = vzd;
            vals[15] = mu;
            if f_tight.holds_at(&vals).unwrap() {
                hits += 1;
                assert!(f_loose.holds_at(&vals).unwrap());
            }
        }
        assert!(hits > 10, "sampled only {hits} witnesses");
    }
}
