//! Closed-loop simulation and empirical falsification.
//!
//! The integrator advances the inner-loop state with a classical
//! fourth-order Runge-Kutta step. The feedback path (PD law, thrust
//! allocation, actuator clamping) is re-evaluated at every stage so the
//! scheme integrates the true closed-loop vector field at full order;
//! disturbances are exogenous signals and are held constant across each
//! step instead.
//!
//! Falsification complements the interval verification: it samples
//! initial states inside and on the boundary of the candidate invariant
//! region, drives the loop with bang-bang adversarial disturbances, and
//! watches the region level `mu` along each trajectory. Invariance
//! predicts that once the level is at least one it never increases, so
//! any increase beyond a small slack, or any escape from the outermost
//! region, is a concrete counterexample to the verified claims.

use std::io::{self, Write};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alloc::{AllocError, Allocator, FailureScenario};
use crate::barrier::{eval_barrier, mu_level, AffineBarrier, BarrierParams};
use crate::control::{block_k, Command, ControlError, Gains};
use crate::model::{
    inner_dynamics, ControlInput, Disturbance, InnerState, ModelError, OctorotorParams,
    RotorThrusts, STATE_DIM,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("trial count must be positive")]
    NoTrials,
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// How the exogenous disturbance evolves during a run. Every policy
/// stays inside the bounds declared by [`OctorotorParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbancePolicy {
    Zero,
    Constant(Disturbance),
    /// Redraws a uniform disturbance every `hold` seconds.
    PiecewiseRandom { hold: f64 },
    /// Bang-bang worst case: each channel sits at the bound whose sign
    /// opposes the recovery of the currently tightest barrier component,
    /// re-evaluated every step.
    Adversarial,
}

/// Stateful disturbance source; one per trajectory.
pub struct DisturbanceGen<'a> {
    policy: DisturbancePolicy,
    rng: ChaCha8Rng,
    bounds: [f64; 4],
    comps: &'a [AffineBarrier],
    current: Disturbance,
    next_redraw: f64,
}

impl<'a> DisturbanceGen<'a> {
    pub fn new(
        policy: DisturbancePolicy,
        seed: u64,
        p: &OctorotorParams,
        comps: &'a [AffineBarrier],
    ) -> Self {
        Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bounds: [
                p.delta_r_max,
                p.delta_r12_max,
                p.delta_r12_max,
                p.delta_r3_max,
            ],
            comps,
            current: Disturbance::default(),
            next_redraw: f64::NEG_INFINITY,
        }
    }

    /// Disturbance held over the step starting at `t` from state `s`.
    pub fn sample(&mut self, t: f64, s: &InnerState, cmd: &Command) -> Disturbance {
        match self.policy {
            DisturbancePolicy::Zero => Disturbance::default(),
            DisturbancePolicy::Constant(d) => d,
            DisturbancePolicy::PiecewiseRandom { hold } => {
                if t >= self.next_redraw {
                    let mut draw = [0.0; 4];
                    for (v, b) in draw.iter_mut().zip(self.bounds) {
                        *v = if b > 0.0 { self.rng.gen_range(-b..=b) } else { 0.0 };
                    }
                    self.current = Disturbance {
                        delta_z: draw[0],
                        delta_r1: draw[1],
                        delta_r2: draw[2],
                        delta_r3: draw[3],
                    };
                    self.next_redraw = t + hold;
                }
                self.current
            }
            DisturbancePolicy::Adversarial => self.adversarial(s, cmd),
        }
    }

    /// Pushes every channel against the tightest component. The barrier
    /// gradient picks up a disturbance through the matching rate entry,
    /// so the worst sign is the opposite of that coefficient.
    fn adversarial(&self, s: &InnerState, cmd: &Command) -> Disturbance {
        let tightest = self
            .comps
            .iter()
            .min_by(|a, b| {
                let va = eval_barrier(a, s, cmd, 0.0);
                let vb = eval_barrier(b, s, cmd, 0.0);
                va.total_cmp(&vb)
            })
            .expect("component set is never empty");
        let against = |coeff: f64, bound: f64| {
            if coeff > 0.0 {
                -bound
            } else {
                bound
            }
        };
        let c = &tightest.state_coeffs;
        Disturbance {
            delta_z: against(c[0], self.bounds[0]),
            delta_r1: against(c[4], self.bounds[1]),
            delta_r2: against(c[5], self.bounds[2]),
            delta_r3: against(c[6], self.bounds[3]),
        }
    }
}

/// One recorded instant of a run. The wrench and thrusts are the values
/// actually delivered at this state; the disturbance is the one held
/// over the step that starts here.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub t: f64,
    pub state: InnerState,
    pub wrench: ControlInput,
    pub thrusts: RotorThrusts,
    pub disturbance: Disturbance,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

pub const CSV_HEADER: &str = "t,v_z,phi,theta,psi,O1,O2,O3,F,tau1,tau2,tau3,\
f1,f2,f3,f4,f5,f6,f7,f8,dz,dR1,dR2,dR3,mu";

impl Trajectory {
    /// Region level along the run.
    pub fn mu_trace(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mu).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            let x = s.state;
            let u = s.wrench;
            let f = s.thrusts.0;
            let d = s.disturbance;
            write!(out, "{},{},{},{},{},{},{},{}", s.t, x.v_z, x.phi, x.theta, x.psi, x.omega1, x.omega2, x.omega3)?;
            write!(out, ",{},{},{},{}", u.thrust, u.tau1, u.tau2, u.tau3)?;
            for v in f {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{},{},{},{},{}", d.delta_z, d.delta_r1, d.delta_r2, d.delta_r3, s.mu)?;
        }
        Ok(())
    }
}

/// Fixed-scenario closed-loop integrator.
pub struct Simulator {
    params: OctorotorParams,
    gains: Gains,
    allocator: Allocator,
}

impl Simulator {
    pub fn new(
        params: &OctorotorParams,
        gains: &Gains,
        scenario: &FailureScenario,
    ) -> Result<Self, AllocError> {
        Ok(Self {
            params: *params,
            gains: *gains,
            allocator: Allocator::new(params, scenario)?,
        })
    }

    /// Wrench and thrusts the control stack delivers at `s`.
    pub fn control(&self, s: &InnerState, cmd: &Command) -> Result<crate::alloc::AllocationResult, ControlError> {
        let u_d = block_k(s, cmd, &self.gains, &self.params)?;
        Ok(self.allocator.allocate(&u_d))
    }

    fn derivative(
        &self,
        s: &InnerState,
        cmd: &Command,
        d: &Disturbance,
    ) -> Result<[f64; STATE_DIM], SimError> {
        let alloc = self.control(s, cmd)?;
        Ok(inner_dynamics(s, &alloc.u_achieved, d, &self.params)?)
    }

    /// One Runge-Kutta step with the feedback path evaluated at every
    /// stage and the disturbance held across the step.
    pub fn step(
        &self,
        s: &InnerState,
        cmd: &Command,
        d: &Disturbance,
        dt: f64,
    ) -> Result<InnerState, SimError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::TimeStep(dt));
        }
        let x = s.as_array();
        let k1 = self.derivative(s, cmd, d)?;
        let k2 = self.derivative(&offset(&x, &k1, dt / 2.0), cmd, d)?;
        let k3 = self.derivative(&offset(&x, &k2, dt / 2.0), cmd, d)?;
        let k4 = self.derivative(&offset(&x, &k3, dt), cmd, d)?;
        let mut next = x;
        for i in 0..STATE_DIM {
            next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(InnerState::from_array(next))
    }

    /// Runs the loop for `horizon` seconds, recording every step.
    pub fn simulate(
        &self,
        s0: &InnerState,
        cmd: &Command,
        gen: &mut DisturbanceGen,
        comps: &[AffineBarrier],
        horizon: f64,
        dt: f64,
    ) -> Result<Trajectory, SimError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SimError::Horizon(horizon));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::TimeStep(dt));
        }
        let steps = (horizon / dt).ceil() as usize;
        let mut samples = Vec::with_capacity(steps + 1);
        let mut s = *s0;
        let mut d = Disturbance::default();
        for i in 0..=steps {
            let t = i as f64 * dt;
            if !s.as_array().iter().all(|v| v.is_finite()) {
                return Err(SimError::NonFinite { t });
            }
            let alloc = self.control(&s, cmd)?;
            if i < steps {
                d = gen.sample(t, &s, cmd);
            }
            samples.push(Sample {
                t,
                state: s,
                wrench: alloc.u_achieved,
                thrusts: alloc.f_all,
                disturbance: d,
                mu: mu_level(comps, &s, cmd),
            });
            if i < steps {
                s = self.step(&s, cmd, &d, dt)?;
            }
        }
        Ok(Trajectory { dt, samples })
    }
}

fn offset(x: &[f64; STATE_DIM], k: &[f64; STATE_DIM], h: f64) -> InnerState {
    let mut y = *x;
    for i in 0..STATE_DIM {
        y[i] += h * k[i];
    }
    InnerState::from_array(y)
}

/// Integrates the open-loop dynamics under a pinned wrench and
/// disturbance. Useful as an oracle: with zero torques the gyroscopic
/// coupling does no work on the body rates.
pub fn integrate_fixed_input(
    s0: &InnerState,
    u: &ControlInput,
    d: &Disturbance,
    p: &OctorotorParams,
    dt: f64,
    steps: usize,
) -> Result<InnerState, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::TimeStep(dt));
    }
    let mut s = *s0;
    for _ in 0..steps {
        let x = s.as_array();
        let k1 = inner_dynamics(&s, u, d, p)?;
        let k2 = inner_dynamics(&offset(&x, &k1, dt / 2.0), u, d, p)?;
        let k3 = inner_dynamics(&offset(&x, &k2, dt / 2.0), u, d, p)?;
        let k4 = inner_dynamics(&offset(&x, &k3, dt), u, d, p)?;
        let mut next = x;
        for i in 0..STATE_DIM {
            next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s = InnerState::from_array(next);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FalsifySettings {
    pub trials: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Worker threads; the reported counterexample is the one with the
    /// smallest trial index regardless of this value.
    pub jobs: usize,
    /// Slack on the monotonicity monitor.
    pub tolerance: f64,
}

impl Default for FalsifySettings {
    fn default() -> Self {
        Self {
            trials: 10_000,
            horizon: 5.0,
            dt: 1e-3,
            seed: 0,
            jobs: 1,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The level exceeded `mu_max`: the state left the outermost region.
    EscapedRegion,
    /// The level rose past its running maximum while at least one.
    LevelIncrease,
}

/// A trajectory contradicting the invariance claims.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub trial: usize,
    pub command: Command,
    pub initial: InnerState,
    pub kind: ViolationKind,
    /// Time and level at the violating sample.
    pub t: f64,
    pub mu: f64,
    /// Ratcheted bound the level was required to stay under.
    pub bound: f64,
    pub trajectory: Trajectory,
}

struct TrialOutcome {
    kind: ViolationKind,
    step: usize,
    mu: f64,
    bound: f64,
}

/// Searches for trajectories violating invariance of the `mu`-scaled
/// regions. Half the trials start uniformly inside the outermost region,
/// half exactly on the boundary of a random level in `[1, mu_max]`; all
/// are driven by the adversarial disturbance policy. Returns the
/// lowest-indexed violation, or `None` when every trial stays invariant.
pub fn falsify(
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    scenario: &FailureScenario,
    settings: &FalsifySettings,
    gains: &Gains,
    params: &OctorotorParams,
) -> Result<Option<Counterexample>, SimError> {
    if settings.trials == 0 {
        return Err(SimError::NoTrials);
    }
    if !(settings.horizon > 0.0) || !settings.horizon.is_finite() {
        return Err(SimError::Horizon(settings.horizon));
    }
    let sim = Simulator::new(params, gains, scenario)?;
    let jobs = settings.jobs.max(1).min(settings.trials);
    let shared = Mutex::new((0usize, None::<usize>));
    let failure: Mutex<Option<SimError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let trial = {
                    let mut guard = shared.lock().unwrap();
                    let (next, best) = *guard;
                    if next >= settings.trials || best.is_some_and(|b| b < next) {
                        break;
                    }
                    guard.0 += 1;
                    next
                };
                match run_trial(&sim, comps, bp, settings, trial, false) {
                    Ok(Some(_)) => {
                        let mut guard = shared.lock().unwrap();
                        let best = &mut guard.1;
                        if best.is_none_or(|b| trial < b) {
                            *best = Some(trial);
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let best = shared.into_inner().unwrap().1;
    let Some(trial) = best else { return Ok(None) };
    // Replay the winning trial with recording on to capture the run.
    let recorded = run_trial(&sim, comps, bp, settings, trial, true)?;
    Ok(recorded)
}

/// Runs one seeded trial; `record` controls whether the trajectory is
/// kept (the search pass skips it, the replay pass needs it).
fn run_trial(
    sim: &Simulator,
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    settings: &FalsifySettings,
    trial: usize,
    record: bool,
) -> Result<Option<Counterexample>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(trial as u64 + 1);
    let cmd = draw_command(&mut rng, bp);
    let s0 = if trial % 2 == 0 {
        draw_interior(&mut rng, comps, bp, &cmd)
    } else {
        draw_boundary(&mut rng, comps, bp, &cmd)
    };
    let mut gen = DisturbanceGen::new(DisturbancePolicy::Adversarial, settings.seed, &sim.params, comps);
    let steps = (settings.horizon / settings.dt).ceil() as usize;
    let mut samples = Vec::new();
    let mut s = s0;
    let mut bound = f64::max(1.0, mu_level(comps, &s, &cmd));
    let mut outcome = None;
    for i in 0..=steps {
        let t = i as f64 * settings.dt;
        if !s.as_array().iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { t });
        }
        let mu = mu_level(comps, &s, &cmd);
        let d = gen.sample(t, &s, &cmd);
        if record {
            let alloc = sim.control(&s, &cmd)?;
            samples.push(Sample {
                t,
                state: s,
                wrench: alloc.u_achieved,
                thrusts: alloc.f_all,
                disturbance: d,
                mu,
            });
        }
        if mu > bp.mu_max + settings.tolerance {
            outcome = Some(TrialOutcome {
                kind: ViolationKind::EscapedRegion,
                step: i,
                mu,
                bound,
            });
            break;
        }
        if mu > bound + settings.tolerance {
            outcome = Some(TrialOutcome {
                kind: ViolationKind::LevelIncrease,
                step: i,
                mu,
                bound,
            });
            break;
        }
        bound = bound.max(mu);
        if i < steps {
            s = sim.step(&s, &cmd, &d, settings.dt)?;
        }
    }
    Ok(outcome.map(|o| Counterexample {
        trial,
        command: cmd,
        initial: s0,
        kind: o.kind,
        t: o.step as f64 * settings.dt,
        mu: o.mu,
        bound: o.bound,
        trajectory: Trajectory {
            dt: settings.dt,
            samples,
        },
    }))
}

fn draw_command(rng: &mut ChaCha8Rng, bp: &BarrierParams) -> Command {
    let draw = |rng: &mut ChaCha8Rng, b: f64| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
    Command {
        v_z_d: draw(rng, bp.d_vz_cmd),
        phi_d: draw(rng, bp.d_phi_cmd),
        theta_d: draw(rng, bp.d_theta_cmd),
        psi_d: draw(rng, bp.d_psi_cmd),
    }
}

/// Box certainly covering the outermost region: per-axis widths come
/// from the depth-zero components, all scaled by `mu_max`.
fn sampling_box(bp: &BarrierParams) -> [f64; STATE_DIM] {
    [
        bp.d_vz * bp.mu_max,
        bp.d_phi * bp.mu_max,
        bp.d_theta * bp.mu_max,
        bp.d_psi * bp.mu_max,
        bp.d_omega * bp.mu_max,
        bp.d_omega * bp.mu_max,
        bp.d_omega * bp.mu_max,
    ]
}

fn equilibrium(cmd: &Command) -> [f64; STATE_DIM] {
    [cmd.v_z_d, cmd.phi_d, cmd.theta_d, cmd.psi_d, 0.0, 0.0, 0.0]
}

fn draw_offset(rng: &mut ChaCha8Rng, half: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let mut off = [0.0; STATE_DIM];
    for (o, h) in off.iter_mut().zip(half) {
        *o = rng.gen_range(-h..=*h);
    }
    off
}

fn offset_state(center: &[f64; STATE_DIM], off: &[f64; STATE_DIM], scale: f64) -> InnerState {
    let mut x = *center;
    for i in 0..STATE_DIM {
        x[i] += scale * off[i];
    }
    InnerState::from_array(x)
}

/// Uniform rejection sample from the outermost region.
fn draw_interior(
    rng: &mut ChaCha8Rng,
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    cmd: &Command,
) -> InnerState {
    let half = sampling_box(bp);
    let center = equilibrium(cmd);
    for _ in 0..1000 {
        let off = draw_offset(rng, &half);
        let s = offset_state(&center, &off, 1.0);
        if mu_level(comps, &s, cmd) <= bp.mu_max {
            return s;
        }
    }
    // The region fills a large fraction of the box, so this is
    // effectively unreachable; fall back to a boundary draw.
    draw_boundary(rng, comps, bp, cmd)
}

/// Sample exactly on the boundary of a random level in `[1, mu_max]`.
/// The level is positively homogeneous in the offset from the tracked
/// equilibrium, so rescaling an interior draw lands on the boundary.
fn draw_boundary(
    rng: &mut ChaCha8Rng,
    comps: &[AffineBarrier],
    bp: &BarrierParams,
    cmd: &Command,
) -> InnerState {
    let half = sampling_box(bp);
    let center = equilibrium(cmd);
    let target = rng.gen_range(1.0..=bp.mu_max.max(1.0));
    for _ in 0..1000 {
        let off = draw_offset(rng, &half);
        let level = mu_level(comps, &offset_state(&center, &off, 1.0), cmd);
        if level > 1e-9 {
            return offset_state(&center, &off, target / level);
        }
    }
    InnerState::from_array(center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::octorotor_barriers;
    use crate::control::lqr_gains;
    use crate::control::LqrWeights;

    fn setup() -> (OctorotorParams, Gains, BarrierParams, Vec<AffineBarrier>) {
        let p = OctorotorParams::default();
        let g = lqr_gains(&LqrWeights::default(), &p).unwrap();
        let bp = BarrierParams::default();
        let comps = octorotor_barriers(&bp, &g, &p).unwrap();
        (p, g, bp, comps)
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (p, g, _, comps) = setup();
        let sim = Simulator::new(&p, &g, &FailureScenario::none()).unwrap();
        let s = InnerState::default();
        let cmd = Command::default();
        let next = sim.step(&s, &cmd, &Disturbance::default(), 1e-3).unwrap();
        for v in next.as_array() {
            assert!(v.abs() < 1e-14, "drifted to {v}");
        }
        let mut gen = DisturbanceGen::new(DisturbancePolicy::Zero, 0, &p, &comps);
        let traj = sim.simulate(&s, &cmd, &mut gen, &comps, 0.1, 1e-3).unwrap();
        assert!(traj.mu_trace().iter().all(|&m| m <= 1e-12));
    }

    #[test]
    fn vz_step_matches_scalar_linear_oracle() {
        // Closed loop on the v_z channel alone is linear: the per-step
        // factor is exp(-K_dz*dt/m) up to the O(dt^5) stage error.
        let (p, _, _, _) = setup();
        let g = Gains::rounded_nominal();
        let sim = Simulator::new(&p, &g, &FailureScenario::none()).unwrap();
        let dt = 1e-3;
        let s = InnerState {
            v_z: 0.2,
            ..Default::default()
        };
        let next = sim
            .step(&s, &Command::default(), &Disturbance::default(), dt)
            .unwrap();
        let factor = (-g.k_dz * dt / p.mass).exp();
        assert!((g.k_dz * dt / p.mass - 5.2667e-3).abs() < 1e-7);
        assert!((next.v_z - 0.2 * factor).abs() < 1e-12, "got {}", next.v_z);
        for v in &next.as_array()[1..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn rk4_is_fourth_order_on_vz() {
        // Global error against the exact exponential at t = 1 s falls
        // by 16x per halving, within a generous factor.
        let (p, g, _, _) = setup();
        let sim = Simulator::new(&p, &g, &FailureScenario::none()).unwrap();
        let cmd = Command::default();
        let d = Disturbance::default();
        let v0 = 1.5;
        let exact = v0 * (-g.k_dz / p.mass).exp();
        let run = |dt: f64| {
            let mut s = InnerState {
                v_z: v0,
                ..Default::default()
            };
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                s = sim.step(&s, &cmd, &d, dt).unwrap();
            }
            (s.v_z - exact).abs()
        };
        let errs = [run(1e-2), run(5e-3), run(2.5e-3)];
        assert!(errs[0] > 0.0 && errs[2] > 0.0, "errors vanished: {errs:?}");
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((4.0..64.0).contains(&ratio), "ratio {ratio} in {errs:?}");
        }
    }

    #[test]
    fn gyroscopic_terms_do_no_work() {
        let (p, _, _, _) = setup();
        let u = ControlInput {
            thrust: p.hover_thrust(),
            ..Default::default()
        };
        let s0 = InnerState {
            omega1: 0.15,
            omega2: -0.1,
            omega3: 0.2,
            ..Default::default()
        };
        let energy = |s: &InnerState| {
            p.j1 * s.omega1 * s.omega1 + p.j2 * s.omega2 * s.omega2 + p.j3 * s.omega3 * s.omega3
        };
        let s1 =
            integrate_fixed_input(&s0, &u, &Disturbance::default(), &p, 1e-3, 1000).unwrap();
        assert!((energy(&s1) - energy(&s0)).abs() < 1e-8);
    }

    #[test]
    fn stuck_pair_saturates_under_aggressive_command() {
        let (p, g, _, _) = setup();
        let scenario = FailureScenario::new([(1, 0.0), (2, 0.0)]).unwrap();
        let sim = Simulator::new(&p, &g, &scenario).unwrap();
        let cmd = Command {
            v_z_d: -4.0,
            ..Default::default()
        };
        let mut s = InnerState::default();
        let mut saturated = false;
        for _ in 0..200 {
            let alloc = sim.control(&s, &cmd).unwrap();
            if !alloc.exact {
                saturated = true;
                break;
            }
            s = sim.step(&s, &cmd, &Disturbance::default(), 1e-3).unwrap();
        }
        assert!(saturated, "allocation stayed exact");
    }

    #[test]
    fn mu_trace_decays_without_disturbance() {
        let (p, g, _, comps) = setup();
        let sim = Simulator::new(&p, &g, &FailureScenario::none()).unwrap();
        let s0 = InnerState {
            v_z: 0.5,
            ..Default::default()
        };
        let cmd = Command::default();
        let mut gen = DisturbanceGen::new(DisturbancePolicy::Zero, 0, &p, &comps);
        let traj = sim.simulate(&s0, &cmd, &mut gen, &comps, 1.0, 1e-3).unwrap();
        let trace = traj.mu_trace();
        assert!((trace[0] - 2.0).abs() < 1e-12);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "level rose: {pair:?}");
        }
        assert!(*trace.last().unwrap() < 1.0, "no contraction: {}", trace.last().unwrap());
    }

    #[test]
    fn healthy_loop_survives_falsification() {
        let (p, g, bp, comps) = setup();
        let settings = FalsifySettings {
            trials: 60,
            horizon: 1.0,
            seed: 42,
            ..Default::default()
        };
        let cex = falsify(&comps, &bp, &FailureScenario::none(), &settings, &g, &p).unwrap();
        assert!(cex.is_none(), "unexpected counterexample: {cex:?}");
    }

    #[test]
    fn inflated_disturbance_is_falsified() {
        let (mut p, g, bp, comps) = setup();
        // Disturbance authority beyond what the barriers were sized for
        // must produce a concrete escape.
        p.delta_r_max = p.mass * p.gravity;
        let settings = FalsifySettings {
            trials: 60,
            horizon: 1.0,
            seed: 42,
            ..Default::default()
        };
        let cex = falsify(&comps, &bp, &FailureScenario::none(), &settings, &g, &p)
            .unwrap()
            .expect("escape not found");
        assert!(!cex.trajectory.samples.is_empty());
        assert!(cex.mu > 1.0);
        let mut csv = Vec::new();
        cex.trajectory.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,v_z,phi"));
        assert_eq!(text.lines().count(), cex.trajectory.samples.len() + 1);
    }

    #[test]
    fn falsification_result_is_worker_independent() {
        let (mut p, g, bp, comps) = setup();
        p.delta_r_max = p.mass * p.gravity;
        let base = FalsifySettings {
            trials: 40,
            horizon: 0.5,
            seed: 7,
            ..Default::default()
        };
        let pick = |jobs: usize| {
            let settings = FalsifySettings { jobs, ..base };
            falsify(&comps, &bp, &FailureScenario::none(), &settings, &g, &p)
                .unwrap()
                .map(|c| (c.trial, c.t, c.mu))
        };
        let lone = pick(1);
        assert!(lone.is_some());
        assert_eq!(lone, pick(4));
    }

    #[test]
    fn boundary_draws_land_on_their_level() {
        let (_, _, bp, comps) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let cmd = draw_command(&mut rng, &bp);
            let s = draw_boundary(&mut rng, &comps, &bp, &cmd);
            let level = mu_level(&comps, &s, &cmd);
            assert!(
                (1.0 - 1e-9..=bp.mu_max + 1e-9).contains(&level),
                "level {level}"
            );
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let (p, g, bp, comps) = setup();
        let bad = FalsifySettings {
            trials: 0,
            ..Default::default()
        };
        let err = falsify(&comps, &bp, &FailureScenario::none(), &bad, &g, &p).unwrap_err();
        assert!(matches!(err, SimError::NoTrials));
        let sim = Simulator::new(&p, &g, &FailureScenario::none()).unwrap();
        let err = sim
            .step(&InnerState::default(), &Command::default(), &Disturbance::default(), 0.0)
            .unwrap_err();
        assert!(matches!(err, SimError::TimeStep(_)));
    }
}
