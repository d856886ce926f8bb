//! Octorotor inner-loop plant model.
//!
//! The inner loop tracks vertical velocity and the three attitude angles.
//! Its state is `(v_z, phi, theta, psi, Omega1, Omega2, Omega3)` with
//! body-frame angular rates `Omega` and the z axis pointing down, so
//! positive `v_z` is descent. Rotors sit at the vertices of a regular
//! octagon, first rotor at azimuth `-gamma` with `gamma = pi/8`, spin
//! directions paired `+ + - - + + - -`.

use thiserror::Error;

pub const STATE_DIM: usize = 7;
pub const ROTOR_COUNT: usize = 8;

pub type Matrix4x8 = [[f64; ROTOR_COUNT]; 4];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} violates {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("pitch angle {theta} outside (-pi/2, pi/2)")]
    PitchDomain { theta: f64 },
}

/// Physical constants of the vehicle together with the actuator and
/// disturbance limits used by the verification conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OctorotorParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Principal moments of inertia [kg m^2].
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    /// Rotor arm length [m].
    pub arm_length: f64,
    /// Yaw torque produced per newton of rotor thrust [m].
    pub yaw_coefficient: f64,
    /// Rotor azimuth half-step [rad].
    pub rotor_half_angle: f64,
    /// Per-rotor thrust limits [N].
    pub f_min: f64,
    pub f_max: f64,
    /// Bound on the vertical force disturbance [N].
    pub delta_r_max: f64,
    /// Bounds on the roll/pitch and yaw torque disturbances [N m].
    pub delta_r12_max: f64,
    pub delta_r3_max: f64,
}

impl Default for OctorotorParams {
    fn default() -> Self {
        let mass = 1.2;
        let gravity = 9.81;
        let j1 = 7.5e-3;
        let j3 = 1.3e-2;
        Self {
            mass,
            gravity,
            j1,
            j2: j1,
            j3,
            arm_length: 0.4,
            yaw_coefficient: 7.5e-2 / 3.13,
            rotor_half_angle: std::f64::consts::PI / 8.0,
            f_min: 0.0,
            f_max: mass * gravity / 2.0,
            delta_r_max: mass * gravity / 10.0,
            delta_r12_max: 0.6 * j1,
            delta_r3_max: 0.6 * j3,
        }
    }
}

impl OctorotorParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive: [(&'static str, f64); 7] = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("j1", self.j1),
            ("j2", self.j2),
            ("j3", self.j3),
            ("arm_length", self.arm_length),
            ("yaw_coefficient", self.yaw_coefficient),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::Parameter {
                    name,
                    value,
                    constraint: "> 0",
                });
            }
        }
        if !(self.f_min < self.f_max) {
            return Err(ModelError::Parameter {
                name: "f_min",
                value: self.f_min,
                constraint: "< f_max",
            });
        }
        let nonneg: [(&'static str, f64); 3] = [
            ("delta_r_max", self.delta_r_max),
            ("delta_r12_max", self.delta_r12_max),
            ("delta_r3_max", self.delta_r3_max),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ModelError::Parameter {
                    name,
                    value,
                    constraint: ">= 0",
                });
            }
        }
        Ok(())
    }

    /// Total thrust balancing gravity in level flight [N].
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Inner-loop state in the fixed component order used everywhere:
/// index 0 `v_z`, 1 `phi`, 2 `theta`, 3 `psi`, 4..6 `Omega1..Omega3`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InnerState {
    pub v_z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
}

impl InnerState {
    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [
            self.v_z,
            self.phi,
            self.theta,
            self.psi,
            self.omega1,
            self.omega2,
            self.omega3,
        ]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            v_z: a[0],
            phi: a[1],
            theta: a[2],
            psi: a[3],
            omega1: a[4],
            omega2: a[5],
            omega3: a[6],
        }
    }
}

/// Total thrust and body torques commanded to the airframe.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlInput {
    pub thrust: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl ControlInput {
    pub fn as_array(&self) -> [f64; 4] {
        [self.thrust, self.tau1, self.tau2, self.tau3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            thrust: a[0],
            tau1: a[1],
            tau2: a[2],
            tau3: a[3],
        }
    }
}

/// Individual rotor thrusts [N].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RotorThrusts(pub [f64; ROTOR_COUNT]);

/// Exogenous force/torque disturbances entering the dynamics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Disturbance {
    pub delta_z: f64,
    pub delta_r1: f64,
    pub delta_r2: f64,
    pub delta_r3: f64,
}

/// Maps the eight rotor thrusts to `(F, tau1, tau2, tau3)`.
pub fn mixing_matrix(p: &OctorotorParams) -> Matrix4x8 {
    let d = p.arm_length;
    let c = p.yaw_coefficient;
    let s = d * p.rotor_half_angle.sin();
    let l = d * p.rotor_half_angle.cos();
    [
        [1.0; 8],
        [s, -s, -l, -l, -s, s, l, l],
        [l, l, s, -s, -l, -l, -s, s],
        [c, c, -c, -c, c, c, -c, -c],
    ]
}

pub fn apply_mixing(lambda: &Matrix4x8, f: &RotorThrusts) -> ControlInput {
    let mut u = [0.0; 4];
    for (row, out) in lambda.iter().zip(u.iter_mut()) {
        *out = row.iter().zip(f.0.iter()).map(|(a, b)| a * b).sum();
    }
    ControlInput::from_array(u)
}

/// Time derivative of the inner-loop state under input `u` and
/// disturbance `dist`. Fails outside the pitch domain, where the yaw
/// kinematics are singular.
pub fn inner_dynamics(
    s: &InnerState,
    u: &ControlInput,
    dist: &Disturbance,
    p: &OctorotorParams,
) -> Result<[f64; STATE_DIM], ModelError> {
    if s.theta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(ModelError::PitchDomain { theta: s.theta });
    }
    let (sphi, cphi) = s.phi.sin_cos();
    let (stheta, ctheta) = s.theta.sin_cos();
    let lateral = sphi * s.omega2 + cphi * s.omega3;
    Ok([
        p.gravity - u.thrust / p.mass * cphi * ctheta + dist.delta_z / p.mass,
        s.omega1 + stheta / ctheta * lateral,
        cphi * s.omega2 - sphi * s.omega3,
        lateral / ctheta,
        (u.tau1 + s.omega2 * s.omega3 * (p.j2 - p.j3) + dist.delta_r1) / p.j1,
        (u.tau2 + s.omega1 * s.omega3 * (p.j3 - p.j1) + dist.delta_r2) / p.j2,
        (u.tau3 + s.omega1 * s.omega2 * (p.j1 - p.j2) + dist.delta_r3) / p.j3,
    ])
}

/// Jacobian of the closed loop linearized at the tracked equilibrium,
/// which decouples into a scalar `v_z` block and one `(angle, rate)`
/// block per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopLinear {
    /// d(v_z)/dt = vz_pole * (v_z - v_z_d).
    pub vz_pole: f64,
    /// Per-axis blocks over `(angle error, rate)`, order phi, theta, psi.
    pub blocks: [[[f64; 2]; 2]; 3],
}

impl ClosedLoopLinear {
    /// Assembles the full matrix in `InnerState` component order.
    pub fn full_matrix(&self) -> [[f64; STATE_DIM]; STATE_DIM] {
        let mut a = [[0.0; STATE_DIM]; STATE_DIM];
        a[0][0] = self.vz_pole;
        for (axis, block) in self.blocks.iter().enumerate() {
            let ang = 1 + axis;
            let rate = 4 + axis;
            a[ang][ang] = block[0][0];
            a[ang][rate] = block[0][1];
            a[rate][ang] = block[1][0];
            a[rate][rate] = block[1][1];
        }
        a
    }
}

pub fn closed_loop_linear(p: &OctorotorParams, g: &crate::control::Gains) -> ClosedLoopLinear {
    let block = |kp: f64, kd: f64, j: f64| [[0.0, 1.0], [-kp / j, -kd / j]];
    ClosedLoopLinear {
        vz_pole: -g.k_dz / p.mass,
        blocks: [
            block(g.k_p_phi, g.k_d_phi, p.j1),
            block(g.k_p_theta, g.k_d_theta, p.j2),
            block(g.k_p_psi, g.k_d_psi, p.j3),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Gains;

    #[test]
    fn mixing_matrix_first_column() {
        let lam = mixing_matrix(&OctorotorParams::default());
        let col: Vec<f64> = lam.iter().map(|r| r[0]).collect();
        let expect = [1.0, 0.15307337294603593, 0.36955181300451473, 0.023961661341853034];
        for (got, want) in col.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
        }
    }

    #[test]
    fn mixing_rows_sum_as_expected() {
        // Thrust row sums to 8, torque rows cancel under equal thrusts.
        let lam = mixing_matrix(&OctorotorParams::default());
        let f = RotorThrusts([1.0; 8]);
        let u = apply_mixing(&lam, &f);
        assert_eq!(u.thrust, 8.0);
        assert!(u.tau1.abs() < 1e-15 && u.tau2.abs() < 1e-15 && u.tau3.abs() < 1e-15);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = OctorotorParams::default();
        let u = ControlInput {
            thrust: p.hover_thrust(),
            ..Default::default()
        };
        let ds = inner_dynamics(&InnerState::default(), &u, &Disturbance::default(), &p).unwrap();
        for d in ds {
            assert!(d.abs() < 1e-12, "residual {d}");
        }
    }

    #[test]
    fn gyroscopic_coupling_sign() {
        // Omega2 = Omega3 = 1 with zero torque: dOmega1 = (j2 - j3)/j1.
        let p = OctorotorParams::default();
        let s = InnerState {
            omega2: 1.0,
            omega3: 1.0,
            ..Default::default()
        };
        let u = ControlInput {
            thrust: p.hover_thrust(),
            ..Default::default()
        };
        let ds = inner_dynamics(&s, &u, &Disturbance::default(), &p).unwrap();
        let want = (p.j2 - p.j3) / p.j1;
        assert!((ds[4] - want).abs() < 1e-12);
        assert!((want - (-0.73333333)).abs() < 1e-7);
    }

    #[test]
    fn pitch_domain_error() {
        let p = OctorotorParams::default();
        let s = InnerState {
            theta: std::f64::consts::FRAC_PI_2,
            ..Default::default()
        };
        let r = inner_dynamics(&s, &ControlInput::default(), &Disturbance::default(), &p);
        assert!(matches!(r, Err(ModelError::PitchDomain { .. })));
    }

    #[test]
    fn vertical_disturbance_enters_scaled_by_mass() {
        let p = OctorotorParams::default();
        let u = ControlInput {
            thrust: p.hover_thrust(),
            ..Default::default()
        };
        let dist = Disturbance {
            delta_z: -p.mass * p.gravity / 10.0,
            ..Default::default()
        };
        let ds = inner_dynamics(&InnerState::default(), &u, &dist, &p).unwrap();
        assert!((ds[0] - (-0.981)).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_blocks() {
        let p = OctorotorParams::default();
        let g = Gains::rounded_nominal();
        let a = closed_loop_linear(&p, &g);
        assert!((a.vz_pole - (-6.32 / 1.2)).abs() < 1e-12);
        let psi = a.blocks[2];
        assert!((psi[1][0] - (-0.5 / 1.3e-2)).abs() < 1e-9);
        assert!((psi[1][1] - (-0.371 / 1.3e-2)).abs() < 1e-9);
        assert_eq!(psi[0], [0.0, 1.0]);
    }

    #[test]
    fn default_params_validate() {
        assert_eq!(OctorotorParams::default().validate(), Ok(()));
        let bad = OctorotorParams {
            mass: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ModelError::Parameter { name: "mass", .. })
        ));
    }
}
