//! Verification toolkit for an octorotor inner-loop flight envelope.
//!
//! The envelope is described by a family of affine barrier components
//! whose joint superlevel set, scaled by a parameter `mu`, must be
//! forward invariant under the PD inner-loop controller and feasible for
//! the thrust allocator even with rotors stuck at fixed thrust. The
//! crate builds those claims as strict-inequality formulas over a box
//! ([`conditions`]) and decides them with a sound interval δ-decision
//! procedure ([`solver`]), with simulation-based falsification, SMT-LIB2
//! export and thrust-allocation analysis alongside.

pub mod alloc;
pub mod barrier;
pub mod conditions;
pub mod config;
pub mod control;
pub mod expr;
pub mod interval;
pub mod model;
pub mod report;
pub mod run;
pub mod sim;
pub mod smt2;
pub mod solver;

pub use alloc::{allocate, AllocationResult, Allocator, FailureScenario};
pub use barrier::{octorotor_barriers, AffineBarrier, BarrierParams};
pub use conditions::{condition_suite, QueryVars, ScenarioSpec, SearchSpace, SuiteOptions, VerifyTask};
pub use config::{ConfigFile, RunConfig};
pub use control::{block_k, lqr_gains, Command, Gains, LqrWeights};
pub use interval::Interval;
pub use model::{mixing_matrix, Disturbance, InnerState, OctorotorParams};
pub use report::{Report, TaskReport};
pub use run::{run_export, run_simulate, run_verify, RunError, SimulateOptions, VerifyOptions};
pub use sim::{falsify, Counterexample, DisturbanceGen, DisturbancePolicy, FalsifySettings, Simulator, Trajectory};
pub use solver::{solve, BranchRule, SolverConfig, Verdict};
