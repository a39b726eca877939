//! Control stack and simulator for a three-fingered soft gripper with a
//! rotating vacuum palm.
//!
//! Units throughout: degrees, millimetres, grams, seconds. Torques are in
//! N·mm and forces in N.
//!
//! - [`model`]: shared domain types and configuration
//! - [`finger`]: response curves, calibration, fingertip kinematics, grasp feasibility
//! - [`palm`]: palm rotation profiles, vacuum and slip model
//! - [`world`]: rule-driven object interaction
//! - [`sequencer`]: the manipulation pipeline state machine
//! - [`harness`]: experiment suite and reports
//! - [`protocol`] and [`controller`]: teleoperation wire format and the
//!   single-writer control loop behind it

use thiserror::Error;

pub mod controller;
pub mod finger;
pub mod harness;
pub mod model;
pub mod palm;
pub mod protocol;
pub mod rng;
pub mod sequencer;
pub mod world;

pub use finger::{Calibration, FeasibilityReason, FeasibilityReport, FingerSet, ResponseCurve};
pub use harness::{ExperimentReport, ReportFormat, SuiteConfig};
pub use model::{
    builtin_objects, Facing, FingerType, GripperConfig, GripperState, HeldObject, HoldMode,
    ObjectSpec, Outcome, ShapeClass, StageRecord, TrialResult,
};
pub use palm::{PalmRotor, RotationCommand, RotationOutcome, SlipModel};
pub use sequencer::{Phase, SequencePlan, SequenceStage};
pub use world::{FailureKind, FailureRule, Mode, Resolver, RuleTable, World};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum Error {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid: {0}")]
    Invalid(model::Violations),
    #[error(transparent)]
    Finger(#[from] finger::FingerError),
    #[error(transparent)]
    Rules(#[from] world::RuleError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
