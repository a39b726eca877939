//! The grasp → flip → drop → rotate → re-grasp → place pipeline as a state
//! machine.
//!
//! [`step`] advances exactly one stage; [`run_trial`] drives a plan to the end
//! and applies the restart protocol: when a stage fails, the failure is
//! recorded and the trial resumes at the start of the following stage with
//! the world forced into that stage's nominal precondition.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Facing, FingerType, GripperState, HeldObject, HoldMode, ObjectSpec, Outcome, StageRecord,
    StateError, TrialResult,
};
use crate::palm::{PalmError, PalmLoad, RotationCommand, RotationOutcome};
use crate::world::{
    DropKind, FailureKind, FlipHold, GraspOutcome, RegraspOutcome, Resolver, Script, World,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceStage {
    Idle,
    Approach,
    Grasp,
    Lift,
    FlipUp,
    DropToPalm,
    RotatePalm,
    Regrasp,
    FlipDown,
    Place,
    Done,
}

impl SequenceStage {
    pub const ALL: [SequenceStage; 11] = [
        SequenceStage::Idle,
        SequenceStage::Approach,
        SequenceStage::Grasp,
        SequenceStage::Lift,
        SequenceStage::FlipUp,
        SequenceStage::DropToPalm,
        SequenceStage::RotatePalm,
        SequenceStage::Regrasp,
        SequenceStage::FlipDown,
        SequenceStage::Place,
        SequenceStage::Done,
    ];

    /// The stages that do work and produce an outcome, in order.
    pub const PIPELINE: [SequenceStage; 9] = [
        SequenceStage::Approach,
        SequenceStage::Grasp,
        SequenceStage::Lift,
        SequenceStage::FlipUp,
        SequenceStage::DropToPalm,
        SequenceStage::RotatePalm,
        SequenceStage::Regrasp,
        SequenceStage::FlipDown,
        SequenceStage::Place,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> SequenceStage {
        Self::ALL[(self.index() + 1).min(Self::ALL.len() - 1)]
    }

    pub fn name(self) -> &'static str {
        match self {
            SequenceStage::Idle => "idle",
            SequenceStage::Approach => "approach",
            SequenceStage::Grasp => "grasp",
            SequenceStage::Lift => "lift",
            SequenceStage::FlipUp => "flip_up",
            SequenceStage::DropToPalm => "drop_to_palm",
            SequenceStage::RotatePalm => "rotate_palm",
            SequenceStage::Regrasp => "regrasp",
            SequenceStage::FlipDown => "flip_down",
            SequenceStage::Place => "place",
            SequenceStage::Done => "done",
        }
    }

    pub fn from_name(name: &str) -> Option<SequenceStage> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Stages during which the gripper must face up.
    pub fn faces_up(self) -> bool {
        matches!(
            self,
            SequenceStage::DropToPalm | SequenceStage::RotatePalm | SequenceStage::Regrasp
        )
    }
}

impl fmt::Display for SequenceStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Position in the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Stage {
        stage: SequenceStage,
    },
    Fault {
        stage: SequenceStage,
        kind: Option<FailureKind>,
        /// Attempts made so far at this stage.
        attempts: u32,
    },
}

impl Phase {
    pub const START: Phase = Phase::Stage {
        stage: SequenceStage::Idle,
    };

    pub fn stage(self) -> SequenceStage {
        match self {
            Phase::Stage { stage } | Phase::Fault { stage, .. } => stage,
        }
    }

    pub fn is_fault(self) -> bool {
        matches!(self, Phase::Fault { .. })
    }
}

fn default_speed() -> f64 {
    600.0
}

fn default_restart() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequencePlan {
    pub object: ObjectSpec,
    pub finger_type: FingerType,
    /// Absolute palm angle to turn the object to, degrees.
    pub target_yaw: f64,
    /// Finger command used to hold the object; `None` picks the contact
    /// command from the feasibility check.
    #[serde(default)]
    pub grasp_u: Option<f64>,
    /// degrees/second
    #[serde(default = "default_speed")]
    pub rotation_speed: f64,
    #[serde(default = "default_restart")]
    pub restart_on_failure: bool,
    /// Extra attempts at a failed stage before moving on (0 = advance
    /// immediately).
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("target_yaw {0} outside servo range")]
    TargetOutOfRange(f64),
    #[error("rotation_speed {0} must be in (0, max_palm_speed]")]
    BadSpeed(f64),
    #[error("grasp_u {0} outside [0, 1]")]
    BadCommand(f64),
    #[error("invalid object: {0}")]
    Object(crate::model::Violations),
}

impl SequencePlan {
    pub fn new(object: ObjectSpec, finger_type: FingerType) -> Self {
        Self {
            object,
            finger_type,
            target_yaw: 180.0,
            grasp_u: None,
            rotation_speed: default_speed(),
            restart_on_failure: true,
            retries: 0,
        }
    }

    pub fn validate(&self, world: &World) -> Result<(), PlanError> {
        self.object.validate().map_err(PlanError::Object)?;
        if !world.config.servo_range.contains(self.target_yaw) {
            return Err(PlanError::TargetOutOfRange(self.target_yaw));
        }
        if !(self.rotation_speed > 0.0 && self.rotation_speed <= world.config.max_palm_speed) {
            return Err(PlanError::BadSpeed(self.rotation_speed));
        }
        if let Some(u) = self.grasp_u {
            if !(0.0..=1.0).contains(&u) {
                return Err(PlanError::BadCommand(u));
            }
        }
        Ok(())
    }

    /// The finger command that holds the object.
    pub fn hold_command(&self, world: &World) -> f64 {
        self.grasp_u.unwrap_or_else(|| {
            world
                .feasibility(&self.object, self.finger_type)
                .grasp_u
                .unwrap_or(1.0)
        })
    }
}

/// A state snapshot at `t` seconds after the start of the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub state: GripperState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub phase: Phase,
    pub state: GripperState,
    /// The outcome of the stage that ran, if one did.
    pub record: Option<StageRecord>,
    /// Intermediate states, ending with `state`.
    pub frames: Vec<Frame>,
    /// seconds
    pub duration: f64,
}

/// Stage durations in seconds (rotation time comes from its profile).
pub mod timing {
    pub const APPROACH: f64 = 0.5;
    pub const GRASP: f64 = 1.0;
    pub const LIFT: f64 = 0.5;
    pub const FLIP: f64 = 1.5;
    pub const DROP: f64 = 0.5;
    pub const REGRASP: f64 = 1.0;
    pub const PLACE: f64 = 0.5;
    /// Flip frames are emitted every this many degrees.
    pub const FLIP_FRAME_STEP: f64 = 10.0;
    /// Rotation frames are emitted every this many trajectory samples.
    pub const ROTATE_FRAME_STRIDE: usize = 10;
}

/// Runs `f` with a per-stage resolver: seeded resolvers get an independent
/// sub-stream per (stage, attempt); deterministic and scripted resolvers are
/// used directly so that scripts see every decision in order.
fn with_stage_resolver<R>(
    resolver: &mut Resolver,
    stage: SequenceStage,
    attempt: u32,
    f: impl FnOnce(&mut Resolver) -> R,
) -> R {
    match resolver {
        Resolver::Seeded(_) => {
            let mut child = resolver.fork(((stage.index() as u64) << 32) | attempt as u64);
            f(&mut child)
        }
        _ => f(resolver),
    }
}

fn state_err(e: StateError) -> String {
    e.to_string()
}

fn set_bends(world: &World, plan: &SequencePlan, state: &mut GripperState, u: f64) {
    let bends = world
        .finger_set(plan.finger_type)
        .bends(u)
        .expect("finger command in range");
    state
        .set_fingers(u, bends)
        .expect("calibrated bends in range");
}

fn in_fingers(plan: &SequencePlan, yaw: f64) -> HeldObject {
    HeldObject {
        object: plan.object.clone(),
        hold_mode: HoldMode::InFingers,
        object_yaw: yaw,
        draped: false,
    }
}

fn on_palm(plan: &SequencePlan, yaw: f64) -> HeldObject {
    HeldObject {
        hold_mode: HoldMode::OnPalm,
        ..in_fingers(plan, yaw)
    }
}

/// The idealised world state at the start of `stage`, used when a trial
/// restarts after a failure.
pub fn stage_precondition(
    world: &World,
    plan: &SequencePlan,
    stage: SequenceStage,
) -> GripperState {
    let mut s = GripperState::initial(world.config.servo_range);
    let start_yaw = s.palm_angle();
    let u = plan.hold_command(world);
    let hold = |s: &mut GripperState, h: HeldObject| s.hold(h).expect("precondition is consistent");
    match stage {
        SequenceStage::Idle
        | SequenceStage::Approach
        | SequenceStage::Grasp
        | SequenceStage::Done => {}
        SequenceStage::Lift | SequenceStage::FlipUp => {
            set_bends(world, plan, &mut s, u);
            hold(&mut s, in_fingers(plan, start_yaw));
        }
        SequenceStage::DropToPalm => {
            set_bends(world, plan, &mut s, u);
            s.set_flip_angle(180.0).expect("valid flip");
            hold(&mut s, in_fingers(plan, start_yaw));
        }
        SequenceStage::RotatePalm => {
            s.set_flip_angle(180.0).expect("valid flip");
            s.set_vacuum(true);
            hold(&mut s, on_palm(plan, start_yaw));
        }
        SequenceStage::Regrasp => {
            s.set_flip_angle(180.0).expect("valid flip");
            s.set_vacuum(true);
            s.set_palm(plan.target_yaw, 0.0).expect("plan validated");
            hold(&mut s, on_palm(plan, plan.target_yaw));
        }
        SequenceStage::FlipDown => {
            set_bends(world, plan, &mut s, u);
            s.set_flip_angle(180.0).expect("valid flip");
            s.set_palm(plan.target_yaw, 0.0).expect("plan validated");
            hold(&mut s, in_fingers(plan, plan.target_yaw));
        }
        SequenceStage::Place => {
            set_bends(world, plan, &mut s, u);
            s.set_palm(plan.target_yaw, 0.0).expect("plan validated");
            hold(&mut s, in_fingers(plan, plan.target_yaw));
        }
    }
    s
}

fn flip_frames(state: &GripperState, from: f64, to: f64, duration: f64) -> Vec<Frame> {
    let n = ((to - from).abs() / timing::FLIP_FRAME_STEP).round() as usize;
    (1..=n)
        .map(|k| {
            let frac = k as f64 / n as f64;
            let mut s = state.clone();
            let angle = if k == n {
                to
            } else {
                from + (to - from) * frac
            };
            s.set_flip_angle(angle).expect("in range");
            Frame {
                t: duration * frac,
                state: s,
            }
        })
        .collect()
}

/// Follows a rotation outcome, returning the frames and the final state.
fn rotation_frames(
    state: &GripperState,
    outcome: &RotationOutcome,
    start_yaw: Option<f64>,
) -> (Vec<Frame>, GripperState) {
    let stride = timing::ROTATE_FRAME_STRIDE;
    let traj = &outcome.trajectory;
    let mut frames = Vec::with_capacity(traj.len() / stride + 2);
    let frame_at = |sample: &crate::palm::TrajectorySample| {
        let mut s = state.clone();
        s.set_palm(sample.angle, sample.velocity)
            .expect("profile within range");
        if let Some(y0) = start_yaw {
            let yaw = y0 + (sample.angle - outcome.profile.start) + sample.object_yaw_offset;
            s.set_object_yaw(yaw).expect("finite");
        }
        s
    };
    for (i, sample) in traj.iter().enumerate().skip(1) {
        if i % stride == 0 || i + 1 == traj.len() {
            frames.push(Frame {
                t: sample.t,
                state: frame_at(sample),
            });
        }
    }
    let mut last = state.clone();
    last.set_palm(outcome.final_angle, 0.0)
        .expect("target within range");
    if let Some(y0) = start_yaw {
        last.set_object_yaw(y0 + outcome.object_yaw_change)
            .expect("finite");
    }
    let end = traj
        .last()
        .map_or(outcome.duration, |s| s.t.max(outcome.duration));
    frames.push(Frame {
        t: end,
        state: last.clone(),
    });
    (frames, last)
}

struct StageRun {
    state: GripperState,
    outcome: Outcome,
    detail: Option<FailureKind>,
    frames: Vec<Frame>,
    duration: f64,
}

impl StageRun {
    fn ok(state: GripperState, duration: f64) -> Self {
        Self::done(state, Outcome::Ok, None, duration)
    }

    fn done(
        state: GripperState,
        outcome: Outcome,
        detail: Option<FailureKind>,
        duration: f64,
    ) -> Self {
        Self {
            frames: vec![Frame {
                t: duration,
                state: state.clone(),
            }],
            state,
            outcome,
            detail,
            duration,
        }
    }

    fn from_rule(state: GripperState, kind: Option<FailureKind>, duration: f64) -> Self {
        match kind {
            Some(k) if k.is_fatal() => Self::done(state, Outcome::Failed, Some(k), duration),
            other => Self::done(state, Outcome::Ok, other, duration),
        }
    }
}

fn run_stage(
    world: &World,
    plan: &SequencePlan,
    state: &GripperState,
    stage: SequenceStage,
    r: &mut Resolver,
) -> StageRun {
    let obj = &plan.object;
    let ft = plan.finger_type;
    let mut s = state.clone();
    match stage {
        SequenceStage::Idle | SequenceStage::Done => StageRun::ok(s, 0.0),
        SequenceStage::Approach | SequenceStage::Lift => {
            let kind = world.plain_stage_with(obj, ft, stage, r);
            let t = if stage == SequenceStage::Approach {
                timing::APPROACH
            } else {
                timing::LIFT
            };
            if kind.is_some_and(|k| k.is_fatal()) && stage == SequenceStage::Lift {
                s.release();
                set_bends(world, plan, &mut s, 0.0);
            }
            StageRun::from_rule(s, kind, t)
        }
        SequenceStage::Grasp => match world.grasp_attempt_with(&s, obj, ft, r) {
            Err(_) => StageRun::done(s, Outcome::Failed, None, timing::GRASP),
            Ok(GraspOutcome::TwistedOut) => StageRun::done(
                s,
                Outcome::Failed,
                Some(FailureKind::TwistedOut),
                timing::GRASP,
            ),
            Ok(g) => {
                let u = plan.hold_command(world);
                set_bends(world, plan, &mut s, u);
                let yaw = s.palm_angle();
                s.hold(in_fingers(plan, yaw)).expect("facing down");
                let detail =
                    (g == GraspOutcome::PushedOffCenter).then_some(FailureKind::PushedOffCenter);
                let t = if detail.is_some() {
                    2.0 * timing::GRASP
                } else {
                    timing::GRASP
                };
                StageRun::done(s, Outcome::Ok, detail, t)
            }
        },
        SequenceStage::FlipUp | SequenceStage::FlipDown => {
            let (from, to) = if stage == SequenceStage::FlipUp {
                (0.0, 180.0)
            } else {
                (180.0, 0.0)
            };
            let hold = world.flip_hold_check_with(obj, ft, stage, r);
            if hold != FlipHold::Held {
                s.release();
            }
            let frames = flip_frames(&s, from, to, timing::FLIP);
            let s = frames.last().expect("flip has frames").state.clone();
            let (outcome, detail) = match hold {
                FlipHold::Held => (Outcome::Ok, None),
                FlipHold::SaggedDrop => (Outcome::Failed, Some(FailureKind::SaggedDrop)),
                FlipHold::LostGripDeform => (Outcome::Failed, Some(FailureKind::LostGripDeform)),
            };
            StageRun {
                state: s,
                outcome,
                detail,
                frames,
                duration: timing::FLIP,
            }
        }
        SequenceStage::DropToPalm => {
            let d = match world.drop_onto_palm_with(&s, obj, ft, r) {
                Ok(d) => d,
                Err(_) => return StageRun::done(s, Outcome::Failed, None, timing::DROP),
            };
            s.set_vacuum(true);
            set_bends(world, plan, &mut s, 0.0);
            let t = timing::DROP + world.config.valve_latency;
            match d.kind {
                DropKind::Centered | DropKind::OffCenter => {
                    s.hold(on_palm(plan, d.landing_yaw)).expect("facing up");
                    StageRun::from_rule(s, d.failure, t)
                }
                DropKind::Draped => {
                    s.hold(HeldObject {
                        draped: true,
                        ..in_fingers(plan, d.landing_yaw)
                    })
                    .expect("facing up");
                    StageRun::done(s, Outcome::Ok, d.failure, t)
                }
                DropKind::Tipped | DropKind::Bounced => {
                    s.release();
                    StageRun::done(s, Outcome::Failed, d.failure, t)
                }
            }
        }
        SequenceStage::RotatePalm => {
            s.set_vacuum(true);
            let held = s.held_object().cloned();
            let blocked = world.rotation_blocked_with(obj, ft, r);
            let cmd = RotationCommand::new(plan.target_yaw, plan.rotation_speed);
            let load = held.as_ref().map(|h| PalmLoad {
                object: &h.object,
                draped: h.draped || blocked.is_some(),
            });
            let start_yaw = held.as_ref().map(|h| h.object_yaw);
            let outcome = match world.rotor.rotate_to(&cmd, &s, load) {
                Ok(o) => o,
                Err(_) => return StageRun::done(s, Outcome::Failed, None, 0.0),
            };
            let (frames, s) = rotation_frames(&s, &outcome, start_yaw);
            let duration = frames.last().map_or(0.0, |f| f.t);
            let on_palm_ok = held
                .as_ref()
                .is_some_and(|h| h.hold_mode == HoldMode::OnPalm && !h.draped);
            let (o, detail) = if let Some(k) = blocked {
                (Outcome::Failed, Some(k))
            } else if held.as_ref().is_some_and(|h| h.draped) {
                (Outcome::Failed, Some(FailureKind::BlockedRotation))
            } else if !on_palm_ok || outcome.slipped {
                (Outcome::Failed, None)
            } else {
                (Outcome::Ok, None)
            };
            StageRun {
                state: s,
                outcome: o,
                detail,
                frames,
                duration,
            }
        }
        SequenceStage::Regrasp => {
            let result = world.regrasp_with(&s, obj, ft, r);
            s.set_vacuum(false);
            let (outcome, detail) = match result {
                Ok(RegraspOutcome::Ok) => {
                    let yaw = s.held_object().map_or(s.palm_angle(), |h| h.object_yaw);
                    let u = plan.hold_command(world);
                    set_bends(world, plan, &mut s, u);
                    s.hold(in_fingers(plan, yaw)).expect("facing up");
                    (Outcome::Ok, None)
                }
                Ok(RegraspOutcome::ConvergeRegraspFail) => {
                    (Outcome::Failed, Some(FailureKind::ConvergeRegraspFail))
                }
                Ok(RegraspOutcome::DisplacedOnRegrasp { yaw_error }) => {
                    let yaw = s.held_object().map_or(s.palm_angle(), |h| h.object_yaw) + yaw_error;
                    s.set_object_yaw(yaw).expect("finite");
                    (Outcome::Failed, Some(FailureKind::DisplacedOnRegrasp))
                }
                Err(_) => (Outcome::Failed, None),
            };
            StageRun::done(s, outcome, detail, timing::REGRASP)
        }
        SequenceStage::Place => {
            let kind = world.plain_stage_with(obj, ft, stage, r);
            s.release();
            set_bends(world, plan, &mut s, 0.0);
            s.set_vacuum(false);
            StageRun::from_rule(s, kind, timing::PLACE)
        }
    }
}

/// Whether `state` satisfies what `stage` needs to run.
pub fn stage_ready(stage: SequenceStage, state: &GripperState) -> bool {
    match stage {
        SequenceStage::Idle | SequenceStage::Approach | SequenceStage::Done => true,
        SequenceStage::Grasp => state.gripper_facing() == Facing::Down,
        SequenceStage::Lift | SequenceStage::FlipUp => {
            state.gripper_facing() == Facing::Down && state.hold_mode() == HoldMode::InFingers
        }
        SequenceStage::DropToPalm => {
            state.gripper_facing() == Facing::Up && state.hold_mode() == HoldMode::InFingers
        }
        SequenceStage::RotatePalm => state.gripper_facing() == Facing::Up,
        SequenceStage::Regrasp => state.hold_mode() == HoldMode::OnPalm,
        SequenceStage::FlipDown => state.gripper_facing() == Facing::Up,
        SequenceStage::Place => state.gripper_facing() == Facing::Down,
    }
}

/// Advances the machine by one transition.
pub fn step(
    world: &World,
    plan: &SequencePlan,
    state: &GripperState,
    phase: Phase,
    resolver: &mut Resolver,
) -> StepOutput {
    let unchanged = |phase| StepOutput {
        phase,
        state: state.clone(),
        record: None,
        frames: Vec::new(),
        duration: 0.0,
    };
    let (stage, attempt, state) = match phase {
        Phase::Stage {
            stage: SequenceStage::Done,
        } => return unchanged(phase),
        Phase::Stage {
            stage: SequenceStage::Idle,
        } => {
            return StepOutput {
                phase: Phase::Stage {
                    stage: SequenceStage::Approach,
                },
                ..unchanged(phase)
            }
        }
        Phase::Stage { stage } => (stage, 0, state.clone()),
        Phase::Fault {
            stage, attempts, ..
        } => {
            if attempts <= plan.retries {
                (stage, attempts, stage_precondition(world, plan, stage))
            } else if plan.restart_on_failure {
                let next = stage.next();
                let s = stage_precondition(world, plan, next);
                return StepOutput {
                    phase: Phase::Stage { stage: next },
                    frames: vec![Frame {
                        t: 0.0,
                        state: s.clone(),
                    }],
                    state: s,
                    record: None,
                    duration: 0.0,
                };
            } else {
                return unchanged(phase);
            }
        }
    };
    let run = with_stage_resolver(resolver, stage, attempt, |r| {
        run_stage(world, plan, &state, stage, r)
    });
    let record = StageRecord {
        stage,
        outcome: run.outcome,
        failure_detail: run.detail,
    };
    let phase = if run.outcome == Outcome::Ok {
        Phase::Stage {
            stage: stage.next(),
        }
    } else {
        Phase::Fault {
            stage,
            kind: run.detail,
            attempts: attempt + 1,
        }
    };
    StepOutput {
        phase,
        state: run.state,
        record: Some(record),
        frames: run.frames,
        duration: run.duration,
    }
}

/// Whether no further step changes anything.
pub fn is_terminal(plan: &SequencePlan, phase: Phase) -> bool {
    match phase {
        Phase::Stage { stage } => stage == SequenceStage::Done,
        Phase::Fault { attempts, .. } => attempts > plan.retries && !plan.restart_on_failure,
    }
}

/// One step's worth of trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: SequenceStage,
    pub phase: Phase,
    pub outcome: Option<Outcome>,
    pub failure_detail: Option<FailureKind>,
    pub state: GripperState,
    /// seconds since the start of the trial
    pub timestamp: f64,
}

/// A full trial execution: the result plus everything needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub result: TrialResult,
    pub trace: Vec<TraceRecord>,
    /// Every intermediate state, with trial-relative times and the stage that
    /// produced it.
    pub frames: Vec<(SequenceStage, Frame)>,
}

/// Upper bound on steps in one trial, far above any real run.
const STEP_LIMIT: usize = 1000;

pub fn run_trial_with(
    world: &World,
    plan: &SequencePlan,
    seed: u64,
    resolver: &mut Resolver,
) -> TrialRun {
    let mut state = GripperState::initial(world.config.servo_range);
    let mut phase = Phase::START;
    let mut records: Vec<StageRecord> = SequenceStage::PIPELINE
        .iter()
        .map(|&stage| StageRecord {
            stage,
            outcome: Outcome::Skipped,
            failure_detail: None,
        })
        .collect();
    let mut trace = Vec::new();
    let mut frames = Vec::new();
    let mut now = 0.0;
    for _ in 0..STEP_LIMIT {
        if is_terminal(plan, phase) {
            break;
        }
        let out = step(world, plan, &state, phase, resolver);
        for f in &out.frames {
            frames.push((
                out.record.as_ref().map_or(out.phase.stage(), |r| r.stage),
                Frame {
                    t: now + f.t,
                    state: f.state.clone(),
                },
            ));
        }
        now += out.duration;
        if let Some(rec) = &out.record {
            records[rec.stage.index() - 1] = rec.clone();
        }
        trace.push(TraceRecord {
            stage: out.record.as_ref().map_or(out.phase.stage(), |r| r.stage),
            phase: out.phase,
            outcome: out.record.as_ref().map(|r| r.outcome),
            failure_detail: out.record.as_ref().and_then(|r| r.failure_detail),
            state: out.state.clone(),
            timestamp: now,
        });
        state = out.state;
        phase = out.phase;
    }
    let overall_success = records.iter().all(|r| r.outcome == Outcome::Ok);
    TrialRun {
        result: TrialResult {
            object: plan.object.clone(),
            finger_type: plan.finger_type,
            stage_outcomes: records,
            overall_success,
            seed,
        },
        trace,
        frames,
    }
}

pub fn run_trial_traced(world: &World, plan: &SequencePlan, seed: u64) -> TrialRun {
    run_trial_with(world, plan, seed, &mut world.resolver(seed))
}

pub fn run_trial(world: &World, plan: &SequencePlan, seed: u64) -> TrialResult {
    run_trial_traced(world, plan, seed).result
}

/// Newline-delimited JSON, one line per step.
pub fn trace_to_ndjson(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InHandError {
    #[error("no object resting on the palm")]
    NoObjectOnPalm,
    #[error(transparent)]
    Palm(#[from] PalmError),
    #[error("state: {0}")]
    State(String),
}

/// Turns the object resting on the palm to an absolute yaw.
pub fn rotate_in_hand(
    world: &World,
    target_yaw: f64,
    speed: f64,
    state: &GripperState,
) -> Result<(GripperState, RotationOutcome), InHandError> {
    let held = match state.held_object() {
        Some(h) if h.hold_mode == HoldMode::OnPalm || h.draped => h.clone(),
        _ => return Err(InHandError::NoObjectOnPalm),
    };
    let palm_target = state.palm_angle() + (target_yaw - held.object_yaw);
    let cmd = RotationCommand::new(palm_target, speed);
    let outcome = world.rotor.rotate_to(
        &cmd,
        state,
        Some(PalmLoad {
            object: &held.object,
            draped: held.draped,
        }),
    )?;
    let mut next = state.clone();
    next.set_palm(outcome.final_angle, 0.0)
        .map_err(state_err)
        .map_err(InHandError::State)?;
    next.set_object_yaw(held.object_yaw + outcome.object_yaw_change)
        .map_err(state_err)
        .map_err(InHandError::State)?;
    Ok((next, outcome))
}

/// Violation found by the trace model check.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceViolation {
    pub choices: Vec<usize>,
    pub message: String,
}

/// Summary of an exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelCheckReport {
    pub traces: usize,
    pub violations: Vec<TraceViolation>,
}

fn check_trace(plan: &SequencePlan, run: &TrialRun) -> Result<(), String> {
    // stage order
    let mut last = SequenceStage::Idle;
    let mut prev_fault: Option<SequenceStage> = None;
    for rec in &run.trace {
        let stage = rec.phase.stage();
        let ok = stage == last
            || stage == last.next()
            || (prev_fault.is_some() && stage == prev_fault.unwrap().next());
        if !ok {
            return Err(format!("stage order: {last} -> {stage}"));
        }
        prev_fault = match rec.phase {
            Phase::Fault { stage, .. } => Some(stage),
            _ => None,
        };
        last = stage;
    }
    // vacuum and facing discipline
    for (stage, f) in &run.frames {
        let s = &f.state;
        if *stage == SequenceStage::RotatePalm && !s.vacuum_on() {
            return Err(format!("vacuum off during rotation at t={}", f.t));
        }
        if stage.faces_up() && s.gripper_facing() != Facing::Up {
            return Err(format!("facing down during {stage}"));
        }
        if s.palm_velocity() != 0.0
            && s.gripper_facing() == Facing::Down
            && s.held_object().is_some()
        {
            return Err(format!(
                "palm turning with object while facing down during {stage}"
            ));
        }
    }
    for w in run.frames.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.0 == b.0
            && a.0 == SequenceStage::FlipUp
            && b.1.state.flip_angle() < a.1.state.flip_angle()
        {
            return Err("flip up not monotone".into());
        }
        if a.0 == b.0
            && a.0 == SequenceStage::FlipDown
            && b.1.state.flip_angle() > a.1.state.flip_angle()
        {
            return Err("flip down not monotone".into());
        }
    }
    // post-DONE cleanliness
    if run.trace.last().map(|r| r.phase)
        == Some(Phase::Stage {
            stage: SequenceStage::Done,
        })
    {
        let s = &run.trace.last().unwrap().state;
        if s.finger_command() != 0.0 || s.vacuum_on() || s.held_object().is_some() {
            return Err("unclean state after done".into());
        }
    } else if plan.restart_on_failure {
        return Err("restart plan did not reach done".into());
    }
    let expected: Vec<SequenceStage> = SequenceStage::PIPELINE.to_vec();
    let got: Vec<SequenceStage> = run.result.stage_outcomes.iter().map(|r| r.stage).collect();
    if got != expected {
        return Err("stage outcomes out of pipeline order".into());
    }
    if run.result.overall_success
        != run
            .result
            .stage_outcomes
            .iter()
            .all(|r| r.outcome == Outcome::Ok)
    {
        return Err("overall_success inconsistent".into());
    }
    Ok(())
}

/// Enumerates every execution the rule table allows for `plan` (each
/// decision point branching over its outcomes with positive probability) and
/// checks each trace for stage order, vacuum discipline during rotation,
/// facing discipline, flip monotonicity and post-DONE cleanliness.
pub fn model_check(world: &World, plan: &SequencePlan) -> ModelCheckReport {
    let mut report = ModelCheckReport::default();
    let mut choices: Vec<usize> = Vec::new();
    loop {
        let mut resolver = Resolver::Scripted(Script::new(choices.clone()));
        let run = run_trial_with(world, plan, 0, &mut resolver);
        let Resolver::Scripted(script) = resolver else {
            unreachable!()
        };
        report.traces += 1;
        if let Err(message) = check_trace(plan, &run) {
            report.violations.push(TraceViolation {
                choices: choices.clone(),
                message,
            });
        }
        let arities = script.arities;
        let mut full: Vec<usize> = (0..arities.len())
            .map(|i| choices.get(i).copied().unwrap_or(0))
            .collect();
        // next choice vector in depth-first order
        let mut advanced = false;
        while let Some(c) = full.pop() {
            let i = full.len();
            if c + 1 < arities[i] {
                full.push(c + 1);
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
        choices = full;
    }
    report
}
