//! Single-writer control loop behind the teleoperation service.
//!
//! The controller owns the gripper state. Commands are validated on
//! submission (a rejected command never touches the state), queued, and
//! executed in arrival order as simulated time advances through [`tick`].
//! Long-running commands (rotations, flips, sequences) are computed up front
//! and played back frame by frame, so pausing and cancelling act on the next
//! tick.
//!
//! [`tick`]: Controller::tick

use std::collections::VecDeque;

use crate::finger::grasp_feasible;
use crate::model::{Facing, FingerType, GripperState, HeldObject, HoldMode};
use crate::palm::{PalmLoad, RotationCommand};
use crate::protocol::{Command, CommandResult, Event, RejectReason, Reply, TelemetryFrame};
use crate::sequencer::{run_trial_with, timing, SequenceStage};
use crate::world::World;

/// Default command queue capacity.
pub const QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
struct Keyframe {
    /// ms from the start of the command
    t_ms: f64,
    state: GripperState,
    stage: SequenceStage,
    event: Option<Event>,
}

#[derive(Debug, Clone, PartialEq)]
struct Active {
    id: u64,
    timeline: Vec<Keyframe>,
    next: usize,
    elapsed_ms: f64,
    result: CommandResult,
}

#[derive(Debug, Clone)]
pub struct Controller {
    world: World,
    finger_type: FingerType,
    state: GripperState,
    stage: SequenceStage,
    last_event: Option<Event>,
    queue: VecDeque<(u64, Command)>,
    capacity: usize,
    active: Option<Active>,
    paused: bool,
}

impl Controller {
    pub fn new(world: World) -> Self {
        let state = GripperState::initial(world.config.servo_range);
        Self {
            world,
            finger_type: FingerType::Printed,
            state,
            stage: SequenceStage::Idle,
            last_event: None,
            queue: VecDeque::new(),
            capacity: QUEUE_CAPACITY,
            active: None,
            paused: false,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &GripperState {
        &self.state
    }

    pub fn stage(&self) -> SequenceStage {
        self.stage
    }

    pub fn last_event(&self) -> Option<&Event> {
        self.last_event.as_ref()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn finger_type(&self) -> FingerType {
        self.finger_type
    }

    /// Commands accepted but not yet finished.
    pub fn pending(&self) -> usize {
        self.queue.len() + usize::from(self.active.is_some())
    }

    pub fn telemetry(&self, timestamp_ms: u64) -> TelemetryFrame {
        TelemetryFrame {
            timestamp_ms,
            state: self.state.clone(),
            stage: self.stage,
            last_event: self.last_event.clone(),
        }
    }

    /// Validates and enqueues a command, returning the replies it produced
    /// right away (`rejected`, or `accepted`, plus `completed` for commands
    /// that act immediately).
    pub fn submit(&mut self, id: u64, cmd: Command) -> Vec<Reply> {
        if let Err(diag) = cmd.validate(&self.world) {
            return vec![Reply::rejected(id, RejectReason::Invalid, diag)];
        }
        match cmd {
            Command::Pause => {
                self.paused = true;
                vec![
                    Reply::accepted(id),
                    Reply::completed(id, CommandResult::Applied),
                ]
            }
            Command::Resume => {
                self.paused = false;
                vec![
                    Reply::accepted(id),
                    Reply::completed(id, CommandResult::Applied),
                ]
            }
            Command::Release => {
                vec![
                    Reply::accepted(id),
                    Reply::completed(id, CommandResult::Applied),
                ]
            }
            Command::Cancel => match self.active.take() {
                None => vec![Reply::rejected(
                    id,
                    RejectReason::NothingInFlight,
                    vec!["no long-running command in flight".into()],
                )],
                Some(a) => vec![
                    Reply::accepted(id),
                    Reply::completed(a.id, CommandResult::Cancelled),
                    Reply::completed(id, CommandResult::Applied),
                ],
            },
            Command::Reset => {
                let mut out = vec![Reply::accepted(id)];
                if let Some(a) = self.active.take() {
                    out.push(Reply::completed(a.id, CommandResult::Cancelled));
                }
                out.extend(
                    self.queue
                        .drain(..)
                        .map(|(qid, _)| Reply::completed(qid, CommandResult::Cancelled)),
                );
                self.state = GripperState::initial(self.world.config.servo_range);
                self.stage = SequenceStage::Idle;
                self.last_event = None;
                self.paused = false;
                out.push(Reply::completed(id, CommandResult::Applied));
                out
            }
            cmd => {
                if self.queue.len() >= self.capacity {
                    return vec![Reply::rejected(
                        id,
                        RejectReason::Busy,
                        vec!["command queue full".into()],
                    )];
                }
                self.queue.push_back((id, cmd));
                vec![Reply::accepted(id)]
            }
        }
    }

    /// Advances simulated time by `dt_ms` and runs queued commands.
    pub fn tick(&mut self, dt_ms: f64) -> Vec<Reply> {
        let mut out = Vec::new();
        if self.paused {
            return out;
        }
        let mut budget = dt_ms;
        loop {
            if let Some(active) = self.active.as_mut() {
                active.elapsed_ms += budget;
                while active.next < active.timeline.len()
                    && active.timeline[active.next].t_ms <= active.elapsed_ms
                {
                    let k = &active.timeline[active.next];
                    self.state = k.state.clone();
                    self.stage = k.stage;
                    if let Some(e) = &k.event {
                        self.last_event = Some(e.clone());
                    }
                    active.next += 1;
                }
                if active.next < active.timeline.len() {
                    break;
                }
                let finished = self.active.take().expect("active");
                let end = finished.timeline.last().map_or(0.0, |k| k.t_ms);
                // carry unused time over to the next command
                budget = (finished.elapsed_ms - end).max(0.0);
                out.push(Reply::completed(finished.id, finished.result));
            }
            let Some((id, cmd)) = self.queue.pop_front() else {
                break;
            };
            match self.execute(cmd) {
                Ok(Some((timeline, result))) => {
                    self.active = Some(Active {
                        id,
                        timeline,
                        next: 0,
                        elapsed_ms: 0.0,
                        result,
                    });
                }
                Ok(None) => out.push(Reply::completed(id, CommandResult::Applied)),
                Err(message) => out.push(Reply::completed(id, CommandResult::Failed { message })),
            }
        }
        out
    }

    /// Runs every queued and in-flight command to completion.
    pub fn drain(&mut self) -> Vec<Reply> {
        let was_paused = self.paused;
        self.paused = false;
        let mut out = Vec::new();
        while self.pending() > 0 {
            out.extend(self.tick(1.0e6));
        }
        self.paused = was_paused;
        out
    }

    /// Executes one queued command: instant commands change the state and
    /// return `None`; long-running ones return a timeline to play back.
    #[allow(clippy::type_complexity)]
    fn execute(&mut self, cmd: Command) -> Result<Option<(Vec<Keyframe>, CommandResult)>, String> {
        match cmd {
            Command::SetFingers { u } => {
                self.set_fingers(u)?;
                Ok(None)
            }
            Command::Vacuum { on } => {
                self.state.set_vacuum(on);
                Ok(None)
            }
            Command::LoadObject { object } => {
                let (mode, yaw) = match self.state.gripper_facing() {
                    Facing::Up => (HoldMode::OnPalm, self.state.palm_angle()),
                    Facing::Down => (HoldMode::None, 0.0),
                };
                self.state
                    .hold(HeldObject {
                        object,
                        hold_mode: mode,
                        object_yaw: yaw,
                        draped: false,
                    })
                    .map_err(|e| e.to_string())?;
                Ok(None)
            }
            Command::RotatePalm {
                target_deg,
                speed_dps,
            } => {
                let held = self.state.held_object().cloned();
                let load = held
                    .as_ref()
                    .filter(|h| h.hold_mode == HoldMode::OnPalm || h.draped);
                let cmd = RotationCommand::new(target_deg, speed_dps);
                let outcome = self
                    .world
                    .rotor
                    .rotate_to(
                        &cmd,
                        &self.state,
                        load.map(|h| PalmLoad {
                            object: &h.object,
                            draped: h.draped,
                        }),
                    )
                    .map_err(|e| e.to_string())?;
                let mut timeline = Vec::with_capacity(outcome.trajectory.len() / 10 + 2);
                let start_yaw = load.map(|h| h.object_yaw);
                for (i, sample) in outcome.trajectory.iter().enumerate() {
                    let last = i + 1 == outcome.trajectory.len();
                    if !(last || i % timing::ROTATE_FRAME_STRIDE == 0) {
                        continue;
                    }
                    let mut s = self.state.clone();
                    let vel = if last { 0.0 } else { sample.velocity };
                    let angle = if last {
                        outcome.final_angle
                    } else {
                        sample.angle
                    };
                    s.set_palm(angle, vel).map_err(|e| e.to_string())?;
                    if let Some(y0) = start_yaw {
                        let yaw = if last {
                            y0 + outcome.object_yaw_change
                        } else {
                            y0 + (sample.angle - outcome.profile.start) + sample.object_yaw_offset
                        };
                        s.set_object_yaw(yaw).map_err(|e| e.to_string())?;
                    }
                    let event = (last && outcome.slipped).then_some(Event::Slip {
                        slip_angle_error: outcome.slip_angle_error,
                    });
                    timeline.push(Keyframe {
                        t_ms: sample.t * 1000.0,
                        state: s,
                        stage: self.stage,
                        event,
                    });
                }
                Ok(Some((
                    timeline,
                    CommandResult::Rotation {
                        final_angle: outcome.final_angle,
                        duration: outcome.duration,
                        slipped: outcome.slipped,
                        slip_angle_error: outcome.slip_angle_error,
                    },
                )))
            }
            Command::Flip { to } => {
                if self.state.gripper_facing() == to {
                    return Ok(None);
                }
                if to == Facing::Down && self.state.hold_mode() == HoldMode::OnPalm {
                    return Err("object resting on the palm would fall; grasp it first".into());
                }
                let (from, target) = match to {
                    Facing::Up => (self.state.flip_angle(), 180.0),
                    Facing::Down => (self.state.flip_angle(), 0.0),
                };
                let n = ((target - from).abs() / timing::FLIP_FRAME_STEP)
                    .ceil()
                    .max(1.0) as usize;
                let duration = timing::FLIP * (target - from).abs() / 180.0;
                let mut timeline = Vec::with_capacity(n);
                for k in 1..=n {
                    let frac = k as f64 / n as f64;
                    let angle = if k == n {
                        target
                    } else {
                        from + (target - from) * frac
                    };
                    let mut s = self.state.clone();
                    if let Some(h) = s.held_object().filter(|h| h.draped && to == Facing::Down) {
                        let h = HeldObject {
                            draped: false,
                            ..h.clone()
                        };
                        s.hold(h).map_err(|e| e.to_string())?;
                    }
                    s.set_flip_angle(angle).map_err(|e| e.to_string())?;
                    timeline.push(Keyframe {
                        t_ms: duration * frac * 1000.0,
                        state: s,
                        stage: self.stage,
                        event: None,
                    });
                }
                Ok(Some((timeline, CommandResult::Applied)))
            }
            Command::RunSequence { plan, seed } => {
                self.finger_type = plan.finger_type;
                let mut resolver = self.world.resolver(seed);
                let run = run_trial_with(&self.world, &plan, seed, &mut resolver);
                let mut timeline = vec![Keyframe {
                    t_ms: 0.0,
                    state: GripperState::initial(self.world.config.servo_range),
                    stage: SequenceStage::Idle,
                    event: None,
                }];
                let mut frame_iter = run.frames.iter().peekable();
                for rec in &run.trace {
                    let end_ms = rec.timestamp * 1000.0;
                    while let Some((stage, f)) = frame_iter.peek() {
                        if f.t * 1000.0 > end_ms + 1e-9 {
                            break;
                        }
                        timeline.push(Keyframe {
                            t_ms: f.t * 1000.0,
                            state: f.state.clone(),
                            stage: *stage,
                            event: None,
                        });
                        frame_iter.next();
                    }
                    let event = rec.outcome.map(|outcome| Event::StageOutcome {
                        stage: rec.stage,
                        outcome,
                        failure_detail: rec.failure_detail,
                    });
                    timeline.push(Keyframe {
                        t_ms: end_ms,
                        state: rec.state.clone(),
                        stage: rec.phase.stage(),
                        event,
                    });
                }
                Ok(Some((timeline, CommandResult::Trial { trial: run.result })))
            }
            Command::Pause
            | Command::Resume
            | Command::Cancel
            | Command::Reset
            | Command::Release => Ok(None),
        }
    }

    fn set_fingers(&mut self, u: f64) -> Result<(), String> {
        let set = self.world.finger_set(self.finger_type);
        let bends = set.bends(u).map_err(|e| e.to_string())?;
        let mut next = self.state.clone();
        next.set_fingers(u, bends).map_err(|e| e.to_string())?;
        if let Some(h) = self.state.held_object().cloned() {
            let report = grasp_feasible(&h.object, set, &self.world.config);
            let closes_on = report.feasible && report.grasp_u.is_some_and(|g| u >= g);
            let hold = match (h.hold_mode, next.gripper_facing(), closes_on) {
                (HoldMode::None, Facing::Down, true) => Some(HoldMode::InFingers),
                (HoldMode::OnPalm, Facing::Up, true) => Some(HoldMode::InFingers),
                (HoldMode::InFingers, Facing::Up, false) => Some(HoldMode::OnPalm),
                (HoldMode::InFingers, Facing::Down, false) => Some(HoldMode::None),
                _ => None,
            };
            if let Some(mode) = hold {
                next.hold(HeldObject {
                    hold_mode: mode,
                    draped: false,
                    ..h
                })
                .map_err(|e| e.to_string())?;
            }
        }
        self.state = next;
        Ok(())
    }
}
