//! Teleoperation wire format.
//!
//! Every WebSocket text frame carries one JSON message. Clients send
//!
//! ```text
//! {"id": 7, "command": {"rotate_palm": {"target_deg": 90.0, "speed_dps": 600.0}}}
//! {"id": 8, "command": "pause"}
//! ```
//!
//! and the server answers with messages tagged by `type`: `hello`,
//! `telemetry`, `reply`, `replay` and `role`. Unknown fields are rejected on
//! commands and ignored on server messages.

use serde::{Deserialize, Serialize};

use crate::model::{Facing, GripperConfig, GripperState, ObjectSpec, Outcome, TrialResult};
use crate::sequencer::{SequencePlan, SequenceStage};
use crate::world::{FailureKind, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetFingers {
        u: f64,
    },
    RotatePalm {
        target_deg: f64,
        speed_dps: f64,
    },
    Vacuum {
        on: bool,
    },
    Flip {
        to: Facing,
    },
    LoadObject {
        object: ObjectSpec,
    },
    RunSequence {
        plan: SequencePlan,
        seed: u64,
    },
    Pause,
    Resume,
    Cancel,
    Reset,
    /// Gives up the operator role.
    Release,
}

impl Command {
    pub const TAGS: [&'static str; 11] = [
        "set_fingers",
        "rotate_palm",
        "vacuum",
        "flip",
        "load_object",
        "run_sequence",
        "pause",
        "resume",
        "cancel",
        "reset",
        "release",
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Command::SetFingers { .. } => "set_fingers",
            Command::RotatePalm { .. } => "rotate_palm",
            Command::Vacuum { .. } => "vacuum",
            Command::Flip { .. } => "flip",
            Command::LoadObject { .. } => "load_object",
            Command::RunSequence { .. } => "run_sequence",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Cancel => "cancel",
            Command::Reset => "reset",
            Command::Release => "release",
        }
    }

    /// Commands applied the moment they arrive instead of being queued.
    pub fn is_immediate(&self) -> bool {
        matches!(
            self,
            Command::Pause | Command::Resume | Command::Cancel | Command::Reset | Command::Release
        )
    }

    /// Checks payload fields against the configured limits. Checks that
    /// depend on the live state happen when the command executes.
    pub fn validate(&self, world: &World) -> Result<(), Vec<String>> {
        let cfg: &GripperConfig = &world.config;
        let mut errs = Vec::new();
        match self {
            Command::SetFingers { u } => {
                if !(0.0..=1.0).contains(u) {
                    errs.push(format!("u {u} outside [0, 1]"));
                }
            }
            Command::RotatePalm {
                target_deg,
                speed_dps,
            } => {
                if !cfg.servo_range.contains(*target_deg) {
                    errs.push(format!(
                        "target_deg {target_deg} outside servo range [{}, {}]",
                        cfg.servo_range.min, cfg.servo_range.max
                    ));
                }
                if !(*speed_dps > 0.0 && *speed_dps <= cfg.max_palm_speed) {
                    errs.push(format!(
                        "speed_dps {speed_dps} outside (0, {}]",
                        cfg.max_palm_speed
                    ));
                }
            }
            Command::LoadObject { object } => {
                if let Err(v) = object.validate() {
                    errs.extend(v.0.iter().map(|v| v.to_string()));
                }
            }
            Command::RunSequence { plan, .. } => {
                if let Err(e) = plan.validate(world) {
                    errs.push(e.to_string());
                }
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub id: u64,
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyStatus {
    Accepted,
    Rejected,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownCommand,
    Invalid,
    NotOperator,
    Busy,
    NothingInFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum CommandResult {
    Applied,
    Rotation {
        final_angle: f64,
        duration: f64,
        slipped: bool,
        slip_angle_error: f64,
    },
    Trial {
        trial: TrialResult,
    },
    Cancelled,
    /// The command was valid but could not run in the current state.
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: u64,
    pub status: ReplyStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<CommandResult>,
}

impl Reply {
    pub fn accepted(id: u64) -> Self {
        Self {
            id,
            status: ReplyStatus::Accepted,
            reason: None,
            diagnostics: Vec::new(),
            result: None,
        }
    }

    pub fn rejected(id: u64, reason: RejectReason, diagnostics: Vec<String>) -> Self {
        Self {
            status: ReplyStatus::Rejected,
            reason: Some(reason),
            diagnostics,
            ..Self::accepted(id)
        }
    }

    pub fn completed(id: u64, result: CommandResult) -> Self {
        Self {
            status: ReplyStatus::Completed,
            result: Some(result),
            ..Self::accepted(id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StageOutcome {
        stage: SequenceStage,
        outcome: Outcome,
        #[serde(default)]
        failure_detail: Option<FailureKind>,
    },
    Slip {
        slip_angle_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// milliseconds since session start
    pub timestamp_ms: u64,
    pub state: GripperState,
    pub stage: SequenceStage,
    #[serde(default)]
    pub last_event: Option<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { role: Role, rate_hz: u32 },
    Telemetry(TelemetryFrame),
    Reply(Reply),
    Replay { frames: Vec<TelemetryFrame> },
    Role { role: Role },
}

/// Close code for protocol violations (RFC 6455 "policy violation").
pub const CLOSE_PROTOCOL_VIOLATION: u16 = 1008;

/// Result of reading one client frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Command(Envelope),
    /// Well-formed envelope that cannot be accepted; reply and carry on.
    Reject(Reply),
    /// Not a message of this protocol; close the connection.
    Violation(String),
}

/// Parses a client frame. A frame that is not a JSON object with an integer
/// `id` is a protocol violation; anything else gets a reply carrying its id.
pub fn parse_client_message(text: &str) -> Incoming {
    let value: serde_json::Value = match serde_json::from_str(text.trim_end()) {
        Ok(v) => v,
        Err(e) => return Incoming::Violation(format!("not json: {e}")),
    };
    let Some(obj) = value.as_object() else {
        return Incoming::Violation("message must be a json object".into());
    };
    let Some(id) = obj.get("id").and_then(|v| v.as_u64()) else {
        return Incoming::Violation("missing integer id".into());
    };
    let tag = match obj.get("command") {
        Some(serde_json::Value::String(s)) => Some(s.as_str()),
        Some(serde_json::Value::Object(m)) if m.len() == 1 => m.keys().next().map(String::as_str),
        _ => None,
    };
    match tag {
        Some(t) if Command::TAGS.contains(&t) => {}
        Some(t) => {
            return Incoming::Reject(Reply::rejected(
                id,
                RejectReason::UnknownCommand,
                vec![format!("unknown command {t:?}")],
            ))
        }
        None => {
            return Incoming::Reject(Reply::rejected(
                id,
                RejectReason::Invalid,
                vec!["command must be a tag string or a single-key object".into()],
            ))
        }
    }
    match serde_json::from_value::<Envelope>(value) {
        Ok(env) => Incoming::Command(env),
        Err(e) => Incoming::Reject(Reply::rejected(
            id,
            RejectReason::Invalid,
            vec![e.to_string()],
        )),
    }
}

pub fn to_json(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}
