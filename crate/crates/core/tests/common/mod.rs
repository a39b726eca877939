//! Proptest strategies shared by the round-trip and protocol tests.

#![allow(dead_code)]

use palmgrip_core::model::{
    Facing, FingerLengths, GripperConfig, GripperState, HeldObject, HoldMode, ObjectSpec,
    ServoRange, ShapeClass,
};
use proptest::prelude::*;

pub fn shape() -> impl Strategy<Value = ShapeClass> {
    prop::sample::select(ShapeClass::ALL.to_vec())
}

pub fn object() -> impl Strategy<Value = ObjectSpec> {
    (
        "[a-z_]{1,16}",
        1e-3f64..500.0,
        shape(),
        1e-3f64..300.0,
        1e-3f64..300.0,
        0.0f64..=1.0,
    )
        .prop_map(|(name, mass, shape_class, w, h, com)| ObjectSpec {
            name,
            mass,
            shape_class,
            characteristic_width: w,
            height: h,
            cloth_like: shape_class == ShapeClass::Cloth,
            com_height_frac: com,
        })
}

pub fn config() -> impl Strategy<Value = GripperConfig> {
    (
        (0.1f64..89.9, 50.0f64..200.0, 0.05f64..0.95),
        (1.0f64..60.0, 1.0f64..60.0),
        (-360.0f64..0.0, 0.1f64..360.0),
        (1.0f64..2000.0, 0.01f64..10.0, 1.0f64..500.0),
        (0.0f64..40.0, 0.0f64..1.0, 0.0f64..1.0),
    )
        .prop_map(|(a, b, c, d, e)| GripperConfig {
            n_fingers: 3,
            splay_angle: a.0,
            finger_length: FingerLengths {
                moulded_oval: a.1,
                printed: a.1 * a.2,
            },
            palm_radius: b.0,
            finger_mount_radius: b.1,
            servo_range: ServoRange {
                min: c.0,
                max: c.0 + c.1,
            },
            max_palm_speed: d.0,
            vacuum_hold_force: d.1,
            mass_capacity: d.2,
            squeeze_margin: e.0,
            regulator_lag: e.1,
            valve_latency: e.2,
        })
}

pub fn state() -> impl Strategy<Value = GripperState> {
    (
        (0.0f64..=1.0, -1000.0f64..1000.0),
        (0.0f64..=1.0, prop::array::uniform3(0.0f64..=200.0)),
        any::<bool>(),
        prop_oneof![Just(180.0), 0.0f64..180.0],
        prop::option::of((object(), 0u8..3, -720.0f64..720.0, any::<bool>())),
    )
        .prop_map(|(palm, fingers, vacuum, flip, held)| {
            let range = ServoRange {
                min: -180.0,
                max: 180.0,
            };
            let mut s = GripperState::initial(range);
            s.set_palm(-180.0 + 360.0 * palm.0, palm.1).unwrap();
            s.set_fingers(fingers.0, fingers.1).unwrap();
            s.set_vacuum(vacuum);
            s.set_flip_angle(flip).unwrap();
            if let Some((object, mode, yaw, draped)) = held {
                let mut hold_mode =
                    [HoldMode::InFingers, HoldMode::OnPalm, HoldMode::None][mode as usize];
                if hold_mode == HoldMode::OnPalm && s.gripper_facing() == Facing::Down {
                    hold_mode = HoldMode::InFingers;
                }
                s.hold(HeldObject {
                    object,
                    hold_mode,
                    object_yaw: yaw,
                    draped: draped && hold_mode != HoldMode::OnPalm,
                })
                .unwrap();
            }
            s
        })
}

use palmgrip_core::model::{FingerType, Outcome, StageRecord, TrialResult};
use palmgrip_core::protocol::{
    Command, CommandResult, Event, RejectReason, Reply, Role, ServerMessage, TelemetryFrame,
};
use palmgrip_core::sequencer::{SequencePlan, SequenceStage};
use palmgrip_core::world::FailureKind;

pub const FAILURE_KINDS: [FailureKind; 11] = [
    FailureKind::PushedOffCenter,
    FailureKind::SaggedDrop,
    FailureKind::LostGripDeform,
    FailureKind::TwistedOut,
    FailureKind::TippedOnDrop,
    FailureKind::BouncedOff,
    FailureKind::DrapedOnFingers,
    FailureKind::FellBetweenFingers,
    FailureKind::BlockedRotation,
    FailureKind::ConvergeRegraspFail,
    FailureKind::DisplacedOnRegrasp,
];

pub fn finger_type() -> impl Strategy<Value = FingerType> {
    prop::sample::select(FingerType::ALL.to_vec())
}

pub fn stage() -> impl Strategy<Value = SequenceStage> {
    prop::sample::select(SequenceStage::ALL.to_vec())
}

pub fn failure() -> impl Strategy<Value = FailureKind> {
    prop::sample::select(FAILURE_KINDS.to_vec())
}

pub fn outcome() -> impl Strategy<Value = Outcome> {
    prop::sample::select(vec![Outcome::Ok, Outcome::Failed, Outcome::Skipped])
}

pub fn plan() -> impl Strategy<Value = SequencePlan> {
    (
        object(),
        finger_type(),
        -180.0f64..=180.0,
        prop::option::of(0.0f64..=1.0),
        1.0f64..700.0,
        any::<bool>(),
        0u32..4,
    )
        .prop_map(
            |(
                object,
                finger_type,
                target_yaw,
                grasp_u,
                rotation_speed,
                restart_on_failure,
                retries,
            )| {
                SequencePlan {
                    object,
                    finger_type,
                    target_yaw,
                    grasp_u,
                    rotation_speed,
                    restart_on_failure,
                    retries,
                }
            },
        )
}

pub fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (0.0f64..=1.0).prop_map(|u| Command::SetFingers { u }),
        (-180.0f64..=180.0, 1.0f64..=700.0).prop_map(|(target_deg, speed_dps)| {
            Command::RotatePalm {
                target_deg,
                speed_dps,
            }
        }),
        any::<bool>().prop_map(|on| Command::Vacuum { on }),
        prop::sample::select(vec![Facing::Up, Facing::Down]).prop_map(|to| Command::Flip { to }),
        object().prop_map(|object| Command::LoadObject { object }),
        (plan(), any::<u64>()).prop_map(|(plan, seed)| Command::RunSequence { plan, seed }),
        Just(Command::Pause),
        Just(Command::Resume),
        Just(Command::Cancel),
        Just(Command::Reset),
        Just(Command::Release),
    ]
}

pub fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        (stage(), outcome(), prop::option::of(failure())).prop_map(
            |(stage, outcome, failure_detail)| {
                Event::StageOutcome {
                    stage,
                    outcome,
                    failure_detail,
                }
            }
        ),
        (0.0f64..180.0).prop_map(|slip_angle_error| Event::Slip { slip_angle_error }),
    ]
}

pub fn telemetry() -> impl Strategy<Value = TelemetryFrame> {
    (any::<u64>(), state(), stage(), prop::option::of(event())).prop_map(
        |(timestamp_ms, state, stage, last_event)| TelemetryFrame {
            timestamp_ms,
            state,
            stage,
            last_event,
        },
    )
}

pub fn trial() -> impl Strategy<Value = TrialResult> {
    (
        object(),
        finger_type(),
        prop::collection::vec((outcome(), prop::option::of(failure())), 9),
        any::<u64>(),
    )
        .prop_map(|(object, finger_type, outs, seed)| {
            let stage_outcomes: Vec<StageRecord> = SequenceStage::PIPELINE
                .iter()
                .zip(outs)
                .map(|(&stage, (outcome, failure_detail))| StageRecord {
                    stage,
                    outcome,
                    failure_detail,
                })
                .collect();
            let overall_success = stage_outcomes.iter().all(|r| r.outcome == Outcome::Ok);
            TrialResult {
                object,
                finger_type,
                stage_outcomes,
                overall_success,
                seed,
            }
        })
}

pub fn reply() -> impl Strategy<Value = Reply> {
    let reason = prop::sample::select(vec![
        RejectReason::UnknownCommand,
        RejectReason::Invalid,
        RejectReason::NotOperator,
        RejectReason::Busy,
        RejectReason::NothingInFlight,
    ]);
    let result = prop_oneof![
        Just(CommandResult::Applied),
        Just(CommandResult::Cancelled),
        "[ -~]{0,40}".prop_map(|message| CommandResult::Failed { message }),
        (-180.0f64..=180.0, 0.0f64..2.0, any::<bool>(), 0.0f64..180.0).prop_map(
            |(final_angle, duration, slipped, slip_angle_error)| CommandResult::Rotation {
                final_angle,
                duration,
                slipped,
                slip_angle_error
            }
        ),
        trial().prop_map(|trial| CommandResult::Trial { trial }),
    ];
    prop_oneof![
        any::<u64>().prop_map(Reply::accepted),
        (
            any::<u64>(),
            reason,
            prop::collection::vec("[ -~]{0,30}", 0..3)
        )
            .prop_map(|(id, r, d)| Reply::rejected(id, r, d)),
        (any::<u64>(), result).prop_map(|(id, r)| Reply::completed(id, r)),
    ]
}

pub fn server_message() -> impl Strategy<Value = ServerMessage> {
    let role = prop::sample::select(vec![Role::Operator, Role::Observer]);
    prop_oneof![
        (role.clone(), 1u32..=120)
            .prop_map(|(role, rate_hz)| ServerMessage::Hello { role, rate_hz }),
        telemetry().prop_map(ServerMessage::Telemetry),
        reply().prop_map(ServerMessage::Reply),
        prop::collection::vec(telemetry(), 0..3)
            .prop_map(|frames| ServerMessage::Replay { frames }),
        role.prop_map(|role| ServerMessage::Role { role }),
    ]
}
