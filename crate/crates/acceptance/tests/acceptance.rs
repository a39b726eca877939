//! Acceptance gate. Prints one PASS/FAIL line per criterion with its runtime
//! and exits non-zero if any criterion fails. Oracles here are written
//! independently of the library.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use palmgrip_core::finger::{
    bend_angles, calibrate, command_grid, fingertip_position, grasp_feasible, FingerSet,
    ResponseCurve, COMMAND_GRID,
};
use palmgrip_core::harness::{closed_form_success, golden_outputs, run_suite, SuiteConfig};
use palmgrip_core::model::{
    builtin_objects, Facing, FingerType, GripperConfig, GripperState, HeldObject, HoldMode,
    ObjectSpec, ShapeClass,
};
use palmgrip_core::palm::{PalmLoad, PalmRotor, Profile, RotationCommand, DEFAULT_ACCEL};
use palmgrip_core::protocol::{
    parse_client_message, to_json, Command, CommandResult, Envelope, Event, Incoming, RejectReason,
    Reply, ReplyStatus, Role, ServerMessage, TelemetryFrame,
};
use palmgrip_core::rng::CounterRng;
use palmgrip_core::sequencer::{model_check, SequencePlan, SequenceStage};
use palmgrip_core::world::{FailureKind, Mode, World};
use palmgrip_core::{controller::Controller, FeasibilityReason};
use palmgrip_teleop::{spawn, ServiceConfig};
use tokio_tungstenite::tungstenite::Message;

// pinned tolerances
const ROTATION_SPEED: f64 = 600.0;
const ROTATION_MASS_LIMIT: f64 = 62.0;
const TORQUE_MARGIN: f64 = 0.25;
const CAPACITY: f64 = 80.0;
const ENDPOINT_TOL: f64 = 1e-9;
const KINEMATICS_TOL_MM: f64 = 1e-6;
const STOCHASTIC_REPS: u32 = 10_000;
const STOCHASTIC_TOL: f64 = 0.03;
const PROTOCOL_MESSAGES: usize = 1000;

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- rotation

fn rotation() -> Check {
    let cfg = GripperConfig::default();
    let rotor = PalmRotor::from_config(&cfg);
    for obj in builtin_objects()
        .iter()
        .filter(|o| o.mass <= ROTATION_MASS_LIMIT)
    {
        let mut s = GripperState::initial(cfg.servo_range);
        s.set_flip_angle(180.0).map_err(|e| e.to_string())?;
        s.set_vacuum(true);
        s.hold(HeldObject {
            object: obj.clone(),
            hold_mode: HoldMode::OnPalm,
            object_yaw: 0.0,
            draped: false,
        })
        .map_err(|e| e.to_string())?;
        let out = rotor
            .rotate_to(
                &RotationCommand::new(180.0, ROTATION_SPEED),
                &s,
                Some(PalmLoad {
                    object: obj,
                    draped: false,
                }),
            )
            .map_err(|e| e.to_string())?;
        ensure(!out.slipped, || format!("{} slipped", obj.name))?;
    }
    let heavy = builtin_objects()
        .into_iter()
        .find(|o| o.mass == ROTATION_MASS_LIMIT)
        .ok_or("no 62 g object")?;
    let vmax = rotor.max_noslip_speed(&heavy, true, DEFAULT_ACCEL);
    ensure(vmax >= ROTATION_SPEED, || {
        format!("max_noslip_speed {vmax}")
    })?;
    let margin = rotor.torque_margin(
        &heavy,
        &Profile::new(0.0, 180.0, ROTATION_SPEED, DEFAULT_ACCEL),
        true,
    );
    ensure(margin >= TORQUE_MARGIN, || {
        format!("torque margin {margin}")
    })
}

// ---------------------------------------------------------------- capacity

fn capacity() -> Check {
    let cfg = GripperConfig::default();
    for ft in FingerType::ALL {
        let set = FingerSet::builtin(ft);
        for obj in builtin_objects() {
            let r = grasp_feasible(&obj, &set, &cfg);
            ensure(r.feasible, || {
                format!("{} {ft} rejected: {:?}", obj.name, r.reason)
            })?;
            for mass in [CAPACITY + 1e-9, 80.5, 81.0, 120.0, 1000.0] {
                let heavy = ObjectSpec {
                    mass,
                    ..obj.clone()
                };
                let r = grasp_feasible(&heavy, &set, &cfg);
                ensure(
                    !r.feasible && r.reason == FeasibilityReason::MassExceedsCapacity,
                    || format!("{} at {mass} g: {:?}", obj.name, r.reason),
                )?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- golden

fn golden() -> Check {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/golden");
    for (name, text) in golden_outputs().map_err(|e| e.to_string())? {
        let committed =
            std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(committed == text, || {
            format!("{name} is not byte-identical")
        })?;
    }
    let world = World::builtin(Mode::Deterministic);
    let report = run_suite(&world, &SuiteConfig::default()).map_err(|e| e.to_string())?;
    let pair = |name: &str, ft| report.pair(name, ft).ok_or(format!("missing {name} {ft}"));
    let only = |name: &str, ft, stage: SequenceStage| -> Check {
        let p = pair(name, ft)?;
        let stages: Vec<_> = p
            .stage_failure_histogram
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(s, _)| *s)
            .collect();
        ensure(stages == vec![stage], || {
            format!("{name} {ft} failures at {stages:?}")
        })
    };
    use FingerType::{MouldedOval as M, Printed as P};
    for ft in [M, P] {
        ensure(pair("tennis_ball", ft)?.successes() == 5, || {
            format!("ball {ft}")
        })?;
        let glove = pair("glove", ft)?;
        ensure(glove.successes() == 0, || format!("glove {ft} succeeded"))?;
        only("glove", ft, SequenceStage::RotatePalm)?;
        for t in &glove.trials {
            let d = &t.stage_outcomes[SequenceStage::DropToPalm.index() - 1];
            let r = &t.stage_outcomes[SequenceStage::RotatePalm.index() - 1];
            ensure(
                d.failure_detail == Some(FailureKind::DrapedOnFingers),
                || "glove not draped".into(),
            )?;
            ensure(
                r.failure_detail == Some(FailureKind::BlockedRotation),
                || "glove rotation not blocked".into(),
            )?;
        }
    }
    ensure(pair("styrofoam_egg", P)?.successes() == 5, || {
        "egg printed".into()
    })?;
    ensure(pair("styrofoam_egg", M)?.successes() == 0, || {
        "egg moulded".into()
    })?;
    only("styrofoam_egg", M, SequenceStage::Regrasp)?;
    ensure(pair("tape", P)?.successes() == 5, || "tape printed".into())?;
    ensure(pair("tape", M)?.successes() == 0, || "tape moulded".into())?;
    only("tape", M, SequenceStage::DropToPalm)?;
    only("cylindrical_container", P, SequenceStage::Grasp)?;
    only("cylindrical_container", M, SequenceStage::FlipUp)
}

// ---------------------------------------------------------------- calibration

/// Linear interpolation over raw samples, clamped at the ends.
fn interp(samples: &[(f64, f64)], v: f64) -> f64 {
    if v <= samples[0].0 {
        return samples[0].1;
    }
    for w in samples.windows(2) {
        if v <= w[1].0 {
            return w[0].1 + (w[1].1 - w[0].1) * (v - w[0].0) / (w[1].0 - w[0].0);
        }
    }
    samples[samples.len() - 1].1
}

fn brute_force_residual(curves: &[ResponseCurve; 3], ranges: &[(f64, f64); 3]) -> f64 {
    let mut worst = 0.0_f64;
    for k in 0..COMMAND_GRID {
        let u = k as f64 / (COMMAND_GRID - 1) as f64;
        let b: Vec<f64> = (0..3)
            .map(|i| {
                interp(
                    curves[i].samples(),
                    ranges[i].0 * (1.0 - u) + ranges[i].1 * u,
                )
            })
            .collect();
        let spread =
            b.iter().cloned().fold(f64::MIN, f64::max) - b.iter().cloned().fold(f64::MAX, f64::min);
        worst = worst.max(spread);
    }
    worst
}

fn calibration() -> Check {
    let cfg = GripperConfig::default();
    for ft in FingerType::ALL {
        let set = FingerSet::builtin(ft);
        let same = [
            set.curves[0].clone(),
            set.curves[0].clone(),
            set.curves[0].clone(),
        ];
        let cal = calibrate(&same, (0.0, 120.0)).map_err(|e| e.to_string())?;
        ensure(cal.alignment_residual == 0.0, || {
            format!("{ft}: identical curves residual {}", cal.alignment_residual)
        })?;
        for target in [(0.0, 120.0), (0.0, 150.0), (10.0, 140.0)] {
            let cal = calibrate(&set.curves, target).map_err(|e| e.to_string())?;
            let lo = bend_angles(0.0, &cal, &set.curves).map_err(|e| e.to_string())?;
            let hi = bend_angles(1.0, &cal, &set.curves).map_err(|e| e.to_string())?;
            for i in 0..3 {
                ensure(
                    (lo[i] - target.0).abs() <= ENDPOINT_TOL
                        && (hi[i] - target.1).abs() <= ENDPOINT_TOL,
                    || format!("{ft} {target:?}: endpoints {lo:?} {hi:?}"),
                )?;
            }
            let ranges = cal.ranges.map(|r| (r.v_lo, r.v_hi));
            let oracle = brute_force_residual(&set.curves, &ranges);
            ensure(cal.alignment_residual == oracle, || {
                format!(
                    "{ft} {target:?}: residual {} vs oracle {oracle}",
                    cal.alignment_residual
                )
            })?;
        }
        let mut prev_b = [f64::MIN; 3];
        let mut prev_ap = f64::INFINITY;
        for u in command_grid(COMMAND_GRID) {
            let b = set.bends(u).map_err(|e| e.to_string())?;
            ensure((0..3).all(|i| b[i] >= prev_b[i]), || {
                format!("{ft}: bend not monotone at u={u}")
            })?;
            prev_b = b;
            let ap = set.aperture(u, &cfg).map_err(|e| e.to_string())?;
            ensure(ap <= prev_ap, || {
                format!("{ft}: aperture not monotone at u={u}")
            })?;
            prev_ap = ap;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- kinematics

/// Composite Simpson integration of the unit tangent of a constant-curvature
/// finger, mapped into the gripper frame through the splayed mount.
fn numerical_tip(cfg: &GripperConfig, length: f64, bend_deg: f64) -> (f64, f64) {
    let steps = 20_000;
    let k = bend_deg.to_radians() / length;
    let h = length / steps as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..=steps {
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let s = i as f64 * h;
        sx += w * (k * s).cos();
        sy += w * (k * s).sin();
    }
    let (along, inward) = (sx * h / 3.0, sy * h / 3.0);
    let splay = cfg.splay_angle.to_radians();
    (
        cfg.finger_mount_radius + along * splay.sin() - inward * splay.cos(),
        -along * splay.cos() - inward * splay.sin(),
    )
}

fn kinematics() -> Check {
    let cfg = GripperConfig::default();
    for ft in FingerType::ALL {
        for bend in [30.0, 90.0, 180.0] {
            let tip = fingertip_position(bend, &cfg, ft).map_err(|e| e.to_string())?;
            let (r, v) = numerical_tip(&cfg, cfg.finger_length_for(ft), bend);
            let err = (tip.radial - r).abs().max((tip.vertical - v).abs());
            ensure(err <= KINEMATICS_TOL_MM, || {
                format!("{ft} at {bend}°: error {err:e} mm")
            })?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- model check

fn sequencer_model_check() -> Check {
    let world = World::builtin(Mode::Deterministic);
    let mut pairs = 0;
    for obj in builtin_objects() {
        for ft in FingerType::ALL {
            let report = model_check(&world, &SequencePlan::new(obj.clone(), ft));
            ensure(report.traces > 0, || {
                format!("{} {ft}: no traces", obj.name)
            })?;
            ensure(report.violations.is_empty(), || {
                format!("{} {ft}: {:?}", obj.name, report.violations[0])
            })?;
            pairs += 1;
        }
    }
    ensure(pairs == 10, || format!("{pairs} pairs"))
}

// ---------------------------------------------------------------- stochastic

fn stochastic() -> Check {
    let world = World::builtin(Mode::Stochastic);
    let cfg = SuiteConfig {
        repetitions: STOCHASTIC_REPS,
        seed: 20_240_601,
        ..Default::default()
    };
    let report = run_suite(&world, &cfg).map_err(|e| e.to_string())?;
    for p in &report.pairs {
        let expect = closed_form_success(&world, &cfg.plan(&p.object, p.finger_type));
        ensure(
            (p.overall_success_rate - expect).abs() <= STOCHASTIC_TOL,
            || {
                format!(
                    "{} {}: {:.4} vs {expect:.4}",
                    p.object.name, p.finger_type, p.overall_success_rate
                )
            },
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- protocol

/// Random message generator driven by the library's counter RNG.
struct Gen(CounterRng);

impl Gen {
    fn f(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.uniform(lo, hi)
    }
    fn n(&mut self, k: u64) -> u64 {
        self.0.next_u64() % k
    }
    fn b(&mut self) -> bool {
        self.n(2) == 1
    }

    fn object(&mut self) -> ObjectSpec {
        let shape = ShapeClass::ALL[self.n(5) as usize];
        ObjectSpec {
            name: format!("obj{}", self.n(1000)),
            mass: self.f(0.1, 200.0),
            shape_class: shape,
            characteristic_width: self.f(1.0, 250.0),
            height: self.f(1.0, 250.0),
            cloth_like: shape == ShapeClass::Cloth,
            com_height_frac: self.f(0.0, 1.0),
        }
    }

    fn command(&mut self) -> Command {
        match self.n(11) {
            0 => Command::SetFingers {
                u: self.f(0.0, 1.0),
            },
            1 => Command::RotatePalm {
                target_deg: self.f(-180.0, 180.0),
                speed_dps: self.f(1.0, 700.0),
            },
            2 => Command::Vacuum { on: self.b() },
            3 => Command::Flip {
                to: if self.b() { Facing::Up } else { Facing::Down },
            },
            4 => Command::LoadObject {
                object: self.object(),
            },
            5 => {
                let mut plan =
                    SequencePlan::new(self.object(), FingerType::ALL[self.n(2) as usize]);
                plan.target_yaw = self.f(-180.0, 180.0);
                plan.grasp_u = self.b().then(|| self.f(0.0, 1.0));
                plan.retries = self.n(3) as u32;
                Command::RunSequence {
                    plan,
                    seed: self.0.next_u64(),
                }
            }
            6 => Command::Pause,
            7 => Command::Resume,
            8 => Command::Cancel,
            9 => Command::Reset,
            _ => Command::Release,
        }
    }

    fn state(&mut self) -> GripperState {
        let mut s = GripperState::initial(GripperConfig::default().servo_range);
        s.set_palm(self.f(-180.0, 180.0), self.f(-700.0, 700.0))
            .unwrap();
        s.set_fingers(
            self.f(0.0, 1.0),
            [self.f(0.0, 180.0), self.f(0.0, 180.0), self.f(0.0, 180.0)],
        )
        .unwrap();
        s.set_vacuum(self.b());
        let up = self.b();
        s.set_flip_angle(if up { 180.0 } else { self.f(0.0, 179.0) })
            .unwrap();
        if self.b() {
            let on_palm = up && self.b();
            s.hold(HeldObject {
                object: self.object(),
                hold_mode: if on_palm {
                    HoldMode::OnPalm
                } else {
                    HoldMode::InFingers
                },
                object_yaw: self.f(-360.0, 360.0),
                draped: !on_palm && self.b(),
            })
            .unwrap();
        }
        s
    }

    fn frame(&mut self) -> TelemetryFrame {
        let last_event = match self.n(3) {
            0 => None,
            1 => Some(Event::Slip {
                slip_angle_error: self.f(0.0, 180.0),
            }),
            _ => Some(Event::StageOutcome {
                stage: SequenceStage::PIPELINE[self.n(9) as usize],
                outcome: palmgrip_core::model::Outcome::Failed,
                failure_detail: Some(FailureKind::TippedOnDrop),
            }),
        };
        TelemetryFrame {
            timestamp_ms: self.0.next_u64() >> 12,
            state: self.state(),
            stage: SequenceStage::ALL[self.n(11) as usize],
            last_event,
        }
    }

    fn server_message(&mut self) -> ServerMessage {
        match self.n(5) {
            0 => ServerMessage::Hello {
                role: Role::Observer,
                rate_hz: 1 + self.n(120) as u32,
            },
            1 => ServerMessage::Telemetry(self.frame()),
            2 => ServerMessage::Replay {
                frames: vec![self.frame(), self.frame()],
            },
            3 => ServerMessage::Reply(Reply::completed(
                self.0.next_u64(),
                CommandResult::Rotation {
                    final_angle: self.f(-180.0, 180.0),
                    duration: self.f(0.0, 1.0),
                    slipped: self.b(),
                    slip_angle_error: self.f(0.0, 10.0),
                },
            )),
            _ => ServerMessage::Reply(Reply::rejected(
                self.0.next_u64(),
                RejectReason::Busy,
                vec!["full".into()],
            )),
        }
    }
}

fn round_trips() -> Check {
    let mut g = Gen(CounterRng::new(0x5eed));
    for i in 0..PROTOCOL_MESSAGES {
        let env = Envelope {
            id: g.0.next_u64(),
            command: g.command(),
        };
        let text = serde_json::to_string(&env).map_err(|e| e.to_string())?;
        ensure(
            parse_client_message(&text) == Incoming::Command(env),
            || format!("command {i}: {text}"),
        )?;
        let msg = g.server_message();
        let back: ServerMessage =
            serde_json::from_str(&to_json(&msg)).map_err(|e| e.to_string())?;
        ensure(back == msg, || format!("server message {i}"))?;
    }
    Ok(())
}

fn rejections_leave_state() -> Check {
    let mut g = Gen(CounterRng::new(7));
    let mut c = Controller::new(World::builtin(Mode::Deterministic));
    for i in 0..300u64 {
        c.submit(i, g.command());
        c.tick(g.f(0.0, 400.0));
        let before = serde_json::to_string(c.state()).map_err(|e| e.to_string())?;
        let pending = c.pending();
        let bad = match i % 3 {
            0 => Command::RotatePalm {
                target_deg: 180.0 + g.f(1e-9, 100.0),
                speed_dps: 600.0,
            },
            1 => Command::SetFingers {
                u: 1.0 + g.f(1e-9, 1.0),
            },
            _ => Command::RotatePalm {
                target_deg: 0.0,
                speed_dps: -g.f(0.0, 100.0),
            },
        };
        let r = c.submit(10_000 + i, bad);
        ensure(r.len() == 1 && r[0].status == ReplyStatus::Rejected, || {
            format!("step {i}: {r:?}")
        })?;
        let after = serde_json::to_string(c.state()).map_err(|e| e.to_string())?;
        ensure(after == before && c.pending() == pending, || {
            format!("step {i}: state changed")
        })?;
    }
    Ok(())
}

type Ws =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn recv(ws: &mut Ws) -> Result<ServerMessage, String> {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(20), ws.next())
            .await
            .map_err(|_| "timeout")?
            .ok_or("closed")?
            .map_err(|e| e.to_string())?;
        if let Message::Text(t) = m {
            return serde_json::from_str(t.as_str()).map_err(|e| e.to_string());
        }
    }
}

async fn send_all(ws: &mut Ws, cmds: Vec<Command>) -> Check {
    for (id, command) in cmds.into_iter().enumerate() {
        let text = serde_json::to_string(&Envelope {
            id: id as u64,
            command,
        })
        .map_err(|e| e.to_string())?;
        ws.send(Message::text(text))
            .await
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

async fn flood() -> Check {
    let server = spawn(
        ServiceConfig {
            bind: "127.0.0.1:0".into(),
            rate_hz: 120,
            time_scale: 50.0,
            ..Default::default()
        },
        World::builtin(Mode::Deterministic),
    )
    .await
    .map_err(|e| e.to_string())?;
    let url = format!("ws://{}/ws", server.local_addr());
    let mut clients = Vec::new();
    for _ in 0..2 {
        let (mut ws, _) = tokio_tungstenite::connect_async(&url)
            .await
            .map_err(|e| e.to_string())?;
        let role = match recv(&mut ws).await? {
            ServerMessage::Hello { role, .. } => role,
            other => return Err(format!("expected hello: {other:?}")),
        };
        clients.push((ws, role));
    }
    ensure(
        clients[0].1 == Role::Operator && clients[1].1 == Role::Observer,
        || "roles".into(),
    )?;
    let (mut b, _) = clients.pop().unwrap();
    let (mut a, _) = clients.pop().unwrap();

    const N: u64 = 400;
    let mut g = Gen(CounterRng::new(99));
    let mut sent = Vec::new();
    for _ in 0..N {
        let cmd = match g.n(5) {
            0 | 1 => Command::SetFingers { u: g.f(0.0, 1.0) },
            2 => Command::Vacuum { on: g.b() },
            3 => Command::RotatePalm {
                target_deg: g.f(-180.0, 180.0),
                speed_dps: 700.0,
            },
            _ => Command::Flip {
                to: if g.b() { Facing::Up } else { Facing::Down },
            },
        };
        sent.push(cmd);
    }
    // both clients write as fast as they can
    let (ra, rb) = tokio::join!(
        send_all(&mut a, sent.clone()),
        send_all(&mut b, sent.clone())
    );
    ra?;
    rb?;

    let mut rejected = BTreeSet::new();
    let mut done = BTreeSet::new();
    let mut last_ts = 0;
    while done.len() + rejected.len() < N as usize {
        match recv(&mut a).await? {
            ServerMessage::Reply(r) => match r.status {
                ReplyStatus::Rejected => {
                    ensure(r.reason == Some(RejectReason::Busy), || {
                        format!("operator rejected: {r:?}")
                    })?;
                    rejected.insert(r.id);
                }
                ReplyStatus::Completed => {
                    done.insert(r.id);
                }
                ReplyStatus::Accepted => {}
            },
            ServerMessage::Telemetry(f) => {
                ensure(f.timestamp_ms > last_ts || last_ts == 0, || {
                    "timestamps not increasing".into()
                })?;
                last_ts = f.timestamp_ms;
            }
            _ => {}
        }
    }
    let mut final_state = None;
    let mut frames = 0;
    while frames < 5 {
        if let ServerMessage::Telemetry(f) = recv(&mut a).await? {
            final_state = Some(f.state);
            frames += 1;
        }
    }
    let mut b_rejected = 0;
    while b_rejected < N {
        if let ServerMessage::Reply(r) = recv(&mut b).await? {
            ensure(r.status == ReplyStatus::Rejected, || {
                format!("observer command not rejected: {r:?}")
            })?;
            ensure(
                matches!(
                    r.reason,
                    Some(RejectReason::NotOperator) | Some(RejectReason::Busy)
                ),
                || format!("observer rejection reason {r:?}"),
            )?;
            b_rejected += 1;
        }
    }

    // sequential application of the operator's accepted commands
    let mut reference = Controller::new(World::builtin(Mode::Deterministic));
    for (id, cmd) in sent.into_iter().enumerate() {
        if !rejected.contains(&(id as u64)) {
            reference.submit(id as u64, cmd);
            reference.drain();
        }
    }
    let want = serde_json::to_string(reference.state()).map_err(|e| e.to_string())?;
    let got = serde_json::to_string(&final_state.unwrap()).map_err(|e| e.to_string())?;
    server.shutdown().await;
    ensure(got == want, || {
        format!("final state differs\n got {got}\nwant {want}")
    })?;
    ensure(!done.is_empty(), || {
        "no operator command was applied".into()
    })
}

fn protocol() -> Check {
    round_trips()?;
    rejections_leave_state()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(flood())
}

// ---------------------------------------------------------------- gate

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 8] = [
        ("rotation claim", Duration::from_secs(1), rotation),
        ("capacity claim", Duration::from_secs(1), capacity),
        ("golden experiment matrix", Duration::from_secs(5), golden),
        ("calibration suite", Duration::from_secs(1), calibration),
        ("kinematics oracle", Duration::from_secs(1), kinematics),
        (
            "sequencer model check",
            Duration::from_secs(5),
            sequencer_model_check,
        ),
        (
            "stochastic convergence",
            Duration::from_secs(60),
            stochastic,
        ),
        ("protocol", Duration::from_secs(30), protocol),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let t0 = Instant::now();
        let res = check();
        let dt = t0.elapsed();
        let res =
            res.and_then(|_| ensure(dt <= budget, || format!("took {dt:.2?}, budget {budget:?}")));
        match res {
            Ok(()) => println!("PASS  {name:<26} {dt:>10.2?}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {dt:>10.2?}  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
