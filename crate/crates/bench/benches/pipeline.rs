use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use palmgrip_core::finger::{calibrate, FingerSet};
use palmgrip_core::harness::{run_suite, SuiteConfig};
use palmgrip_core::model::{
    builtin_objects, FingerType, GripperConfig, GripperState, HeldObject, HoldMode,
};
use palmgrip_core::palm::{PalmLoad, PalmRotor, RotationCommand};
use palmgrip_core::sequencer::{model_check, run_trial, SequencePlan};
use palmgrip_core::world::{Mode, World};

fn calibration(c: &mut Criterion) {
    let set = FingerSet::builtin(FingerType::MouldedOval);
    c.bench_function("calibrate_moulded", |b| {
        b.iter(|| calibrate(black_box(&set.curves), (0.0, 175.0)).unwrap())
    });
}

fn rotation(c: &mut Criterion) {
    let cfg = GripperConfig::default();
    let rotor = PalmRotor::from_config(&cfg);
    let ball = builtin_objects().pop().unwrap();
    let mut s = GripperState::initial(cfg.servo_range);
    s.set_flip_angle(180.0).unwrap();
    s.set_vacuum(true);
    s.hold(HeldObject {
        object: ball.clone(),
        hold_mode: HoldMode::OnPalm,
        object_yaw: 0.0,
        draped: false,
    })
    .unwrap();
    let cmd = RotationCommand::new(180.0, 600.0);
    c.bench_function("rotate_to_180", |b| {
        b.iter(|| {
            rotor
                .rotate_to(
                    black_box(&cmd),
                    &s,
                    Some(PalmLoad {
                        object: &ball,
                        draped: false,
                    }),
                )
                .unwrap()
        })
    });
}

fn trials(c: &mut Criterion) {
    let world = World::builtin(Mode::Stochastic);
    let plan = SequencePlan::new(builtin_objects()[1].clone(), FingerType::MouldedOval);
    let mut seed = 0u64;
    c.bench_function("run_trial_cylinder_moulded", |b| {
        b.iter(|| {
            seed += 1;
            run_trial(&world, &plan, black_box(seed))
        })
    });
    let det = World::builtin(Mode::Deterministic);
    c.bench_function("golden_suite", |b| {
        b.iter(|| run_suite(&det, &SuiteConfig::default()).unwrap())
    });
    c.bench_function("model_check_glove_printed", |b| {
        let plan = SequencePlan::new(builtin_objects()[2].clone(), FingerType::Printed);
        b.iter(|| model_check(&det, black_box(&plan)))
    });
}

criterion_group!(benches, calibration, rotation, trials);
criterion_main!(benches);
