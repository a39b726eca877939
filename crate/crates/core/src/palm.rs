//! Servo-driven rotating palm with an integrated suction cup.
//!
//! Rotations follow a trapezoidal speed profile (triangular when the move is
//! too short to reach the peak speed). An object resting on the palm follows
//! the palm as long as the torque needed to accelerate it stays within what
//! suction and friction can transmit; otherwise it slips and lags behind.
//!
//! Required torque at any instant:
//!
//! ```text
//! demand = I·|α| + m·g·e + m·ω²·d·r_cup
//! supply = F_vac·r_cup (vacuum on) + μ·m·g·r_cup
//! ```
//!
//! with `I = ½·m·(w/2)²`, `e` the centre-of-mass eccentricity and `d` the
//! residual placement offset of the object on the cup. The last demand term
//! is the friction spent on centripetal force, expressed over the cup radius.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GripperConfig, GripperState, ObjectSpec};
use crate::GRAVITY;

pub const DEFAULT_ACCEL: f64 = 4000.0;
/// Internal simulation rate.
pub const STEP_HZ: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PalmError {
    #[error("target {target} outside servo range [{min}, {max}]")]
    OutOfRange { target: f64, min: f64, max: f64 },
    #[error("peak speed {speed} outside (0, {max}]")]
    BadSpeed { speed: f64, max: f64 },
    #[error("acceleration must be positive, got {0}")]
    BadAccel(f64),
    #[error("invalid slip model: {0}")]
    BadSlipModel(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationCommand {
    /// Absolute palm angle, degrees.
    pub target_angle: f64,
    /// degrees/second
    pub peak_speed: f64,
    /// degrees/second²
    #[serde(default = "default_accel")]
    pub accel: f64,
}

fn default_accel() -> f64 {
    DEFAULT_ACCEL
}

impl RotationCommand {
    pub fn new(target_angle: f64, peak_speed: f64) -> Self {
        Self {
            target_angle,
            peak_speed,
            accel: DEFAULT_ACCEL,
        }
    }

    pub fn validate(&self, cfg: &GripperConfig) -> Result<(), PalmError> {
        let r = cfg.servo_range;
        if !r.contains(self.target_angle) {
            return Err(PalmError::OutOfRange {
                target: self.target_angle,
                min: r.min,
                max: r.max,
            });
        }
        if !(self.peak_speed > 0.0 && self.peak_speed <= cfg.max_palm_speed) {
            return Err(PalmError::BadSpeed {
                speed: self.peak_speed,
                max: cfg.max_palm_speed,
            });
        }
        if !(self.accel > 0.0 && self.accel.is_finite()) {
            return Err(PalmError::BadAccel(self.accel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlipModel {
    /// Vacuum hold torque, N·mm.
    pub hold_torque: f64,
    pub friction_coeff: f64,
    /// mm
    pub cup_effective_radius: f64,
    /// Residual offset of a dropped object from the palm axis, mm.
    pub placement_offset: f64,
    /// Centre-of-mass eccentricity, mm.
    pub com_eccentricity: f64,
}

pub const DEFAULT_CUP_RADIUS: f64 = 12.0;
pub const DEFAULT_FRICTION: f64 = 0.8;
pub const DEFAULT_PLACEMENT_OFFSET: f64 = 2.0;

impl SlipModel {
    pub fn from_config(cfg: &GripperConfig) -> Self {
        Self {
            hold_torque: cfg.vacuum_hold_force * DEFAULT_CUP_RADIUS,
            friction_coeff: DEFAULT_FRICTION,
            cup_effective_radius: DEFAULT_CUP_RADIUS,
            placement_offset: DEFAULT_PLACEMENT_OFFSET,
            com_eccentricity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PalmError> {
        if !(self.hold_torque > 0.0) {
            return Err(PalmError::BadSlipModel("hold_torque must be positive"));
        }
        if !(self.friction_coeff > 0.0) {
            return Err(PalmError::BadSlipModel("friction_coeff must be positive"));
        }
        if !(self.cup_effective_radius > 0.0) {
            return Err(PalmError::BadSlipModel(
                "cup_effective_radius must be positive",
            ));
        }
        if !(self.placement_offset >= 0.0 && self.com_eccentricity >= 0.0) {
            return Err(PalmError::BadSlipModel("offsets must be non-negative"));
        }
        Ok(())
    }

    /// Suction force, N.
    pub fn hold_force(&self) -> f64 {
        self.hold_torque / self.cup_effective_radius
    }

    /// Torque the palm can transmit to the object, N·mm.
    pub fn available_torque(&self, obj: &ObjectSpec, vacuum_on: bool) -> f64 {
        let friction = self.friction_coeff * obj.weight_n() * self.cup_effective_radius;
        if vacuum_on {
            self.hold_torque + friction
        } else {
            friction
        }
    }

    /// Load that does not depend on the palm's angular acceleration, N·mm.
    fn static_demand(&self, obj: &ObjectSpec, omega_dps: f64) -> f64 {
        let w = omega_dps.to_radians();
        obj.weight_n() * self.com_eccentricity
            + obj.mass_kg() * w * w * (self.placement_offset / 1000.0) * self.cup_effective_radius
    }

    /// Torque needed to carry the object at the given palm acceleration and
    /// speed, N·mm.
    pub fn required_torque(&self, obj: &ObjectSpec, alpha_dps2: f64, omega_dps: f64) -> f64 {
        obj.yaw_inertia() * alpha_dps2.abs().to_radians() * 1000.0
            + self.static_demand(obj, omega_dps)
    }

    /// Suction alone can carry the object (the palm lifts it without fingers).
    pub fn can_lift(&self, obj: &ObjectSpec, vacuum_on: bool) -> bool {
        vacuum_on && self.hold_force() > obj.weight_n()
    }
}

/// Closed-form trapezoidal (or triangular) move from `start` to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub start: f64,
    pub target: f64,
    /// Peak speed actually reached, degrees/second.
    pub reached_speed: f64,
    pub accel: f64,
    pub accel_time: f64,
    pub cruise_time: f64,
    pub duration: f64,
}

impl Profile {
    pub fn new(start: f64, target: f64, peak_speed: f64, accel: f64) -> Self {
        let d = (target - start).abs();
        if d == 0.0 {
            return Self {
                start,
                target,
                reached_speed: 0.0,
                accel,
                accel_time: 0.0,
                cruise_time: 0.0,
                duration: 0.0,
            };
        }
        let (reached, t_a, t_c) = if d >= peak_speed * peak_speed / accel {
            (
                peak_speed,
                peak_speed / accel,
                (d - peak_speed * peak_speed / accel) / peak_speed,
            )
        } else {
            let v = (accel * d).sqrt();
            (v, v / accel, 0.0)
        };
        Self {
            start,
            target,
            reached_speed: reached,
            accel,
            accel_time: t_a,
            cruise_time: t_c,
            duration: 2.0 * t_a + t_c,
        }
    }

    fn direction(&self) -> f64 {
        if self.target >= self.start {
            1.0
        } else {
            -1.0
        }
    }

    /// Signed (angle, velocity, acceleration) at time `t`.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let dir = self.direction();
        let (a, v, ta, tc) = (
            self.accel,
            self.reached_speed,
            self.accel_time,
            self.cruise_time,
        );
        if t <= 0.0 || self.duration == 0.0 {
            return (
                self.start,
                0.0,
                if self.duration == 0.0 { 0.0 } else { dir * a },
            );
        }
        if t >= self.duration {
            return (self.target, 0.0, 0.0);
        }
        let (pos, vel, acc) = if t < ta {
            (0.5 * a * t * t, a * t, a)
        } else if t < ta + tc {
            (0.5 * a * ta * ta + v * (t - ta), v, 0.0)
        } else {
            let td = t - ta - tc;
            (
                0.5 * a * ta * ta + v * tc + v * td - 0.5 * a * td * td,
                v - a * td,
                -a,
            )
        };
        (self.start + dir * pos, dir * vel, dir * acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub angle: f64,
    pub velocity: f64,
    pub object_yaw_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationOutcome {
    pub final_angle: f64,
    /// seconds
    pub duration: f64,
    pub slipped: bool,
    /// How far the object lags the palm at rest, degrees (unsigned).
    pub slip_angle_error: f64,
    /// Signed change of the object's yaw, degrees.
    pub object_yaw_change: f64,
    pub profile: Profile,
    /// Palm trajectory at the internal step rate, endpoints included.
    pub trajectory: Vec<TrajectorySample>,
}

/// Object sitting on the palm during a rotation.
#[derive(Debug, Clone, Copy)]
pub struct PalmLoad<'a> {
    pub object: &'a ObjectSpec,
    /// Cloth caught in the fingers cannot turn with the palm.
    pub draped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalmRotor {
    pub slip: SlipModel,
    pub config: GripperConfig,
}

impl PalmRotor {
    pub fn new(config: GripperConfig, slip: SlipModel) -> Self {
        Self { slip, config }
    }

    pub fn from_config(config: &GripperConfig) -> Self {
        Self::new(config.clone(), SlipModel::from_config(config))
    }

    /// Peak torque demand over a profile, N·mm.
    pub fn peak_demand(&self, obj: &ObjectSpec, profile: &Profile) -> f64 {
        if profile.duration == 0.0 {
            return self.slip.required_torque(obj, 0.0, 0.0);
        }
        // worst instant: end of the acceleration ramp
        self.slip
            .required_torque(obj, profile.accel, profile.reached_speed)
    }

    /// Available over demanded torque, minus one.
    pub fn torque_margin(&self, obj: &ObjectSpec, profile: &Profile, vacuum_on: bool) -> f64 {
        self.slip.available_torque(obj, vacuum_on) / self.peak_demand(obj, profile) - 1.0
    }

    pub fn rotate_to(
        &self,
        cmd: &RotationCommand,
        state: &GripperState,
        load: Option<PalmLoad<'_>>,
    ) -> Result<RotationOutcome, PalmError> {
        let range = state.servo_range();
        if !range.contains(cmd.target_angle) {
            return Err(PalmError::OutOfRange {
                target: cmd.target_angle,
                min: range.min,
                max: range.max,
            });
        }
        cmd.validate(&self.config)?;
        let profile = Profile::new(
            state.palm_angle(),
            cmd.target_angle,
            cmd.peak_speed,
            cmd.accel,
        );
        let distance = cmd.target_angle - state.palm_angle();
        let dt = 1.0 / STEP_HZ;
        let n = (profile.duration * STEP_HZ).ceil() as usize;

        let mut outcome = RotationOutcome {
            final_angle: cmd.target_angle,
            duration: profile.duration,
            slipped: false,
            slip_angle_error: 0.0,
            object_yaw_change: distance,
            profile,
            trajectory: Vec::with_capacity(n + 1),
        };

        let Some(load) = load else {
            outcome.object_yaw_change = 0.0;
            outcome.trajectory = self.palm_only_trajectory(&profile, n, dt);
            return Ok(outcome);
        };

        if load.draped {
            outcome.slipped = true;
            outcome.slip_angle_error = distance.abs();
            outcome.object_yaw_change = 0.0;
            outcome.trajectory = self
                .palm_only_trajectory(&profile, n, dt)
                .into_iter()
                .map(|s| TrajectorySample {
                    object_yaw_offset: -(s.angle - profile.start),
                    ..s
                })
                .collect();
            return Ok(outcome);
        }

        let obj = load.object;
        let supply = self.slip.available_torque(obj, state.vacuum_on());
        if self.peak_demand(obj, &profile) <= supply {
            outcome.trajectory = self.palm_only_trajectory(&profile, n, dt);
            return Ok(outcome);
        }

        // Slipping: the object is driven by at most the transmissible torque
        // until its speed matches the palm again.
        outcome.slipped = true;
        let inertia = obj.yaw_inertia();
        let dir = if distance >= 0.0 { 1.0 } else { -1.0 };
        let mut obj_speed = 0.0_f64; // unsigned, along `dir`
        let mut lag = 0.0_f64;
        let mut k = 0usize;
        let max_steps = n + (10.0 * STEP_HZ) as usize;
        loop {
            let t = k as f64 * dt;
            let (angle, vel, _) = profile.sample(t);
            outcome.trajectory.push(TrajectorySample {
                t,
                angle,
                velocity: vel,
                object_yaw_offset: -dir * lag,
            });
            if t >= profile.duration && obj_speed == 0.0 {
                break;
            }
            if k >= max_steps {
                break;
            }
            let palm_speed_now = vel.abs();
            let (_, next_vel, _) = profile.sample(t + dt);
            let palm_speed_next = next_vel.abs();
            let spare = supply - self.slip.static_demand(obj, palm_speed_now);
            let alpha_cap = (spare.max(0.0) / 1000.0 / inertia).to_degrees();
            let max_change = alpha_cap * dt;
            let prev_speed = obj_speed;
            let gap = palm_speed_next - obj_speed;
            obj_speed += gap.clamp(-max_change, max_change);
            lag += 0.5 * ((palm_speed_now - prev_speed) + (palm_speed_next - obj_speed)) * dt;
            k += 1;
        }
        outcome.slip_angle_error = lag.abs();
        outcome.object_yaw_change = distance - dir * lag;
        Ok(outcome)
    }

    fn palm_only_trajectory(&self, profile: &Profile, n: usize, dt: f64) -> Vec<TrajectorySample> {
        let mut out: Vec<TrajectorySample> = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                let (angle, velocity, _) = profile.sample(t);
                TrajectorySample {
                    t,
                    angle,
                    velocity,
                    object_yaw_offset: 0.0,
                }
            })
            .collect();
        out.push(TrajectorySample {
            t: profile.duration,
            angle: profile.target,
            velocity: 0.0,
            object_yaw_offset: 0.0,
        });
        out
    }

    /// Largest peak speed for which a 180° rotation does not slip, capped at
    /// the servo's maximum speed. Zero if the object slips at any speed.
    pub fn max_noslip_speed(&self, obj: &ObjectSpec, vacuum_on: bool, accel: f64) -> f64 {
        let ceiling = self.config.max_palm_speed;
        let supply = self.slip.available_torque(obj, vacuum_on);
        let base = self.slip.required_torque(obj, accel, 0.0);
        if base > supply {
            return 0.0;
        }
        // demand grows with ω² through the centripetal term
        let per_omega2 =
            self.slip.static_demand(obj, 1.0_f64.to_degrees()) - self.slip.static_demand(obj, 0.0);
        let reachable = (accel * 180.0).sqrt();
        if per_omega2 <= 0.0 {
            return ceiling;
        }
        let limit = ((supply - base) / per_omega2).sqrt().to_degrees();
        if limit >= reachable {
            ceiling
        } else {
            limit.min(ceiling)
        }
    }
}

/// Switches the vacuum valve. The valve latency only affects timing, which is
/// accounted for by the caller.
pub fn set_vacuum(on: bool, state: &GripperState) -> GripperState {
    let mut next = state.clone();
    next.set_vacuum(on);
    next
}

/// Minimum suction force meeting both the lift requirement and the rotation
/// torque margin for the given objects, rounded up to 0.1 N.
///
/// The rotation requirement ignores friction from the object's own weight, so
/// that the vacuum alone carries the torque margin.
pub fn derive_hold_force(
    objects: &[ObjectSpec],
    speed: f64,
    accel: f64,
    margin: f64,
    template: &SlipModel,
) -> f64 {
    let profile = Profile::new(0.0, 180.0, speed, accel);
    let mut need = 0.0_f64;
    for obj in objects {
        let demand = template.required_torque(obj, accel, profile.reached_speed);
        need = need.max((1.0 + margin) * demand / template.cup_effective_radius);
        need = need.max((1.0 + margin) * obj.mass_kg() * GRAVITY);
    }
    (need * 10.0).ceil() / 10.0
}
