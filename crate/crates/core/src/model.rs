//! Shared domain types: objects, finger sets, the gripper configuration and
//! the live gripper state.
//!
//! Units are degrees, millimetres, grams and seconds throughout. Forces are in
//! newtons and torques in newton-millimetres.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequencer::SequenceStage;
use crate::world::FailureKind;

/// Upper bound on any finger bend, in degrees.
pub const MAX_BEND_LIMIT: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Ovoid,
    Cylinder,
    Annulus,
    Sphere,
    Cloth,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Ovoid,
        ShapeClass::Cylinder,
        ShapeClass::Annulus,
        ShapeClass::Sphere,
        ShapeClass::Cloth,
    ];
}

/// A single validation failure, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field} {message}")]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Wraps a non-empty list of violations so it can travel as one error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// An object the gripper can be asked to manipulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawObjectSpec")]
pub struct ObjectSpec {
    pub name: String,
    /// grams
    pub mass: f64,
    pub shape_class: ShapeClass,
    /// Largest horizontal extent when resting, mm.
    pub characteristic_width: f64,
    /// mm
    pub height: f64,
    pub cloth_like: bool,
    /// Centre-of-mass height as a fraction of `height`.
    pub com_height_frac: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjectSpec {
    name: String,
    mass: f64,
    shape_class: ShapeClass,
    characteristic_width: f64,
    height: f64,
    cloth_like: bool,
    com_height_frac: f64,
}

impl TryFrom<RawObjectSpec> for ObjectSpec {
    type Error = Violations;

    fn try_from(raw: RawObjectSpec) -> Result<Self, Self::Error> {
        let spec = ObjectSpec {
            name: raw.name,
            mass: raw.mass,
            shape_class: raw.shape_class,
            characteristic_width: raw.characteristic_width,
            height: raw.height,
            cloth_like: raw.cloth_like,
            com_height_frac: raw.com_height_frac,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<(), Violations> {
        let mut out = Vec::new();
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            out.push(Violation::new("mass", "must be positive"));
        }
        if !(self.characteristic_width > 0.0 && self.characteristic_width.is_finite()) {
            out.push(Violation::new("characteristic_width", "must be positive"));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            out.push(Violation::new("height", "must be positive"));
        }
        if self.cloth_like != (self.shape_class == ShapeClass::Cloth) {
            out.push(Violation::new(
                "cloth_like",
                "must be true exactly when shape_class is cloth",
            ));
        }
        if !(0.0..=1.0).contains(&self.com_height_frac) {
            out.push(Violation::new("com_height_frac", "out of range [0, 1]"));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Violations(out))
        }
    }

    /// Mass in kilograms.
    pub fn mass_kg(&self) -> f64 {
        self.mass / 1000.0
    }

    /// Object weight in newtons.
    pub fn weight_n(&self) -> f64 {
        self.mass_kg() * crate::GRAVITY
    }

    /// Yaw inertia about the vertical axis from a solid-cylinder
    /// approximation, kg·m².
    pub fn yaw_inertia(&self) -> f64 {
        let r = self.characteristic_width / 2000.0;
        0.5 * self.mass_kg() * r * r
    }

    pub fn rotationally_symmetric(&self) -> bool {
        matches!(
            self.shape_class,
            ShapeClass::Sphere | ShapeClass::Cylinder | ShapeClass::Ovoid
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerType {
    MouldedOval,
    Printed,
}

impl FingerType {
    pub const ALL: [FingerType; 2] = [FingerType::MouldedOval, FingerType::Printed];

    pub fn label(self) -> &'static str {
        match self {
            FingerType::MouldedOval => "moulded",
            FingerType::Printed => "printed",
        }
    }
}

impl fmt::Display for FingerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-finger-type lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerLengths {
    pub moulded_oval: f64,
    pub printed: f64,
}

/// Closed interval of palm angles the servo can reach, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ServoRange {
    pub min: f64,
    pub max: f64,
}

impl ServoRange {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }
}

impl From<[f64; 2]> for ServoRange {
    fn from(v: [f64; 2]) -> Self {
        Self {
            min: v[0],
            max: v[1],
        }
    }
}

impl From<ServoRange> for [f64; 2] {
    fn from(r: ServoRange) -> Self {
        [r.min, r.max]
    }
}

fn default_squeeze_margin() -> f64 {
    10.0
}
fn default_regulator_lag() -> f64 {
    0.080
}
fn default_valve_latency() -> f64 {
    0.030
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperConfig {
    pub n_fingers: u32,
    /// Finger tilt away from the palm axis, degrees.
    pub splay_angle: f64,
    pub finger_length: FingerLengths,
    pub palm_radius: f64,
    /// Radial distance of each finger root from the palm axis, mm.
    pub finger_mount_radius: f64,
    pub servo_range: ServoRange,
    /// degrees/second
    pub max_palm_speed: f64,
    /// newtons
    pub vacuum_hold_force: f64,
    /// grams
    pub mass_capacity: f64,
    /// Contact is counted once the aperture closes to within this many mm
    /// below the object width.
    #[serde(default = "default_squeeze_margin")]
    pub squeeze_margin: f64,
    /// First-order pressure regulator time constant, seconds.
    #[serde(default = "default_regulator_lag")]
    pub regulator_lag: f64,
    /// Vacuum valve switching latency, seconds.
    #[serde(default = "default_valve_latency")]
    pub valve_latency: f64,
}

impl Default for GripperConfig {
    fn default() -> Self {
        // Lengths, radii and the hold force are desk assumptions, not measurements.
        Self {
            n_fingers: 3,
            splay_angle: 25.0,
            finger_length: FingerLengths {
                moulded_oval: 95.0,
                printed: 65.0,
            },
            palm_radius: 25.0,
            finger_mount_radius: 30.0,
            servo_range: ServoRange {
                min: -180.0,
                max: 180.0,
            },
            max_palm_speed: 700.0,
            vacuum_hold_force: 0.8,
            mass_capacity: 80.0,
            squeeze_margin: default_squeeze_margin(),
            regulator_lag: default_regulator_lag(),
            valve_latency: default_valve_latency(),
        }
    }
}

impl GripperConfig {
    pub fn finger_length_for(&self, finger_type: FingerType) -> f64 {
        match finger_type {
            FingerType::MouldedOval => self.finger_length.moulded_oval,
            FingerType::Printed => self.finger_length.printed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, crate::Error> {
        let cfg: GripperConfig = serde_json::from_str(text)?;
        validate_config(cfg).map_err(crate::Error::Invalid)
    }
}

fn positive(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(Violation::new(field, "must be positive"));
    }
}

/// Checks every configuration invariant, reporting all violations at once.
pub fn validate_config(cfg: GripperConfig) -> Result<GripperConfig, Violations> {
    let mut out = Vec::new();
    if cfg.n_fingers != 3 {
        out.push(Violation::new("n_fingers", "must be 3"));
    }
    if !(cfg.splay_angle > 0.0 && cfg.splay_angle < 90.0) {
        out.push(Violation::new("splay_angle", "out of range"));
    }
    positive(
        &mut out,
        "finger_length.moulded_oval",
        cfg.finger_length.moulded_oval,
    );
    positive(&mut out, "finger_length.printed", cfg.finger_length.printed);
    if cfg.finger_length.printed >= cfg.finger_length.moulded_oval {
        out.push(Violation::new(
            "finger_length",
            "printed fingers must be shorter than moulded fingers",
        ));
    }
    positive(&mut out, "palm_radius", cfg.palm_radius);
    positive(&mut out, "finger_mount_radius", cfg.finger_mount_radius);
    if !(cfg.servo_range.min < cfg.servo_range.max)
        || !cfg.servo_range.min.is_finite()
        || !cfg.servo_range.max.is_finite()
    {
        out.push(Violation::new(
            "servo_range",
            "must be a non-empty interval",
        ));
    }
    positive(&mut out, "max_palm_speed", cfg.max_palm_speed);
    positive(&mut out, "vacuum_hold_force", cfg.vacuum_hold_force);
    positive(&mut out, "mass_capacity", cfg.mass_capacity);
    if !(cfg.squeeze_margin >= 0.0) {
        out.push(Violation::new("squeeze_margin", "must be non-negative"));
    }
    if !(cfg.regulator_lag >= 0.0) {
        out.push(Violation::new("regulator_lag", "must be non-negative"));
    }
    if !(cfg.valve_latency >= 0.0) {
        out.push(Violation::new("valve_latency", "must be non-negative"));
    }
    if out.is_empty() {
        Ok(cfg)
    } else {
        Err(Violations(out))
    }
}

const BUILTIN_OBJECTS: &str = include_str!("../data/objects.json");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    #[allow(dead_code)]
    note: String,
    objects: Vec<ObjectSpec>,
}

/// Parses an object list file: `{"note": ..., "objects": [...]}` or a bare array.
pub fn parse_objects(text: &str) -> Result<Vec<ObjectSpec>, crate::Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        let file: ObjectFile = serde_json::from_value(value)?;
        Ok(file.objects)
    }
}

/// The five test objects, in table order: egg, container, glove, tape, ball.
///
/// Masses are the reported values; every dimension comes from the bundled
/// `objects.json`, which marks them as desk estimates.
pub fn builtin_objects() -> Vec<ObjectSpec> {
    parse_objects(BUILTIN_OBJECTS).expect("bundled objects.json is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldMode {
    InFingers,
    OnPalm,
    /// Present in the workspace but not held (on the table, or fallen).
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldObject {
    pub object: ObjectSpec,
    pub hold_mode: HoldMode,
    /// degrees
    pub object_yaw: f64,
    /// Cloth settled over the fingers instead of on the palm.
    #[serde(default)]
    pub draped: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("palm angle {angle} outside servo range [{min}, {max}]")]
    PalmOutOfRange { angle: f64, min: f64, max: f64 },
    #[error("finger command {0} outside [0, 1]")]
    CommandOutOfRange(f64),
    #[error("finger bend {0} outside [0, {MAX_BEND_LIMIT}]")]
    BendOutOfRange(f64),
    #[error("flip angle {0} outside [0, 180]")]
    FlipOutOfRange(f64),
    #[error("gripper_facing disagrees with flip angle {0}")]
    FacingMismatch(f64),
    #[error("object can only rest on the palm while the gripper faces up")]
    PalmHoldWhileFacingDown,
    #[error("draped objects cannot be on the palm")]
    DrapedOnPalm,
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("invalid held object: {0}")]
    InvalidObject(Violations),
}

/// Live gripper state. Fields are private so that every instance satisfies
/// its invariants; all mutation goes through checked setters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGripperState")]
pub struct GripperState {
    servo_range: ServoRange,
    palm_angle: f64,
    palm_velocity: f64,
    finger_command: f64,
    finger_bends: [f64; 3],
    vacuum_on: bool,
    gripper_facing: Facing,
    flip_angle: f64,
    held_object: Option<HeldObject>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGripperState {
    servo_range: ServoRange,
    palm_angle: f64,
    palm_velocity: f64,
    finger_command: f64,
    finger_bends: [f64; 3],
    vacuum_on: bool,
    gripper_facing: Facing,
    flip_angle: f64,
    held_object: Option<HeldObject>,
}

impl TryFrom<RawGripperState> for GripperState {
    type Error = StateError;

    fn try_from(raw: RawGripperState) -> Result<Self, Self::Error> {
        let mut s = GripperState::initial(raw.servo_range);
        s.set_palm(raw.palm_angle, raw.palm_velocity)?;
        s.set_fingers(raw.finger_command, raw.finger_bends)?;
        s.vacuum_on = raw.vacuum_on;
        s.set_flip_angle(raw.flip_angle)?;
        if s.gripper_facing != raw.gripper_facing {
            return Err(StateError::FacingMismatch(raw.flip_angle));
        }
        if let Some(h) = raw.held_object {
            h.object.validate().map_err(StateError::InvalidObject)?;
            s.hold(h)?;
        }
        Ok(s)
    }
}

fn finite(v: f64, name: &'static str) -> Result<(), StateError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(StateError::NonFinite(name))
    }
}

impl GripperState {
    /// Rest pose: palm centred in its range (or at 0° if 0 is reachable),
    /// fingers open, vacuum off, facing down, nothing held.
    pub fn initial(servo_range: ServoRange) -> Self {
        let palm = if servo_range.contains(0.0) {
            0.0
        } else {
            servo_range.min
        };
        Self {
            servo_range,
            palm_angle: palm,
            palm_velocity: 0.0,
            finger_command: 0.0,
            finger_bends: [0.0; 3],
            vacuum_on: false,
            gripper_facing: Facing::Down,
            flip_angle: 0.0,
            held_object: None,
        }
    }

    pub fn servo_range(&self) -> ServoRange {
        self.servo_range
    }
    pub fn palm_angle(&self) -> f64 {
        self.palm_angle
    }
    pub fn palm_velocity(&self) -> f64 {
        self.palm_velocity
    }
    pub fn finger_command(&self) -> f64 {
        self.finger_command
    }
    pub fn finger_bends(&self) -> [f64; 3] {
        self.finger_bends
    }
    pub fn vacuum_on(&self) -> bool {
        self.vacuum_on
    }
    pub fn gripper_facing(&self) -> Facing {
        self.gripper_facing
    }
    pub fn flip_angle(&self) -> f64 {
        self.flip_angle
    }
    pub fn held_object(&self) -> Option<&HeldObject> {
        self.held_object.as_ref()
    }
    pub fn hold_mode(&self) -> HoldMode {
        self.held_object
            .as_ref()
            .map_or(HoldMode::None, |h| h.hold_mode)
    }

    pub fn set_palm(&mut self, angle: f64, velocity: f64) -> Result<(), StateError> {
        finite(angle, "palm_angle")?;
        finite(velocity, "palm_velocity")?;
        if !self.servo_range.contains(angle) {
            return Err(StateError::PalmOutOfRange {
                angle,
                min: self.servo_range.min,
                max: self.servo_range.max,
            });
        }
        self.palm_angle = angle;
        self.palm_velocity = velocity;
        Ok(())
    }

    pub fn set_fingers(&mut self, command: f64, bends: [f64; 3]) -> Result<(), StateError> {
        if !(0.0..=1.0).contains(&command) {
            return Err(StateError::CommandOutOfRange(command));
        }
        if let Some(b) = bends.iter().find(|b| !(0.0..=MAX_BEND_LIMIT).contains(*b)) {
            return Err(StateError::BendOutOfRange(*b));
        }
        self.finger_command = command;
        self.finger_bends = bends;
        Ok(())
    }

    pub fn set_vacuum(&mut self, on: bool) {
        self.vacuum_on = on;
    }

    /// Sets the body flip angle. The gripper faces up only at exactly 180°.
    pub fn set_flip_angle(&mut self, angle: f64) -> Result<(), StateError> {
        if !(0.0..=180.0).contains(&angle) {
            return Err(StateError::FlipOutOfRange(angle));
        }
        let facing = if angle == 180.0 {
            Facing::Up
        } else {
            Facing::Down
        };
        if facing == Facing::Down && self.hold_mode() == HoldMode::OnPalm {
            return Err(StateError::PalmHoldWhileFacingDown);
        }
        self.flip_angle = angle;
        self.gripper_facing = facing;
        Ok(())
    }

    pub fn hold(&mut self, held: HeldObject) -> Result<(), StateError> {
        finite(held.object_yaw, "object_yaw")?;
        if held.hold_mode == HoldMode::OnPalm {
            if self.gripper_facing != Facing::Up {
                return Err(StateError::PalmHoldWhileFacingDown);
            }
            if held.draped {
                return Err(StateError::DrapedOnPalm);
            }
        }
        self.held_object = Some(held);
        Ok(())
    }

    pub fn set_object_yaw(&mut self, yaw: f64) -> Result<(), StateError> {
        finite(yaw, "object_yaw")?;
        if let Some(h) = self.held_object.as_mut() {
            h.object_yaw = yaw;
        }
        Ok(())
    }

    pub fn release(&mut self) -> Option<HeldObject> {
        self.held_object.take()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Failed,
    Skipped,
}

/// One pipeline stage's result inside a trial.
///
/// `failure_detail` may accompany an `ok` outcome for events the stage
/// recovered from (an object pushed off centre then re-grasped, cloth left
/// draped over the fingers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: SequenceStage,
    pub outcome: Outcome,
    pub failure_detail: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialResult {
    pub object: ObjectSpec,
    pub finger_type: FingerType,
    pub stage_outcomes: Vec<StageRecord>,
    pub overall_success: bool,
    pub seed: u64,
}

impl TrialResult {
    pub fn failed_stages(&self) -> impl Iterator<Item = SequenceStage> + '_ {
        self.stage_outcomes
            .iter()
            .filter(|r| r.outcome == Outcome::Failed)
            .map(|r| r.stage)
    }
}
