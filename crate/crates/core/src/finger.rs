//! Finger actuation: pressure-response curves, the single-input calibration
//! that maps one command onto three voltage ranges, constant-curvature tip
//! kinematics and grasp feasibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FingerType, GripperConfig, ObjectSpec, ShapeClass, MAX_BEND_LIMIT};

/// Regulator command voltage limit.
pub const MAX_VOLTS: f64 = 5.0;

/// Number of evenly spaced command values used for residual evaluation and
/// monotonicity sweeps.
pub const COMMAND_GRID: usize = 101;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FingerError {
    #[error("invalid response curve: {0}")]
    InvalidCurve(String),
    #[error("invalid target bend range [{0}, {1}]")]
    InvalidTarget(f64, f64),
    #[error(
        "finger {finger}: target bend range [{b_min}, {b_max}] unreachable (max bend {max_bend})"
    )]
    UnreachableTarget {
        finger: usize,
        b_min: f64,
        b_max: f64,
        max_bend: f64,
    },
    #[error("command {0} outside [0, 1]")]
    CommandOutOfRange(f64),
    #[error("bend {0} outside [0, {MAX_BEND_LIMIT}]")]
    BendOutOfRange(f64),
    #[error("expected 3 curves, got {0}")]
    CurveCount(usize),
}

/// Monotone piecewise-linear map from regulator voltage to bend angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct ResponseCurve {
    samples: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for ResponseCurve {
    type Error = FingerError;

    fn try_from(samples: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        ResponseCurve::new(samples)
    }
}

impl From<ResponseCurve> for Vec<(f64, f64)> {
    fn from(c: ResponseCurve) -> Self {
        c.samples
    }
}

impl ResponseCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, FingerError> {
        let bad = |m: &str| Err(FingerError::InvalidCurve(m.to_string()));
        if samples.len() < 2 {
            return bad("needs at least two samples");
        }
        if samples
            .iter()
            .any(|(v, b)| !v.is_finite() || !b.is_finite())
        {
            return bad("non-finite sample");
        }
        if samples.iter().any(|(v, _)| *v < 0.0 || *v > MAX_VOLTS) {
            return bad("voltage outside [0, 5]");
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("voltages must be strictly increasing");
        }
        if samples.windows(2).any(|w| w[1].1 < w[0].1) {
            return bad("bends must be non-decreasing");
        }
        if samples[0].1 != 0.0 {
            return bad("bend at the first sample must be 0");
        }
        if samples[samples.len() - 1].1 > MAX_BEND_LIMIT {
            return bad("max bend above 200 degrees");
        }
        Ok(Self { samples })
    }

    /// Straight line from (0 V, 0°) to (5 V, `max_bend`).
    pub fn linear(max_bend: f64) -> Result<Self, FingerError> {
        Self::new(vec![(0.0, 0.0), (MAX_VOLTS, max_bend)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn max_bend(&self) -> f64 {
        self.samples[self.samples.len() - 1].1
    }

    /// Bend at voltage `v`, clamped to the sampled voltage span.
    pub fn bend_at(&self, v: f64) -> f64 {
        let s = &self.samples;
        if v <= s[0].0 {
            return s[0].1;
        }
        for w in s.windows(2) {
            let ((v0, b0), (v1, b1)) = (w[0], w[1]);
            if v <= v1 {
                return b0 + (b1 - b0) * (v - v0) / (v1 - v0);
            }
        }
        s[s.len() - 1].1
    }

    /// Lowest voltage producing `bend`, or `None` if the bend is not reachable.
    pub fn voltage_for(&self, bend: f64) -> Option<f64> {
        let s = &self.samples;
        if bend < s[0].1 || bend > self.max_bend() {
            return None;
        }
        if bend == s[0].1 {
            return Some(s[0].0);
        }
        for w in s.windows(2) {
            let ((v0, b0), (v1, b1)) = (w[0], w[1]);
            if bend <= b1 {
                if b1 == b0 {
                    return Some(v0);
                }
                return Some(v0 + (bend - b0) * (v1 - v0) / (b1 - b0));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltRange {
    pub v_lo: f64,
    pub v_hi: f64,
}

impl VoltRange {
    /// Linear interpolation that is exact at both ends.
    pub fn at(&self, u: f64) -> f64 {
        self.v_lo * (1.0 - u) + self.v_hi * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub ranges: [VoltRange; 3],
    /// Largest bend disagreement between fingers over the command grid, degrees.
    pub alignment_residual: f64,
}

/// Evenly spaced command values `0, 1/(n-1), ..., 1`.
pub fn command_grid(n: usize) -> impl Iterator<Item = f64> {
    let last = (n - 1) as f64;
    (0..n).map(move |i| i as f64 / last)
}

fn check_command(u: f64) -> Result<(), FingerError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(FingerError::CommandOutOfRange(u))
    }
}

/// Chooses per-finger voltage ranges so that one command in `[0, 1]` drives
/// all three fingers from `b_min` to `b_max`.
pub fn calibrate(
    curves: &[ResponseCurve; 3],
    target: (f64, f64),
) -> Result<Calibration, FingerError> {
    let (b_min, b_max) = target;
    if !(b_min >= 0.0 && b_min < b_max && b_max.is_finite()) {
        return Err(FingerError::InvalidTarget(b_min, b_max));
    }
    let mut ranges = [VoltRange {
        v_lo: 0.0,
        v_hi: 0.0,
    }; 3];
    for (i, curve) in curves.iter().enumerate() {
        let unreachable = || FingerError::UnreachableTarget {
            finger: i,
            b_min,
            b_max,
            max_bend: curve.max_bend(),
        };
        let v_lo = curve.voltage_for(b_min).ok_or_else(unreachable)?;
        let v_hi = curve.voltage_for(b_max).ok_or_else(unreachable)?;
        ranges[i] = VoltRange { v_lo, v_hi };
    }
    let mut cal = Calibration {
        ranges,
        alignment_residual: 0.0,
    };
    cal.alignment_residual = command_grid(COMMAND_GRID)
        .map(|u| {
            let b = bends_unchecked(u, &cal, curves);
            let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max);
    Ok(cal)
}

pub fn command_to_voltages(u: f64, cal: &Calibration) -> Result<[f64; 3], FingerError> {
    check_command(u)?;
    Ok(cal.ranges.map(|r| r.at(u)))
}

fn bends_unchecked(u: f64, cal: &Calibration, curves: &[ResponseCurve; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| curves[i].bend_at(cal.ranges[i].at(u)))
}

pub fn bend_angles(
    u: f64,
    cal: &Calibration,
    curves: &[ResponseCurve; 3],
) -> Result<[f64; 3], FingerError> {
    check_command(u)?;
    Ok(bends_unchecked(u, cal, curves))
}

/// Fingertip location in the gripper's cylindrical frame.
///
/// `radial` is the distance from the palm axis (negative once a tip has
/// crossed the axis); `vertical` is the height above the palm plane, negative
/// below it, with the gripper facing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipPosition {
    pub radial: f64,
    pub vertical: f64,
}

/// Constant-curvature arc endpoint for a finger of length `length` bent by
/// `bend_deg`, expressed in the finger's own frame as (along the mount
/// direction, towards the palm axis).
pub fn arc_endpoint(length: f64, bend_deg: f64) -> (f64, f64) {
    let theta = bend_deg.to_radians();
    if theta.abs() < 1e-12 {
        return (length, 0.0);
    }
    let radius = length / theta;
    (radius * theta.sin(), radius * (1.0 - theta.cos()))
}

/// Maps a point in the finger frame into the gripper frame.
pub fn finger_to_gripper(along: f64, inward: f64, cfg: &GripperConfig) -> TipPosition {
    let (s, c) = cfg.splay_angle.to_radians().sin_cos();
    TipPosition {
        radial: cfg.finger_mount_radius + along * s - inward * c,
        vertical: -along * c - inward * s,
    }
}

pub fn fingertip_position(
    bend: f64,
    cfg: &GripperConfig,
    finger_type: FingerType,
) -> Result<TipPosition, FingerError> {
    if !(0.0..=MAX_BEND_LIMIT).contains(&bend) {
        return Err(FingerError::BendOutOfRange(bend));
    }
    let (along, inward) = arc_endpoint(cfg.finger_length_for(finger_type), bend);
    Ok(finger_to_gripper(along, inward, cfg))
}

/// A finger type with its three response curves and calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerSet {
    pub finger_type: FingerType,
    pub curves: [ResponseCurve; 3],
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    pub finger: usize,
    pub samples: ResponseCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub curves: Vec<CurveRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_residual: Option<f64>,
}

/// Parses curve JSON: either a `CurveFile` object or a bare list of
/// `{"finger": i, "samples": [[volts, degrees], ...]}` records.
pub fn parse_curves(text: &str) -> Result<[ResponseCurve; 3], crate::Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let records: Vec<CurveRecord> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        serde_json::from_value::<CurveFile>(value)?.curves
    };
    if records.len() != 3 {
        return Err(FingerError::CurveCount(records.len()).into());
    }
    let mut slots: [Option<ResponseCurve>; 3] = [None, None, None];
    for r in records {
        if r.finger > 2 || slots[r.finger].is_some() {
            return Err(FingerError::InvalidCurve(format!("bad finger index {}", r.finger)).into());
        }
        slots[r.finger] = Some(r.samples);
    }
    Ok(slots.map(|c| c.expect("all three indices filled")))
}

/// Exports curves plus calibrated ranges and residual in the curve file format.
pub fn export_calibration(set: &FingerSet) -> CurveFile {
    CurveFile {
        note: None,
        curves: (0..3)
            .map(|i| CurveRecord {
                finger: i,
                samples: set.curves[i].clone(),
                v_lo: Some(set.calibration.ranges[i].v_lo),
                v_hi: Some(set.calibration.ranges[i].v_hi),
            })
            .collect(),
        alignment_residual: Some(set.calibration.alignment_residual),
    }
}

const MOULDED_CURVES: &str = include_str!("../data/curves_moulded.json");
const PRINTED_CURVES: &str = include_str!("../data/curves_printed.json");

impl FingerSet {
    pub fn new(
        finger_type: FingerType,
        curves: [ResponseCurve; 3],
        target: (f64, f64),
    ) -> Result<Self, FingerError> {
        let calibration = calibrate(&curves, target)?;
        Ok(Self {
            finger_type,
            curves,
            calibration,
        })
    }

    /// Bundled synthetic curves, calibrated over the default bend range.
    pub fn builtin(finger_type: FingerType) -> Self {
        let (text, target) = match finger_type {
            FingerType::MouldedOval => (MOULDED_CURVES, (0.0, 175.0)),
            FingerType::Printed => (PRINTED_CURVES, (0.0, 160.0)),
        };
        let curves = parse_curves(text).expect("bundled curves are valid");
        Self::new(finger_type, curves, target).expect("bundled calibration target is reachable")
    }

    pub fn bends(&self, u: f64) -> Result<[f64; 3], FingerError> {
        bend_angles(u, &self.calibration, &self.curves)
    }

    /// Tip positions of all three fingers at command `u`.
    pub fn tips(&self, u: f64, cfg: &GripperConfig) -> Result<[TipPosition; 3], FingerError> {
        let b = self.bends(u)?;
        Ok([
            fingertip_position(b[0], cfg, self.finger_type)?,
            fingertip_position(b[1], cfg, self.finger_type)?,
            fingertip_position(b[2], cfg, self.finger_type)?,
        ])
    }

    pub fn aperture(&self, u: f64, cfg: &GripperConfig) -> Result<f64, FingerError> {
        aperture(u, &self.calibration, &self.curves, cfg, self.finger_type)
    }
}

/// Inscribed grasp diameter between the fingertips at command `u`, mm.
pub fn aperture(
    u: f64,
    cal: &Calibration,
    curves: &[ResponseCurve; 3],
    cfg: &GripperConfig,
    finger_type: FingerType,
) -> Result<f64, FingerError> {
    let bends = bend_angles(u, cal, curves)?;
    let mut min_radial = f64::INFINITY;
    for b in bends {
        min_radial = min_radial.min(fingertip_position(b, cfg, finger_type)?.radial);
    }
    Ok((2.0 * min_radial).max(0.0))
}

/// Smallest command at which the aperture has closed to `width`, by bisection.
/// `None` if the fingers cannot close that far.
pub fn command_for_aperture(set: &FingerSet, cfg: &GripperConfig, width: f64) -> Option<f64> {
    let ap = |u: f64| set.aperture(u, cfg).expect("u in range");
    if ap(0.0) <= width {
        return Some(0.0);
    }
    if ap(1.0) > width {
        return None;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if ap(mid) <= width {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Height above the palm of the innermost fingertip at command `u`, with the
/// gripper facing up.
pub fn tip_height(set: &FingerSet, cfg: &GripperConfig, u: f64) -> f64 {
    let tips = set.tips(u, cfg).expect("u in range");
    let inner = tips
        .iter()
        .min_by(|a, b| a.radial.total_cmp(&b.radial))
        .expect("three tips");
    -inner.vertical
}

/// Height at which closing fingers first meet an object of width `width`
/// resting on the palm. Objects wider than the ring of finger roots touch the
/// fingers at their base, so the height is zero.
pub fn convergence_height(set: &FingerSet, cfg: &GripperConfig, width: f64) -> Option<f64> {
    if width >= 2.0 * cfg.finger_mount_radius {
        return Some(0.0);
    }
    command_for_aperture(set, cfg, width).map(|u| tip_height(set, cfg, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityReason {
    Ok,
    PinchRequired,
    MassExceedsCapacity,
    TooWide,
    TooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub reason: FeasibilityReason,
    pub grasp_u: Option<f64>,
    /// Cloth has to be pinched up before the fingertips can close on it.
    pub pinch_required: bool,
    /// The fingertips close below the object's centre of mass; the grasp is
    /// less stable but still possible.
    pub reach_limited: bool,
}

impl FeasibilityReport {
    fn infeasible(reason: FeasibilityReason) -> Self {
        Self {
            feasible: false,
            reason,
            grasp_u: None,
            pinch_required: false,
            reach_limited: false,
        }
    }
}

pub fn grasp_feasible(obj: &ObjectSpec, set: &FingerSet, cfg: &GripperConfig) -> FeasibilityReport {
    if obj.mass > cfg.mass_capacity {
        return FeasibilityReport::infeasible(FeasibilityReason::MassExceedsCapacity);
    }
    if obj.cloth_like || obj.shape_class == ShapeClass::Cloth {
        let pinch = set.finger_type == FingerType::MouldedOval;
        return FeasibilityReport {
            feasible: true,
            reason: if pinch {
                FeasibilityReason::PinchRequired
            } else {
                FeasibilityReason::Ok
            },
            grasp_u: Some(1.0),
            pinch_required: pinch,
            reach_limited: false,
        };
    }
    let width = obj.characteristic_width;
    let open = set.aperture(0.0, cfg).expect("u in range");
    if open < width - cfg.squeeze_margin {
        return FeasibilityReport::infeasible(FeasibilityReason::TooWide);
    }
    let Some(u) = command_for_aperture(set, cfg, width) else {
        return FeasibilityReport::infeasible(FeasibilityReason::TooSmall);
    };
    let reach = -set
        .tips(u, cfg)
        .expect("u in range")
        .iter()
        .map(|t| t.vertical)
        .fold(f64::INFINITY, f64::min);
    let reach_limited =
        set.finger_type == FingerType::Printed && obj.com_height_frac * obj.height > reach;
    FeasibilityReport {
        feasible: true,
        reason: FeasibilityReason::Ok,
        grasp_u: Some(u),
        pinch_required: false,
        reach_limited,
    }
}
