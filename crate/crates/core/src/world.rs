//! Rule-driven object interaction model.
//!
//! Every stochastic outcome (a drop that tips, a grasp that twists out) comes
//! from the editable rule table in `failure_rules.json`; geometric outcomes
//! (fingers converging above a short object) come from the finger kinematics.
//! All random choices go through a [`Resolver`] so the same code runs in
//! deterministic, seeded and exhaustive-enumeration modes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finger::{convergence_height, grasp_feasible, FeasibilityReport, FingerSet};
use crate::model::{
    builtin_objects, Facing, FingerType, GripperConfig, GripperState, HoldMode, ObjectSpec,
    ShapeClass,
};
use crate::palm::PalmRotor;
use crate::rng::{derive_key, probability_threshold, CounterRng, UNIT_SCALE};
use crate::sequencer::SequenceStage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    PushedOffCenter,
    SaggedDrop,
    LostGripDeform,
    TwistedOut,
    TippedOnDrop,
    BouncedOff,
    DrapedOnFingers,
    FellBetweenFingers,
    BlockedRotation,
    ConvergeRegraspFail,
    DisplacedOnRegrasp,
}

impl FailureKind {
    /// Whether this event fails the stage it happens in. An egg pushed off
    /// centre is simply re-grasped; cloth draped over the fingers still lets
    /// the drop finish and only blocks the rotation that follows.
    pub fn is_fatal(self) -> bool {
        !matches!(
            self,
            FailureKind::PushedOffCenter | FailureKind::DrapedOnFingers
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule file: {0}")]
    Parse(String),
    #[error("rule {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("no rule covers {object} / {finger} / {stage:?}")]
    Gap {
        object: String,
        finger: FingerType,
        stage: SequenceStage,
    },
    #[error("rules {first} and {second} both cover {object} / {finger} / {stage:?}")]
    Duplicate {
        first: String,
        second: String,
        object: String,
        finger: FingerType,
        stage: SequenceStage,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    pub stage: SequenceStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_class: Option<Vec<ShapeClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloth_like: Option<bool>,
    /// mm, inclusive
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_width: Option<f64>,
    /// mm, exclusive
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finger_type: Option<FingerType>,
}

impl RuleMatch {
    pub fn matches(&self, obj: &ObjectSpec, finger: FingerType, stage: SequenceStage) -> bool {
        self.stage == stage
            && self
                .shape_class
                .as_ref()
                .is_none_or(|s| s.contains(&obj.shape_class))
            && self.cloth_like.is_none_or(|c| c == obj.cloth_like)
            && self.min_width.is_none_or(|w| obj.characteristic_width >= w)
            && self.max_width.is_none_or(|w| obj.characteristic_width < w)
            && self.finger_type.is_none_or(|f| f == finger)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedOutcome {
    pub kind: FailureKind,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRule {
    pub id: String,
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    /// Non-nominal outcomes; the remaining probability mass is nominal.
    pub outcomes: Vec<WeightedOutcome>,
    /// Outcome used in deterministic mode; `None` means nominal.
    pub deterministic: Option<FailureKind>,
    pub paper_quote: String,
}

impl FailureRule {
    pub fn nominal_probability(&self) -> f64 {
        1.0 - self.outcomes.iter().map(|o| o.probability).sum::<f64>()
    }

    /// Probability that the stage fails under this rule.
    pub fn fatal_probability(&self) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.kind.is_fatal())
            .map(|o| o.probability)
            .sum()
    }

    /// The outcomes with positive probability, nominal (`None`) last.
    pub fn alternatives(&self) -> Vec<Option<FailureKind>> {
        let mut alts: Vec<Option<FailureKind>> = self
            .outcomes
            .iter()
            .filter(|o| o.probability > 0.0)
            .map(|o| Some(o.kind))
            .collect();
        if probability_threshold(self.outcomes.iter().map(|o| o.probability).sum()) < UNIT_SCALE {
            alts.push(None);
        }
        alts
    }

    fn validate(&self) -> Result<(), RuleError> {
        let invalid = |m: &str| {
            Err(RuleError::Invalid {
                id: self.id.clone(),
                message: m.to_string(),
            })
        };
        if self.paper_quote.trim().is_empty() {
            return invalid("paper_quote must not be empty");
        }
        if self
            .outcomes
            .iter()
            .any(|o| !(0.0..=1.0).contains(&o.probability))
        {
            return invalid("probabilities must lie in [0, 1]");
        }
        if self.outcomes.iter().map(|o| o.probability).sum::<f64>() > 1.0 + 1e-12 {
            return invalid("outcome probabilities sum above 1");
        }
        if let Some(d) = self.deterministic {
            if !self
                .outcomes
                .iter()
                .any(|o| o.kind == d && o.probability > 0.0)
            {
                return invalid("deterministic outcome is not a listed outcome");
            }
        }
        if self.matcher.stage == SequenceStage::Idle || self.matcher.stage == SequenceStage::Done {
            return invalid("rules apply to pipeline stages only");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    #[serde(default)]
    pub note: String,
    pub rules: Vec<FailureRule>,
}

const BUILTIN_RULES: &str = include_str!("../data/failure_rules.json");

impl RuleTable {
    /// Parses and checks a rule table: every rule must be well formed and
    /// every (object, finger type, stage) combination for `objects` must be
    /// matched by exactly one rule.
    pub fn from_json(text: &str, objects: &[ObjectSpec]) -> Result<Self, RuleError> {
        let table: RuleTable =
            serde_json::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
        for r in &table.rules {
            r.validate()?;
        }
        table.check_coverage(objects)?;
        Ok(table)
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_RULES, &builtin_objects()).expect("bundled rule table is valid")
    }

    pub fn check_coverage(&self, objects: &[ObjectSpec]) -> Result<(), RuleError> {
        for obj in objects {
            for finger in FingerType::ALL {
                for stage in SequenceStage::PIPELINE {
                    let mut hits = self
                        .rules
                        .iter()
                        .filter(|r| r.matcher.matches(obj, finger, stage));
                    let Some(first) = hits.next() else {
                        return Err(RuleError::Gap {
                            object: obj.name.clone(),
                            finger,
                            stage,
                        });
                    };
                    if let Some(second) = hits.next() {
                        return Err(RuleError::Duplicate {
                            first: first.id.clone(),
                            second: second.id.clone(),
                            object: obj.name.clone(),
                            finger,
                            stage,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn find(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        stage: SequenceStage,
    ) -> Option<&FailureRule> {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(obj, finger, stage))
    }

    /// Probability the stage survives the rule table (geometry not included).
    pub fn stage_success_probability(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        stage: SequenceStage,
    ) -> f64 {
        self.find(obj, finger, stage)
            .map_or(1.0, |r| 1.0 - r.fatal_probability())
    }
}

/// Exhaustive-enumeration script: a fixed prefix of choices, then the first
/// alternative at every further decision point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    pub choices: Vec<usize>,
    cursor: usize,
    /// Number of alternatives seen at each decision point, in order.
    pub arities: Vec<usize>,
}

impl Script {
    pub fn new(choices: Vec<usize>) -> Self {
        Self {
            choices,
            cursor: 0,
            arities: Vec::new(),
        }
    }

    fn choose(&mut self, arity: usize) -> usize {
        let c = self.choices.get(self.cursor).copied().unwrap_or(0);
        self.cursor += 1;
        self.arities.push(arity);
        c.min(arity.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every rule resolves to its `deterministic` outcome.
    Deterministic,
    /// Rules resolve by seeded draws.
    Stochastic,
}

/// Source of outcome decisions.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolver {
    Deterministic,
    Seeded(CounterRng),
    Scripted(Script),
}

impl Resolver {
    pub fn seeded(seed: u64) -> Self {
        Resolver::Seeded(CounterRng::new(seed))
    }

    pub fn for_mode(mode: Mode, seed: u64) -> Self {
        match mode {
            Mode::Deterministic => Resolver::Deterministic,
            Mode::Stochastic => Resolver::seeded(seed),
        }
    }

    /// Resolves one rule to a non-nominal outcome or `None` (nominal).
    pub fn pick(&mut self, rule: &FailureRule) -> Option<FailureKind> {
        match self {
            Resolver::Deterministic => rule.deterministic,
            Resolver::Seeded(rng) => {
                let draw = rng.next_unit_bits();
                let mut cumulative = 0.0;
                for o in &rule.outcomes {
                    cumulative += o.probability;
                    if draw < probability_threshold(cumulative) {
                        return Some(o.kind);
                    }
                }
                None
            }
            Resolver::Scripted(script) => {
                let alts = rule.alternatives();
                if alts.len() <= 1 {
                    return alts.first().copied().flatten();
                }
                alts[script.choose(alts.len())]
            }
        }
    }

    /// Uniform draw in `[lo, hi]`; non-random modes return `hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        match self {
            Resolver::Seeded(rng) => rng.uniform(lo, hi),
            _ => hi,
        }
    }

    /// Child resolver for an independent sub-stream (stage, attempt).
    pub fn fork(&self, label: u64) -> Resolver {
        match self {
            Resolver::Seeded(rng) => {
                Resolver::Seeded(CounterRng::new(derive_key(rng.key(), label)))
            }
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("gripper must be facing {0:?}")]
    WrongFacing(Facing),
    #[error("object must be held in the fingers")]
    NotInFingers,
    #[error("object must be resting centred on the palm")]
    NotOnPalm,
    #[error("object cannot be grasped: {0:?}")]
    Infeasible(FeasibilityReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropKind {
    Centered,
    OffCenter,
    Tipped,
    Bounced,
    Draped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropOutcome {
    pub kind: DropKind,
    /// degrees
    pub landing_yaw: f64,
    pub failure: Option<FailureKind>,
}

impl DropOutcome {
    pub fn on_palm(&self) -> bool {
        matches!(self.kind, DropKind::Centered | DropKind::OffCenter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspOutcome {
    Ok,
    PushedOffCenter,
    PinchThenOk,
    TwistedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipHold {
    Held,
    SaggedDrop,
    LostGripDeform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegraspOutcome {
    Ok,
    ConvergeRegraspFail,
    DisplacedOnRegrasp { yaw_error: f64 },
}

/// Largest yaw error when a re-grasp knocks a non-circular object, degrees.
pub const DISPLACEMENT_BOUND: f64 = 15.0;

/// Everything the simulator needs: geometry, finger sets, palm and rules.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: GripperConfig,
    pub moulded: FingerSet,
    pub printed: FingerSet,
    pub rotor: PalmRotor,
    pub rules: RuleTable,
    pub mode: Mode,
}

impl World {
    pub fn builtin(mode: Mode) -> Self {
        let config = GripperConfig::default();
        Self {
            moulded: FingerSet::builtin(FingerType::MouldedOval),
            printed: FingerSet::builtin(FingerType::Printed),
            rotor: PalmRotor::from_config(&config),
            rules: RuleTable::builtin(),
            config,
            mode,
        }
    }

    pub fn finger_set(&self, finger: FingerType) -> &FingerSet {
        match finger {
            FingerType::MouldedOval => &self.moulded,
            FingerType::Printed => &self.printed,
        }
    }

    pub fn resolver(&self, seed: u64) -> Resolver {
        Resolver::for_mode(self.mode, seed)
    }

    pub fn feasibility(&self, obj: &ObjectSpec, finger: FingerType) -> FeasibilityReport {
        grasp_feasible(obj, self.finger_set(finger), &self.config)
    }

    fn rule_outcome(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        stage: SequenceStage,
        resolver: &mut Resolver,
    ) -> Option<FailureKind> {
        self.rules
            .find(obj, finger, stage)
            .and_then(|r| resolver.pick(r))
    }

    pub fn grasp_attempt_with(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        resolver: &mut Resolver,
    ) -> Result<GraspOutcome, WorldError> {
        if state.gripper_facing() != Facing::Down {
            return Err(WorldError::WrongFacing(Facing::Down));
        }
        let report = self.feasibility(obj, finger);
        if !report.feasible {
            return Err(WorldError::Infeasible(report));
        }
        Ok(
            match self.rule_outcome(obj, finger, SequenceStage::Grasp, resolver) {
                Some(FailureKind::PushedOffCenter) => GraspOutcome::PushedOffCenter,
                Some(_) => GraspOutcome::TwistedOut,
                None if report.pinch_required => GraspOutcome::PinchThenOk,
                None => GraspOutcome::Ok,
            },
        )
    }

    pub fn grasp_attempt(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        seed: u64,
    ) -> Result<GraspOutcome, WorldError> {
        self.grasp_attempt_with(state, obj, finger, &mut self.resolver(seed))
    }

    /// Whether the fingers keep the object while the body turns over.
    pub fn flip_hold_check_with(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        stage: SequenceStage,
        resolver: &mut Resolver,
    ) -> FlipHold {
        match self.rule_outcome(obj, finger, stage, resolver) {
            Some(FailureKind::LostGripDeform) => FlipHold::LostGripDeform,
            Some(_) => FlipHold::SaggedDrop,
            None => FlipHold::Held,
        }
    }

    pub fn flip_hold_check(&self, obj: &ObjectSpec, finger: FingerType, seed: u64) -> FlipHold {
        self.flip_hold_check_with(obj, finger, SequenceStage::FlipUp, &mut self.resolver(seed))
    }

    pub fn drop_onto_palm_with(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        resolver: &mut Resolver,
    ) -> Result<DropOutcome, WorldError> {
        if state.gripper_facing() != Facing::Up {
            return Err(WorldError::WrongFacing(Facing::Up));
        }
        if state.hold_mode() != HoldMode::InFingers {
            return Err(WorldError::NotInFingers);
        }
        let failure = self.rule_outcome(obj, finger, SequenceStage::DropToPalm, resolver);
        let kind = match failure {
            None => DropKind::Centered,
            Some(FailureKind::TippedOnDrop) => DropKind::Tipped,
            Some(FailureKind::BouncedOff | FailureKind::FellBetweenFingers) => DropKind::Bounced,
            Some(FailureKind::DrapedOnFingers) => DropKind::Draped,
            Some(_) => DropKind::OffCenter,
        };
        Ok(DropOutcome {
            kind,
            landing_yaw: state.palm_angle(),
            failure,
        })
    }

    pub fn drop_onto_palm(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        seed: u64,
    ) -> Result<DropOutcome, WorldError> {
        self.drop_onto_palm_with(state, obj, finger, &mut self.resolver(seed))
    }

    /// Moulded fingers that meet at a height above the object never touch it.
    pub fn converges_above(&self, obj: &ObjectSpec, finger: FingerType) -> bool {
        if finger != FingerType::MouldedOval {
            return false;
        }
        match convergence_height(
            self.finger_set(finger),
            &self.config,
            obj.characteristic_width,
        ) {
            Some(h) => obj.height < h,
            None => true,
        }
    }

    /// A flat annulus wider than the open fingers gets knocked round by the
    /// closing fingertips.
    pub fn displaced_by_regrasp(&self, obj: &ObjectSpec, finger: FingerType) -> bool {
        if obj.rotationally_symmetric() || obj.shape_class != ShapeClass::Annulus {
            return false;
        }
        let open = self
            .finger_set(finger)
            .aperture(0.0, &self.config)
            .expect("u in range");
        obj.characteristic_width > open
    }

    pub fn regrasp_with(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        resolver: &mut Resolver,
    ) -> Result<RegraspOutcome, WorldError> {
        match state.held_object() {
            Some(h) if h.hold_mode == HoldMode::OnPalm && !h.draped => {}
            _ => return Err(WorldError::NotOnPalm),
        }
        if self.converges_above(obj, finger) {
            return Ok(RegraspOutcome::ConvergeRegraspFail);
        }
        if self.displaced_by_regrasp(obj, finger) {
            let yaw_error = resolver.uniform(-DISPLACEMENT_BOUND, DISPLACEMENT_BOUND);
            return Ok(RegraspOutcome::DisplacedOnRegrasp { yaw_error });
        }
        Ok(
            match self.rule_outcome(obj, finger, SequenceStage::Regrasp, resolver) {
                Some(FailureKind::ConvergeRegraspFail) => RegraspOutcome::ConvergeRegraspFail,
                Some(_) => RegraspOutcome::DisplacedOnRegrasp {
                    yaw_error: resolver.uniform(-DISPLACEMENT_BOUND, DISPLACEMENT_BOUND),
                },
                None => RegraspOutcome::Ok,
            },
        )
    }

    pub fn regrasp(
        &self,
        state: &GripperState,
        obj: &ObjectSpec,
        finger: FingerType,
        seed: u64,
    ) -> Result<RegraspOutcome, WorldError> {
        self.regrasp_with(state, obj, finger, &mut self.resolver(seed))
    }

    /// Rotation blocked by the rule table (cloth caught in the fingers).
    pub fn rotation_blocked_with(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        resolver: &mut Resolver,
    ) -> Option<FailureKind> {
        self.rule_outcome(obj, finger, SequenceStage::RotatePalm, resolver)
    }

    /// Rule outcome for the bookkeeping stages (approach, lift, place).
    pub fn plain_stage_with(
        &self,
        obj: &ObjectSpec,
        finger: FingerType,
        stage: SequenceStage,
        resolver: &mut Resolver,
    ) -> Option<FailureKind> {
        self.rule_outcome(obj, finger, stage, resolver)
    }
}
