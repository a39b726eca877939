//! Experiment suite: every object with every finger set, N trials each,
//! summarised as a success matrix with per-stage failure counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{builtin_objects, FingerType, ObjectSpec, TrialResult};
use crate::palm::{Profile, DEFAULT_ACCEL};
use crate::rng::derive_key;
use crate::sequencer::{run_trial, stage_precondition, PlanError, SequencePlan, SequenceStage};
use crate::world::{Mode, World};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("no objects or finger types selected")]
    EmptySelection,
    #[error("report has no trials")]
    EmptyReport,
    #[error("object {object}: {source}")]
    Plan { object: String, source: PlanError },
    #[error("csv line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub objects: Vec<ObjectSpec>,
    pub fingers: Vec<FingerType>,
    pub repetitions: u32,
    pub seed: u64,
    pub target_yaw: f64,
    pub rotation_speed: f64,
    pub restart_on_failure: bool,
    pub retries: u32,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            objects: builtin_objects(),
            fingers: FingerType::ALL.to_vec(),
            repetitions: 5,
            seed: 0,
            target_yaw: 180.0,
            rotation_speed: 600.0,
            restart_on_failure: true,
            retries: 0,
        }
    }
}

impl SuiteConfig {
    pub fn plan(&self, object: &ObjectSpec, finger_type: FingerType) -> SequencePlan {
        SequencePlan {
            target_yaw: self.target_yaw,
            rotation_speed: self.rotation_speed,
            restart_on_failure: self.restart_on_failure,
            retries: self.retries,
            ..SequencePlan::new(object.clone(), finger_type)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub object: ObjectSpec,
    pub finger_type: FingerType,
    pub trials: Vec<TrialResult>,
    /// Failed stage outcomes per stage.
    pub stage_failure_histogram: BTreeMap<SequenceStage, u32>,
    pub overall_success_rate: f64,
}

impl PairReport {
    fn new(object: ObjectSpec, finger_type: FingerType, trials: Vec<TrialResult>) -> Self {
        let mut hist = BTreeMap::new();
        for t in &trials {
            for stage in t.failed_stages() {
                *hist.entry(stage).or_insert(0) += 1;
            }
        }
        let successes = trials.iter().filter(|t| t.overall_success).count();
        let rate = if trials.is_empty() {
            0.0
        } else {
            successes as f64 / trials.len() as f64
        };
        Self {
            object,
            finger_type,
            trials,
            stage_failure_histogram: hist,
            overall_success_rate: rate,
        }
    }

    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.overall_success).count()
    }

    pub fn failures_at(&self, stage: SequenceStage) -> u32 {
        self.stage_failure_histogram
            .get(&stage)
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub repetitions: u32,
    pub pairs: Vec<PairReport>,
}

impl ExperimentReport {
    pub fn pair(&self, object: &str, finger_type: FingerType) -> Option<&PairReport> {
        self.pairs
            .iter()
            .find(|p| p.object.name == object && p.finger_type == finger_type)
    }

    fn objects(&self) -> Vec<&ObjectSpec> {
        let mut out: Vec<&ObjectSpec> = Vec::new();
        for p in &self.pairs {
            if !out.iter().any(|o| o.name == p.object.name) {
                out.push(&p.object);
            }
        }
        out
    }

    fn fingers(&self) -> Vec<FingerType> {
        let mut out = Vec::new();
        for p in &self.pairs {
            if !out.contains(&p.finger_type) {
                out.push(p.finger_type);
            }
        }
        out
    }
}

/// Seed for one trial, derived from the suite seed, the pair's position and
/// the repetition number.
pub fn trial_seed(base: u64, pair_index: usize, rep: u32) -> u64 {
    derive_key(derive_key(base, pair_index as u64), rep as u64)
}

pub fn run_suite(world: &World, cfg: &SuiteConfig) -> Result<ExperimentReport, HarnessError> {
    if cfg.repetitions == 0 {
        return Err(HarnessError::ZeroRepetitions);
    }
    if cfg.objects.is_empty() || cfg.fingers.is_empty() {
        return Err(HarnessError::EmptySelection);
    }
    let mut pairs = Vec::new();
    for obj in &cfg.objects {
        for &ft in &cfg.fingers {
            let plan = cfg.plan(obj, ft);
            plan.validate(world).map_err(|source| HarnessError::Plan {
                object: obj.name.clone(),
                source,
            })?;
            pairs.push(plan);
        }
    }
    let reps = cfg.repetitions;
    let jobs: Vec<(usize, u32)> = (0..pairs.len())
        .flat_map(|p| (0..reps).map(move |r| (p, r)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(p, r)| run_trial(world, &pairs[p], trial_seed(cfg.seed, p, r)))
        .collect();
    let mut it = results.into_iter();
    let reports = pairs
        .iter()
        .map(|plan| {
            let trials: Vec<TrialResult> = it.by_ref().take(reps as usize).collect();
            PairReport::new(plan.object.clone(), plan.finger_type, trials)
        })
        .collect();
    Ok(ExperimentReport {
        mode: world.mode,
        seed: cfg.seed,
        repetitions: reps,
        pairs: reports,
    })
}

/// Success probability of one trial implied by the rule table and geometry:
/// the product over stages of each stage's survival probability.
pub fn closed_form_success(world: &World, plan: &SequencePlan) -> f64 {
    let obj = &plan.object;
    let ft = plan.finger_type;
    if !world.feasibility(obj, ft).feasible {
        return 0.0;
    }
    let attempts = plan.retries as i32 + 1;
    let mut p = 1.0;
    for stage in SequenceStage::PIPELINE {
        let mut survive = world.rules.stage_success_probability(obj, ft, stage);
        if stage == SequenceStage::Regrasp
            && (world.converges_above(obj, ft) || world.displaced_by_regrasp(obj, ft))
        {
            survive = 0.0;
        }
        if stage == SequenceStage::RotatePalm {
            let start = stage_precondition(world, plan, stage).palm_angle();
            let profile = Profile::new(start, plan.target_yaw, plan.rotation_speed, DEFAULT_ACCEL);
            if world.rotor.torque_margin(obj, &profile, true) < 0.0 {
                survive = 0.0;
            }
        }
        p *= 1.0 - (1.0 - survive).powi(attempts);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?} (table|json|csv)")),
        }
    }
}

/// File names and formats of the committed golden matrix.
pub const GOLDEN_FILES: [(&str, ReportFormat); 2] = [
    ("matrix.txt", ReportFormat::Table),
    ("matrix.csv", ReportFormat::Csv),
];

/// Renders the golden matrix: the default suite on the bundled data in
/// deterministic mode.
pub fn golden_outputs() -> Result<Vec<(&'static str, String)>, HarnessError> {
    let world = World::builtin(Mode::Deterministic);
    let report = run_suite(&world, &SuiteConfig::default())?;
    GOLDEN_FILES
        .iter()
        .map(|&(name, format)| Ok((name, render_report(&report, format)?)))
        .collect()
}

pub fn render_report(
    report: &ExperimentReport,
    format: ReportFormat,
) -> Result<String, HarnessError> {
    if report.pairs.iter().all(|p| p.trials.is_empty()) {
        return Err(HarnessError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => ReportSummary::from_report(report).to_csv(),
    })
}

fn mass_label(mass: f64) -> String {
    format!("{mass} g")
}

fn render_table(report: &ExperimentReport) -> String {
    let objects = report.objects();
    let fingers = report.fingers();
    let headers: Vec<String> = objects
        .iter()
        .map(|o| format!("{} ({})", o.name, mass_label(o.mass)))
        .collect();
    let first_w = SequenceStage::PIPELINE
        .iter()
        .map(|s| s.name().len() + 2)
        .chain(fingers.iter().map(|f| f.label().len()))
        .max()
        .unwrap_or(0)
        .max("fingers".len());
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(5)).collect();
    let mut out = String::new();
    let row = |out: &mut String, first: &str, cells: &[String]| {
        let mut line = format!("{first:<first_w$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(line, " | {c:>w$}");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    row(&mut out, "fingers", &headers);
    let rule_len = first_w + widths.iter().map(|w| w + 3).sum::<usize>();
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for &ft in &fingers {
        let cells: Vec<String> = objects
            .iter()
            .map(|o| {
                report.pair(&o.name, ft).map_or("-".into(), |p| {
                    format!("{}/{}", p.successes(), p.trials.len())
                })
            })
            .collect();
        row(&mut out, ft.label(), &cells);
    }
    for &ft in &fingers {
        out.push('\n');
        out.push_str(&format!("failures by stage, {} fingers\n", ft.label()));
        for stage in SequenceStage::PIPELINE {
            let cells: Vec<String> = objects
                .iter()
                .map(|o| {
                    report
                        .pair(&o.name, ft)
                        .map_or("-".into(), |p| p.failures_at(stage).to_string())
                })
                .collect();
            row(&mut out, &format!("  {}", stage.name()), &cells);
        }
    }
    out
}

/// One CSV row: the per-pair summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub object: String,
    pub mass_g: f64,
    pub finger_type: FingerType,
    pub repetitions: u32,
    pub successes: u32,
    /// Failed outcomes per pipeline stage, in pipeline order.
    pub stage_failures: [u32; 9],
}

impl SummaryRow {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.repetitions as f64
    }
}

/// The machine-readable summary carried by the CSV format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportSummary {
    pub rows: Vec<SummaryRow>,
}

const FIXED_COLUMNS: [&str; 6] = [
    "object",
    "mass_g",
    "finger_type",
    "repetitions",
    "successes",
    "success_rate",
];

impl ReportSummary {
    pub fn from_report(report: &ExperimentReport) -> Self {
        let rows = report
            .pairs
            .iter()
            .map(|p| SummaryRow {
                object: p.object.name.clone(),
                mass_g: p.object.mass,
                finger_type: p.finger_type,
                repetitions: p.trials.len() as u32,
                successes: p.successes() as u32,
                stage_failures: SequenceStage::PIPELINE.map(|s| p.failures_at(s)),
            })
            .collect();
        Self { rows }
    }

    pub fn header() -> Vec<String> {
        FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(SequenceStage::PIPELINE.iter().map(|s| s.name().to_string()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(Self::header()).expect("write to memory");
        for r in &self.rows {
            let mut rec = vec![
                r.object.clone(),
                r.mass_g.to_string(),
                r.finger_type.label().to_string(),
                r.repetitions.to_string(),
                r.successes.to_string(),
                format!("{:.3}", r.success_rate()),
            ];
            rec.extend(r.stage_failures.iter().map(|c| c.to_string()));
            w.write_record(rec).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
    }

    pub fn parse_csv(text: &str) -> Result<Self, HarnessError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let err = |line: usize, message: String| HarnessError::Parse { line, message };
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| err(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != Self::header() {
            return Err(err(1, "unexpected columns".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let num = |k: usize| -> Result<u32, HarnessError> {
                field(k)
                    .parse()
                    .map_err(|_| err(line, format!("bad {} {:?}", header[k], field(k))))
            };
            let finger_type = FingerType::ALL
                .into_iter()
                .find(|f| f.label() == field(2))
                .ok_or_else(|| err(line, format!("unknown finger type {:?}", field(2))))?;
            let mass_g: f64 = field(1)
                .parse()
                .map_err(|_| err(line, format!("bad mass {:?}", field(1))))?;
            let mut stage_failures = [0; 9];
            for (k, slot) in stage_failures.iter_mut().enumerate() {
                *slot = num(FIXED_COLUMNS.len() + k)?;
            }
            let row = SummaryRow {
                object: field(0).to_string(),
                mass_g,
                finger_type,
                repetitions: num(3)?,
                successes: num(4)?,
                stage_failures,
            };
            if row.repetitions == 0 || row.successes > row.repetitions {
                return Err(err(line, "inconsistent counts".into()));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }
}
