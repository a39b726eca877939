//! `palmgrip`: experiment runner, golden-file tool and teleop server.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use palmgrip_core::harness::{golden_outputs, render_report, run_suite, ReportFormat, SuiteConfig};
use palmgrip_core::model::{builtin_objects, parse_objects, FingerType, GripperConfig, ObjectSpec};
use palmgrip_core::palm::{derive_hold_force, PalmRotor, Profile, SlipModel, DEFAULT_ACCEL};
use palmgrip_core::sequencer::{run_trial_traced, trace_to_ndjson};
use palmgrip_core::world::{Mode, World};
use palmgrip_teleop::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "palmgrip",
    version,
    about = "Simulated soft gripper with a rotating vacuum palm"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fingers {
    Moulded,
    Printed,
    Both,
}

impl Fingers {
    fn types(self) -> Vec<FingerType> {
        match self {
            Fingers::Moulded => vec![FingerType::MouldedOval],
            Fingers::Printed => vec![FingerType::Printed],
            Fingers::Both => FingerType::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Det,
    Stoch,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Det => Mode::Deterministic,
            ModeArg::Stoch => Mode::Stochastic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FingerArg {
    Moulded,
    Printed,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (object, finger set) pair for a number of repetitions.
    Run {
        #[arg(long, value_enum, default_value = "both")]
        fingers: Fingers,
        /// `builtin` or a JSON file of objects.
        #[arg(long, default_value = "builtin")]
        objects: String,
        #[arg(long, default_value_t = 5)]
        reps: u32,
        #[arg(long, value_enum, default_value = "det")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gripper config JSON; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra attempts at a failed stage before moving on.
        #[arg(long, default_value_t = 0)]
        retries: u32,
    },
    /// Regenerate (or with --check, verify) the committed golden matrix.
    Golden {
        #[arg(long, default_value = "crates/core/data/golden")]
        dir: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Run one trial and print its result; optionally write the stage trace.
    Trial {
        #[arg(long)]
        object: String,
        #[arg(long, value_enum)]
        fingers: FingerArg,
        #[arg(long, value_enum, default_value = "stoch")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// NDJSON trace of stage transitions.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Derive the minimum suction force for the built-in objects and show
    /// the resulting speed limits.
    HoldForce {
        #[arg(long, default_value_t = 600.0)]
        speed: f64,
        #[arg(long, default_value_t = 0.25)]
        margin: f64,
    },
    /// Start the WebSocket teleop service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config file and PALMGRIP_BIND.
        #[arg(long)]
        bind: Option<String>,
        /// Overrides the config file and PALMGRIP_RATE_HZ.
        #[arg(long)]
        rate_hz: Option<u32>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn load_objects(spec: &str) -> Result<Vec<ObjectSpec>> {
    if spec == "builtin" {
        return Ok(builtin_objects());
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    parse_objects(&text).with_context(|| format!("parsing {spec}"))
}

fn world(mode: Mode, config: Option<&Path>) -> Result<World> {
    let mut w = World::builtin(mode);
    if let Some(path) = config {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = GripperConfig::from_json(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        w.rotor = PalmRotor::from_config(&cfg);
        w.config = cfg;
    }
    Ok(w)
}

fn write_out(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    fingers: Fingers,
    objects: &str,
    reps: u32,
    mode: ModeArg,
    seed: u64,
    format: ReportFormat,
    out: Option<&Path>,
    config: Option<&Path>,
    retries: u32,
) -> Result<()> {
    let objects = load_objects(objects)?;
    let world = world(mode.into(), config)?;
    world
        .rules
        .check_coverage(&objects)
        .context("the rule table does not cover these objects")?;
    let suite = SuiteConfig {
        objects,
        fingers: fingers.types(),
        repetitions: reps,
        seed,
        retries,
        ..SuiteConfig::default()
    };
    let report = run_suite(&world, &suite)?;
    write_out(&render_report(&report, format)?, out)
}

fn cmd_golden(dir: &Path, check: bool) -> Result<()> {
    let outputs = golden_outputs()?;
    if check {
        let mut stale = Vec::new();
        for (name, text) in &outputs {
            let path = dir.join(name);
            let committed = std::fs::read_to_string(&path).unwrap_or_default();
            if committed != *text {
                stale.push(path.display().to_string());
            }
        }
        if !stale.is_empty() {
            bail!("golden files differ: {}", stale.join(", "));
        }
        println!("golden files match");
        return Ok(());
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in &outputs {
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    println!("review the diff before committing");
    Ok(())
}

fn cmd_trial(
    object: &str,
    fingers: FingerArg,
    mode: ModeArg,
    seed: u64,
    trace: Option<&Path>,
) -> Result<()> {
    let obj = builtin_objects()
        .into_iter()
        .find(|o| o.name == object)
        .with_context(|| format!("no built-in object named {object:?}"))?;
    let ft = match fingers {
        FingerArg::Moulded => FingerType::MouldedOval,
        FingerArg::Printed => FingerType::Printed,
    };
    let world = World::builtin(mode.into());
    let plan = palmgrip_core::sequencer::SequencePlan::new(obj, ft);
    plan.validate(&world)?;
    let run = run_trial_traced(&world, &plan, seed);
    if let Some(path) = trace {
        std::fs::write(path, trace_to_ndjson(&run.trace))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&run.result)?);
    Ok(())
}

fn cmd_hold_force(speed: f64, margin: f64) -> Result<()> {
    if !(speed > 0.0 && margin >= 0.0) {
        bail!("speed must be positive and margin non-negative");
    }
    let cfg = GripperConfig::default();
    let template = SlipModel::from_config(&cfg);
    let objects = builtin_objects();
    let force = derive_hold_force(&objects, speed, DEFAULT_ACCEL, margin, &template);
    println!(
        "minimum hold force at {speed} deg/s with {:.0}% margin: {force:.1} N",
        margin * 100.0
    );
    println!("configured hold force: {:.1} N", cfg.vacuum_hold_force);
    let rotor = PalmRotor::from_config(&cfg);
    let profile = Profile::new(0.0, 180.0, speed, DEFAULT_ACCEL);
    println!(
        "{:<24} {:>8} {:>14} {:>12}",
        "object", "mass g", "limit deg/s", "margin"
    );
    for obj in &objects {
        println!(
            "{:<24} {:>8.0} {:>14.0} {:>11.0}%",
            obj.name,
            obj.mass,
            rotor.max_noslip_speed(obj, true, DEFAULT_ACCEL),
            rotor.torque_margin(obj, &profile, true) * 100.0
        );
    }
    Ok(())
}

async fn cmd_serve(
    config: Option<&Path>,
    bind: Option<String>,
    rate_hz: Option<u32>,
    trace: Option<PathBuf>,
    mode: Option<ModeArg>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ServiceConfig::from_file(path)?,
        None => ServiceConfig::default(),
    }
    .apply_env()?;
    if let Some(b) = bind {
        cfg.bind = b;
    }
    if let Some(r) = rate_hz {
        cfg.rate_hz = r;
    }
    if trace.is_some() {
        cfg.trace = trace;
    }
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    let world = World::builtin(cfg.mode);
    palmgrip_teleop::serve(cfg, world).await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            fingers,
            objects,
            reps,
            mode,
            seed,
            format,
            out,
            config,
            retries,
        } => cmd_run(
            fingers,
            &objects,
            reps,
            mode,
            seed,
            format,
            out.as_deref(),
            config.as_deref(),
            retries,
        ),
        Cmd::Golden { dir, check } => cmd_golden(&dir, check),
        Cmd::Trial {
            object,
            fingers,
            mode,
            seed,
            trace,
        } => cmd_trial(&object, fingers, mode, seed, trace.as_deref()),
        Cmd::HoldForce { speed, margin } => cmd_hold_force(speed, margin),
        Cmd::Serve {
            config,
            bind,
            rate_hz,
            trace,
            mode,
        } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cmd_serve(config.as_deref(), bind, rate_hz, trace, mode))
        }
    }
}
