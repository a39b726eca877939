//! Service configuration: JSON file, then environment overrides.

use std::path::{Path, PathBuf};

use palmgrip_core::world::Mode;
use serde::{Deserialize, Serialize};

use crate::ServeError;

pub const ENV_BIND: &str = "PALMGRIP_BIND";
pub const ENV_RATE_HZ: &str = "PALMGRIP_RATE_HZ";

pub const MIN_RATE_HZ: u32 = 1;
pub const MAX_RATE_HZ: u32 = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Telemetry frames per second.
    pub rate_hz: u32,
    /// Bounded command queue between the sockets and the control loop.
    pub queue_capacity: usize,
    /// Frames kept for replay to newly connected clients.
    pub replay_frames: usize,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    /// How `run_sequence` resolves failure rules.
    pub mode: Mode,
    /// NDJSON session trace.
    pub trace: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            rate_hz: 30,
            queue_capacity: palmgrip_core::controller::QUEUE_CAPACITY,
            replay_frames: 100,
            time_scale: 1.0,
            mode: Mode::Stochastic,
            trace: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ServeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `PALMGRIP_BIND` and `PALMGRIP_RATE_HZ` from the process environment.
    pub fn apply_env(self) -> Result<Self, ServeError> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(
        mut self,
        get: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ServeError> {
        if let Some(bind) = get(ENV_BIND) {
            self.bind = bind;
        }
        if let Some(rate) = get(ENV_RATE_HZ) {
            self.rate_hz = rate.trim().parse().map_err(|_| {
                ServeError::Config(format!("{ENV_RATE_HZ}: not an integer: {rate}"))
            })?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ServeError> {
        if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&self.rate_hz) {
            return Err(ServeError::Config(format!(
                "rate_hz {} outside [{MIN_RATE_HZ}, {MAX_RATE_HZ}]",
                self.rate_hz
            )));
        }
        if self.queue_capacity == 0 {
            return Err(ServeError::Config(
                "queue_capacity must be at least 1".into(),
            ));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(ServeError::Config("time_scale must be positive".into()));
        }
        Ok(())
    }
}
