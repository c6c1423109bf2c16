//! Trace oracle: kinematic metrics, behavior categories and trigger mining.

mod behavior;
mod kinematics;
mod lift;

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use behavior::{classify_behaviors, BehaviorCategory, BehaviorFinding, Evidence, ObstacleFootprint, SceneGeometry, SignalLine};
pub use kinematics::{
    assess_smoothness, compute_kinematics, compute_kinematics_with, detect_collision, moving_average, resample, spans, unwrap_angles,
    CollisionEvent, KinematicSeries, Series, SmoothnessMetric, SmoothnessSpan,
};
pub use lift::{lift_association, write_triggers_csv, TriggerAssociation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("trace has {0} samples, at least 3 are needed")]
    TooFewSamples(usize),
    #[error("time does not increase at sample {0}")]
    NonMonotonicTime(usize),
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("jerk interval {0} s is outside the configured band")]
    InvalidInterval(f64),
    #[error("scenario geometry: {0}")]
    Scene(String),
    #[error("scenario has no goal position for the ego")]
    MissingGoal,
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

/// One line of a signal-state log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub t: f64,
    pub signal: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Finite-difference step (s).
    pub jerk_interval: f64,
    pub jerk_interval_band: [f64; 2],
    /// m/s³
    pub collision_threshold: f64,
    /// Moving-average window (s).
    pub window: f64,
    /// m/s³
    pub smooth_jerk: f64,
    /// deg/s
    pub smooth_yaw_deg: f64,
    pub t_start: f64,
    pub eps_move: f64,
    pub eps_goal: f64,
    /// Half of the ego footprint width, added around obstacle footprints (m).
    pub ego_half_width: f64,
    pub min_support: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            jerk_interval: 0.01,
            jerk_interval_band: [0.005, 0.015],
            collision_threshold: 300.0,
            window: 1.0,
            smooth_jerk: 0.9,
            smooth_yaw_deg: 10.0,
            t_start: 10.0,
            eps_move: 0.5,
            eps_goal: 5.0,
            ego_half_width: 0.9,
            min_support: 1,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let [lo, hi] = self.jerk_interval_band;
        let positive = [
            ("jerk_interval", self.jerk_interval),
            ("collision_threshold", self.collision_threshold),
            ("window", self.window),
            ("smooth_jerk", self.smooth_jerk),
            ("smooth_yaw_deg", self.smooth_yaw_deg),
            ("t_start", self.t_start),
            ("eps_move", self.eps_move),
            ("eps_goal", self.eps_goal),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OracleError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(OracleError::InvalidConfig(format!("bad jerk interval band [{lo}, {hi}]")));
        }
        if self.jerk_interval < lo || self.jerk_interval > hi {
            return Err(OracleError::InvalidInterval(self.jerk_interval));
        }
        if self.ego_half_width < 0.0 {
            return Err(OracleError::InvalidConfig("ego_half_width must not be negative".into()));
        }
        Ok(())
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, OracleError> {
    let file = std::fs::File::open(path).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| OracleError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceSample>, OracleError> {
    read_jsonl(path)
}

pub fn read_signal_log(path: &Path) -> Result<Vec<SignalState>, OracleError> {
    read_jsonl(path)
}
