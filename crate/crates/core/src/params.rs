//! Default physical parameters and mutation ranges, loaded from
//! `data/parameters.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report_extraction::NpcCategory;

const BUILTIN_PARAMETERS: &str = include_str!("../data/parameters.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("parameter file: {0}")]
    Parse(String),
    #[error("parameter file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "TSM_speed")]
    TsmSpeed,
    #[serde(rename = "DTM")]
    Dtm,
    #[serde(rename = "VPM")]
    Vpm,
    #[serde(rename = "WPM")]
    Wpm,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "NCM")]
    Ncm,
    #[serde(rename = "WM")]
    Wm,
    #[serde(rename = "TSM_signal")]
    TsmSignal,
    #[serde(rename = "OIM")]
    Oim,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Operator::TsmSpeed,
        Operator::Dtm,
        Operator::Vpm,
        Operator::Wpm,
        Operator::Dm,
        Operator::Ncm,
        Operator::Wm,
        Operator::TsmSignal,
        Operator::Oim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::TsmSpeed => "TSM_speed",
            Operator::Dtm => "DTM",
            Operator::Vpm => "VPM",
            Operator::Wpm => "WPM",
            Operator::Dm => "DM",
            Operator::Ncm => "NCM",
            Operator::Wm => "WM",
            Operator::TsmSignal => "TSM_signal",
            Operator::Oim => "OIM",
        }
    }

    pub fn parse(s: &str) -> Option<Operator> {
        Operator::ALL.into_iter().find(|o| o.as_str().eq_ignore_ascii_case(s))
    }

    /// Value-selection strategies the operator may run with.
    pub fn legal_strategies(self) -> &'static [Strategy] {
        match self {
            Operator::TsmSpeed | Operator::Dtm => &[Strategy::RandomSampling],
            Operator::Vpm | Operator::Dm => &[Strategy::Gaussian],
            Operator::Wpm => &[Strategy::RandomSampling, Strategy::ContextAware],
            Operator::Ncm | Operator::TsmSignal | Operator::Wm => &[Strategy::Enumerative],
            Operator::Oim => &[Strategy::ContextAware],
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomSampling,
    Gaussian,
    ContextAware,
    /// Every configured literal, the original included.
    Enumerative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDefaults {
    pub vehicle_category: Option<String>,
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub target_speed: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoDefaults {
    pub category: NpcCategory,
    pub initial_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub max_speed: f64,
    pub max_acceleration: f64,
    pub max_deceleration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub shape: String,
    pub value: f64,
    pub dimension: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedFactors {
    pub accelerate: f64,
    pub decelerate: f64,
    /// Target speed (m/s) standing in for reversing.
    pub reverse_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDefaults {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherType {
    pub cloud_state: String,
    pub precipitation_type: String,
    pub precipitation_intensity: [f64; 2],
    pub visibility: [f64; 2],
    pub friction: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SunParams {
    pub intensity: f64,
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedWeather {
    #[serde(rename = "type")]
    pub kind: String,
    pub visibility: f64,
    pub friction: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub precipitation_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub act_start: f64,
    pub first_event: f64,
    pub stop_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma_fraction: f64,
    pub clamp_factor: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub strategy: Strategy,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub literals: Vec<String>,
    #[serde(default)]
    pub acc_factor: Option<[f64; 2]>,
    #[serde(default)]
    pub dec_factor: Option<[f64; 2]>,
    #[serde(default)]
    pub value: Option<[f64; 2]>,
    #[serde(default)]
    pub offset_road_fraction: Option<[f64; 2]>,
    #[serde(default)]
    pub ahead: Option<[f64; 2]>,
    #[serde(default)]
    pub lateral_lane_widths: Option<[f64; 2]>,
    #[serde(default)]
    pub dimension_factor: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTable {
    pub categories: BTreeMap<NpcCategory, CategoryDefaults>,
    pub ego: EgoDefaults,
    pub performance: Performance,
    pub default_color: String,
    pub dynamics: Dynamics,
    pub speed_factors: SpeedFactors,
    pub obstacle: ObstacleDefaults,
    pub weather_types: BTreeMap<String, WeatherType>,
    pub sun: SunParams,
    pub seed_weather: SeedWeather,
    pub timing: Timing,
    pub gaussian: GaussianParams,
    pub operators: BTreeMap<Operator, OperatorParams>,
    /// Block class (`weather`, `vehicle`, `speed_event`, ...) to operators.
    pub plans: BTreeMap<String, Vec<Operator>>,
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), ParamsError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(ParamsError::Invalid(format!("range {name} = {r:?} is not ordered")))
    }
}

impl ParameterTable {
    pub fn load(text: &str) -> Result<ParameterTable, ParamsError> {
        let t: ParameterTable = serde_json::from_str(text).map_err(|e| ParamsError::Parse(e.to_string()))?;
        for c in NpcCategory::ALL {
            if !t.categories.contains_key(&c) {
                return Err(ParamsError::Invalid(format!("no defaults for category {}", c.as_str())));
            }
        }
        if !t.weather_types.contains_key(&t.seed_weather.kind) {
            return Err(ParamsError::Invalid(format!("seed weather '{}' undefined", t.seed_weather.kind)));
        }
        for (name, w) in &t.weather_types {
            check_range(&format!("{name}.visibility"), w.visibility)?;
            check_range(&format!("{name}.friction"), w.friction)?;
            check_range(&format!("{name}.precipitation_intensity"), w.precipitation_intensity)?;
        }
        check_range("sun.azimuth", t.sun.azimuth)?;
        check_range("sun.elevation", t.sun.elevation)?;
        if !(t.gaussian.sigma_fraction > 0.0) {
            return Err(ParamsError::Invalid("gaussian sigma must be positive".into()));
        }
        for op in Operator::ALL {
            let p = t
                .operators
                .get(&op)
                .ok_or_else(|| ParamsError::Invalid(format!("operator {op} not configured")))?;
            if !op.legal_strategies().contains(&p.strategy) {
                return Err(ParamsError::Invalid(format!("strategy {:?} is not legal for {op}", p.strategy)));
            }
            if p.strategy == Strategy::Enumerative && p.literals.is_empty() {
                return Err(ParamsError::Invalid(format!("{op} enumerates no literals")));
            }
            for r in [p.acc_factor, p.dec_factor, p.value, p.offset_road_fraction, p.ahead, p.lateral_lane_widths, p.dimension_factor]
                .into_iter()
                .flatten()
            {
                check_range(op.as_str(), r)?;
            }
        }
        if let Some(w) = t.operators[&Operator::Wm].literals.iter().find(|w| !t.weather_types.contains_key(*w)) {
            return Err(ParamsError::Invalid(format!("WM literal '{w}' has no weather type")));
        }
        Ok(t)
    }

    pub fn builtin() -> &'static ParameterTable {
        static T: OnceLock<ParameterTable> = OnceLock::new();
        T.get_or_init(|| ParameterTable::load(BUILTIN_PARAMETERS).expect("shipped parameters are valid"))
    }

    pub fn category(&self, c: NpcCategory) -> &CategoryDefaults {
        &self.categories[&c]
    }

    pub fn operator(&self, op: Operator) -> &OperatorParams {
        &self.operators[&op]
    }

    /// Variant count for sampled operators (two unless configured).
    pub fn count(&self, op: Operator) -> usize {
        self.operator(op).count.unwrap_or(2)
    }

    pub fn weather(&self, name: &str) -> Option<&WeatherType> {
        self.weather_types.get(name)
    }
}

pub fn builtin_parameters_text() -> &'static str {
    BUILTIN_PARAMETERS
}
