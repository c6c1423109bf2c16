//! Structural feature vectors used to cluster redundant scenarios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::block::EGO_NAME;
use crate::params::{Operator, ParameterTable};
use crate::scenario_gen::ScenarioDocument;
use crate::xml::Element;

/// Bin layout for numeric attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub bins: usize,
    pub weather_types: BTreeMap<String, crate::params::WeatherType>,
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    /// Target speeds (m/s).
    pub speed: [f64; 2],
    /// TransitionDynamics values.
    pub dynamics_value: [f64; 2],
    /// Obstacle distance ahead of the AV (m).
    pub ahead: [f64; 2],
    /// Lateral obstacle offset in lane widths.
    pub lateral: [f64; 2],
    pub nominal_lane_width: f64,
    /// Dimension factor around the category default.
    pub dimension_factor: [f64; 2],
    pub category_lengths: BTreeMap<String, [f64; 3]>,
}

impl FeatureConfig {
    pub fn from_params(p: &ParameterTable) -> FeatureConfig {
        let oim = p.operator(Operator::Oim);
        let speeds: Vec<f64> = p.categories.values().map(|c| c.target_speed).collect();
        let top = speeds.iter().cloned().fold(0.0, f64::max) * p.speed_factors.accelerate;
        FeatureConfig {
            bins: 5,
            weather_types: p.weather_types.clone(),
            azimuth: p.sun.azimuth,
            elevation: p.sun.elevation,
            speed: [0.0, top * 1.5],
            dynamics_value: p.operator(Operator::Dtm).value.unwrap_or([1.0, 10.0]),
            ahead: oim.ahead.unwrap_or([5.0, 20.0]),
            lateral: oim.lateral_lane_widths.unwrap_or([-1.0, 1.0]),
            nominal_lane_width: 3.5,
            dimension_factor: p.gaussian.clamp_factor,
            category_lengths: p
                .categories
                .iter()
                .map(|(c, d)| (c.as_str().to_string(), [d.width, d.length, d.height]))
                .collect(),
        }
    }
}

/// Uniform bin of `v` over `[lo, hi]`, clamped to the outer bins.
pub fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if bins == 0 {
        return 0;
    }
    if !(hi > lo) || !v.is_finite() {
        return 0;
    }
    let b = ((v - lo) / (hi - lo) * bins as f64).floor();
    b.clamp(0.0, (bins - 1) as f64) as usize
}

/// Named components of a scenario's structure. Two scenarios with equal
/// features are treated as redundant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub components: BTreeMap<String, String>,
}

impl StructuralFeatures {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.components.get(key).map(String::as_str)
    }
}

struct Builder<'a> {
    cfg: &'a FeatureConfig,
    out: BTreeMap<String, String>,
}

impl Builder<'_> {
    fn put(&mut self, k: impl Into<String>, v: impl Into<String>) {
        self.out.insert(k.into(), v.into());
    }

    fn bin(&self, v: Option<f64>, r: [f64; 2]) -> String {
        match v {
            Some(v) => bin_index(v, r[0], r[1], self.cfg.bins).to_string(),
            None => "-".into(),
        }
    }
}

fn first<'a>(el: &'a Element, name: &str) -> Option<&'a Element> {
    el.descendants().into_iter().find(|e| e.name == name)
}

fn num(el: Option<&Element>, attr: &str) -> Option<f64> {
    el.and_then(|e| e.attr_f64(attr))
}

fn lane_pos(private: &Element) -> Option<(String, i32, f64, f64)> {
    let lp = private.find("PrivateAction/TeleportAction/Position/LanePosition")?;
    Some((
        lp.attr("roadId")?.to_string(),
        lp.attr("laneId")?.parse().ok()?,
        lp.attr_f64("s").unwrap_or(0.0),
        lp.attr_f64("offset").unwrap_or(0.0),
    ))
}

fn relation(ego: &(String, i32, f64, f64), other: &(String, i32, f64, f64)) -> String {
    if ego.0 != other.0 {
        return "other_road".into();
    }
    if ego.1.signum() != other.1.signum() {
        return "opposite".into();
    }
    // Negative lanes run with increasing s.
    let ahead = (other.2 - ego.2) * if ego.1 < 0 { 1.0 } else { -1.0 } > 0.0;
    let along = if ahead { "ahead" } else { "behind" };
    match (other.1 - ego.1).abs() {
        0 => format!("same_lane_{along}"),
        1 => format!("adjacent_{along}"),
        _ => format!("far_{along}"),
    }
}

fn event_class(b: &Builder<'_>, ev: &Element) -> String {
    let letter = ev
        .attr("name")
        .and_then(|n| n.rsplit_once('_'))
        .map(|(_, l)| l.to_string())
        .unwrap_or_default();
    let Some(action) = ev.child("Action") else { return letter };
    if let Some(d) = first(action, "LaneChangeActionDynamics") {
        let lane = first(action, "AbsoluteTargetLane").and_then(|t| t.attr("value")).unwrap_or("-");
        return format!(
            "{letter}:lane:{}:{}:{lane}",
            d.attr("dynamicsShape").unwrap_or("-"),
            b.bin(d.attr_f64("value"), b.cfg.dynamics_value)
        );
    }
    if let Some(d) = first(action, "SpeedActionDynamics") {
        return format!(
            "{letter}:speed:{}:{}:{}",
            d.attr("dynamicsShape").unwrap_or("-"),
            b.bin(d.attr_f64("value"), b.cfg.dynamics_value),
            b.bin(num(first(action, "AbsoluteTargetSpeed"), "value"), b.cfg.speed)
        );
    }
    let wps: Vec<String> = action
        .descendants()
        .into_iter()
        .filter(|e| e.name == "LanePosition")
        .map(|lp| {
            let off = lp.attr_f64("offset").unwrap_or(0.0) / b.cfg.nominal_lane_width;
            format!("{}/{}/{}", lp.attr("roadId").unwrap_or("-"), lp.attr("laneId").unwrap_or("-"), b.bin(Some(off), b.cfg.lateral))
        })
        .collect();
    format!("{letter}:route:{}", wps.join(","))
}

/// Structural features of a scenario document.
pub fn feature_vector(doc: &ScenarioDocument, cfg: &FeatureConfig) -> StructuralFeatures {
    let mut b = Builder { cfg, out: BTreeMap::new() };
    let root = &doc.root;
    let actions = root.find("Storyboard/Init/Actions");

    match actions.and_then(|a| a.find("GlobalAction/EnvironmentAction/Environment")) {
        Some(env) => {
            let kind = env.attr("name").unwrap_or("-").to_string();
            let wt = cfg.weather_types.get(&kind).cloned();
            let r = |f: fn(&crate::params::WeatherType) -> [f64; 2]| wt.as_ref().map(f).unwrap_or([0.0, 0.0]);
            b.put("weather.type", kind.clone());
            b.put("weather.visibility", b.bin(num(first(env, "Fog"), "visualRange"), r(|w| w.visibility)));
            b.put("weather.friction", b.bin(num(first(env, "RoadCondition"), "frictionScaleFactor"), r(|w| w.friction)));
            b.put(
                "weather.precipitation",
                b.bin(num(first(env, "Precipitation"), "intensity"), r(|w| w.precipitation_intensity)),
            );
            b.put("weather.azimuth", b.bin(num(first(env, "Sun"), "azimuth"), cfg.azimuth));
            b.put("weather.elevation", b.bin(num(first(env, "Sun"), "elevation"), cfg.elevation));
        }
        None => b.put("weather.type", "none"),
    }
    if let Some(actions) = actions {
        for s in actions.descendants().into_iter().filter(|e| e.name == "TrafficSignalStateAction") {
            b.put(format!("signal.{}", s.attr("name").unwrap_or("-")), s.attr("state").unwrap_or("-"));
        }
    }

    let objects: Vec<&Element> = root
        .child("Entities")
        .map(|e| e.children_named("ScenarioObject").collect())
        .unwrap_or_default();
    b.put("entity.count", objects.len().to_string());
    let privates: BTreeMap<String, &Element> = actions
        .map(|a| {
            a.children_named("Private")
                .filter_map(|p| Some((p.attr("entityRef")?.to_string(), p)))
                .collect()
        })
        .unwrap_or_default();
    let ego_pos = privates.get(EGO_NAME).and_then(|p| lane_pos(p));

    for o in objects {
        let name = o.attr("name").unwrap_or("-");
        if name == EGO_NAME {
            continue;
        }
        let Some(entity) = o.elements().next() else { continue };
        let pos = privates.get(name).and_then(|p| lane_pos(p));
        let rel = match (&ego_pos, &pos) {
            (Some(e), Some(p)) => relation(e, p),
            _ => "-".into(),
        };
        let dims = first(entity, "Dimensions");
        if entity.name == "MiscObject" {
            let prefix = format!("obstacle.{name}");
            b.put(format!("{prefix}.kind"), entity.attr("name").unwrap_or("-"));
            b.put(format!("{prefix}.position"), rel);
            if let (Some(e), Some(p)) = (&ego_pos, &pos) {
                let ahead = if e.0 == p.0 { Some(p.2 - e.2) } else { None };
                b.put(format!("{prefix}.ahead"), b.bin(ahead, cfg.ahead));
                let lateral = p.3 / cfg.nominal_lane_width;
                b.put(format!("{prefix}.lateral"), b.bin(Some(lateral), cfg.lateral));
                let half = (cfg.nominal_lane_width + num(dims, "width").unwrap_or(0.0)) / 2.0;
                b.put(format!("{prefix}.blocking"), (p.0 == e.0 && p.1 == e.1 && p.3.abs() < half).to_string());
            }
            continue;
        }
        let prefix = format!("npc.{name}");
        let category = match entity.name.as_str() {
            "Pedestrian" => entity.attr("model").unwrap_or("pedestrian"),
            _ => entity.attr("name").unwrap_or("-"),
        };
        b.put(format!("{prefix}.category"), category);
        b.put(format!("{prefix}.position"), rel);
        if let Some(d) = cfg.category_lengths.get(category) {
            let f = cfg.dimension_factor;
            let bins: Vec<String> = ["width", "length", "height"]
                .iter()
                .zip(d)
                .map(|(a, x)| b.bin(num(dims, a), [f[0] * x, f[1] * x]))
                .collect();
            b.put(format!("{prefix}.dims"), bins.join("/"));
        }
        let speed = privates.get(name).and_then(|p| num(first(p, "AbsoluteTargetSpeed"), "value"));
        b.put(format!("{prefix}.speed"), b.bin(speed, cfg.speed));
    }

    if let Some(act) = root.find("Storyboard/Story/Act") {
        for g in act.children_named("ManeuverGroup") {
            let actor = g.find("Actors/EntityRef").and_then(|e| e.attr("entityRef")).unwrap_or("-");
            let mut letters = String::new();
            for ev in g.descendants().into_iter().filter(|e| e.name == "Event") {
                let class = event_class(&b, ev);
                letters.push_str(class.split(':').next().unwrap_or(""));
                b.put(format!("event.{}", ev.attr("name").unwrap_or("-")), class);
            }
            b.put(format!("npc.{actor}.sequence"), letters);
        }
    }
    StructuralFeatures { components: b.out }
}
