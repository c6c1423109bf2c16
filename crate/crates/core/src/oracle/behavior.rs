use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kinematics::{assess_smoothness, check_trace, compute_kinematics_with, detect_collision, spans, SmoothnessMetric};
use super::{OracleConfig, OracleError, SignalState, TraceSample};
use crate::block::EGO_NAME;
use crate::map_graph::{resolve_position_offset, RoadNetwork, WorldPose};
use crate::scenario_gen::ScenarioDocument;
use crate::xml::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorCategory {
    FailureToStart,
    Misinterpretation,
    Collision,
    PlanFailure,
    SmoothnessIssue,
}

impl BehaviorCategory {
    pub const ALL: [BehaviorCategory; 5] = [
        BehaviorCategory::FailureToStart,
        BehaviorCategory::Misinterpretation,
        BehaviorCategory::Collision,
        BehaviorCategory::PlanFailure,
        BehaviorCategory::SmoothnessIssue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorCategory::FailureToStart => "failure_to_start",
            BehaviorCategory::Misinterpretation => "misinterpretation",
            BehaviorCategory::Collision => "collision",
            BehaviorCategory::PlanFailure => "plan_failure",
            BehaviorCategory::SmoothnessIssue => "smoothness_issue",
        }
    }
}

impl std::fmt::Display for BehaviorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    NoMotion { max_displacement: f64, within: f64 },
    RedLight { signal: String, state: String, lateral: f64 },
    ObstacleContact { obstacle: String, min_clearance: f64 },
    Collision { peak_jerk: f64, threshold: f64 },
    GoalMissed { distance: f64, eps_goal: f64 },
    Smoothness { metric: SmoothnessMetric, peak: f64, interval: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFinding {
    pub category: BehaviorCategory,
    pub start: f64,
    pub end: f64,
    pub evidence: Evidence,
    pub node: Option<usize>,
}

/// Static obstacle as an oriented rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFootprint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl ObstacleFootprint {
    /// Signed distance-like clearance of a point from the footprint grown by
    /// `margin`: negative inside.
    pub fn clearance(&self, x: f64, y: f64, margin: f64) -> f64 {
        let (dx, dy) = (x - self.x, y - self.y);
        let (s, c) = self.heading.sin_cos();
        let lon = dx * c + dy * s;
        let lat = -dx * s + dy * c;
        let ex = lon.abs() - (self.length / 2.0 + margin);
        let ey = lat.abs() - (self.width / 2.0 + margin);
        if ex <= 0.0 && ey <= 0.0 {
            ex.max(ey)
        } else {
            (ex.max(0.0).powi(2) + ey.max(0.0).powi(2)).sqrt()
        }
    }
}

/// Stop line of a signal: the reference-line point at the signal's `s`,
/// spanning the carriageway across `heading`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalLine {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Travel direction of the traffic the signal controls.
    pub heading: f64,
    pub half_width: f64,
    pub initial_state: Option<String>,
}

impl SignalLine {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (dx * c + dy * s, -dx * s + dy * c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub goal: Option<WorldPose>,
    pub obstacles: Vec<ObstacleFootprint>,
    pub signals: Vec<SignalLine>,
}

fn lane_pose(network: &RoadNetwork, lp: &Element) -> Result<WorldPose, OracleError> {
    let road = lp.attr("roadId").unwrap_or_default();
    let lane: i32 = lp
        .attr("laneId")
        .and_then(|l| l.parse().ok())
        .ok_or_else(|| OracleError::Scene(format!("LanePosition on road {road} has no laneId")))?;
    let s = lp.attr_f64("s").unwrap_or(0.0);
    let offset = lp.attr_f64("offset").unwrap_or(0.0);
    resolve_position_offset(network, road, lane, s, offset).map_err(|e| OracleError::Scene(e.to_string()))
}

impl SceneGeometry {
    /// Goal, obstacle footprints and signal stop lines of a scenario on its map.
    pub fn from_scenario(doc: &ScenarioDocument, network: &RoadNetwork) -> Result<SceneGeometry, OracleError> {
        let actions = doc.root.find("Storyboard/Init/Actions");
        let privates: BTreeMap<&str, &Element> = actions
            .map(|a| a.children_named("Private").filter_map(|p| Some((p.attr("entityRef")?, p))).collect())
            .unwrap_or_default();

        let goal = match privates.get(EGO_NAME).and_then(|p| {
            p.descendants()
                .into_iter()
                .find(|e| e.name == "AcquirePositionAction")
                .and_then(|a| a.find("Position/LanePosition"))
        }) {
            Some(lp) => Some(lane_pose(network, lp)?),
            None => None,
        };

        let mut obstacles = Vec::new();
        for o in doc.root.child("Entities").into_iter().flat_map(|e| e.children_named("ScenarioObject")) {
            let Some(misc) = o.child("MiscObject") else { continue };
            let name = o.attr("name").unwrap_or_default();
            let Some(lp) = privates.get(name).and_then(|p| p.find("PrivateAction/TeleportAction/Position/LanePosition")) else {
                log::warn!("obstacle {name} has no lane position; ignored");
                continue;
            };
            let pose = lane_pose(network, lp)?;
            let dims = misc.find("BoundingBox/Dimensions");
            obstacles.push(ObstacleFootprint {
                name: name.to_string(),
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                length: dims.and_then(|d| d.attr_f64("length")).unwrap_or(0.0),
                width: dims.and_then(|d| d.attr_f64("width")).unwrap_or(0.0),
            });
        }

        let initial: BTreeMap<&str, &str> = actions
            .map(|a| {
                a.descendants()
                    .into_iter()
                    .filter(|e| e.name == "TrafficSignalStateAction")
                    .filter_map(|e| Some((e.attr("name")?, e.attr("state")?)))
                    .collect()
            })
            .unwrap_or_default();
        let mut signals = Vec::new();
        for seg in network.segments.values() {
            for sig in &seg.signals {
                let (x, y, _) = seg.reference_at(sig.s);
                let side = |left: bool| -> f64 {
                    seg.lanes
                        .iter()
                        .filter(|l| l.lane_id != 0 && (l.lane_id > 0) == left)
                        .map(|l| l.width_at(sig.s))
                        .sum()
                };
                let half_width = side(true).max(side(false));
                signals.push(SignalLine {
                    id: sig.id.clone(),
                    x,
                    y,
                    heading: sig.heading,
                    half_width,
                    initial_state: initial.get(sig.id.as_str()).map(|s| s.to_string()),
                });
            }
        }
        Ok(SceneGeometry { goal, obstacles, signals })
    }
}

fn state_at<'a>(line: &'a SignalLine, log: &'a [SignalState], t: f64) -> Option<&'a str> {
    log.iter()
        .filter(|e| e.signal == line.id && e.t <= t)
        .max_by(|a, b| a.t.total_cmp(&b.t))
        .map(|e| e.state.as_str())
        .or(line.initial_state.as_deref())
}

fn red_light_crossings(trace: &[TraceSample], geometry: &SceneGeometry, log: &[SignalState]) -> Vec<BehaviorFinding> {
    let mut out = Vec::new();
    for line in &geometry.signals {
        for w in trace.windows(2) {
            let (u0, _) = line.local(w[0].x, w[0].y);
            let (u1, _) = line.local(w[1].x, w[1].y);
            if !(u0 < 0.0 && u1 >= 0.0) {
                continue;
            }
            let f = -u0 / (u1 - u0);
            let t = w[0].t + f * (w[1].t - w[0].t);
            let (_, lat) = line.local(w[0].x + f * (w[1].x - w[0].x), w[0].y + f * (w[1].y - w[0].y));
            if lat.abs() > line.half_width {
                continue;
            }
            if let Some(state) = state_at(line, log, t).filter(|s| s.eq_ignore_ascii_case("red")) {
                out.push(BehaviorFinding {
                    category: BehaviorCategory::Misinterpretation,
                    start: t,
                    end: t,
                    evidence: Evidence::RedLight {
                        signal: line.id.clone(),
                        state: state.to_string(),
                        lateral: lat,
                    },
                    node: None,
                });
            }
        }
    }
    out
}

fn obstacle_contacts(trace: &[TraceSample], geometry: &SceneGeometry, margin: f64) -> Vec<BehaviorFinding> {
    let mut out = Vec::new();
    for o in &geometry.obstacles {
        let clearance: Vec<f64> = trace.iter().map(|s| o.clearance(s.x, s.y, margin)).collect();
        for (a, b) in spans(&clearance, |c| c <= 0.0) {
            out.push(BehaviorFinding {
                category: BehaviorCategory::Misinterpretation,
                start: trace[a].t,
                end: trace[b].t,
                evidence: Evidence::ObstacleContact {
                    obstacle: o.name.clone(),
                    min_clearance: clearance[a..=b].iter().cloned().fold(f64::INFINITY, f64::min),
                },
                node: None,
            });
        }
    }
    out
}

/// Behavior findings of one run. Failure to start excludes every other
/// category, misinterpretation excludes the remaining three, and collision,
/// plan failure and smoothness issues may co-occur. Red-light checks need
/// `signal_log`.
pub fn classify_behaviors(
    trace: &[TraceSample],
    geometry: &SceneGeometry,
    signal_log: Option<&[SignalState]>,
    cfg: &OracleConfig,
) -> Result<Vec<BehaviorFinding>, OracleError> {
    let goal = geometry.goal.ok_or(OracleError::MissingGoal)?;
    check_trace(trace)?;
    let t0 = trace[0].t;
    let (x0, y0) = (trace[0].x, trace[0].y);

    let early: Vec<&TraceSample> = trace.iter().take_while(|s| s.t - t0 <= cfg.t_start).collect();
    let max_disp = early.iter().map(|s| (s.x - x0).hypot(s.y - y0)).fold(0.0, f64::max);
    if max_disp < cfg.eps_move {
        return Ok(vec![BehaviorFinding {
            category: BehaviorCategory::FailureToStart,
            start: t0,
            end: early.last().map(|s| s.t).unwrap_or(t0),
            evidence: Evidence::NoMotion {
                max_displacement: max_disp,
                within: cfg.t_start,
            },
            node: None,
        }]);
    }

    let mut wrong = obstacle_contacts(trace, geometry, cfg.ego_half_width);
    if let Some(log) = signal_log {
        wrong.extend(red_light_crossings(trace, geometry, log));
    }
    if !wrong.is_empty() {
        wrong.sort_by(|a, b| a.start.total_cmp(&b.start));
        return Ok(wrong);
    }

    let series = compute_kinematics_with(trace, cfg.jerk_interval, cfg)?;
    let mut out: Vec<BehaviorFinding> = detect_collision(&series, cfg.collision_threshold)
        .into_iter()
        .map(|c| BehaviorFinding {
            category: BehaviorCategory::Collision,
            start: c.start,
            end: c.end,
            evidence: Evidence::Collision {
                peak_jerk: c.peak_jerk,
                threshold: cfg.collision_threshold,
            },
            node: None,
        })
        .collect();
    let last = trace[trace.len() - 1];
    let distance = (last.x - goal.x).hypot(last.y - goal.y);
    if distance > cfg.eps_goal {
        out.push(BehaviorFinding {
            category: BehaviorCategory::PlanFailure,
            start: last.t,
            end: last.t,
            evidence: Evidence::GoalMissed {
                distance,
                eps_goal: cfg.eps_goal,
            },
            node: None,
        });
    }
    out.extend(assess_smoothness(&series, cfg).into_iter().map(|s| BehaviorFinding {
        category: BehaviorCategory::SmoothnessIssue,
        start: s.start,
        end: s.end,
        evidence: Evidence::Smoothness {
            metric: s.metric,
            peak: s.peak,
            interval: s.interval,
        },
        node: None,
    }));
    out.sort_by(|a, b| a.category.cmp(&b.category).then(a.start.total_cmp(&b.start)));
    Ok(out)
}
