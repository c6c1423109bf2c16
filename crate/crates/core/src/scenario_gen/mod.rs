//! Seed scenario generation: a static template skeleton filled with content
//! fragments for entities, initial states, signals and NPC events.

pub mod render;
pub mod request;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{compose, BlockError, BlockIdentity, BlockKind, BlockPart, ScenarioBlock, Slot, EGO_NAME};
use crate::map_graph::{LaneDirection, RoadNetwork, RoadSegment, Turn};
use crate::params::ParameterTable;
use crate::placement::{replay_events, LaneAssignment, Placement, PlacementContext};
use crate::report_extraction::backend::{strip_fence, BackendError, ExtractionBackend};
use crate::report_extraction::codebook::{Codebook, LaneEffect, RouteEffect, SpeedEffect};
use crate::report_extraction::{NpcCategory, NpcFact, ReportFacts};
use crate::schema_model::{builtin_schema, SchemaGraph, ValidationReport};
use crate::xml::{self, Element};

pub use render::RuleBasedFiller;
pub use request::{ContentFillRequest, ContentFillResponse, EventAction, EventStart, LanePos, ObjectKind, SlotRequest, SlotSpec};

pub const METADATA_TAG: &str = "crashscen-metadata";
pub const FILE_DATE: &str = "2024-01-01T00:00:00";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("fragment for slot '{slot}' is invalid: {finding}")]
    FragmentInvalid { slot: String, finding: String },
    #[error("assembled document is invalid: {0}")]
    DocumentInvalid(String),
    #[error("facts and lane assignment disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Provenance carried in a leading XML comment of every scenario file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub report_id: String,
    pub seed: u64,
    pub map_file: String,
    #[serde(default)]
    pub context: Option<PlacementContext>,
    #[serde(default)]
    pub assignment: Option<LaneAssignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTemplate {
    pub skeleton: Element,
    /// Slot label to the path of its parent element.
    pub slot_index: BTreeMap<String, String>,
    pub road_network_ref: String,
    pub metadata: ScenarioMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDocument {
    pub root: Element,
    pub metadata: ScenarioMetadata,
}

fn condition_trigger(tag: &str, name: &str, value: f64) -> Element {
    Element::new(tag).with_child(
        Element::new("ConditionGroup").with_child(
            Element::new("Condition")
                .with_attr("name", name)
                .with_attr("delay", "0")
                .with_attr("conditionEdge", "rising")
                .with_child(
                    Element::new("ByValueCondition").with_child(
                        Element::new("SimulationTimeCondition")
                            .with_attr("value", xml::fmt_num(value))
                            .with_attr("rule", "greaterThan"),
                    ),
                ),
        ),
    )
}

fn base_slot_index() -> BTreeMap<String, String> {
    [
        (Slot::InitGlobal, "Storyboard/Init/Actions"),
        (Slot::InitPrivate, "Storyboard/Init/Actions"),
        (Slot::Entities, "Entities"),
        (Slot::Act, "Storyboard/Story/Act"),
    ]
    .into_iter()
    .map(|(s, p)| (s.label(), p.to_string()))
    .collect()
}

pub fn map_file_name(network: &RoadNetwork) -> String {
    if network.source_name.ends_with(".xodr") {
        network.source_name.clone()
    } else {
        format!("{}.xodr", network.source_name)
    }
}

/// Signal anchors the template annotates: every anchor of the context's
/// junction, or the segment's own anchors on a plain road.
pub fn signal_anchors(network: &RoadNetwork, context: &PlacementContext) -> Vec<String> {
    match &context.junction {
        Some(j) => network.junction_signals(j).into_iter().map(|(_, a)| a.id.clone()).collect(),
        None => network
            .segments
            .get(&context.segment)
            .map(|s| s.signals.iter().map(|a| a.id.clone()).collect())
            .unwrap_or_default(),
    }
}

pub fn init_template(network: &RoadNetwork, context: &PlacementContext) -> ScenarioTemplate {
    init_template_with(network, context, ParameterTable::builtin())
}

pub fn init_template_with(network: &RoadNetwork, context: &PlacementContext, params: &ParameterTable) -> ScenarioTemplate {
    let map_file = map_file_name(network);
    let mut road_network = Element::new("RoadNetwork").with_child(Element::new("LogicFile").with_attr("filepath", map_file.as_str()));
    let anchors = signal_anchors(network, context);
    if !anchors.is_empty() {
        let name = context.junction.clone().unwrap_or_else(|| context.segment.clone());
        let phase = Element::new("Phase")
            .with_attr("name", "annotation")
            .with_attr("duration", "0")
            .with_children(
                anchors
                    .iter()
                    .map(|id| Element::new("TrafficSignalState").with_attr("trafficSignalId", id.as_str()).with_attr("state", "off")),
            );
        road_network.push(
            Element::new("TrafficSignals").with_child(
                Element::new("TrafficSignalController")
                    .with_attr("name", format!("controller_{name}"))
                    .with_child(phase),
            ),
        );
    }
    let skeleton = Element::new("OpenSCENARIO")
        .with_child(
            Element::new("FileHeader")
                .with_attr("revMajor", "1")
                .with_attr("revMinor", "0")
                .with_attr("date", FILE_DATE)
                .with_attr("description", "crashscen scenario")
                .with_attr("author", "crashscen"),
        )
        .with_child(Element::new("ParameterDeclarations"))
        .with_child(Element::new("CatalogLocations"))
        .with_child(road_network)
        .with_child(Element::new("Entities"))
        .with_child(
            Element::new("Storyboard")
                .with_child(Element::new("Init").with_child(Element::new("Actions")))
                .with_child(
                    Element::new("Story").with_attr("name", "crash_story").with_child(
                        Element::new("Act")
                            .with_attr("name", "crash_act")
                            .with_child(condition_trigger("StartTrigger", "act_start", params.timing.act_start)),
                    ),
                )
                .with_child(condition_trigger("StopTrigger", "stop_time", params.timing.stop_time)),
        );
    ScenarioTemplate {
        skeleton,
        slot_index: base_slot_index(),
        road_network_ref: map_file.clone(),
        metadata: ScenarioMetadata {
            report_id: String::new(),
            seed: context.rng_seed,
            map_file,
            context: Some(context.clone()),
            assignment: None,
        },
    }
}

impl ScenarioTemplate {
    /// Template of an existing document: its skeleton with the given blocks
    /// removed. Maneuver slots of the document's NPC groups are indexed.
    pub fn from_parts(skeleton: Element, metadata: ScenarioMetadata, blocks: &[ScenarioBlock]) -> ScenarioTemplate {
        let mut slot_index = base_slot_index();
        for b in blocks.iter().filter(|b| b.kind == BlockKind::NpcDefinition) {
            if b.part(&Slot::Act).is_some() {
                let slot = Slot::Maneuver(b.identity.name.clone());
                slot_index.insert(slot.label(), format!("Storyboard/Story/Act/ManeuverGroup[{}]/Maneuver", b.identity.name));
            }
        }
        let road_network_ref = skeleton
            .find("RoadNetwork/LogicFile")
            .and_then(|l| l.attr("filepath"))
            .unwrap_or_default()
            .to_string();
        ScenarioTemplate {
            skeleton,
            slot_index,
            road_network_ref,
            metadata,
        }
    }

    pub fn document(&self) -> ScenarioDocument {
        ScenarioDocument {
            root: self.skeleton.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

impl ScenarioDocument {
    pub fn to_xml(&self) -> String {
        let meta = serde_json::to_string(&self.metadata).expect("metadata serializes");
        xml::write_document(&self.root, Some(&format!(" {METADATA_TAG} {meta} ")))
    }

    pub fn parse(text: &str) -> Result<ScenarioDocument, ScenarioError> {
        let doc = xml::parse(text).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
        let mut metadata = ScenarioMetadata::default();
        for c in &doc.leading_comments {
            if let Some(rest) = c.trim().strip_prefix(METADATA_TAG) {
                metadata = serde_json::from_str(rest.trim())
                    .map_err(|e| ScenarioError::Malformed(format!("metadata comment: {e}")))?;
            }
        }
        Ok(ScenarioDocument { root: doc.root, metadata })
    }

    /// Writes the document through a temporary file and a rename.
    pub fn serialize(&self, path: &Path) -> Result<(), ScenarioError> {
        write_atomic(path, self.to_xml().as_bytes())
    }

    pub fn read(path: &Path) -> Result<ScenarioDocument, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        ScenarioDocument::parse(&text)
    }

    pub fn validate(&self, schema: &SchemaGraph) -> ValidationReport {
        schema.validate_document(&self.root)
    }

    pub fn entity_names(&self) -> Vec<String> {
        self.root
            .child("Entities")
            .map(|e| {
                e.children_named("ScenarioObject")
                    .filter_map(|o| o.attr("name"))
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(path, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(path, e)
    })
}

/// Weather type for free-text report weather; silent reports are sunny.
pub fn weather_type_for(text: Option<&str>) -> &'static str {
    let t = text.unwrap_or("").to_ascii_lowercase();
    if ["rain", "wet", "storm", "drizzle", "shower"].iter().any(|k| t.contains(k)) {
        "rainy"
    } else if ["fog", "mist", "haze"].iter().any(|k| t.contains(k)) {
        "foggy"
    } else {
        "sunny"
    }
}

fn mid(r: [f64; 2]) -> f64 {
    (r[0] + r[1]) / 2.0
}

pub fn weather_slot(params: &ParameterTable, weather_type: &str) -> SlotSpec {
    let w = params.weather(weather_type).unwrap_or_else(|| &params.weather_types[&params.seed_weather.kind]);
    let seed = &params.seed_weather;
    let (visibility, friction, precip) = if weather_type == seed.kind {
        (seed.visibility, seed.friction, seed.precipitation_intensity)
    } else {
        (mid(w.visibility), mid(w.friction), mid(w.precipitation_intensity))
    };
    SlotSpec::Weather {
        weather_type: weather_type.to_string(),
        cloud_state: w.cloud_state.clone(),
        precipitation_type: w.precipitation_type.clone(),
        precipitation_intensity: precip,
        visibility,
        friction,
        sun_intensity: params.sun.intensity,
        azimuth: seed.azimuth,
        elevation: seed.elevation,
    }
}

pub fn definition_slot(params: &ParameterTable, entity: &str, category: NpcCategory) -> SlotSpec {
    let d = params.category(category);
    let (object, cat) = match &d.vehicle_category {
        Some(vc) => (ObjectKind::Vehicle, vc.clone()),
        None => (ObjectKind::Pedestrian, "pedestrian".to_string()),
    };
    let p = &params.performance;
    SlotSpec::Definition {
        entity: entity.to_string(),
        object,
        model: category.as_str().to_string(),
        category: cat,
        color: params.default_color.clone(),
        dimensions: [d.width, d.length, d.height],
        mass: (object == ObjectKind::Pedestrian).then_some(d.mass),
        performance: (object == ObjectKind::Vehicle).then_some([p.max_speed, p.max_acceleration, p.max_deceleration]),
    }
}

fn lane_pos(p: &Placement) -> LanePos {
    LanePos {
        road_id: p.segment.clone(),
        lane_id: p.lane,
        s: p.s,
        offset: p.offset,
    }
}

fn exit_position(network: &RoadNetwork, seg: &RoadSegment, lane: i32, turn: Turn) -> Option<LanePos> {
    let edges: Vec<_> = network.junction_edges_from(&seg.id).filter(|e| e.turn == Some(turn)).collect();
    let e = edges.iter().find(|e| e.start_lane_id == lane).or_else(|| edges.first())?;
    let out = network.segments.get(&e.to_segment)?;
    let gap = 20.0_f64.min(out.length / 2.0);
    let s = if e.end_lane_id < 0 { gap } else { out.length - gap };
    Some(LanePos {
        road_id: out.id.clone(),
        lane_id: e.end_lane_id,
        s,
        offset: 0.0,
    })
}

fn outer_offset(seg: &RoadSegment, lane: i32, s: f64, sign: f64) -> f64 {
    sign * (seg.lane(lane).map(|l| l.width_at(s)).unwrap_or(3.5) / 2.0 + 1.0)
}

/// Opposite curb for a pedestrian crossing the AV's road.
fn crossing_target(seg: &RoadSegment, cur: &LanePos) -> LanePos {
    let forward: Vec<i32> = seg.driving_lanes(LaneDirection::Forward).iter().map(|l| l.lane_id).collect();
    let backward: Vec<i32> = seg.driving_lanes(LaneDirection::Backward).iter().map(|l| l.lane_id).collect();
    let (lane, sign) = if cur.offset < 0.0 {
        match backward.last() {
            Some(l) => (*l, 1.0),
            None => (*forward.first().unwrap_or(&cur.lane_id), 1.0),
        }
    } else {
        (*forward.last().unwrap_or(&cur.lane_id), -1.0)
    };
    LanePos {
        road_id: seg.id.clone(),
        lane_id: lane,
        s: cur.s,
        offset: outer_offset(seg, lane, cur.s, sign),
    }
}

fn route_for(network: &RoadNetwork, cur: &LanePos, route: RouteEffect, pedestrian: bool) -> Vec<LanePos> {
    let Some(seg) = network.segments.get(&cur.road_id) else {
        return vec![cur.clone(), cur.clone()];
    };
    if pedestrian || (route == RouteEffect::Cross && network.junction_edges_from(&seg.id).next().is_none()) {
        return vec![cur.clone(), crossing_target(seg, cur)];
    }
    let turn = match route {
        RouteEffect::Left => Turn::Left,
        RouteEffect::Right => Turn::Right,
        RouteEffect::UTurn => Turn::UTurn,
        _ => Turn::Straight,
    };
    if let Some(exit) = exit_position(network, seg, cur.lane_id, turn) {
        return vec![cur.clone(), exit];
    }
    if turn == Turn::UTurn {
        if let Some(back) = seg.driving_lanes(if cur.lane_id < 0 { LaneDirection::Backward } else { LaneDirection::Forward }).first() {
            return vec![
                cur.clone(),
                LanePos {
                    road_id: seg.id.clone(),
                    lane_id: back.lane_id,
                    s: cur.s,
                    offset: 0.0,
                },
            ];
        }
    }
    let ahead = if cur.lane_id < 0 { cur.s + 30.0 } else { cur.s - 30.0 };
    vec![
        cur.clone(),
        LanePos {
            s: ahead.clamp(1.0, (seg.length - 1.0).max(1.0)),
            ..cur.clone()
        },
    ]
}

/// Event slots for one NPC, following its position through lane changes and
/// routes.
pub fn event_slots(
    network: &RoadNetwork,
    params: &ParameterTable,
    npc: &NpcFact,
    start: &Placement,
    assignment: &LaneAssignment,
) -> Vec<SlotRequest> {
    let cb = Codebook::builtin();
    let v0 = params.category(npc.category).target_speed;
    let pedestrian = !npc.category.is_vehicle();
    let default_dyn = |duration: Option<f64>| request::Dynamics {
        shape: params.dynamics.shape.clone(),
        value: duration.unwrap_or(params.dynamics.value),
        dimension: params.dynamics.dimension.clone(),
    };
    let mut cur = lane_pos(start);
    let mut out = Vec::new();
    let mut prev: Option<String> = None;
    for (k, code) in npc.events.actions.iter().enumerate() {
        let Some(def) = cb.action(*code) else { continue };
        let p = npc.events.params.get(k).cloned().unwrap_or_default();
        let event = format!("{}_e{}_{}", npc.name, k + 1, code.0);
        let speed_target = |effect: SpeedEffect| -> f64 {
            p.target_speed.unwrap_or(match effect {
                SpeedEffect::Accelerate => v0 * params.speed_factors.accelerate,
                SpeedEffect::Decelerate => v0 * params.speed_factors.decelerate,
                SpeedEffect::Stop | SpeedEffect::Yield => 0.0,
                SpeedEffect::Reverse => params.speed_factors.reverse_speed,
                SpeedEffect::None => v0,
            })
        };
        let action = if def.lane != LaneEffect::None && !pedestrian {
            let av_lane = (cur.road_id == assignment.av_segment && npc.rel_pos.same_segment()).then_some(assignment.av_lane);
            let next = network
                .segments
                .get(&cur.road_id)
                .map(|seg| replay_events(seg, cur.lane_id, &[*code], av_lane))
                .unwrap_or(Ok(cur.lane_id))
                .unwrap_or_else(|e| {
                    log::warn!("{event}: {e}; keeping lane {}", cur.lane_id);
                    cur.lane_id
                });
            if next == cur.lane_id {
                EventAction::Speed {
                    target: speed_target(SpeedEffect::Accelerate),
                    dynamics: default_dyn(p.duration),
                }
            } else {
                cur.lane_id = next;
                EventAction::LaneChange {
                    target_lane: next,
                    dynamics: default_dyn(p.duration),
                }
            }
        } else if matches!(def.route, RouteEffect::Left | RouteEffect::Right | RouteEffect::UTurn | RouteEffect::Cross) {
            let waypoints = route_for(network, &cur, def.route, pedestrian);
            cur = waypoints.last().cloned().unwrap_or(cur);
            EventAction::Route { waypoints }
        } else {
            EventAction::Speed {
                target: speed_target(def.speed),
                dynamics: default_dyn(p.duration),
            }
        };
        let start = match &prev {
            None => EventStart::SimulationTime {
                value: params.timing.first_event,
            },
            Some(e) => EventStart::AfterEvent { event: e.clone() },
        };
        out.push(SlotRequest {
            key: format!("{}/e{}", npc.name, k + 1),
            spec: SlotSpec::Event {
                npc: npc.name.clone(),
                event: event.clone(),
                letter: code.0.to_string(),
                behavior: def.name.clone(),
                start,
                action,
            },
        });
        prev = Some(event);
    }
    out
}

/// Every content slot a seed needs, in insertion order.
pub fn plan_slots(
    network: &RoadNetwork,
    params: &ParameterTable,
    facts: &ReportFacts,
    assignment: &LaneAssignment,
    context: Option<&PlacementContext>,
) -> Result<Vec<SlotRequest>, ScenarioError> {
    if assignment.npc_assignments.len() != facts.npcs.len() {
        return Err(ScenarioError::Inconsistent(format!(
            "{} NPCs but {} placements",
            facts.npcs.len(),
            assignment.npc_assignments.len()
        )));
    }
    if assignment.obstacle_assignments.len() != facts.obstacles.len() {
        return Err(ScenarioError::Inconsistent(format!(
            "{} obstacles but {} placements",
            facts.obstacles.len(),
            assignment.obstacle_assignments.len()
        )));
    }
    let mut slots = vec![SlotRequest {
        key: "weather".into(),
        spec: weather_slot(params, weather_type_for(facts.av_context.weather.as_deref())),
    }];
    if context.is_some_and(|c| c.junction.is_some()) {
        for a in network.approach_signals(&assignment.av_segment) {
            slots.push(SlotRequest {
                key: format!("signal:{}", a.id),
                spec: SlotSpec::Signal {
                    signal_id: a.id.clone(),
                    state: "off".into(),
                },
            });
        }
    }
    slots.push(SlotRequest {
        key: format!("{EGO_NAME}/definition"),
        spec: definition_slot(params, EGO_NAME, params.ego.category),
    });
    slots.push(SlotRequest {
        key: format!("{EGO_NAME}/init"),
        spec: SlotSpec::Init {
            entity: EGO_NAME.into(),
            position: LanePos {
                road_id: assignment.av_segment.clone(),
                lane_id: assignment.av_lane,
                s: assignment.av_s,
                offset: 0.0,
            },
            speed: Some(params.ego.initial_speed),
            goal: Some(lane_pos(&assignment.av_goal)),
        },
    });
    for (npc, place) in facts.npcs.iter().zip(&assignment.npc_assignments) {
        if npc.name != place.name {
            return Err(ScenarioError::Inconsistent(format!("placement '{}' for NPC '{}'", place.name, npc.name)));
        }
        slots.push(SlotRequest {
            key: format!("{}/definition", npc.name),
            spec: definition_slot(params, &npc.name, npc.category),
        });
        slots.push(SlotRequest {
            key: format!("{}/init", npc.name),
            spec: SlotSpec::Init {
                entity: npc.name.clone(),
                position: lane_pos(place),
                speed: Some(params.category(npc.category).target_speed),
                goal: None,
            },
        });
        slots.push(SlotRequest {
            key: format!("{}/group", npc.name),
            spec: SlotSpec::Group { npc: npc.name.clone() },
        });
        slots.extend(event_slots(network, params, npc, place, assignment));
    }
    for (o, place) in facts.obstacles.iter().zip(&assignment.obstacle_assignments) {
        let d = &params.obstacle;
        let dims = o.dimensions.map(|[l, w, h]| [w, l, h]).unwrap_or([d.width, d.length, d.height]);
        slots.push(SlotRequest {
            key: format!("{}/definition", o.name),
            spec: SlotSpec::Definition {
                entity: o.name.clone(),
                object: ObjectKind::Misc,
                model: if o.kind.is_empty() { "obstacle".into() } else { o.kind.clone() },
                category: "obstacle".into(),
                color: params.default_color.clone(),
                dimensions: dims,
                mass: Some(d.mass),
                performance: None,
            },
        });
        slots.push(SlotRequest {
            key: format!("{}/init", o.name),
            spec: SlotSpec::Init {
                entity: o.name.clone(),
                position: lane_pos(place),
                speed: None,
                goal: None,
            },
        });
    }
    Ok(slots)
}

fn parent_of(spec: &SlotSpec) -> &'static str {
    match spec {
        SlotSpec::Weather { .. } | SlotSpec::Signal { .. } | SlotSpec::Init { .. } => "Actions",
        SlotSpec::Definition { .. } => "Entities",
        SlotSpec::Group { .. } => "Act",
        SlotSpec::Event { .. } => "Maneuver",
    }
}

/// Name the fragment must carry, as (element path, attribute, value).
fn expected_name(spec: &SlotSpec) -> Option<(&'static str, &'static str, String)> {
    match spec {
        SlotSpec::Definition { entity, .. } => Some(("", "name", entity.clone())),
        SlotSpec::Init { entity, .. } => Some(("", "entityRef", entity.clone())),
        SlotSpec::Group { npc } => Some(("Actors/EntityRef", "entityRef", npc.clone())),
        SlotSpec::Event { event, .. } => Some(("", "name", event.clone())),
        SlotSpec::Signal { signal_id, .. } => Some((
            "InfrastructureAction/TrafficSignalAction/TrafficSignalStateAction",
            "name",
            signal_id.clone(),
        )),
        SlotSpec::Weather { .. } => None,
    }
}

/// Parses and checks one returned fragment against its slot.
pub fn check_fragment(schema: &SchemaGraph, slot: &SlotRequest, text: Option<&String>) -> Result<Element, ScenarioError> {
    let invalid = |finding: String| ScenarioError::FragmentInvalid {
        slot: slot.key.clone(),
        finding,
    };
    let text = text.ok_or_else(|| invalid("no fragment returned".into()))?;
    let el = xml::parse_fragment(text).map_err(|e| invalid(e.to_string()))?;
    let want = slot.spec.element();
    if el.name != want {
        return Err(invalid(format!("root element is <{}>, expected <{want}>", el.name)));
    }
    if let Some((path, attr, value)) = expected_name(&slot.spec) {
        let got = el.find(path).and_then(|e| e.attr(attr));
        if got != Some(value.as_str()) {
            return Err(invalid(format!("{attr} is {got:?}, expected '{value}'")));
        }
    }
    let mut report = ValidationReport::default();
    schema.validate_element(Some(parent_of(&slot.spec)), &el, &format!("{}/{}", slot.key, el.name), &mut report);
    if let Some(f) = report.findings.first() {
        return Err(invalid(format!("{}: {}", f.path, f.message)));
    }
    Ok(el)
}

fn single(kind: BlockKind, tag: &str, name: &str, slot: Slot, element: Element) -> ScenarioBlock {
    ScenarioBlock {
        kind,
        identity: BlockIdentity {
            tag: tag.into(),
            name: name.into(),
        },
        parts: vec![BlockPart { slot, element }],
        owner: None,
    }
}

/// Groups checked fragments into scenario blocks, and ego parts into the
/// template.
fn build_blocks(
    skeleton: &mut Element,
    slots: &[SlotRequest],
    fragments: Vec<Element>,
) -> Result<Vec<ScenarioBlock>, ScenarioError> {
    let mut blocks: Vec<ScenarioBlock> = Vec::new();
    let mut entity_block: BTreeMap<String, usize> = BTreeMap::new();
    for (slot, el) in slots.iter().zip(fragments) {
        match &slot.spec {
            SlotSpec::Weather { weather_type, .. } => {
                blocks.push(single(BlockKind::Weather, "Environment", weather_type, Slot::InitGlobal, el));
            }
            SlotSpec::Signal { signal_id, .. } => {
                blocks.push(single(BlockKind::TrafficSignal, "TrafficSignalStateAction", signal_id, Slot::InitGlobal, el));
            }
            SlotSpec::Definition { entity, .. } if entity == EGO_NAME => {
                skeleton.child_mut("Entities").expect("template has Entities").push(el);
            }
            SlotSpec::Init { entity, .. } if entity == EGO_NAME => {
                skeleton.find_mut("Storyboard/Init/Actions").expect("template has Actions").push(el);
            }
            SlotSpec::Definition { entity, object, .. } => {
                let kind = if *object == ObjectKind::Misc {
                    BlockKind::Obstacle
                } else {
                    BlockKind::NpcDefinition
                };
                entity_block.insert(entity.clone(), blocks.len());
                blocks.push(single(kind, "ScenarioObject", entity, Slot::Entities, el));
            }
            SlotSpec::Init { entity, .. } => {
                let i = entity_block
                    .get(entity)
                    .ok_or_else(|| ScenarioError::Inconsistent(format!("init for undefined entity '{entity}'")))?;
                blocks[*i].parts.push(BlockPart {
                    slot: Slot::InitPrivate,
                    element: el,
                });
            }
            SlotSpec::Group { npc } => {
                let i = entity_block
                    .get(npc)
                    .ok_or_else(|| ScenarioError::Inconsistent(format!("group for undefined NPC '{npc}'")))?;
                blocks[*i].parts.push(BlockPart { slot: Slot::Act, element: el });
            }
            SlotSpec::Event { npc, event, .. } => {
                let mut b = single(BlockKind::Event, "Event", event, Slot::Maneuver(npc.clone()), el);
                b.owner = Some(npc.clone());
                blocks.push(b);
            }
        }
    }
    Ok(blocks)
}

pub fn fill_content<B: ExtractionBackend + ?Sized>(
    template: &ScenarioTemplate,
    network: &RoadNetwork,
    facts: &ReportFacts,
    assignment: &LaneAssignment,
    backend: &B,
) -> Result<ScenarioDocument, ScenarioError> {
    fill_content_with(template, network, facts, assignment, backend, ParameterTable::builtin(), builtin_schema())
}

pub fn fill_content_with<B: ExtractionBackend + ?Sized>(
    template: &ScenarioTemplate,
    network: &RoadNetwork,
    facts: &ReportFacts,
    assignment: &LaneAssignment,
    backend: &B,
    params: &ParameterTable,
    schema: &SchemaGraph,
) -> Result<ScenarioDocument, ScenarioError> {
    let slots = plan_slots(network, params, facts, assignment, template.metadata.context.as_ref())?;
    let request = ContentFillRequest::new(facts.report_id.clone(), slots);
    let raw = backend.complete(&request.to_turn())?;
    let response: ContentFillResponse = serde_json::from_str(strip_fence(&raw))
        .map_err(|e| BackendError::Format(format!("content-fill reply is not a fragment map: {e}")))?;
    let mut fragments = Vec::with_capacity(request.slots.len());
    for slot in &request.slots {
        fragments.push(check_fragment(schema, slot, response.fragments.get(&slot.key))?);
    }
    let mut skeleton = template.skeleton.clone();
    let blocks = build_blocks(&mut skeleton, &request.slots, fragments)?;
    let root = compose(&skeleton, &blocks)?;
    let report = schema.validate_document(&root);
    if let Some(f) = report.findings.first() {
        return Err(ScenarioError::DocumentInvalid(format!("{}: {}", f.path, f.message)));
    }
    let mut metadata = template.metadata.clone();
    metadata.report_id = facts.report_id.clone();
    metadata.assignment = Some(assignment.clone());
    Ok(ScenarioDocument { root, metadata })
}
