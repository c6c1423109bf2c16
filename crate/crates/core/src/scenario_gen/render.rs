//! Rule-based rendering of content-fill slots into OpenSCENARIO fragments.
//!
//! `RuleBasedFiller` answers content-fill turns with these renderings and is
//! the deterministic backend used for seeds, tests and recorded transcripts.

use std::collections::BTreeMap;

use crate::report_extraction::backend::{BackendError, DialogueTurn, ExtractionBackend, TurnKind};
use crate::xml::{fmt_num, Element};

use super::request::{
    ContentFillRequest, ContentFillResponse, Dynamics, EventAction, EventStart, LanePos, ObjectKind, SlotSpec,
};

pub const TIME_OF_DAY: &str = "2024-01-01T12:00:00";

pub fn lane_position(p: &LanePos) -> Element {
    Element::new("Position").with_child(
        Element::new("LanePosition")
            .with_attr("roadId", p.road_id.as_str())
            .with_attr("laneId", p.lane_id.to_string())
            .with_attr("offset", fmt_num(p.offset))
            .with_attr("s", fmt_num(p.s)),
    )
}

fn private_action(kind: Element) -> Element {
    Element::new("PrivateAction").with_child(kind)
}

fn dynamics(tag: &str, d: &Dynamics) -> Element {
    Element::new(tag)
        .with_attr("dynamicsShape", d.shape.as_str())
        .with_attr("value", fmt_num(d.value))
        .with_attr("dynamicsDimension", d.dimension.as_str())
}

pub fn speed_action(target: f64, d: &Dynamics) -> Element {
    private_action(
        Element::new("LongitudinalAction").with_child(
            Element::new("SpeedAction")
                .with_child(dynamics("SpeedActionDynamics", d))
                .with_child(
                    Element::new("SpeedActionTarget")
                        .with_child(Element::new("AbsoluteTargetSpeed").with_attr("value", fmt_num(target))),
                ),
        ),
    )
}

fn lane_change_action(target_lane: i32, d: &Dynamics) -> Element {
    private_action(
        Element::new("LateralAction").with_child(
            Element::new("LaneChangeAction")
                .with_child(dynamics("LaneChangeActionDynamics", d))
                .with_child(
                    Element::new("LaneChangeTarget")
                        .with_child(Element::new("AbsoluteTargetLane").with_attr("value", target_lane.to_string())),
                ),
        ),
    )
}

fn route_action(name: &str, waypoints: &[LanePos]) -> Element {
    let route = Element::new("Route")
        .with_attr("name", name)
        .with_attr("closed", "false")
        .with_children(
            waypoints
                .iter()
                .map(|w| Element::new("Waypoint").with_attr("routeStrategy", "shortest").with_child(lane_position(w))),
        );
    private_action(
        Element::new("RoutingAction").with_child(Element::new("AssignRouteAction").with_child(route)),
    )
}

pub fn weather_fragment(
    weather_type: &str,
    cloud_state: &str,
    precipitation_type: &str,
    precipitation_intensity: f64,
    visibility: f64,
    friction: f64,
    sun: [f64; 3],
) -> Element {
    let env = Element::new("Environment")
        .with_attr("name", weather_type)
        .with_child(
            Element::new("TimeOfDay")
                .with_attr("animation", "false")
                .with_attr("dateTime", TIME_OF_DAY),
        )
        .with_child(
            Element::new("Weather")
                .with_attr("cloudState", cloud_state)
                .with_child(
                    Element::new("Sun")
                        .with_attr("intensity", fmt_num(sun[0]))
                        .with_attr("azimuth", fmt_num(sun[1]))
                        .with_attr("elevation", fmt_num(sun[2])),
                )
                .with_child(Element::new("Fog").with_attr("visualRange", fmt_num(visibility)))
                .with_child(
                    Element::new("Precipitation")
                        .with_attr("precipitationType", precipitation_type)
                        .with_attr("intensity", fmt_num(precipitation_intensity)),
                ),
        )
        .with_child(Element::new("RoadCondition").with_attr("frictionScaleFactor", fmt_num(friction)));
    Element::new("GlobalAction").with_child(Element::new("EnvironmentAction").with_child(env))
}

pub fn signal_fragment(signal_id: &str, state: &str) -> Element {
    Element::new("GlobalAction").with_child(
        Element::new("InfrastructureAction").with_child(
            Element::new("TrafficSignalAction").with_child(
                Element::new("TrafficSignalStateAction")
                    .with_attr("name", signal_id)
                    .with_attr("state", state),
            ),
        ),
    )
}

fn bounding_box(dims: [f64; 3]) -> Element {
    let [w, l, h] = dims;
    Element::new("BoundingBox")
        .with_child(
            Element::new("Center")
                .with_attr("x", "0")
                .with_attr("y", "0")
                .with_attr("z", fmt_num(h / 2.0)),
        )
        .with_child(
            Element::new("Dimensions")
                .with_attr("width", fmt_num(w))
                .with_attr("length", fmt_num(l))
                .with_attr("height", fmt_num(h)),
        )
}

fn properties(pairs: &[(&str, &str)]) -> Element {
    Element::new("Properties").with_children(
        pairs
            .iter()
            .map(|(k, v)| Element::new("Property").with_attr("name", *k).with_attr("value", *v)),
    )
}

fn axle(tag: &str, steering: f64, track: f64, x: f64) -> Element {
    Element::new(tag)
        .with_attr("maxSteering", fmt_num(steering))
        .with_attr("wheelDiameter", "0.6")
        .with_attr("trackWidth", fmt_num(track))
        .with_attr("positionX", fmt_num(x))
        .with_attr("positionZ", "0.3")
}

/// The entity element (`Vehicle`, `Pedestrian` or `MiscObject`) of a definition.
pub fn entity_object(
    object: ObjectKind,
    model: &str,
    category: &str,
    color: &str,
    dims: [f64; 3],
    mass: Option<f64>,
    performance: Option<[f64; 3]>,
) -> Element {
    let [w, l, _] = dims;
    match object {
        ObjectKind::Vehicle => {
            let [max_speed, max_acc, max_dec] = performance.unwrap_or([70.0, 10.0, 10.0]);
            Element::new("Vehicle")
                .with_attr("name", model)
                .with_attr("vehicleCategory", category)
                .with_child(bounding_box(dims))
                .with_child(
                    Element::new("Performance")
                        .with_attr("maxSpeed", fmt_num(max_speed))
                        .with_attr("maxAcceleration", fmt_num(max_acc))
                        .with_attr("maxDeceleration", fmt_num(max_dec)),
                )
                .with_child(
                    Element::new("Axles")
                        .with_child(axle("FrontAxle", 0.5, w * 0.9, l * 0.3))
                        .with_child(axle("RearAxle", 0.0, w * 0.9, 0.0)),
                )
                .with_child(properties(&[("color", color), ("category", model)]))
        }
        ObjectKind::Pedestrian => Element::new("Pedestrian")
            .with_attr("model", model)
            .with_attr("mass", fmt_num(mass.unwrap_or(80.0)))
            .with_attr("name", model)
            .with_attr("pedestrianCategory", category)
            .with_child(bounding_box(dims))
            .with_child(properties(&[("color", color), ("category", model)])),
        ObjectKind::Misc => Element::new("MiscObject")
            .with_attr("miscObjectCategory", category)
            .with_attr("mass", fmt_num(mass.unwrap_or(20.0)))
            .with_attr("name", model)
            .with_child(bounding_box(dims))
            .with_child(properties(&[("color", color), ("kind", model)])),
    }
}

fn condition(name: &str, kind: Element) -> Element {
    Element::new("StartTrigger").with_child(
        Element::new("ConditionGroup").with_child(
            Element::new("Condition")
                .with_attr("name", name)
                .with_attr("delay", "0")
                .with_attr("conditionEdge", "rising")
                .with_child(Element::new("ByValueCondition").with_child(kind)),
        ),
    )
}

pub fn event_fragment(event: &str, start: &EventStart, action: &EventAction) -> Element {
    let trigger = match start {
        EventStart::SimulationTime { value } => condition(
            &format!("{event}_start"),
            Element::new("SimulationTimeCondition")
                .with_attr("value", fmt_num(*value))
                .with_attr("rule", "greaterThan"),
        ),
        EventStart::AfterEvent { event: prev } => condition(
            &format!("{event}_start"),
            Element::new("StoryboardElementStateCondition")
                .with_attr("storyboardElementType", "event")
                .with_attr("storyboardElementRef", prev.as_str())
                .with_attr("state", "endTransition"),
        ),
    };
    let pa = match action {
        EventAction::Speed { target, dynamics } => speed_action(*target, dynamics),
        EventAction::LaneChange { target_lane, dynamics } => lane_change_action(*target_lane, dynamics),
        EventAction::Route { waypoints } => route_action(&format!("{event}_route"), waypoints),
    };
    Element::new("Event")
        .with_attr("name", event)
        .with_attr("priority", "overwrite")
        .with_attr("maximumExecutionCount", "1")
        .with_child(Element::new("Action").with_attr("name", format!("{event}_action")).with_child(pa))
        .with_child(trigger)
}

pub fn group_fragment(npc: &str) -> Element {
    Element::new("ManeuverGroup")
        .with_attr("maximumExecutionCount", "1")
        .with_attr("name", format!("{npc}_group"))
        .with_child(
            Element::new("Actors")
                .with_attr("selectTriggeringEntities", "false")
                .with_child(Element::new("EntityRef").with_attr("entityRef", npc)),
        )
        .with_child(Element::new("Maneuver").with_attr("name", format!("{npc}_maneuver")))
}

/// Instantaneous initial speed.
pub fn initial_speed(speed: f64) -> Element {
    speed_action(
        speed,
        &Dynamics {
            shape: "linear".into(),
            value: 0.0,
            dimension: "time".into(),
        },
    )
}

pub fn init_fragment(entity: &str, position: &LanePos, speed: Option<f64>, goal: Option<&LanePos>) -> Element {
    let mut p = Element::new("Private")
        .with_attr("entityRef", entity)
        .with_child(private_action(Element::new("TeleportAction").with_child(lane_position(position))));
    if let Some(v) = speed {
        p.push(initial_speed(v));
    }
    if let Some(g) = goal {
        p.push(private_action(
            Element::new("RoutingAction")
                .with_child(Element::new("AcquirePositionAction").with_child(lane_position(g))),
        ));
    }
    p
}

pub fn render_slot(spec: &SlotSpec) -> Element {
    match spec {
        SlotSpec::Weather {
            weather_type,
            cloud_state,
            precipitation_type,
            precipitation_intensity,
            visibility,
            friction,
            sun_intensity,
            azimuth,
            elevation,
        } => weather_fragment(
            weather_type,
            cloud_state,
            precipitation_type,
            *precipitation_intensity,
            *visibility,
            *friction,
            [*sun_intensity, *azimuth, *elevation],
        ),
        SlotSpec::Signal { signal_id, state } => signal_fragment(signal_id, state),
        SlotSpec::Definition {
            entity,
            object,
            model,
            category,
            color,
            dimensions,
            mass,
            performance,
        } => Element::new("ScenarioObject")
            .with_attr("name", entity.as_str())
            .with_child(entity_object(*object, model, category, color, *dimensions, *mass, *performance)),
        SlotSpec::Init {
            entity,
            position,
            speed,
            goal,
        } => init_fragment(entity, position, *speed, goal.as_ref()),
        SlotSpec::Group { npc } => group_fragment(npc),
        SlotSpec::Event {
            event, start, action, ..
        } => event_fragment(event, start, action),
    }
}

/// Deterministic content-fill backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedFiller;

impl ExtractionBackend for RuleBasedFiller {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        if turn.kind != TurnKind::ContentFill {
            return Err(BackendError::NoRecording {
                turn: turn.kind,
                digest: turn.subject_digest.clone(),
            });
        }
        let request = ContentFillRequest::from_turn(turn)
            .ok_or_else(|| BackendError::Format("content-fill turn carries no request".into()))?;
        let fragments: BTreeMap<String, String> = request
            .slots
            .iter()
            .map(|s| (s.key.clone(), render_slot(&s.spec).to_xml_string()))
            .collect();
        Ok(serde_json::to_string(&ContentFillResponse { fragments }).expect("response serializes"))
    }
}
