use std::process::Command;

use crashscen_core::block::{BlockIdentity, BlockKind, BlockPart, ScenarioBlock, Slot};
use crashscen_core::schema_model::{
    attribute_domain, builtin_catalog_text, builtin_schema, load_schema, validate_block, FindingKind, SchemaError,
    ValueDomain,
};
use crashscen_core::xml::parse_fragment;

fn block(kind: BlockKind, slot: Slot, xml: &str) -> ScenarioBlock {
    let element = parse_fragment(xml).unwrap();
    ScenarioBlock {
        kind,
        identity: BlockIdentity {
            tag: element.name.clone(),
            name: "b".into(),
        },
        parts: vec![BlockPart { slot, element }],
        owner: None,
    }
}

const WEATHER: &str = r#"<GlobalAction><EnvironmentAction><Environment name="env">
  <TimeOfDay animation="false" dateTime="2024-01-01T12:00:00"/>
  <Weather cloudState="rainy"><Sun intensity="0.5" azimuth="1.2" elevation="0.3"/><Fog visualRange="300"/>
  <Precipitation precipitationType="rain" intensity="0.7"/></Weather>
  <RoadCondition frictionScaleFactor="0.3"/></Environment></EnvironmentAction></GlobalAction>"#;

const EVENT: &str = r#"<Event name="npc1_e1_a" priority="overwrite" maximumExecutionCount="1">
  <Action name="npc1_e1_a_action"><PrivateAction><LongitudinalAction><SpeedAction>
    <SpeedActionDynamics dynamicsShape="linear" value="1" dynamicsDimension="time"/>
    <SpeedActionTarget><AbsoluteTargetSpeed value="6"/></SpeedActionTarget>
  </SpeedAction></LongitudinalAction></PrivateAction></Action>
  <StartTrigger><ConditionGroup><Condition name="c" delay="0" conditionEdge="rising">
    <ByValueCondition><SimulationTimeCondition value="1" rule="greaterThan"/></ByValueCondition>
  </Condition></ConditionGroup></StartTrigger></Event>"#;

#[test]
fn shipped_catalog_has_operator_targets() {
    let s = builtin_schema();
    for name in [
        "Weather",
        "Vehicle",
        "Pedestrian",
        "MiscObject",
        "Event",
        "AbsoluteTargetSpeed",
        "TransitionDynamics",
        "Performance",
        "TrafficSignalState",
        "Waypoint",
    ] {
        assert!(s.elements.contains_key(name), "{name}");
    }
    for e in &s.edges {
        let from_ok = s.elements.contains_key(&e.from);
        let to_name = e.to.split('.').next().unwrap();
        assert!(from_ok && s.elements.contains_key(to_name), "{e:?}");
    }
}

#[test]
fn catalog_errors() {
    assert!(matches!(load_schema(""), Err(SchemaError::CatalogParseError(_))));
    assert!(matches!(load_schema("{"), Err(SchemaError::CatalogParseError(_))));
    let dangling = r#"{"root":"A","elements":[{"name":"A","kind":"class","children":[{"element":"Nope","min":0,"max":1}]}]}"#;
    assert!(matches!(load_schema(dangling), Err(SchemaError::InvariantViolation(_))));
    let cycle = r#"{"root":"A","elements":[{"name":"A","kind":"class","extends":"B"},{"name":"B","kind":"class","extends":"A"}]}"#;
    assert!(matches!(load_schema(cycle), Err(SchemaError::InvariantViolation(_))));
    let empty_enum = r#"{"root":"A","elements":[{"name":"A","kind":"class"},{"name":"E","kind":"enumeration"}]}"#;
    assert!(matches!(load_schema(empty_enum), Err(SchemaError::InvariantViolation(_))));
}

#[test]
fn table_domains() {
    let s = builtin_schema();
    let lits = |e: &str, a: &str| attribute_domain(s, e, a).unwrap().literals().unwrap().to_vec();
    assert_eq!(lits("TransitionDynamics", "dynamicsShape"), ["cubic", "sinusoidal", "linear"]);
    assert_eq!(lits("SpeedActionDynamics", "dynamicsShape"), ["cubic", "sinusoidal", "linear"]);
    assert_eq!(lits("TrafficSignalState", "state"), ["green", "yellow", "red", "off"]);
    assert_eq!(
        attribute_domain(s, "Vehicle", "nonexistent"),
        Err(SchemaError::UnknownAttribute {
            element: "Vehicle".into(),
            attribute: "nonexistent".into()
        })
    );
    match attribute_domain(s, "Precipitation", "intensity").unwrap() {
        ValueDomain::NumericRange { min, max, .. } => assert_eq!((min, max), (Some(0.0), Some(1.0))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn mutated_attributes_resolve() {
    let s = builtin_schema();
    for (e, a) in [
        ("AbsoluteTargetSpeed", "value"),
        ("TransitionDynamics", "dynamicsShape"),
        ("TransitionDynamics", "value"),
        ("Performance", "maxAcceleration"),
        ("Performance", "maxDeceleration"),
        ("Performance", "maxSpeed"),
        ("LanePosition", "offset"),
        ("LanePosition", "s"),
        ("Dimensions", "width"),
        ("Dimensions", "length"),
        ("Dimensions", "height"),
        ("Vehicle", "vehicleCategory"),
        ("Precipitation", "intensity"),
        ("Fog", "visualRange"),
        ("Sun", "azimuth"),
        ("Sun", "elevation"),
        ("RoadCondition", "frictionScaleFactor"),
        ("TrafficSignalStateAction", "state"),
        ("WorldPosition", "x"),
    ] {
        attribute_domain(s, e, a).unwrap_or_else(|err| panic!("{err}"));
    }
}

#[test]
fn weather_block_is_clean() {
    let b = block(BlockKind::Weather, Slot::InitGlobal, WEATHER);
    let r = validate_block(builtin_schema(), &b);
    assert!(r.is_clean(), "{r}");
}

#[test]
fn spiral_shape_is_one_domain_finding() {
    let b = block(
        BlockKind::Event,
        Slot::Maneuver("npc1".into()),
        &EVENT.replace("\"linear\"", "\"spiral\""),
    );
    let r = validate_block(builtin_schema(), &b);
    assert_eq!(r.findings.len(), 1, "{r}");
    assert_eq!(r.findings[0].kind, FindingKind::Domain);
}

#[test]
fn event_under_entities_is_one_containment_finding() {
    let b = block(BlockKind::Event, Slot::Entities, EVENT);
    let r = validate_block(builtin_schema(), &b);
    assert_eq!(r.findings.len(), 1, "{r}");
    assert_eq!(r.findings[0].kind, FindingKind::Containment);
    let ok = block(BlockKind::Event, Slot::Maneuver("npc1".into()), EVENT);
    assert!(validate_block(builtin_schema(), &ok).is_clean());
}

#[test]
fn structural_findings() {
    let s = builtin_schema();
    let missing = block(
        BlockKind::Event,
        Slot::Maneuver("n".into()),
        &EVENT.replace(" priority=\"overwrite\"", ""),
    );
    assert_eq!(validate_block(s, &missing).count(FindingKind::MissingAttribute), 1);
    let extra = block(BlockKind::Weather, Slot::InitGlobal, &WEATHER.replace("<Fog ", "<Fog color=\"grey\" "));
    assert_eq!(validate_block(s, &extra).count(FindingKind::UnknownAttribute), 1);
    let no_sun = block(
        BlockKind::Weather,
        Slot::InitGlobal,
        &WEATHER.replace(r#"<Sun intensity="0.5" azimuth="1.2" elevation="0.3"/>"#, ""),
    );
    assert_eq!(validate_block(s, &no_sun).count(FindingKind::Cardinality), 1);
    let swapped = block(
        BlockKind::Weather,
        Slot::InitGlobal,
        &WEATHER.replace(
            r#"<Sun intensity="0.5" azimuth="1.2" elevation="0.3"/><Fog visualRange="300"/>"#,
            r#"<Fog visualRange="300"/><Sun intensity="0.5" azimuth="1.2" elevation="0.3"/>"#,
        ),
    );
    assert_eq!(validate_block(s, &swapped).count(FindingKind::Order), 1);
}

#[test]
fn validation_is_idempotent() {
    let b = block(BlockKind::Event, Slot::Entities, EVENT);
    let before = b.clone();
    let r1 = validate_block(builtin_schema(), &b);
    let r2 = validate_block(builtin_schema(), &b);
    assert_eq!(r1, r2);
    assert_eq!(b, before);
}

/// Runs the exported XSD through the Python `xmlschema` package when present.
#[test]
fn exported_xsd_is_a_valid_schema() {
    let probe = Command::new("python3").args(["-c", "import xmlschema"]).output();
    if !probe.map(|o| o.status.success()).unwrap_or(false) {
        eprintln!("skipping: python3 with xmlschema not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let xsd = dir.path().join("subset.xsd");
    std::fs::write(&xsd, builtin_schema().to_xsd()).unwrap();
    let out = Command::new("python3")
        .args(["-c", "import sys, xmlschema; xmlschema.XMLSchema(sys.argv[1])"])
        .arg(&xsd)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(builtin_catalog_text().contains("\"dialect\": \"OpenSCENARIO 1.0\""));
}
