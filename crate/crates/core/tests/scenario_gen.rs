use std::path::{Path, PathBuf};
use std::process::Command;

use crashscen_core::map_graph::{parse_opendrive, RoadNetwork};
use crashscen_core::params::ParameterTable;
use crashscen_core::pipeline::generate_seed;
use crashscen_core::placement::{assign_lanes, select_segment};
use crashscen_core::report_extraction::backend::{
    BackendError, DialogueTurn, ExtractionBackend, FixtureBackend, RecordingBackend,
};
use crashscen_core::report_extraction::{extract_facts, ReportFacts};
use crashscen_core::scenario_gen::{
    fill_content, init_template, RuleBasedFiller, ScenarioDocument, ScenarioError,
};
use crashscen_core::schema_model::builtin_schema;
use crashscen_core::xml::Element;

/// Fixture reports with the map each seed is generated on.
const SEEDS: &[(&str, &str)] = &[
    ("left_turn_across_path", "junction4.xodr"),
    ("lane_change_then_left_turn", "junction4.xodr"),
    ("bicycle_lane_change", "corridor.xodr"),
    ("overtake_from_left", "corridor.xodr"),
    ("pedestrian_crossing", "junction4.xodr"),
    ("sudden_stop_ahead", "corridor.xodr"),
];
const SEED: u64 = 7;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn map(name: &str) -> RoadNetwork {
    parse_opendrive(&std::fs::read_to_string(root().join("fixtures/maps").join(name)).unwrap()).unwrap()
}

fn facts(id: &str) -> ReportFacts {
    let b = FixtureBackend::load(&root().join("fixtures/transcripts/extraction")).unwrap();
    let text = std::fs::read_to_string(root().join("fixtures/reports").join(format!("{id}.txt"))).unwrap();
    extract_facts(id, &text, &b).unwrap()
}

/// Obstacle-only variant of the sudden-stop report.
fn obstacle_only() -> ReportFacts {
    let mut f = facts("sudden_stop_ahead");
    f.report_id = "obstacle_only".into();
    f.npcs.clear();
    f
}

fn blessing() -> bool {
    std::env::var_os("CRASHSCEN_BLESS").is_some()
}

fn seed_for(id: &str, f: &ReportFacts, m: &str) -> ScenarioDocument {
    let net = map(m);
    let recorder = RecordingBackend::new(RuleBasedFiller);
    let doc = generate_seed(&net, f, SEED, &recorder, ParameterTable::builtin()).unwrap();
    if blessing() {
        let dir = root().join("fixtures/transcripts/content");
        std::fs::create_dir_all(&dir).unwrap();
        let t = serde_json::to_string_pretty(&recorder.transcript()).unwrap();
        std::fs::write(dir.join(format!("{id}.json")), t + "\n").unwrap();
    }
    doc
}

fn golden(id: &str) -> PathBuf {
    root().join("fixtures/seeds").join(format!("{id}.xosc"))
}

fn all_seeds() -> Vec<(String, ScenarioDocument)> {
    let mut out: Vec<(String, ScenarioDocument)> = SEEDS
        .iter()
        .map(|(id, m)| (id.to_string(), seed_for(id, &facts(id), m)))
        .collect();
    out.push(("obstacle_only".into(), seed_for("obstacle_only", &obstacle_only(), "corridor.xodr")));
    out
}

fn count(root: &Element, name: &str) -> usize {
    root.descendants().into_iter().filter(|e| e.name == name).count()
}

#[test]
fn seeds_match_committed_goldens() {
    for (id, doc) in all_seeds() {
        let text = doc.to_xml();
        let path = golden(&id);
        if blessing() {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, expected, "{id} differs from its golden file");
    }
}

#[test]
fn recorded_content_transcripts_replay_the_goldens() {
    let replay = FixtureBackend::load(&root().join("fixtures/transcripts/content")).unwrap();
    for (id, m) in SEEDS {
        let doc = generate_seed(&map(m), &facts(id), SEED, &replay, ParameterTable::builtin()).unwrap();
        assert_eq!(doc.to_xml(), std::fs::read_to_string(golden(id)).unwrap(), "{id}");
    }
}

#[test]
fn every_seed_validates_and_references_resolve() {
    let schema = builtin_schema();
    for (id, doc) in all_seeds() {
        let report = doc.validate(schema);
        assert!(report.is_clean(), "{id}: {:?}", report.findings);
        let names = doc.entity_names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len(), "{id}: duplicate entity names");
        for el in doc.root.descendants() {
            if let Some(r) = el.attr("entityRef") {
                assert!(names.iter().any(|n| n == r), "{id}: dangling entityRef {r}");
            }
        }
    }
}

#[test]
fn one_npc_seed_has_ego_npc_and_one_group() {
    let doc = seed_for("left_turn_across_path", &facts("left_turn_across_path"), "junction4.xodr");
    assert_eq!(count(&doc.root, "ScenarioObject"), 2);
    assert_eq!(doc.entity_names(), vec!["ego".to_string(), "npc1".to_string()]);
    assert_eq!(count(&doc.root, "ManeuverGroup"), 1);
    assert_eq!(count(&doc.root, "Event"), 2);
    assert!(doc.validate(builtin_schema()).is_clean());
}

#[test]
fn obstacle_only_seed_has_misc_object_and_empty_act() {
    let doc = seed_for("obstacle_only", &obstacle_only(), "corridor.xodr");
    assert_eq!(doc.entity_names(), vec!["ego".to_string(), "obstacle1".to_string()]);
    assert_eq!(count(&doc.root, "MiscObject"), 1);
    let act = doc.root.find("Storyboard/Story/Act").unwrap();
    assert_eq!(act.children_named("ManeuverGroup").count(), 0);
}

#[test]
fn template_signal_annotations_follow_the_map() {
    let j = map("junction4.xodr");
    let facts = facts("left_turn_across_path");
    let ctx = select_segment(&j, &facts, SEED).unwrap();
    let t = init_template(&j, &ctx);
    let xodr = std::fs::read_to_string(root().join("fixtures/maps/junction4.xodr")).unwrap();
    let anchors = xodr.matches("<signal ").count();
    assert_eq!(count(&t.skeleton, "TrafficSignalState"), anchors);
    assert!(anchors > 0);

    let c = map("corridor.xodr");
    let plain = select_segment(&c, &obstacle_only(), SEED).unwrap();
    let t = init_template(&c, &plain);
    assert_eq!(count(&t.skeleton, "TrafficSignalState"), 0);
    assert!(t.skeleton.find("RoadNetwork/TrafficSignals").is_none());
}

#[test]
fn template_is_deterministic_and_valid_when_empty() {
    let j = map("junction4.xodr");
    let ctx = select_segment(&j, &facts("left_turn_across_path"), SEED).unwrap();
    let a = init_template(&j, &ctx).document().to_xml();
    let b = init_template(&j, &ctx).document().to_xml();
    assert_eq!(a, b);
    let t = init_template(&j, &ctx);
    assert!(builtin_schema().validate_document(&t.skeleton).is_clean());
    assert_eq!(t.road_network_ref, "junction4.xodr");
    for label in ["init_global", "init_private", "entities", "act"] {
        assert!(t.slot_index.contains_key(label), "{label}");
    }
}

#[test]
fn defaults_follow_the_parameter_table_when_reports_are_silent() {
    let doc = seed_for("overtake_from_left", &facts("overtake_from_left"), "corridor.xodr");
    let van = doc
        .root
        .find("Entities")
        .unwrap()
        .children_named("ScenarioObject")
        .find(|o| o.attr("name") == Some("npc1"))
        .unwrap()
        .child("Vehicle")
        .unwrap();
    let dims = van.find("BoundingBox/Dimensions").unwrap();
    assert_eq!(
        (dims.attr("length"), dims.attr("width"), dims.attr("height")),
        (Some("5.3"), Some("2.1"), Some("1.8"))
    );
    let perf = van.child("Performance").unwrap();
    assert_eq!(perf.attr("maxSpeed"), Some("70"));
    assert_eq!(perf.attr("maxAcceleration"), Some("10"));
    assert_eq!(perf.attr("maxDeceleration"), Some("10"));
    let env = doc.root.find("Storyboard/Init/Actions/GlobalAction/EnvironmentAction/Environment").unwrap();
    assert_eq!(env.attr("name"), Some("sunny"));

    let bike = seed_for("bicycle_lane_change", &facts("bicycle_lane_change"), "corridor.xodr");
    let init = bike
        .root
        .find("Storyboard/Init/Actions")
        .unwrap()
        .children_named("Private")
        .find(|p| p.attr("entityRef") == Some("npc1"))
        .unwrap();
    let speed = init.descendants().into_iter().find(|e| e.name == "AbsoluteTargetSpeed").unwrap();
    assert_eq!(speed.attr("value"), Some("3"));
    let ego_dims = bike.root.find("Entities/ScenarioObject/Vehicle/BoundingBox/Dimensions").unwrap();
    assert_eq!(
        (ego_dims.attr("length"), ego_dims.attr("width"), ego_dims.attr("height")),
        (Some("4.5"), Some("1.8"), Some("1.5"))
    );
    let p = ParameterTable::builtin();
    assert_eq!(p.category(crashscen_core::report_extraction::NpcCategory::Sedan).target_speed, 6.0);
}

#[test]
fn rainy_report_gets_rainy_weather() {
    let doc = seed_for("pedestrian_crossing", &facts("pedestrian_crossing"), "junction4.xodr");
    let env = doc.root.find("Storyboard/Init/Actions/GlobalAction/EnvironmentAction/Environment").unwrap();
    assert_eq!(env.attr("name"), Some("rainy"));
    let friction: f64 = env.child("RoadCondition").unwrap().attr_f64("frictionScaleFactor").unwrap();
    assert!((0.2..=0.5).contains(&friction));
}

/// Wraps the rule-based filler and rewrites its reply.
struct Tamper<F: Fn(String) -> String + Send + Sync>(F);

impl<F: Fn(String) -> String + Send + Sync> ExtractionBackend for Tamper<F> {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        RuleBasedFiller.complete(turn).map(&self.0)
    }
}

fn fill_with<B: ExtractionBackend>(backend: &B) -> Result<ScenarioDocument, ScenarioError> {
    let net = map("junction4.xodr");
    let f = facts("left_turn_across_path");
    let ctx = select_segment(&net, &f, SEED).unwrap();
    let a = assign_lanes(&ctx, &net, &f).unwrap();
    fill_content(&init_template(&net, &ctx), &net, &f, &a, backend)
}

fn edit_fragment(reply: String, key: &str, edit: impl Fn(String) -> String) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&reply).unwrap();
    let frag = v["fragments"][key].as_str().unwrap().to_string();
    v["fragments"][key] = serde_json::Value::String(edit(frag));
    v.to_string()
}

#[test]
fn invalid_dynamics_shape_names_the_slot() {
    let b = Tamper(|r| edit_fragment(r, "npc1/e1", |f| f.replace("dynamicsShape=\"linear\"", "dynamicsShape=\"spiral\"")));
    match fill_with(&b) {
        Err(ScenarioError::FragmentInvalid { slot, finding }) => {
            assert_eq!(slot, "npc1/e1");
            assert!(finding.contains("spiral"), "{finding}");
        }
        other => panic!("expected FragmentInvalid, got {other:?}"),
    }
}

#[test]
fn missing_malformed_and_misnamed_fragments_are_rejected() {
    let drop = Tamper(|r| {
        let mut v: serde_json::Value = serde_json::from_str(&r).unwrap();
        v["fragments"].as_object_mut().unwrap().remove("weather");
        v.to_string()
    });
    assert!(matches!(fill_with(&drop), Err(ScenarioError::FragmentInvalid { slot, .. }) if slot == "weather"));

    let broken = Tamper(|r| edit_fragment(r, "npc1/group", |f| f.replace("</ManeuverGroup>", "")));
    assert!(matches!(fill_with(&broken), Err(ScenarioError::FragmentInvalid { slot, .. }) if slot == "npc1/group"));

    let renamed = Tamper(|r| edit_fragment(r, "npc1/definition", |f| f.replace("name=\"npc1\"", "name=\"npc9\"")));
    assert!(matches!(fill_with(&renamed), Err(ScenarioError::FragmentInvalid { slot, .. }) if slot == "npc1/definition"));

    let fenced = Tamper(|r| format!("```json\n{r}\n```"));
    assert!(fill_with(&fenced).is_ok());

    let garbage = Tamper(|_| "not json".to_string());
    assert!(matches!(fill_with(&garbage), Err(ScenarioError::Backend(BackendError::Format(_)))));
}

#[test]
fn serialize_round_trips_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let doc = seed_for("sudden_stop_ahead", &facts("sudden_stop_ahead"), "corridor.xodr");
    let a = dir.path().join("a.xosc");
    let b = dir.path().join("b.xosc");
    doc.serialize(&a).unwrap();
    doc.serialize(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back = ScenarioDocument::read(&a).unwrap();
    assert_eq!(back, doc);
    let err = doc.serialize(Path::new("/nonexistent-dir/x/seed.xosc")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
}

#[test]
fn assignment_mismatch_is_reported() {
    let net = map("corridor.xodr");
    let f = facts("sudden_stop_ahead");
    let ctx = select_segment(&net, &f, SEED).unwrap();
    let mut a = assign_lanes(&ctx, &net, &f).unwrap();
    a.npc_assignments.clear();
    let r = fill_content(&init_template(&net, &ctx), &net, &f, &a, &RuleBasedFiller);
    assert!(matches!(r, Err(ScenarioError::Inconsistent(_))));
}

/// Checks every seed against the exported XSD with the Python `xmlschema`
/// package when it is installed.
#[test]
fn seeds_pass_external_xsd_validation() {
    let probe = Command::new("python3").args(["-c", "import xmlschema"]).output();
    if !probe.map(|o| o.status.success()).unwrap_or(false) {
        eprintln!("skipping: python3 with xmlschema not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let xsd = dir.path().join("subset.xsd");
    std::fs::write(&xsd, builtin_schema().to_xsd()).unwrap();
    let mut files = Vec::new();
    for (id, doc) in all_seeds() {
        let p = dir.path().join(format!("{id}.xosc"));
        doc.serialize(&p).unwrap();
        files.push(p);
    }
    let script = "import sys, xmlschema\ns = xmlschema.XMLSchema(sys.argv[1])\nfor f in sys.argv[2:]:\n    s.validate(f)\n";
    let out = Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(&xsd)
        .args(&files)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
