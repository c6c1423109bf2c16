use std::path::PathBuf;

use crashscen_core::block::{compose, BlockKind, ScenarioBlock, Slot};
use crashscen_core::map_graph::{parse_opendrive, RoadNetwork};
use crashscen_core::mutation::{
    block_class, derive_seed, disassemble, mutate_block, mutate_blocks, obstacle_insertion_block, sample_value,
    MutationContext, MutationError, MutationSpec, SceneContext, Value, ValueDomain,
};
use crashscen_core::params::{Operator, ParameterTable, Strategy};
use crashscen_core::scenario_gen::ScenarioDocument;
use crashscen_core::schema_model::{builtin_schema, validate_block};
use crashscen_core::xml::Element;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: &[&str] = &[
    "left_turn_across_path",
    "lane_change_then_left_turn",
    "bicycle_lane_change",
    "overtake_from_left",
    "pedestrian_crossing",
    "sudden_stop_ahead",
    "obstacle_only",
];

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn seed_text(id: &str) -> String {
    std::fs::read_to_string(root().join("fixtures/seeds").join(format!("{id}.xosc"))).unwrap()
}

fn seed(id: &str) -> ScenarioDocument {
    ScenarioDocument::parse(&seed_text(id)).unwrap()
}

fn network(doc: &ScenarioDocument) -> RoadNetwork {
    let text = std::fs::read_to_string(root().join("fixtures/maps").join(&doc.metadata.map_file)).unwrap();
    parse_opendrive(&text).unwrap()
}

fn params() -> &'static ParameterTable {
    ParameterTable::builtin()
}

fn no_scene() -> MutationContext<'static> {
    MutationContext { params: params(), scene: None }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn blocks(id: &str) -> Vec<ScenarioBlock> {
    disassemble(&seed(id)).1
}

fn block_named(id: &str, name: &str) -> ScenarioBlock {
    blocks(id).into_iter().find(|b| b.identity.name == name).unwrap()
}

fn weather_block(id: &str) -> ScenarioBlock {
    blocks(id).into_iter().find(|b| b.kind == BlockKind::Weather).unwrap()
}

fn spec(op: Operator) -> MutationSpec {
    MutationSpec::from_table(params(), op).unwrap()
}

fn find<'a>(el: &'a Element, name: &str) -> &'a Element {
    el.descendants().into_iter().find(|e| e.name == name).unwrap_or_else(|| panic!("no <{name}>"))
}

fn num(el: &Element, name: &str, attr: &str) -> f64 {
    find(el, name).attr_f64(attr).unwrap()
}

fn part(b: &ScenarioBlock, slot: Slot) -> &Element {
    b.part(&slot).unwrap()
}

/// Block counts read straight off the serialized seed.
fn text_counts(text: &str) -> (usize, usize, usize, usize, usize) {
    let objects = text.matches("<ScenarioObject name=").count() - 1;
    let obstacles = text.matches("<MiscObject ").count();
    (
        text.matches("<EnvironmentAction>").count(),
        objects - obstacles,
        text.matches("<TrafficSignalStateAction ").count(),
        text.matches("<Event name=").count(),
        obstacles,
    )
}

#[test]
fn disassembly_yields_one_block_per_element_and_event() {
    for id in SEEDS {
        let bs = blocks(id);
        let count = |k: BlockKind| bs.iter().filter(|b| b.kind == k).count();
        let got = (
            count(BlockKind::Weather),
            count(BlockKind::NpcDefinition),
            count(BlockKind::TrafficSignal),
            count(BlockKind::Event),
            count(BlockKind::Obstacle),
        );
        assert_eq!(got, text_counts(&seed_text(id)), "{id}");
        let kinds: Vec<BlockKind> = bs.iter().map(|b| b.kind).collect();
        let mut sorted = kinds.clone();
        sorted.sort();
        assert_eq!(kinds, sorted, "{id}: blocks out of insertion order");
    }
    let single = blocks("overtake_from_left");
    assert_eq!(single.iter().filter(|b| b.kind == BlockKind::NpcDefinition).count(), 1);
    let only = blocks("obstacle_only");
    assert_eq!(only.iter().map(|b| b.kind).collect::<Vec<_>>(), vec![BlockKind::Weather, BlockKind::Obstacle]);
}

#[test]
fn disassemble_then_compose_restores_the_seed() {
    for id in SEEDS {
        let doc = seed(id);
        let (template, bs) = disassemble(&doc);
        assert_eq!(compose(&template.skeleton, &bs).unwrap(), doc.root, "{id}");
        assert_eq!(template.metadata, doc.metadata);
    }
}

#[test]
fn target_speed_respects_acceleration_and_deceleration_ranges() {
    // npc1_e1_a proceeds at 6 m/s (acceleration context); npc1_e2_e decelerates from 3 m/s.
    let acc = block_named("sudden_stop_ahead", "npc1_e1_a");
    let dec = block_named("sudden_stop_ahead", "npc1_e2_e");
    for s in 0..200 {
        for v in mutate_block(&acc, &spec(Operator::TsmSpeed), 2, &mut rng(s), &no_scene()).unwrap() {
            let x = num(part(&v.block, Slot::Maneuver("npc1".into())), "AbsoluteTargetSpeed", "value");
            assert!((6.0..=9.0).contains(&x), "{x}");
        }
        for v in mutate_block(&dec, &spec(Operator::TsmSpeed), 2, &mut rng(s), &no_scene()).unwrap() {
            let x = num(part(&v.block, Slot::Maneuver("npc1".into())), "AbsoluteTargetSpeed", "value");
            assert!((1.5..=3.0).contains(&x), "{x}");
        }
    }
    let s = spec(Operator::TsmSpeed);
    for k in 0..1000 {
        let v = sample_value(&s, &Value::Number(6.0), &ValueDomain::Range([0.5 * 6.0, 6.0]), &mut rng(k), None).unwrap();
        assert!((3.0..=6.0).contains(&v.as_f64().unwrap()));
    }
}

#[test]
fn dimension_gaussian_has_mean_near_original_and_stays_clamped() {
    let s = spec(Operator::Dm);
    let mut r = rng(11);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_value(&s, &Value::Number(1.8), &ValueDomain::Clamp(None), &mut r, None).unwrap().as_f64().unwrap())
        .collect();
    assert!(draws.iter().all(|&w| w > 0.0 && (0.9..=2.7).contains(&w)));
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    // sigma = 10% of 1.8; the standard error of the mean is 0.0018.
    assert!((mean - 1.8).abs() < 0.01, "mean {mean}");
    assert!((sd - 0.18).abs() < 0.01, "sd {sd}");
}

#[test]
fn transition_dynamics_sampling_covers_table_ranges() {
    let s = spec(Operator::Dtm);
    let mut r = rng(5);
    let mut seen = std::collections::BTreeSet::new();
    let mut lo_half = 0;
    for _ in 0..10_000 {
        let v = sample_value(&s, &Value::Number(1.0), &ValueDomain::Range([1.0, 10.0]), &mut r, None).unwrap().as_f64().unwrap();
        assert!((1.0..=10.0).contains(&v));
        if v < 5.5 {
            lo_half += 1;
        }
        let shapes = ValueDomain::Literals { all: s.params.literals.clone(), tried: vec![] };
        if let Value::Literal(l) = sample_value(&s, &Value::Literal("linear".into()), &shapes, &mut r, None).unwrap() {
            seen.insert(l);
        }
    }
    assert!((4700..5300).contains(&lo_half), "{lo_half}");
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec!["cubic", "linear", "sinusoidal"]);
}

#[test]
fn signal_mutation_enumerates_three_states() {
    let b = blocks("left_turn_across_path").into_iter().find(|b| b.kind == BlockKind::TrafficSignal).unwrap();
    assert_eq!(find(part(&b, Slot::InitGlobal), "TrafficSignalStateAction").attr("state"), Some("off"));
    let vs = mutate_block(&b, &spec(Operator::TsmSignal), 2, &mut rng(0), &no_scene()).unwrap();
    let states: Vec<&str> = vs
        .iter()
        .map(|v| find(part(&v.block, Slot::InitGlobal), "TrafficSignalStateAction").attr("state").unwrap())
        .collect();
    assert_eq!(states, vec!["green", "yellow", "red"]);
    for v in &vs {
        assert_eq!(v.provenance.len(), 1);
        assert_eq!(v.provenance[0].attribute, "state");
    }
}

#[test]
fn enumerative_domain_is_exhausted_after_every_literal() {
    let s = spec(Operator::TsmSignal);
    let all: Vec<String> = s.params.literals.clone();
    let d = ValueDomain::Literals { all: all.clone(), tried: all };
    let r = sample_value(&s, &Value::Literal("off".into()), &d, &mut rng(0), None);
    assert_eq!(r, Err(MutationError::DomainExhausted(Operator::TsmSignal)));
}

#[test]
fn weather_variants_follow_their_type_ranges() {
    let b = weather_block("left_turn_across_path");
    for s in 0..100 {
        let vs = mutate_block(&b, &spec(Operator::Wm), 2, &mut rng(s), &no_scene()).unwrap();
        assert_eq!(vs.len(), 3);
        for v in vs {
            let ga = part(&v.block, Slot::InitGlobal);
            let kind = find(ga, "Environment").attr("name").unwrap().to_string();
            assert_eq!(v.block.identity.name, kind);
            let wt = params().weather(&kind).unwrap();
            let within = |x: f64, r: [f64; 2]| r[0] <= x && x <= r[1];
            assert!(within(num(ga, "Fog", "visualRange"), wt.visibility));
            assert!(within(num(ga, "RoadCondition", "frictionScaleFactor"), wt.friction));
            assert!(within(num(ga, "Precipitation", "intensity"), wt.precipitation_intensity));
            assert!(within(num(ga, "Sun", "azimuth"), [0.0, 2.0 * std::f64::consts::PI]));
            assert!(within(num(ga, "Sun", "elevation"), [-std::f64::consts::PI, std::f64::consts::PI]));
            if kind == "foggy" {
                assert!(within(num(ga, "Fog", "visualRange"), [50.0, 100.0]));
                assert!(within(num(ga, "RoadCondition", "frictionScaleFactor"), [0.5, 0.8]));
            }
            if kind == "rainy" {
                assert!(within(num(ga, "Fog", "visualRange"), [100.0, 500.0]));
                assert!(within(num(ga, "RoadCondition", "frictionScaleFactor"), [0.2, 0.5]));
                assert!(within(num(ga, "Precipitation", "intensity"), [0.5, 1.0]));
            }
        }
    }
}

#[test]
fn operators_reject_foreign_blocks() {
    let weather = weather_block("left_turn_across_path");
    let r = mutate_block(&weather, &spec(Operator::Vpm), 2, &mut rng(0), &no_scene());
    assert!(matches!(r, Err(MutationError::OperatorKindMismatch { operator: Operator::Vpm, .. })));

    let route = block_named("left_turn_across_path", "npc1_e2_d");
    assert_eq!(block_class(&route), "route_event");
    let r = mutate_block(&route, &spec(Operator::Dtm), 2, &mut rng(0), &no_scene());
    assert!(matches!(r, Err(MutationError::OperatorKindMismatch { .. })));

    let walker = blocks("pedestrian_crossing").into_iter().find(|b| b.kind == BlockKind::NpcDefinition).unwrap();
    assert_eq!(block_class(&walker), "pedestrian");
    for op in [Operator::Ncm, Operator::Vpm] {
        let r = mutate_block(&walker, &spec(op), 2, &mut rng(0), &no_scene());
        assert!(matches!(r, Err(MutationError::OperatorKindMismatch { .. })), "{op}");
    }

    let obstacle = blocks("obstacle_only").into_iter().find(|b| b.kind == BlockKind::Obstacle).unwrap();
    let r = mutate_block(&obstacle, &spec(Operator::Oim), 2, &mut rng(0), &no_scene());
    assert_eq!(r, Err(MutationError::MissingContext(Operator::Oim)));
}

#[test]
fn specs_enforce_legal_strategies_and_positive_sigma() {
    let mut p = params().operator(Operator::Dm).clone();
    p.strategy = Strategy::RandomSampling;
    assert!(matches!(
        MutationSpec::new(Operator::Dm, p, params().gaussian.clone()),
        Err(MutationError::InvalidSpec(_))
    ));
    let mut g = params().gaussian.clone();
    g.sigma_fraction = 0.0;
    assert!(matches!(
        MutationSpec::new(Operator::Vpm, params().operator(Operator::Vpm).clone(), g),
        Err(MutationError::InvalidSpec(_))
    ));
}

#[test]
fn category_mutation_keeps_events_and_switches_defaults() {
    let doc = seed("sudden_stop_ahead");
    let (_, bs) = disassemble(&doc);
    let npc = bs.iter().find(|b| b.kind == BlockKind::NpcDefinition).unwrap();
    let vs = mutate_block(npc, &spec(Operator::Ncm), 2, &mut rng(0), &no_scene()).unwrap();
    let cats: Vec<&str> = vs.iter().map(|v| find(part(&v.block, Slot::Entities), "Vehicle").attr("name").unwrap()).collect();
    assert_eq!(cats, vec!["sedan", "bicycle", "van", "truck", "motorbike"]);
    for v in &vs {
        assert_eq!(part(&v.block, Slot::Act), part(npc, Slot::Act), "maneuver group changed");
        let model = find(part(&v.block, Slot::Entities), "Vehicle").attr("name").unwrap();
        let d = params()
            .categories
            .iter()
            .find(|(c, _)| c.as_str() == model)
            .map(|(_, d)| d)
            .unwrap();
        let ents = part(&v.block, Slot::Entities);
        assert_eq!(num(ents, "Dimensions", "width"), d.width);
        assert_eq!(num(ents, "Dimensions", "length"), d.length);
        assert_eq!(find(ents, "Vehicle").attr("vehicleCategory"), d.vehicle_category.as_deref());
        assert_eq!(num(part(&v.block, Slot::InitPrivate), "AbsoluteTargetSpeed", "value"), d.target_speed);
    }
    // Event blocks are separate and untouched by NCM.
    assert_eq!(bs.iter().filter(|b| b.owner.as_deref() == Some("npc1")).count(), 3);
}

#[test]
fn obstacle_insertion_places_ahead_of_the_av() {
    let doc = seed("obstacle_only");
    let net = network(&doc);
    let a = doc.metadata.assignment.clone().unwrap();
    let ctx = MutationContext {
        params: params(),
        scene: Some(SceneContext { network: &net, assignment: &a }),
    };
    let b = blocks("obstacle_only").into_iter().find(|b| b.kind == BlockKind::Obstacle).unwrap();
    let base = part(&b, Slot::Entities);
    let (w0, l0, h0) = (num(base, "Dimensions", "width"), num(base, "Dimensions", "length"), num(base, "Dimensions", "height"));
    let lane_w = net.segments[&a.av_segment].lane(a.av_lane).unwrap().width_at(a.av_s);
    for s in 0..200 {
        let vs = mutate_block(&b, &spec(Operator::Oim), 2, &mut rng(s), &ctx).unwrap();
        assert_eq!(vs.len(), 2);
        for v in vs {
            let lp = find(part(&v.block, Slot::InitPrivate), "LanePosition");
            assert_eq!(lp.attr("roadId"), Some(a.av_segment.as_str()));
            assert_eq!(lp.attr("laneId").unwrap().parse::<i32>().unwrap(), a.av_lane);
            let ds = lp.attr_f64("s").unwrap() - a.av_s;
            assert!((5.0 - 1e-6..=20.0 + 1e-6).contains(&ds), "{ds}");
            let ents = part(&v.block, Slot::Entities);
            let w = num(ents, "Dimensions", "width");
            assert!((0.5 * w0 - 1e-9..=1.5 * w0 + 1e-9).contains(&w));
            assert!((0.5 * l0 - 1e-9..=1.5 * l0 + 1e-9).contains(&num(ents, "Dimensions", "length")));
            assert!((0.5 * h0 - 1e-9..=1.5 * h0 + 1e-9).contains(&num(ents, "Dimensions", "height")));
            let off = lp.attr_f64("offset").unwrap().abs();
            if v.index % 2 == 0 {
                assert!(off <= lane_w + 1e-9);
            } else {
                assert!(off >= (lane_w + w) / 2.0 - 1e-6, "obstacle still blocks the lane");
            }
        }
    }
    let inserted = obstacle_insertion_block(params(), &SceneContext { network: &net, assignment: &a }, "obstacle_oim");
    assert!(validate_block(builtin_schema(), &inserted).is_clean());
    assert_eq!(mutate_block(&inserted, &spec(Operator::Oim), 2, &mut rng(1), &ctx).unwrap().len(), 2);
}

#[test]
fn waypoint_offsets_stay_within_half_the_road_length() {
    let doc = seed("left_turn_across_path");
    let net = network(&doc);
    let a = doc.metadata.assignment.clone().unwrap();
    let ctx = MutationContext {
        params: params(),
        scene: Some(SceneContext { network: &net, assignment: &a }),
    };
    let route = block_named("left_turn_across_path", "npc1_e2_d");
    for s in 0..100 {
        for v in mutate_block(&route, &spec(Operator::Wpm), 2, &mut rng(s), &ctx).unwrap() {
            assert!(!v.provenance.is_empty());
            for c in &v.provenance {
                assert_eq!(c.attribute, "offset");
            }
            for lp in part(&v.block, Slot::Maneuver("npc1".into())).descendants().into_iter().filter(|e| e.name == "LanePosition") {
                let len = net.segments[lp.attr("roadId").unwrap()].length;
                assert!(lp.attr_f64("offset").unwrap().abs() <= len / 2.0 + 1e-9);
            }
        }
    }
    assert_eq!(
        mutate_block(&route, &spec(Operator::Wpm), 2, &mut rng(0), &no_scene()),
        Err(MutationError::MissingContext(Operator::Wpm))
    );
}

#[test]
fn provenance_names_exactly_the_targeted_attributes() {
    let allowed = |op: Operator| -> &'static [&'static str] {
        match op {
            Operator::Wm => &["name", "cloudState", "azimuth", "elevation", "visualRange", "precipitationType", "intensity", "frictionScaleFactor"],
            Operator::TsmSignal => &["state"],
            Operator::TsmSpeed => &["value"],
            Operator::Dtm => &["dynamicsShape", "value"],
            Operator::Wpm => &["offset", "s"],
            Operator::Vpm => &["maxSpeed", "maxAcceleration", "maxDeceleration"],
            Operator::Dm => &["width", "length", "height", "z"],
            Operator::Ncm => &["name", "vehicleCategory", "width", "length", "height", "z", "trackWidth", "positionX", "value"],
            Operator::Oim => &["width", "length", "height", "z", "roadId", "laneId", "s", "offset"],
        }
    };
    for id in SEEDS {
        let doc = seed(id);
        let net = network(&doc);
        let a = doc.metadata.assignment.clone().unwrap();
        let ctx = MutationContext {
            params: params(),
            scene: Some(SceneContext { network: &net, assignment: &a }),
        };
        for (base, vs) in mutate_blocks(&disassemble(&doc).1, 3, &ctx).unwrap() {
            assert!(!vs.is_empty(), "{id}: {} has no variants", base.key());
            for v in vs {
                assert!(validate_block(builtin_schema(), &v.block).is_clean());
                assert_eq!(v.base, base.identity);
                for c in &v.provenance {
                    assert!(allowed(v.operator).contains(&c.attribute.as_str()), "{id}: {} changed {}", v.operator, c.attribute);
                }
                let unchanged = v.block.parts.iter().zip(&base.parts).all(|(x, y)| x.element == y.element);
                assert_eq!(unchanged, v.provenance.is_empty());
            }
        }
    }
}

#[test]
fn per_block_plans_give_configured_variant_counts() {
    let doc = seed("left_turn_across_path");
    let net = network(&doc);
    let a = doc.metadata.assignment.clone().unwrap();
    let ctx = MutationContext {
        params: params(),
        scene: Some(SceneContext { network: &net, assignment: &a }),
    };
    let out = mutate_blocks(&disassemble(&doc).1, 42, &ctx).unwrap();
    let counts: Vec<(String, usize)> = out.iter().map(|(b, v)| (b.key(), v.len())).collect();
    assert_eq!(
        counts,
        vec![
            ("weather".to_string(), 3),
            ("ScenarioObject:npc1".to_string(), 5),
            ("TrafficSignalStateAction:203".to_string(), 3),
            ("Event:npc1_e1_a".to_string(), 2),
            ("Event:npc1_e2_d".to_string(), 2),
        ]
    );
    assert_eq!(out, mutate_blocks(&disassemble(&doc).1, 42, &ctx).unwrap());
    assert_ne!(derive_seed(42, "weather"), derive_seed(42, "Event:npc1_e1_a"));
    assert_ne!(derive_seed(42, "weather"), derive_seed(43, "weather"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_seed_same_variants(s in any::<u64>()) {
        let b = block_named("sudden_stop_ahead", "npc1_e2_e");
        for op in [Operator::TsmSpeed, Operator::Dtm] {
            let x = mutate_block(&b, &spec(op), 2, &mut rng(s), &no_scene()).unwrap();
            let y = mutate_block(&b, &spec(op), 2, &mut rng(s), &no_scene()).unwrap();
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn sampled_attributes_stay_in_table_ranges(s in any::<u64>()) {
        let ev = block_named("bicycle_lane_change", "npc1_e2_f");
        for v in mutate_block(&ev, &spec(Operator::Dtm), 2, &mut rng(s), &no_scene()).unwrap() {
            let d = find(part(&v.block, Slot::Maneuver("npc1".into())), "LaneChangeActionDynamics");
            prop_assert!(["cubic", "sinusoidal", "linear"].contains(&d.attr("dynamicsShape").unwrap()));
            let value = d.attr_f64("value").unwrap();
            prop_assert!((1.0..=10.0).contains(&value));
        }
        let npc = blocks("sudden_stop_ahead").into_iter().find(|b| b.kind == BlockKind::NpcDefinition).unwrap();
        for op in [Operator::Dm, Operator::Vpm] {
            for v in mutate_block(&npc, &spec(op), 2, &mut rng(s), &no_scene()).unwrap() {
                for c in &v.provenance {
                    let (old, new): (f64, f64) = (c.old.parse().unwrap(), c.new.parse().unwrap());
                    if c.attribute != "z" {
                        prop_assert!(new > 0.0 && new >= 0.5 * old - 1e-9 && new <= 1.5 * old + 1e-9, "{} {} -> {}", c.attribute, old, new);
                    }
                }
            }
        }
    }
}
