use rand::Rng;

use super::{decelerating, quantize, sample_value, uniform, MutationContext, MutationError, MutationSpec, SceneContext, Value, ValueDomain};
use crate::block::{BlockIdentity, BlockKind, BlockPart, ScenarioBlock, Slot};
use crate::params::{Operator, ParameterTable, Strategy};
use crate::report_extraction::NpcCategory;
use crate::scenario_gen::render::{entity_object, init_fragment};
use crate::scenario_gen::{LanePos, ObjectKind};
use crate::xml::{fmt_num, Element};

fn find_named_mut<'a>(el: &'a mut Element, name: &str) -> Option<&'a mut Element> {
    if el.name == name {
        return Some(el);
    }
    el.elements_mut().find_map(|c| find_named_mut(c, name))
}

fn each_named_mut(el: &mut Element, name: &str, f: &mut dyn FnMut(&mut Element) -> Result<(), MutationError>) -> Result<(), MutationError> {
    if el.name == name {
        f(el)?;
    }
    for c in el.elements_mut() {
        each_named_mut(c, name, f)?;
    }
    Ok(())
}

fn mismatch(op: Operator, block: &ScenarioBlock) -> MutationError {
    MutationError::OperatorKindMismatch {
        operator: op,
        block: format!("{} block {}", block.kind.as_str(), block.key()),
    }
}

fn require(op: Operator, block: &ScenarioBlock, kinds: &[BlockKind]) -> Result<(), MutationError> {
    if kinds.contains(&block.kind) {
        Ok(())
    } else {
        Err(mismatch(op, block))
    }
}

fn part_mut<'a>(op: Operator, block: &'a mut ScenarioBlock, slot: &Slot) -> Result<&'a mut Element, MutationError> {
    if block.part(slot).is_none() {
        return Err(mismatch(op, block));
    }
    Ok(block.part_mut(slot).expect("checked above"))
}

fn number(v: Value) -> f64 {
    v.as_f64().expect("numeric domain yields numbers")
}

/// Entity element (`Vehicle`, `Pedestrian`, `MiscObject`) of a definition block.
fn entity_mut(block: &mut ScenarioBlock) -> Option<&mut Element> {
    block
        .part_mut(&Slot::Entities)?
        .elements_mut()
        .find(|e| matches!(e.name.as_str(), "Vehicle" | "Pedestrian" | "MiscObject"))
}

fn set_num(el: &mut Element, attr: &str, v: f64) {
    el.set_attr(attr, fmt_num(v));
}

pub(super) fn apply<R: Rng + ?Sized>(
    block: &mut ScenarioBlock,
    spec: &MutationSpec,
    index: usize,
    literal: Option<&str>,
    rng: &mut R,
    ctx: &MutationContext<'_>,
) -> Result<(), MutationError> {
    let op = spec.operator;
    let lit = || literal.ok_or_else(|| MutationError::InvalidSpec(format!("{op} needs a literal")));
    match op {
        Operator::Wm => weather(block, lit()?, rng, ctx.params),
        Operator::TsmSignal => {
            require(op, block, &[BlockKind::TrafficSignal])?;
            let state = lit()?.to_string();
            let el = find_named_mut(part_mut(op, block, &Slot::InitGlobal)?, "TrafficSignalStateAction");
            let el = el.ok_or_else(|| MutationError::InvalidSpec("signal block without a state action".into()))?;
            el.set_attr("state", state);
            Ok(())
        }
        Operator::TsmSpeed => target_speed(block, spec, rng, ctx),
        Operator::Dtm => transition(block, spec, rng, ctx),
        Operator::Wpm => waypoints(block, spec, rng, ctx),
        Operator::Vpm => performance(block, spec, rng, ctx),
        Operator::Dm => dimensions(block, spec, rng, ctx),
        Operator::Ncm => category(block, lit()?, ctx.params),
        Operator::Oim => obstacle(block, spec, index, rng, ctx),
    }
}

fn weather<R: Rng + ?Sized>(block: &mut ScenarioBlock, kind: &str, rng: &mut R, params: &ParameterTable) -> Result<(), MutationError> {
    let op = Operator::Wm;
    require(op, block, &[BlockKind::Weather])?;
    let wt = params
        .weather(kind)
        .ok_or_else(|| MutationError::InvalidSpec(format!("unknown weather type '{kind}'")))?
        .clone();
    let sun = params.sun.clone();
    let ga = part_mut(op, block, &Slot::InitGlobal)?;
    let env = ga
        .find_mut("EnvironmentAction/Environment")
        .ok_or_else(|| MutationError::InvalidSpec("weather block without an Environment".into()))?;
    env.set_attr("name", kind);
    if let Some(w) = env.child_mut("Weather") {
        w.set_attr("cloudState", wt.cloud_state.as_str());
        if let Some(s) = w.child_mut("Sun") {
            set_num(s, "azimuth", uniform(rng, sun.azimuth));
            set_num(s, "elevation", uniform(rng, sun.elevation));
        }
        if let Some(f) = w.child_mut("Fog") {
            set_num(f, "visualRange", uniform(rng, wt.visibility));
        }
        if let Some(p) = w.child_mut("Precipitation") {
            p.set_attr("precipitationType", wt.precipitation_type.as_str());
            set_num(p, "intensity", uniform(rng, wt.precipitation_intensity));
        }
    }
    if let Some(rc) = env.child_mut("RoadCondition") {
        set_num(rc, "frictionScaleFactor", uniform(rng, wt.friction));
    }
    block.identity.name = kind.to_string();
    Ok(())
}

fn event_action<'a>(op: Operator, block: &'a mut ScenarioBlock) -> Result<&'a mut Element, MutationError> {
    require(op, block, &[BlockKind::Event])?;
    let slot = block.parts.first().map(|p| p.slot.clone()).ok_or_else(|| mismatch(op, block))?;
    let ev = part_mut(op, block, &slot)?;
    if ev.child("Action").is_none() {
        return Err(MutationError::InvalidSpec("event block without an Action".into()));
    }
    Ok(ev.child_mut("Action").expect("checked above"))
}

fn target_speed<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, rng: &mut R, ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    let dec = decelerating(block);
    let factors = if dec {
        spec.range(spec.params.dec_factor, "dec_factor")?
    } else {
        spec.range(spec.params.acc_factor, "acc_factor")?
    };
    let original = block.clone();
    let action = event_action(op, block)?;
    let Some(target) = find_named_mut(action, "AbsoluteTargetSpeed") else {
        return Err(mismatch(op, &original));
    };
    let x = target.attr_f64("value").unwrap_or(0.0);
    let domain = ValueDomain::Range([factors[0] * x, factors[1] * x]);
    let v = sample_value(spec, &Value::Number(x), &domain, rng, ctx.scene.as_ref())?;
    set_num(target, "value", number(v));
    Ok(())
}

fn transition<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, rng: &mut R, ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    let value_range = spec.range(spec.params.value, "value")?;
    let original = block.clone();
    let action = event_action(op, block)?;
    let dynamics = match find_named_mut(action, "SpeedActionDynamics") {
        Some(d) => d,
        None => find_named_mut(action, "LaneChangeActionDynamics").ok_or_else(|| mismatch(op, &original))?,
    };
    let shapes = ValueDomain::Literals {
        all: spec.params.literals.clone(),
        tried: Vec::new(),
    };
    let shape = sample_value(spec, &Value::Literal(dynamics.attr("dynamicsShape").unwrap_or_default().into()), &shapes, rng, ctx.scene.as_ref())?;
    let x = dynamics.attr_f64("value").unwrap_or(0.0);
    let value = number(sample_value(spec, &Value::Number(x), &ValueDomain::Range(value_range), rng, ctx.scene.as_ref())?);
    if let Value::Literal(s) = shape {
        dynamics.set_attr("dynamicsShape", s);
    }
    set_num(dynamics, "value", value);
    Ok(())
}

fn scene<'a>(op: Operator, ctx: &MutationContext<'a>) -> Result<SceneContext<'a>, MutationError> {
    ctx.scene.ok_or(MutationError::MissingContext(op))
}

fn waypoints<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, rng: &mut R, ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    let sc = scene(op, ctx)?;
    let fraction = spec.range(spec.params.offset_road_fraction, "offset_road_fraction")?;
    let original = block.clone();
    let action = event_action(op, block)?;
    let total = action.descendants().iter().filter(|e| e.name == "Waypoint").count();
    if total == 0 {
        return Err(mismatch(op, &original));
    }
    // The first waypoint of a multi-point route is where the entity already is.
    let mut seen = 0;
    each_named_mut(action, "Waypoint", &mut |wp| {
        seen += 1;
        if total > 1 && seen == 1 {
            return Ok(());
        }
        let Some(lp) = find_named_mut(wp, "LanePosition") else { return Ok(()) };
        let road = lp.attr("roadId").unwrap_or_default().to_string();
        let len = sc
            .network
            .segments
            .get(&road)
            .map(|s| s.length)
            .ok_or_else(|| MutationError::InvalidSpec(format!("waypoint on unknown road '{road}'")))?;
        let x = lp.attr_f64("offset").unwrap_or(0.0);
        let range = ValueDomain::Range([fraction[0] * len, fraction[1] * len]);
        let offset = number(sample_value(spec, &Value::Number(x), &range, rng, Some(&sc))?);
        set_num(lp, "offset", offset);
        if spec.strategy == Strategy::ContextAware {
            let s0 = lp.attr_f64("s").unwrap_or(0.0);
            let s = number(sample_value(spec, &Value::Number(s0), &ValueDomain::Range([0.0, len]), rng, Some(&sc))?);
            set_num(lp, "s", s);
        }
        Ok(())
    })
}

fn gaussian_attrs<R: Rng + ?Sized>(el: &mut Element, attrs: &[&str], spec: &MutationSpec, rng: &mut R) -> Result<(), MutationError> {
    for a in attrs {
        let x = el.attr_f64(a).unwrap_or(0.0);
        let v = number(sample_value(spec, &Value::Number(x), &ValueDomain::Clamp(None), rng, None)?);
        set_num(el, a, v);
    }
    Ok(())
}

fn performance<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, rng: &mut R, _ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    require(op, block, &[BlockKind::NpcDefinition])?;
    let original = block.clone();
    let perf = entity_mut(block)
        .filter(|e| e.name == "Vehicle")
        .and_then(|v| v.child_mut("Performance"))
        .ok_or_else(|| mismatch(op, &original))?;
    gaussian_attrs(perf, &["maxSpeed", "maxAcceleration", "maxDeceleration"], spec, rng)
}

fn dimensions<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, rng: &mut R, _ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    require(op, block, &[BlockKind::NpcDefinition, BlockKind::Obstacle])?;
    let original = block.clone();
    let bbox = entity_mut(block)
        .and_then(|e| e.child_mut("BoundingBox"))
        .ok_or_else(|| mismatch(op, &original))?;
    let dims = bbox.child_mut("Dimensions").ok_or_else(|| mismatch(op, &original))?;
    gaussian_attrs(dims, &["width", "length", "height"], spec, rng)?;
    let h = dims.attr_f64("height").unwrap_or(0.0);
    if let Some(c) = bbox.child_mut("Center") {
        set_num(c, "z", h / 2.0);
    }
    Ok(())
}

fn category(block: &mut ScenarioBlock, lit: &str, params: &ParameterTable) -> Result<(), MutationError> {
    let op = Operator::Ncm;
    require(op, block, &[BlockKind::NpcDefinition])?;
    let cat = NpcCategory::ALL
        .into_iter()
        .find(|c| c.as_str() == lit)
        .ok_or_else(|| MutationError::InvalidSpec(format!("unknown NPC category '{lit}'")))?;
    let d = params.category(cat);
    let vehicle_category = d
        .vehicle_category
        .clone()
        .ok_or_else(|| MutationError::InvalidSpec(format!("'{lit}' is not a vehicle category")))?;
    let original = block.clone();
    let vehicle = entity_mut(block).filter(|e| e.name == "Vehicle").ok_or_else(|| mismatch(op, &original))?;
    let color = vehicle
        .find("Properties")
        .and_then(|p| p.children_named("Property").find(|q| q.attr("name") == Some("color")))
        .and_then(|q| q.attr("value"))
        .unwrap_or(&params.default_color)
        .to_string();
    let perf = vehicle.child("Performance").map(|p| {
        [
            p.attr_f64("maxSpeed").unwrap_or(params.performance.max_speed),
            p.attr_f64("maxAcceleration").unwrap_or(params.performance.max_acceleration),
            p.attr_f64("maxDeceleration").unwrap_or(params.performance.max_deceleration),
        ]
    });
    *vehicle = entity_object(ObjectKind::Vehicle, lit, &vehicle_category, &color, [d.width, d.length, d.height], None, perf);
    let speed = d.target_speed;
    if let Some(init) = block.part_mut(&Slot::InitPrivate) {
        if let Some(t) = find_named_mut(init, "AbsoluteTargetSpeed") {
            set_num(t, "value", speed);
        }
    }
    Ok(())
}

fn obstacle<R: Rng + ?Sized>(block: &mut ScenarioBlock, spec: &MutationSpec, index: usize, rng: &mut R, ctx: &MutationContext<'_>) -> Result<(), MutationError> {
    let op = spec.operator;
    require(op, block, &[BlockKind::Obstacle])?;
    let sc = scene(op, ctx)?;
    let ahead = spec.range(spec.params.ahead, "ahead")?;
    let lateral = spec.range(spec.params.lateral_lane_widths, "lateral_lane_widths")?;
    let factor = spec.range(spec.params.dimension_factor, "dimension_factor")?;
    let a = sc.assignment;
    let seg = sc
        .network
        .segments
        .get(&a.av_segment)
        .ok_or_else(|| MutationError::InvalidSpec(format!("AV segment '{}' not in the map", a.av_segment)))?;
    let original = block.clone();
    let bbox = entity_mut(block)
        .and_then(|e| e.child_mut("BoundingBox"))
        .ok_or_else(|| mismatch(op, &original))?;
    let dims = bbox.child_mut("Dimensions").ok_or_else(|| mismatch(op, &original))?;
    let mut new_dims = [0.0; 3];
    for (i, attr) in ["width", "length", "height"].into_iter().enumerate() {
        let x = dims.attr_f64(attr).unwrap_or(1.0);
        let f = number(sample_value(spec, &Value::Number(1.0), &ValueDomain::Range(factor), rng, Some(&sc))?);
        new_dims[i] = quantize(x * f, factor[0] * x, factor[1] * x);
        set_num(dims, attr, new_dims[i]);
    }
    if let Some(c) = bbox.child_mut("Center") {
        set_num(c, "z", new_dims[2] / 2.0);
    }

    let d = number(sample_value(spec, &Value::Number(0.0), &ValueDomain::Range(ahead), rng, Some(&sc))?);
    let s = quantize((a.av_s + d).min(seg.length), 0.0, seg.length);
    let lane_w = seg.lane(a.av_lane).map(|l| l.width_at(s)).unwrap_or(3.5);
    let offset = if index % 2 == 0 {
        number(sample_value(spec, &Value::Number(0.0), &ValueDomain::Range([lateral[0] * lane_w, lateral[1] * lane_w]), rng, Some(&sc))?)
    } else {
        // Clear of the AV lane: the obstacle's inner edge sits at or beyond the lane edge.
        let min = (lane_w + new_dims[0]) / 2.0;
        let max = min.max(lateral[1].abs() * lane_w);
        let m = number(sample_value(spec, &Value::Number(min), &ValueDomain::Range([min, max]), rng, Some(&sc))?);
        let m = quantize(m, min, f64::INFINITY);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let init = part_mut(op, block, &Slot::InitPrivate)?;
    let lp = find_named_mut(init, "LanePosition").ok_or_else(|| mismatch(op, &original))?;
    lp.set_attr("roadId", a.av_segment.as_str());
    lp.set_attr("laneId", a.av_lane.to_string());
    set_num(lp, "s", s);
    set_num(lp, "offset", offset);
    Ok(())
}

/// Default obstacle placed ahead of the AV, for seeds without one. OIM then
/// repositions and resizes it.
pub fn obstacle_insertion_block(params: &ParameterTable, scene: &SceneContext<'_>, name: &str) -> ScenarioBlock {
    let a = scene.assignment;
    let o = &params.obstacle;
    let ahead = params.operator(Operator::Oim).ahead.unwrap_or([5.0, 20.0]);
    let object = Element::new("ScenarioObject").with_attr("name", name).with_child(entity_object(
        ObjectKind::Misc,
        "box",
        "obstacle",
        &params.default_color,
        [o.width, o.length, o.height],
        Some(o.mass),
        None,
    ));
    let position = LanePos {
        road_id: a.av_segment.clone(),
        lane_id: a.av_lane,
        s: a.av_s + (ahead[0] + ahead[1]) / 2.0,
        offset: 0.0,
    };
    ScenarioBlock {
        kind: BlockKind::Obstacle,
        identity: BlockIdentity {
            tag: "ScenarioObject".into(),
            name: name.to_string(),
        },
        parts: vec![
            BlockPart { slot: Slot::Entities, element: object },
            BlockPart {
                slot: Slot::InitPrivate,
                element: init_fragment(name, &position, None, None),
            },
        ],
        owner: None,
    }
}
