//! Road-segment selection and initial lane assignment for the AV and every
//! participant of a report.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_graph::{
    filter_segments, normalize_angle, LaneDirection, LaneInfo, LaneType, MapError, RoadNetwork, RoadSegment,
    SegmentId, Turn,
};
use crate::report_extraction::{
    ActionCode, Codebook, LaneAlignment, LaneEffect, NpcFact, RelPos, ReportFacts, RouteEffect,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no road segment satisfies the scene constraints")]
    NoCandidate,
    #[error("infeasible lane assignment: {0}")]
    InfeasibleAssignment(String),
    #[error(transparent)]
    Map(MapError),
}

impl From<MapError> for PlacementError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::NoCandidate => PlacementError::NoCandidate,
            other => PlacementError::Map(other),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneConstraints {
    pub min_driving_lanes: u32,
    pub requires_junction: bool,
    pub required_turns: BTreeSet<Turn>,
    pub required_lane_types: BTreeSet<LaneType>,
    /// The AV's road must carry driving lanes in the opposite direction.
    #[serde(default)]
    pub requires_oncoming_lanes: bool,
    #[serde(default)]
    pub npc_rel_positions: Vec<RelPos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementContext {
    pub segment: SegmentId,
    pub junction: Option<String>,
    pub rng_seed: u64,
    pub candidates: Vec<SegmentId>,
}

/// One positioned entity: lane centre at road coordinate `s`, shifted
/// laterally by `offset` (positive to the left of the reference line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub index: usize,
    pub name: String,
    pub segment: SegmentId,
    pub lane: i32,
    pub s: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAssignment {
    pub av_segment: SegmentId,
    pub av_lane: i32,
    pub av_s: f64,
    pub av_goal: Placement,
    pub npc_assignments: Vec<Placement>,
    pub obstacle_assignments: Vec<Placement>,
}

/// Longitudinal offsets in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    /// AV distance upstream of the junction entry.
    pub junction_setback: f64,
    pub ahead_gap: f64,
    pub behind_gap: f64,
    pub oncoming_gap: f64,
    pub beyond_junction: f64,
    pub obstacle_gap: f64,
    pub pedestrian_gap: f64,
    /// Distance of a pedestrian from the outer edge of its lane.
    pub curb_offset: f64,
    pub min_spacing: f64,
    pub end_margin: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            junction_setback: 30.0,
            ahead_gap: 15.0,
            behind_gap: 15.0,
            oncoming_gap: 40.0,
            beyond_junction: 20.0,
            obstacle_gap: 25.0,
            pedestrian_gap: 25.0,
            curb_offset: 1.0,
            min_spacing: 8.0,
            end_margin: 1.0,
        }
    }
}

fn effects<'a>(cb: &'a Codebook, npc: &'a NpcFact) -> impl Iterator<Item = (ActionCode, &'a crate::report_extraction::ActionDef)> + 'a {
    npc.events
        .actions
        .iter()
        .filter_map(move |c| cb.action(*c).map(|d| (*c, d)))
}

fn has_lane_effect(cb: &Codebook, npc: &NpcFact, effect: LaneEffect) -> bool {
    effects(cb, npc).any(|(_, d)| d.lane == effect)
}

fn route_turn(route: RouteEffect) -> Option<Turn> {
    match route {
        RouteEffect::Left => Some(Turn::Left),
        RouteEffect::Right => Some(Turn::Right),
        RouteEffect::UTurn => Some(Turn::UTurn),
        _ => None,
    }
}

/// Constraints the chosen segment must meet for `facts`.
pub fn constraints_from_facts(facts: &ReportFacts) -> SceneConstraints {
    let cb = Codebook::builtin();
    let rel: Vec<RelPos> = facts
        .npcs
        .iter()
        .map(|n| n.rel_pos)
        .chain(facts.obstacles.iter().map(|o| o.rel_pos))
        .collect();
    let requires_junction = facts.av_context.junction || rel.iter().any(|r| r.at_junction());
    let mut lanes = facts.av_context.min_driving_lanes.max(1);
    let mut turns = BTreeSet::new();
    if requires_junction {
        turns.insert(facts.av_context.route.turn());
    }
    for n in facts.npcs.iter().filter(|n| n.rel_pos.same_segment() && n.category.is_vehicle()) {
        let lateral = effects(cb, n).any(|(_, d)| d.lane != LaneEffect::None);
        if lateral || n.lane_alignment == LaneAlignment::DifferentLane {
            lanes = lanes.max(2);
        }
        if requires_junction {
            for (_, d) in effects(cb, n) {
                match d.route {
                    RouteEffect::UTurn => {
                        turns.insert(Turn::Left);
                    }
                    r => turns.extend(route_turn(r)),
                }
            }
        }
    }
    SceneConstraints {
        min_driving_lanes: lanes,
        requires_junction,
        required_turns: turns,
        required_lane_types: BTreeSet::new(),
        requires_oncoming_lanes: facts
            .npcs
            .iter()
            .any(|n| n.rel_pos == RelPos::R7 && n.category.is_vehicle()),
        npc_rel_positions: rel,
    }
}

/// Filters the map and picks one candidate with a seeded generator.
///
/// Candidates on which the lane rules cannot be satisfied are dropped; when
/// none remain, the first candidate's assignment error is returned.
pub fn select_segment(network: &RoadNetwork, facts: &ReportFacts, seed: u64) -> Result<PlacementContext, PlacementError> {
    select_segment_with(network, facts, seed, &PlacementConfig::default())
}

pub fn select_segment_with(
    network: &RoadNetwork,
    facts: &ReportFacts,
    seed: u64,
    config: &PlacementConfig,
) -> Result<PlacementContext, PlacementError> {
    let constraints = constraints_from_facts(facts);
    let filtered = filter_segments(network, &constraints)?;
    let mut first_err = None;
    let mut candidates = Vec::new();
    for id in filtered {
        let ctx = context_for(network, &constraints, &id, seed);
        match assign_lanes_with(&ctx, network, facts, config) {
            Ok(_) => candidates.push(id),
            Err(e) => {
                log::debug!("segment {id} rejected: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if candidates.is_empty() {
        return Err(first_err.unwrap_or(PlacementError::NoCandidate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = candidates[rng.gen_range(0..candidates.len())].clone();
    let mut ctx = context_for(network, &constraints, &pick, seed);
    ctx.candidates = candidates;
    Ok(ctx)
}

fn context_for(network: &RoadNetwork, c: &SceneConstraints, segment: &str, seed: u64) -> PlacementContext {
    PlacementContext {
        segment: segment.to_string(),
        junction: if c.requires_junction {
            network.approach_junction(segment)
        } else {
            None
        },
        rng_seed: seed,
        candidates: Vec::new(),
    }
}

pub fn assign_lanes(
    context: &PlacementContext,
    network: &RoadNetwork,
    facts: &ReportFacts,
) -> Result<LaneAssignment, PlacementError> {
    assign_lanes_with(context, network, facts, &PlacementConfig::default())
}

fn infeasible(msg: impl Into<String>) -> PlacementError {
    PlacementError::InfeasibleAssignment(msg.into())
}

fn lane_ids(seg: &RoadSegment, dir: LaneDirection) -> Vec<i32> {
    seg.driving_lanes(dir).iter().map(|l| l.lane_id).collect()
}

/// Replays an event sequence from `start`, returning the final lane.
///
/// `av_lane` is set for participants sharing the AV's lanes, where passing on
/// the left needs no lane change if the participant already is left of the AV.
pub fn replay_events(
    seg: &RoadSegment,
    start: i32,
    actions: &[ActionCode],
    av_lane: Option<i32>,
) -> Result<i32, String> {
    let cb = Codebook::builtin();
    let lane = seg.lane(start).ok_or_else(|| format!("lane {start} missing on {}", seg.id))?;
    let order = lane_ids(seg, lane.direction);
    let feeds_junction = seg
        .driving_lanes(lane.direction)
        .iter()
        .any(|l| !l.turn_affordances.is_empty());
    let pos = |id: i32| order.iter().position(|l| *l == id);
    let mut cur = start;
    for code in actions {
        let def = cb.action(*code).ok_or_else(|| format!("unknown action {code}"))?;
        let info: &LaneInfo = seg.lane(cur).expect("replay stays on existing lanes");
        let shift = |left: bool| -> Result<i32, String> {
            let allowed = if left {
                info.lane_change.allows_left()
            } else {
                info.lane_change.allows_right()
            };
            match seg.neighbor(cur, left).filter(|n| n.is_driving()) {
                Some(n) if allowed => Ok(n.lane_id),
                _ => Err(format!(
                    "action {code} needs a {} lane change from lane {cur} on {}",
                    if left { "left" } else { "right" },
                    seg.id
                )),
            }
        };
        match def.lane {
            LaneEffect::ChangeLeft => cur = shift(true)?,
            LaneEffect::ChangeRight => cur = shift(false)?,
            LaneEffect::PassLeft => {
                let already_left = matches!((av_lane.and_then(pos), pos(cur)), (Some(a), Some(c)) if c < a);
                if !already_left {
                    cur = shift(true)?;
                }
            }
            LaneEffect::None => {}
        }
        if feeds_junction {
            let ok = match def.route {
                RouteEffect::Left => info_turns(seg, cur).contains(&Turn::Left),
                RouteEffect::Right => info_turns(seg, cur).contains(&Turn::Right),
                RouteEffect::UTurn => {
                    let t = info_turns(seg, cur);
                    t.contains(&Turn::UTurn) || t.contains(&Turn::Left)
                }
                _ => true,
            };
            if !ok {
                return Err(format!("action {code} is not permitted from lane {cur} on {}", seg.id));
            }
        }
    }
    Ok(cur)
}

fn info_turns(seg: &RoadSegment, lane: i32) -> BTreeSet<Turn> {
    seg.lane(lane).map(|l| l.turn_affordances.clone()).unwrap_or_default()
}

/// Where a Case-1 participant lives: segment, travel direction, base `s`.
struct Arm<'a> {
    seg: &'a RoadSegment,
    dir: LaneDirection,
    s: f64,
}

fn end_heading(seg: &RoadSegment) -> f64 {
    seg.reference_at(seg.length).2
}

fn find_arm<'a>(
    network: &'a RoadNetwork,
    av_seg: &'a RoadSegment,
    av_s: f64,
    rel: RelPos,
    cfg: &PlacementConfig,
) -> Result<Arm<'a>, PlacementError> {
    let clamp = |seg: &RoadSegment, s: f64| s.clamp(cfg.end_margin, seg.length - cfg.end_margin);
    match rel {
        RelPos::R1 | RelPos::R2 | RelPos::R3 => {
            let j = network
                .approach_junction(&av_seg.id)
                .ok_or_else(|| infeasible(format!("{rel} needs a junction ahead of {}", av_seg.id)))?;
            let target = match rel {
                RelPos::R1 => -FRAC_PI_2,
                RelPos::R3 => FRAC_PI_2,
                _ => PI,
            };
            let h = end_heading(av_seg);
            let arm = network
                .junction_approaches(&j)
                .into_iter()
                .filter(|s| s.id != av_seg.id)
                .map(|s| (normalize_angle(end_heading(s) - h - target).abs(), s))
                .filter(|(err, _)| *err < FRAC_PI_4)
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
                .map(|(_, s)| s)
                .ok_or_else(|| infeasible(format!("junction {j} has no {rel} approach")))?;
            Ok(Arm {
                seg: arm,
                dir: LaneDirection::Forward,
                s: clamp(arm, arm.length - cfg.junction_setback),
            })
        }
        RelPos::R4 => {
            let edge = network
                .junction_edges_from(&av_seg.id)
                .filter(|e| e.turn == Some(Turn::Straight))
                .min_by_key(|e| (e.start_lane_id.abs(), e.to_segment.clone()))
                .ok_or_else(|| infeasible(format!("no straight connection beyond {}", av_seg.id)))?;
            let seg = network.segment(&edge.to_segment)?;
            let (dir, s) = if edge.end_lane_id < 0 {
                (LaneDirection::Forward, cfg.beyond_junction)
            } else {
                (LaneDirection::Backward, seg.length - cfg.beyond_junction)
            };
            Ok(Arm {
                seg,
                dir,
                s: clamp(seg, s),
            })
        }
        RelPos::R7 => Ok(Arm {
            seg: av_seg,
            dir: LaneDirection::Backward,
            s: clamp(av_seg, av_s + cfg.oncoming_gap),
        }),
        RelPos::R5 | RelPos::R6 => unreachable!("same-segment positions are not Case 1"),
    }
}

/// Case 1: the first lane-constraining action picks the start lane among
/// those from which the whole sequence replays.
fn case1_lane(arm: &Arm, npc: &NpcFact) -> Result<i32, PlacementError> {
    let cb = Codebook::builtin();
    let lanes = lane_ids(arm.seg, arm.dir);
    if lanes.is_empty() {
        return Err(infeasible(format!("{} has no driving lanes for {}", arm.seg.id, npc.name)));
    }
    let first = effects(cb, npc).map(|(_, d)| d).find(|d| d.constrains_lane());
    let Some(first) = first else {
        return Ok(lanes[0]);
    };
    let feasible: Vec<i32> = lanes
        .iter()
        .copied()
        .filter(|l| replay_events(arm.seg, *l, &npc.events.actions, None).is_ok())
        .collect();
    let rightward = first.route == RouteEffect::Right || first.lane == LaneEffect::ChangeRight;
    let pick = if rightward { feasible.last() } else { feasible.first() };
    pick.copied().ok_or_else(|| {
        infeasible(format!(
            "no lane on {} supports {}'s events '{}'",
            arm.seg.id,
            npc.name,
            npc.events.letters()
        ))
    })
}

/// Case 2: index of the participant's lane relative to the AV at `av`.
fn case2_index(cb: &Codebook, npc: &NpcFact, av: usize) -> Option<usize> {
    match npc.lane_alignment {
        LaneAlignment::SameLane | LaneAlignment::Unspecified => Some(av),
        LaneAlignment::DifferentLane => {
            let first = effects(cb, npc).map(|(_, d)| d.lane).find(|l| *l != LaneEffect::None);
            match first {
                Some(LaneEffect::ChangeLeft) => Some(av + 1),
                Some(_) => av.checked_sub(1),
                None => av.checked_sub(1).or(Some(av + 1)),
            }
        }
    }
}

fn av_moves_right(cb: &Codebook, npc: &NpcFact) -> bool {
    has_lane_effect(cb, npc, LaneEffect::PassLeft)
        || (npc.lane_alignment == LaneAlignment::SameLane && has_lane_effect(cb, npc, LaneEffect::ChangeLeft))
        || (npc.lane_alignment == LaneAlignment::DifferentLane && has_lane_effect(cb, npc, LaneEffect::ChangeRight))
}

struct Occupancy {
    taken: Vec<(SegmentId, i32, f64, f64)>,
}

impl Occupancy {
    /// Moves `s` away (`step` sign) from anything already within `gap`.
    fn claim(&mut self, seg: &RoadSegment, lane: i32, s: f64, offset: f64, step: f64, cfg: &PlacementConfig) -> Result<f64, PlacementError> {
        let mut s = s;
        let clash = |s: f64, taken: &[(SegmentId, i32, f64, f64)]| {
            taken
                .iter()
                .any(|(id, l, ts, to)| *id == seg.id && *l == lane && (to - offset).abs() < 0.5 && (ts - s).abs() < cfg.min_spacing)
        };
        while clash(s, &self.taken) {
            s += step;
        }
        if !(cfg.end_margin..=seg.length - cfg.end_margin).contains(&s) {
            return Err(infeasible(format!(
                "no room on {} lane {lane} (s = {s:.1}, length {:.1})",
                seg.id, seg.length
            )));
        }
        self.taken.push((seg.id.clone(), lane, s, offset));
        Ok(s)
    }
}

pub fn assign_lanes_with(
    context: &PlacementContext,
    network: &RoadNetwork,
    facts: &ReportFacts,
    cfg: &PlacementConfig,
) -> Result<LaneAssignment, PlacementError> {
    let cb = Codebook::builtin();
    let seg = network.segment(&context.segment)?;
    let forward = lane_ids(seg, LaneDirection::Forward);
    if forward.is_empty() {
        return Err(infeasible(format!("{} has no forward driving lanes", seg.id)));
    }
    let at_junction = context.junction.is_some();
    let av_s = if at_junction && seg.length > cfg.junction_setback + cfg.end_margin {
        seg.length - cfg.junction_setback
    } else {
        seg.length / 2.0
    };
    let av_turn = facts.av_context.route.turn();
    let av_options: Vec<usize> = (0..forward.len())
        .filter(|i| !at_junction || info_turns(seg, forward[*i]).contains(&av_turn))
        .collect();
    if av_options.is_empty() {
        return Err(infeasible(format!("no lane on {} permits the AV's {av_turn:?} route", seg.id)));
    }

    let same: Vec<(usize, &NpcFact)> = facts
        .npcs
        .iter()
        .enumerate()
        .filter(|(_, n)| n.rel_pos.same_segment() && n.category.is_vehicle())
        .collect();
    let move_right = same.iter().any(|(_, n)| av_moves_right(cb, n));
    let order: Vec<usize> = if move_right {
        av_options.iter().rev().copied().collect()
    } else {
        av_options.clone()
    };

    let mut chosen = None;
    let mut last_err = String::new();
    'av: for av_idx in order {
        let mut lanes = Vec::new();
        for (i, n) in &same {
            let Some(idx) = case2_index(cb, n, av_idx).filter(|k| *k < forward.len()) else {
                last_err = format!("{} needs a lane beside AV lane {}", n.name, forward[av_idx]);
                continue 'av;
            };
            if let Err(e) = replay_events(seg, forward[idx], &n.events.actions, Some(forward[av_idx])) {
                last_err = e;
                continue 'av;
            }
            lanes.push((*i, forward[idx]));
        }
        chosen = Some((av_idx, lanes));
        break;
    }
    let (av_idx, same_lanes) = chosen.ok_or_else(|| infeasible(last_err))?;
    let av_lane = forward[av_idx];

    let mut occ = Occupancy { taken: Vec::new() };
    occ.claim(seg, av_lane, av_s, 0.0, 1.0, cfg)?;

    let mut npc_assignments = Vec::new();
    for (i, n) in facts.npcs.iter().enumerate() {
        let (pseg, lane, s, offset, step) = if !n.category.is_vehicle() {
            pedestrian_spot(seg, n.rel_pos, av_s, cfg)?
        } else if n.rel_pos.same_segment() {
            let lane = same_lanes.iter().find(|(k, _)| *k == i).map(|(_, l)| *l).expect("placed above");
            let (s, step) = if n.rel_pos == RelPos::R5 {
                (av_s + cfg.ahead_gap, cfg.min_spacing)
            } else {
                (av_s - cfg.behind_gap, -cfg.min_spacing)
            };
            (seg, lane, s, 0.0, step)
        } else {
            let arm = find_arm(network, seg, av_s, n.rel_pos, cfg)?;
            let lane = case1_lane(&arm, n)?;
            let step = if arm.dir == LaneDirection::Forward { -cfg.min_spacing } else { cfg.min_spacing };
            (arm.seg, lane, arm.s, 0.0, step)
        };
        let s = occ.claim(pseg, lane, s, offset, step, cfg)?;
        if n.rel_pos == RelPos::R5 && pseg.id == seg.id && s <= av_s {
            return Err(infeasible(format!("{} does not fit ahead of the AV", n.name)));
        }
        npc_assignments.push(Placement {
            index: i,
            name: n.name.clone(),
            segment: pseg.id.clone(),
            lane,
            s,
            offset,
        });
    }

    let mut obstacle_assignments = Vec::new();
    for (i, o) in facts.obstacles.iter().enumerate() {
        let (oseg, lane, s, step) = match o.rel_pos {
            RelPos::R5 => (seg, av_lane, av_s + cfg.obstacle_gap, cfg.min_spacing),
            RelPos::R6 => (seg, av_lane, av_s - cfg.behind_gap, -cfg.min_spacing),
            rel => {
                let arm = find_arm(network, seg, av_s, rel, cfg)?;
                let lanes = lane_ids(arm.seg, arm.dir);
                let lane = *lanes
                    .first()
                    .ok_or_else(|| infeasible(format!("{} has no lanes for {}", arm.seg.id, o.name)))?;
                (arm.seg, lane, arm.s, cfg.min_spacing)
            }
        };
        let s = occ.claim(oseg, lane, s.clamp(cfg.end_margin, oseg.length - cfg.end_margin), 0.0, step, cfg)?;
        obstacle_assignments.push(Placement {
            index: i,
            name: o.name.clone(),
            segment: oseg.id.clone(),
            lane,
            s,
            offset: 0.0,
        });
    }

    let av_goal = av_goal(network, seg, av_lane, av_s, at_junction, av_turn, cfg)?;
    Ok(LaneAssignment {
        av_segment: seg.id.clone(),
        av_lane,
        av_s,
        av_goal,
        npc_assignments,
        obstacle_assignments,
    })
}

/// Pedestrians stand just outside a driving lane of the AV's road: on the
/// right edge for R3-R6, on the far left edge otherwise.
fn pedestrian_spot<'a>(
    seg: &'a RoadSegment,
    rel: RelPos,
    av_s: f64,
    cfg: &PlacementConfig,
) -> Result<(&'a RoadSegment, i32, f64, f64, f64), PlacementError> {
    let forward = lane_ids(seg, LaneDirection::Forward);
    let backward = lane_ids(seg, LaneDirection::Backward);
    let left_side = matches!(rel, RelPos::R1 | RelPos::R2 | RelPos::R7);
    let (lane, sign) = if left_side {
        // Backward lanes are ordered left to right for their own drivers, so
        // the last one is the outermost.
        match backward.last() {
            Some(l) => (*l, 1.0),
            None => (forward[0], 1.0),
        }
    } else {
        (*forward.last().expect("checked non-empty"), -1.0)
    };
    let width = seg.lane(lane).map(|l| l.width_at(av_s)).unwrap_or(0.0);
    let s = match rel {
        RelPos::R6 => av_s - cfg.behind_gap,
        _ => (av_s + cfg.pedestrian_gap).min(seg.length - cfg.end_margin),
    };
    let step = if rel == RelPos::R6 { -cfg.min_spacing } else { -cfg.min_spacing / 2.0 };
    Ok((seg, lane, s, sign * (width / 2.0 + cfg.curb_offset), step))
}

fn av_goal(
    network: &RoadNetwork,
    seg: &RoadSegment,
    av_lane: i32,
    av_s: f64,
    at_junction: bool,
    turn: Turn,
    cfg: &PlacementConfig,
) -> Result<Placement, PlacementError> {
    if at_junction {
        if let Some(e) = network
            .junction_edges_from(&seg.id)
            .find(|e| e.start_lane_id == av_lane && e.turn == Some(turn))
        {
            let out = network.segment(&e.to_segment)?;
            let s = if e.end_lane_id < 0 {
                cfg.beyond_junction
            } else {
                out.length - cfg.beyond_junction
            };
            return Ok(Placement {
                index: 0,
                name: "ego_goal".into(),
                segment: out.id.clone(),
                lane: e.end_lane_id,
                s: s.clamp(cfg.end_margin, out.length - cfg.end_margin),
                offset: 0.0,
            });
        }
    }
    Ok(Placement {
        index: 0,
        name: "ego_goal".into(),
        segment: seg.id.clone(),
        lane: av_lane,
        s: (seg.length - cfg.end_margin).max(av_s),
        offset: 0.0,
    })
}
