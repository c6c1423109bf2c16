//! OpenDRIVE road-network graph.
//!
//! Only the 1.4 core subset is read: straight and arc reference-line
//! geometry, one lane section per road, lane links, road links, junction
//! connections and dynamic signals. Everything else raises
//! [`MapError::UnsupportedFeature`] or is ignored when it carries no meaning
//! for placement (elevation, objects, lateral profile).

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::placement::SceneConstraints;

pub type SegmentId = String;

/// Lane width used when a lane carries no width record.
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("malformed OpenDRIVE document: {0}")]
    MalformedDocument(String),
    #[error("unsupported OpenDRIVE feature: {0}")]
    UnsupportedFeature(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("no road segment satisfies the scene constraints")]
    NoCandidate,
    #[error("s = {s} is outside segment {segment} (length {length})")]
    OutOfRange { segment: String, s: f64, length: f64 },
    #[error("unknown lane {lane} on segment {segment}")]
    UnknownLane { segment: String, lane: i32 },
    #[error("unknown segment {0}")]
    UnknownSegment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Driving,
    Sidewalk,
    Shoulder,
    Biking,
    Other,
}

impl LaneType {
    fn from_odr(s: &str) -> Self {
        match s {
            "driving" => LaneType::Driving,
            "sidewalk" => LaneType::Sidewalk,
            "shoulder" => LaneType::Shoulder,
            "biking" => LaneType::Biking,
            _ => LaneType::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneChange {
    None,
    Left,
    Right,
    Both,
}

impl LaneChange {
    fn from_flags(left: bool, right: bool) -> Self {
        match (left, right) {
            (true, true) => LaneChange::Both,
            (true, false) => LaneChange::Left,
            (false, true) => LaneChange::Right,
            (false, false) => LaneChange::None,
        }
    }

    pub fn allows_left(self) -> bool {
        matches!(self, LaneChange::Left | LaneChange::Both)
    }

    pub fn allows_right(self) -> bool {
        matches!(self, LaneChange::Right | LaneChange::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Right,
    Straight,
    UTurn,
}

impl Turn {
    /// Classifies a net heading change (radians, counter-clockwise positive).
    pub fn from_heading_change(delta: f64) -> Turn {
        let d = normalize_angle(delta);
        if d.abs() < PI / 6.0 {
            Turn::Straight
        } else if d.abs() >= 5.0 * PI / 6.0 - 1e-9 {
            Turn::UTurn
        } else if d > 0.0 {
            Turn::Left
        } else {
            Turn::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthPoly {
    pub s_offset: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkPermission {
    None,
    Both,
    Increase,
    Decrease,
}

impl MarkPermission {
    fn from_odr(s: Option<&str>) -> Self {
        match s {
            Some("none") => MarkPermission::None,
            Some("increase") => MarkPermission::Increase,
            Some("decrease") => MarkPermission::Decrease,
            _ => MarkPermission::Both,
        }
    }

    fn permits(self, increasing: bool) -> bool {
        match self {
            MarkPermission::None => false,
            MarkPermission::Both => true,
            MarkPermission::Increase => increasing,
            MarkPermission::Decrease => !increasing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneInfo {
    pub lane_id: i32,
    pub lane_type: LaneType,
    pub direction: LaneDirection,
    pub lane_change: LaneChange,
    pub turn_affordances: BTreeSet<Turn>,
    pub widths: Vec<WidthPoly>,
}

impl LaneInfo {
    pub fn is_driving(&self) -> bool {
        self.lane_type == LaneType::Driving
    }

    /// Lane width at road coordinate `s`.
    pub fn width_at(&self, s: f64) -> f64 {
        let rec = self
            .widths
            .iter()
            .filter(|w| w.s_offset <= s + 1e-9)
            .last()
            .or_else(|| self.widths.first());
        match rec {
            Some(w) => {
                let ds = (s - w.s_offset).max(0.0);
                w.a + w.b * ds + w.c * ds * ds + w.d * ds * ds * ds
            }
            None => DEFAULT_LANE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Line {
        s: f64,
        x: f64,
        y: f64,
        hdg: f64,
        length: f64,
    },
    Arc {
        s: f64,
        x: f64,
        y: f64,
        hdg: f64,
        length: f64,
        curvature: f64,
    },
}

impl Geometry {
    fn start_s(&self) -> f64 {
        match *self {
            Geometry::Line { s, .. } | Geometry::Arc { s, .. } => s,
        }
    }

    fn length(&self) -> f64 {
        match *self {
            Geometry::Line { length, .. } | Geometry::Arc { length, .. } => length,
        }
    }

    /// Point and heading at local arclength `ds` from the primitive start.
    fn eval(&self, ds: f64) -> (f64, f64, f64) {
        match *self {
            Geometry::Line { x, y, hdg, .. } => (x + ds * hdg.cos(), y + ds * hdg.sin(), hdg),
            Geometry::Arc {
                x, y, hdg, curvature, ..
            } => {
                if curvature.abs() < 1e-12 {
                    return (x + ds * hdg.cos(), y + ds * hdg.sin(), hdg);
                }
                let h = hdg + curvature * ds;
                (
                    x + (h.sin() - hdg.sin()) / curvature,
                    y - (h.cos() - hdg.cos()) / curvature,
                    h,
                )
            }
        }
    }

    fn heading_change(&self) -> f64 {
        match *self {
            Geometry::Line { .. } => 0.0,
            Geometry::Arc {
                curvature, length, ..
            } => curvature * length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalAnchor {
    pub id: String,
    pub name: String,
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Road heading at the signal, i.e. the direction traffic it controls travels.
    pub heading: f64,
    pub orientation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadLink {
    pub element_type: String,
    pub element_id: String,
    pub contact_point: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub name: String,
    pub length: f64,
    pub lanes: Vec<LaneInfo>,
    /// Set when this road is a connecting road inside a junction.
    pub junction: Option<String>,
    pub drivable: bool,
    pub geometry: Vec<Geometry>,
    pub signals: Vec<SignalAnchor>,
    pub predecessor: Option<RoadLink>,
    pub successor: Option<RoadLink>,
}

impl RoadSegment {
    pub fn lane(&self, lane_id: i32) -> Option<&LaneInfo> {
        self.lanes.iter().find(|l| l.lane_id == lane_id)
    }

    /// Driving lanes travelling in `dir`, ordered left to right from the
    /// driver's point of view.
    pub fn driving_lanes(&self, dir: LaneDirection) -> Vec<&LaneInfo> {
        let mut lanes: Vec<&LaneInfo> = self
            .lanes
            .iter()
            .filter(|l| l.direction == dir && l.is_driving())
            .collect();
        lanes.sort_by_key(|l| l.lane_id.abs());
        lanes
    }

    /// Lane adjacent to `lane_id` on the driver's left or right, in the same
    /// travel direction.
    pub fn neighbor(&self, lane_id: i32, left: bool) -> Option<&LaneInfo> {
        let lane = self.lane(lane_id)?;
        let step = match (lane.direction, left) {
            (LaneDirection::Forward, true) | (LaneDirection::Backward, false) => 1,
            (LaneDirection::Forward, false) | (LaneDirection::Backward, true) => -1,
        };
        let other = lane_id + step;
        if other == 0 || other.signum() != lane_id.signum() {
            return None;
        }
        self.lane(other).filter(|l| l.direction == lane.direction)
    }

    /// Reference-line point and heading at `s` (clamped to the segment).
    pub fn reference_at(&self, s: f64) -> (f64, f64, f64) {
        let s = s.clamp(0.0, self.length);
        let geom = self
            .geometry
            .iter()
            .filter(|g| g.start_s() <= s + 1e-9)
            .last()
            .or_else(|| self.geometry.first())
            .expect("segments always carry geometry");
        let ds = (s - geom.start_s()).clamp(0.0, geom.length());
        geom.eval(ds)
    }

    /// Lateral offset of the lane centre from the reference line at `s`.
    pub fn lane_center_t(&self, lane_id: i32, s: f64) -> Option<f64> {
        self.lane(lane_id)?;
        let sign = lane_id.signum() as f64;
        let mut t = 0.0;
        for k in 1..lane_id.abs() {
            t += self.lane(k * lane_id.signum())?.width_at(s);
        }
        t += self.lane(lane_id)?.width_at(s) / 2.0;
        Some(sign * t)
    }

    /// Axis-aligned bounding box of the paved area (min_x, min_y, max_x, max_y).
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let steps = (self.length.ceil() as usize).max(1) * 2;
        let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..=steps {
            let s = self.length * i as f64 / steps as f64;
            let (x, y, h) = self.reference_at(s);
            let left: f64 = self.lanes.iter().filter(|l| l.lane_id > 0).map(|l| l.width_at(s)).sum();
            let right: f64 = self.lanes.iter().filter(|l| l.lane_id < 0).map(|l| l.width_at(s)).sum();
            for t in [left, -right] {
                let px = x - t * h.sin();
                let py = y + t * h.cos();
                bb.0 = bb.0.min(px);
                bb.1 = bb.1.min(py);
                bb.2 = bb.2.max(px);
                bb.3 = bb.3.max(py);
            }
        }
        bb
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionEdge {
    pub from_segment: SegmentId,
    pub to_segment: SegmentId,
    pub connecting_road: Option<SegmentId>,
    pub junction_id: Option<String>,
    pub start_lane_id: i32,
    pub end_lane_id: i32,
    pub signal_anchor: Option<(f64, f64)>,
    /// Manoeuvre class of a junction connection; `None` for plain continuations.
    pub turn: Option<Turn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl WorldPose {
    pub fn distance_to(&self, other: &WorldPose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Immutable road-network graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub segments: BTreeMap<SegmentId, RoadSegment>,
    pub edges: Vec<ConnectionEdge>,
    pub source_name: String,
}

/// Maps any angle to [-pi, pi).
pub fn normalize_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

struct RawLane {
    info: LaneInfo,
    mark: MarkPermission,
    pred: Option<i32>,
    succ: Option<i32>,
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, MapError> {
    node.attribute(name).ok_or_else(|| {
        MapError::MalformedDocument(format!(
            "<{}> is missing attribute '{}'",
            node.tag_name().name(),
            name
        ))
    })
}

fn num(node: roxmltree::Node<'_, '_>, name: &str) -> Result<f64, MapError> {
    let raw = attr(node, name)?;
    let v: f64 = raw.trim().parse().map_err(|_| {
        MapError::MalformedDocument(format!(
            "<{}> attribute '{}' is not a number: {raw}",
            node.tag_name().name(),
            name
        ))
    })?;
    if !v.is_finite() {
        return Err(MapError::MalformedDocument(format!("non-finite '{name}'")));
    }
    Ok(v)
}

fn opt_num(node: roxmltree::Node<'_, '_>, name: &str) -> Result<f64, MapError> {
    if node.attribute(name).is_some() {
        num(node, name)
    } else {
        Ok(0.0)
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn children<'a, 'i>(
    node: roxmltree::Node<'a, 'i>,
    name: &'static str,
) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn parse_link(node: Option<roxmltree::Node<'_, '_>>) -> Result<Option<RoadLink>, MapError> {
    match node {
        None => Ok(None),
        Some(n) => Ok(Some(RoadLink {
            element_type: attr(n, "elementType")?.to_string(),
            element_id: attr(n, "elementId")?.to_string(),
            contact_point: n.attribute("contactPoint").map(str::to_string),
        })),
    }
}

fn parse_geometry(road_id: &str, g: roxmltree::Node<'_, '_>) -> Result<Geometry, MapError> {
    let s = num(g, "s")?;
    let x = num(g, "x")?;
    let y = num(g, "y")?;
    let hdg = num(g, "hdg")?;
    let length = num(g, "length")?;
    let prim = g
        .children()
        .find(|c| c.is_element())
        .ok_or_else(|| MapError::MalformedDocument(format!("road {road_id}: empty <geometry>")))?;
    match prim.tag_name().name() {
        "line" => Ok(Geometry::Line { s, x, y, hdg, length }),
        "arc" => Ok(Geometry::Arc {
            s,
            x,
            y,
            hdg,
            length,
            curvature: num(prim, "curvature")?,
        }),
        other => Err(MapError::UnsupportedFeature(format!(
            "road {road_id}: geometry primitive <{other}>"
        ))),
    }
}

fn parse_lane(road_id: &str, lane: roxmltree::Node<'_, '_>) -> Result<RawLane, MapError> {
    let id: i32 = attr(lane, "id")?
        .trim()
        .parse()
        .map_err(|_| MapError::MalformedDocument(format!("road {road_id}: bad lane id")))?;
    let lane_type = LaneType::from_odr(lane.attribute("type").unwrap_or("none"));
    let mut widths = Vec::new();
    for w in children(lane, "width") {
        widths.push(WidthPoly {
            s_offset: opt_num(w, "sOffset")?,
            a: opt_num(w, "a")?,
            b: opt_num(w, "b")?,
            c: opt_num(w, "c")?,
            d: opt_num(w, "d")?,
        });
    }
    widths.sort_by(|a, b| a.s_offset.total_cmp(&b.s_offset));
    if widths.is_empty() && id != 0 {
        log::warn!("road {road_id} lane {id}: no width record, using {DEFAULT_LANE_WIDTH} m");
    }
    let mark = MarkPermission::from_odr(child(lane, "roadMark").and_then(|m| m.attribute("laneChange")));
    let link = child(lane, "link");
    let link_id = |name: &str| -> Option<i32> {
        link.and_then(|l| child(l, name))
            .and_then(|n| n.attribute("id"))
            .and_then(|v| v.trim().parse().ok())
    };
    Ok(RawLane {
        info: LaneInfo {
            lane_id: id,
            lane_type,
            direction: if id < 0 {
                LaneDirection::Forward
            } else {
                LaneDirection::Backward
            },
            lane_change: LaneChange::None,
            turn_affordances: BTreeSet::new(),
            widths,
        },
        mark,
        pred: link_id("predecessor"),
        succ: link_id("successor"),
    })
}

struct RawRoad {
    segment: RoadSegment,
    lanes: Vec<RawLane>,
    center_mark: MarkPermission,
}

fn parse_road(road: roxmltree::Node<'_, '_>) -> Result<RawRoad, MapError> {
    let id = attr(road, "id")?.to_string();
    let length = num(road, "length")?;
    if length <= 0.0 {
        return Err(MapError::MalformedDocument(format!(
            "road {id}: non-positive length {length}"
        )));
    }
    let junction = match road.attribute("junction") {
        None | Some("-1") | Some("") => None,
        Some(j) => Some(j.to_string()),
    };
    let link = child(road, "link");
    let predecessor = parse_link(link.and_then(|l| child(l, "predecessor")))?;
    let successor = parse_link(link.and_then(|l| child(l, "successor")))?;

    let plan = child(road, "planView")
        .ok_or_else(|| MapError::MalformedDocument(format!("road {id}: missing <planView>")))?;
    let mut geometry = Vec::new();
    for g in children(plan, "geometry") {
        geometry.push(parse_geometry(&id, g)?);
    }
    if geometry.is_empty() {
        return Err(MapError::MalformedDocument(format!("road {id}: no geometry")));
    }
    geometry.sort_by(|a, b| a.start_s().total_cmp(&b.start_s()));

    let lanes_node =
        child(road, "lanes").ok_or_else(|| MapError::MalformedDocument(format!("road {id}: missing <lanes>")))?;
    let sections: Vec<_> = children(lanes_node, "laneSection").collect();
    if sections.len() != 1 {
        return Err(MapError::UnsupportedFeature(format!(
            "road {id}: {} lane sections (exactly one supported)",
            sections.len()
        )));
    }
    let section = sections[0];
    let mut lanes = Vec::new();
    let mut center_mark = MarkPermission::None;
    for side in ["left", "center", "right"] {
        if let Some(side_node) = child(section, side) {
            for lane in children(side_node, "lane") {
                let raw = parse_lane(&id, lane)?;
                if raw.info.lane_id == 0 {
                    center_mark = raw.mark;
                } else {
                    lanes.push(raw);
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    for l in &lanes {
        if !seen.insert(l.info.lane_id) {
            return Err(MapError::MalformedDocument(format!(
                "road {id}: duplicate lane id {}",
                l.info.lane_id
            )));
        }
    }
    lanes.sort_by_key(|l| l.info.lane_id);

    let mut signals = Vec::new();
    if let Some(sig_node) = child(road, "signals") {
        for sig in children(sig_node, "signal") {
            if sig.attribute("dynamic") != Some("yes") {
                continue;
            }
            signals.push(SignalAnchor {
                id: attr(sig, "id")?.to_string(),
                name: sig.attribute("name").unwrap_or("").to_string(),
                s: num(sig, "s")?,
                t: num(sig, "t")?,
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                orientation: sig.attribute("orientation").unwrap_or("+").to_string(),
            });
        }
    }

    let drivable = lanes.iter().any(|l| l.info.is_driving());
    Ok(RawRoad {
        segment: RoadSegment {
            id,
            name: road.attribute("name").unwrap_or("").to_string(),
            length,
            lanes: Vec::new(),
            junction,
            drivable,
            geometry,
            signals,
            predecessor,
            successor,
        },
        lanes,
        center_mark,
    })
}

/// Lane-change permissions from road marks: the boundary between two lanes on
/// the same side belongs to the inner lane's mark.
fn derive_lane_change(raw: &RawRoad) -> Vec<LaneInfo> {
    let mark_of = |id: i32| -> MarkPermission {
        if id == 0 {
            raw.center_mark
        } else {
            raw.lanes
                .iter()
                .find(|l| l.info.lane_id == id)
                .map(|l| l.mark)
                .unwrap_or(MarkPermission::Both)
        }
    };
    let find = |id: i32| raw.lanes.iter().find(|l| l.info.lane_id == id);
    raw.lanes
        .iter()
        .map(|l| {
            let id = l.info.lane_id;
            let can = |left: bool| -> bool {
                let step = match (l.info.direction, left) {
                    (LaneDirection::Forward, true) | (LaneDirection::Backward, false) => 1,
                    _ => -1,
                };
                let other = id + step;
                if !l.info.is_driving() || other == 0 || other.signum() != id.signum() {
                    return false;
                }
                let Some(n) = find(other) else { return false };
                if !n.info.is_driving() || n.info.direction != l.info.direction {
                    return false;
                }
                let inner = if id.abs() < other.abs() { id } else { other };
                mark_of(inner).permits(other > id)
            };
            let mut info = l.info.clone();
            info.lane_change = LaneChange::from_flags(can(true), can(false));
            info
        })
        .collect()
}

/// Parses an OpenDRIVE document into a [`RoadNetwork`].
pub fn parse_opendrive(document: &str) -> Result<RoadNetwork, MapError> {
    let doc = roxmltree::Document::parse(document).map_err(|e| MapError::MalformedDocument(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(MapError::MalformedDocument(format!(
            "root element is <{}>, expected <OpenDRIVE>",
            root.tag_name().name()
        )));
    }
    let source_name = child(root, "header")
        .and_then(|h| h.attribute("name"))
        .unwrap_or("")
        .to_string();

    let mut raws: BTreeMap<String, RawRoad> = BTreeMap::new();
    for road in children(root, "road") {
        let raw = parse_road(road)?;
        if raws.contains_key(&raw.segment.id) {
            return Err(MapError::MalformedDocument(format!("duplicate road id {}", raw.segment.id)));
        }
        raws.insert(raw.segment.id.clone(), raw);
    }
    let junction_ids: BTreeSet<String> = children(root, "junction")
        .filter_map(|j| j.attribute("id").map(str::to_string))
        .collect();

    for raw in raws.values() {
        for link in [&raw.segment.predecessor, &raw.segment.successor].into_iter().flatten() {
            let ok = match link.element_type.as_str() {
                "road" => raws.contains_key(&link.element_id),
                "junction" => junction_ids.contains(&link.element_id),
                other => {
                    return Err(MapError::MalformedDocument(format!(
                        "road {}: unknown link elementType '{other}'",
                        raw.segment.id
                    )))
                }
            };
            if !ok {
                return Err(MapError::DanglingReference(format!(
                    "road {} links to missing {} '{}'",
                    raw.segment.id, link.element_type, link.element_id
                )));
            }
        }
        if let Some(j) = &raw.segment.junction {
            if !junction_ids.contains(j) {
                return Err(MapError::DanglingReference(format!(
                    "road {} belongs to missing junction '{j}'",
                    raw.segment.id
                )));
            }
        }
    }

    let mut segments: BTreeMap<String, RoadSegment> = BTreeMap::new();
    for raw in raws.values() {
        let mut seg = raw.segment.clone();
        seg.lanes = derive_lane_change(raw);
        let mut signals = std::mem::take(&mut seg.signals);
        for sig in &mut signals {
            let (x, y, h) = seg.reference_at(sig.s);
            sig.x = x - sig.t * h.sin();
            sig.y = y + sig.t * h.cos();
            sig.heading = normalize_angle(if sig.orientation == "-" { h + PI } else { h });
        }
        seg.signals = signals;
        segments.insert(seg.id.clone(), seg);
    }

    let mut edges: Vec<ConnectionEdge> = Vec::new();

    // Direct road-to-road continuations, following travel direction.
    for raw in raws.values() {
        let id = &raw.segment.id;
        for l in &raw.lanes {
            let (link, next_lane) = match l.info.direction {
                LaneDirection::Forward => (&raw.segment.successor, l.succ),
                LaneDirection::Backward => (&raw.segment.predecessor, l.pred),
            };
            if let (Some(link), Some(next_lane)) = (link, next_lane) {
                if link.element_type == "road" {
                    edges.push(ConnectionEdge {
                        from_segment: id.clone(),
                        to_segment: link.element_id.clone(),
                        connecting_road: None,
                        junction_id: None,
                        start_lane_id: l.info.lane_id,
                        end_lane_id: next_lane,
                        signal_anchor: None,
                        turn: None,
                    });
                }
            }
        }
    }

    // Junction connections, one edge per lane link.
    for junction in children(root, "junction") {
        let jid = attr(junction, "id")?.to_string();
        for conn in children(junction, "connection") {
            let incoming = attr(conn, "incomingRoad")?.to_string();
            let connecting = attr(conn, "connectingRoad")?.to_string();
            let inc_raw = raws.get(&incoming).ok_or_else(|| {
                MapError::DanglingReference(format!("junction {jid}: incoming road '{incoming}' missing"))
            })?;
            let con_raw = raws.get(&connecting).ok_or_else(|| {
                MapError::DanglingReference(format!("junction {jid}: connecting road '{connecting}' missing"))
            })?;
            for ll in children(conn, "laneLink") {
                let from: i32 = attr(ll, "from")?
                    .trim()
                    .parse()
                    .map_err(|_| MapError::MalformedDocument("bad laneLink from".into()))?;
                let to: i32 = attr(ll, "to")?
                    .trim()
                    .parse()
                    .map_err(|_| MapError::MalformedDocument("bad laneLink to".into()))?;
                if !inc_raw.lanes.iter().any(|l| l.info.lane_id == from) {
                    return Err(MapError::DanglingReference(format!(
                        "junction {jid}: lane {from} missing on road {incoming}"
                    )));
                }
                let con_lane = con_raw.lanes.iter().find(|l| l.info.lane_id == to).ok_or_else(|| {
                    MapError::DanglingReference(format!(
                        "junction {jid}: lane {to} missing on connecting road {connecting}"
                    ))
                })?;
                let forward = to < 0;
                let (exit_link, exit_lane) = if forward {
                    (&con_raw.segment.successor, con_lane.succ)
                } else {
                    (&con_raw.segment.predecessor, con_lane.pred)
                };
                let exit_link = exit_link.as_ref().ok_or_else(|| {
                    MapError::DanglingReference(format!("connecting road {connecting} has no exit link"))
                })?;
                let mut delta: f64 = con_raw.segment.geometry.iter().map(Geometry::heading_change).sum();
                if !forward {
                    delta = -delta;
                }
                let inc_seg = &segments[&incoming];
                let inc_dir = if from < 0 { "+" } else { "-" };
                let anchor = inc_seg
                    .signals
                    .iter()
                    .filter(|s| s.orientation == inc_dir || s.orientation == "none")
                    .max_by(|a, b| {
                        if from < 0 {
                            a.s.total_cmp(&b.s)
                        } else {
                            b.s.total_cmp(&a.s)
                        }
                    })
                    .or_else(|| segments[&connecting].signals.first())
                    .map(|s| (s.x, s.y));
                edges.push(ConnectionEdge {
                    from_segment: incoming.clone(),
                    to_segment: exit_link.element_id.clone(),
                    connecting_road: Some(connecting.clone()),
                    junction_id: Some(jid.clone()),
                    start_lane_id: from,
                    end_lane_id: exit_lane.unwrap_or(to),
                    signal_anchor: anchor,
                    turn: Some(Turn::from_heading_change(delta)),
                });
            }
        }
    }

    for e in &edges {
        for id in [&e.from_segment, &e.to_segment].into_iter().chain(e.connecting_road.as_ref()) {
            if !segments.contains_key(id) {
                return Err(MapError::DanglingReference(format!("edge references missing road '{id}'")));
            }
        }
        if let (Some(turn), Some(seg)) = (e.turn, segments.get_mut(&e.from_segment)) {
            if let Some(lane) = seg.lanes.iter_mut().find(|l| l.lane_id == e.start_lane_id) {
                lane.turn_affordances.insert(turn);
            }
        }
    }

    Ok(RoadNetwork {
        segments,
        edges,
        source_name,
    })
}

impl RoadNetwork {
    pub fn segment(&self, id: &str) -> Result<&RoadSegment, MapError> {
        self.segments
            .get(id)
            .ok_or_else(|| MapError::UnknownSegment(id.to_string()))
    }

    /// Junction connections leaving `segment`.
    pub fn junction_edges_from<'a>(&'a self, segment: &'a str) -> impl Iterator<Item = &'a ConnectionEdge> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from_segment == segment && e.junction_id.is_some())
    }

    /// Junction fed by the forward lanes of `segment`, if any.
    pub fn approach_junction(&self, segment: &str) -> Option<String> {
        let seg = self.segments.get(segment)?;
        self.junction_edges_from(segment)
            .find(|e| seg.lane(e.start_lane_id).map(|l| l.direction) == Some(LaneDirection::Forward))
            .and_then(|e| e.junction_id.clone())
    }

    /// Non-internal segments whose forward lanes feed junction `junction_id`.
    pub fn junction_approaches(&self, junction_id: &str) -> Vec<&RoadSegment> {
        self.segments
            .values()
            .filter(|s| s.junction.is_none())
            .filter(|s| self.approach_junction(&s.id).as_deref() == Some(junction_id))
            .collect()
    }

    /// Dynamic signals controlling traffic that enters a junction from `segment`.
    pub fn approach_signals(&self, segment: &str) -> Vec<&SignalAnchor> {
        match self.segments.get(segment) {
            Some(seg) => seg.signals.iter().filter(|s| s.orientation != "-").collect(),
            None => Vec::new(),
        }
    }

    /// Every signal anchor controlling approaches into `junction_id`.
    pub fn junction_signals(&self, junction_id: &str) -> Vec<(&RoadSegment, &SignalAnchor)> {
        self.junction_approaches(junction_id)
            .into_iter()
            .flat_map(|seg| seg.signals.iter().map(move |s| (seg, s)))
            .collect()
    }

    pub fn to_graph_dump(&self) -> GraphDump {
        GraphDump {
            format: GRAPH_DUMP_FORMAT.to_string(),
            version: 1,
            source_name: self.source_name.clone(),
            nodes: self
                .segments
                .values()
                .map(|s| GraphNode {
                    id: s.id.clone(),
                    name: s.name.clone(),
                    length: s.length,
                    junction: s.junction.clone(),
                    drivable: s.drivable,
                    lane_ids: s.lanes.iter().map(|l| l.lane_id).collect(),
                    lane_types: s.lanes.iter().map(|l| l.lane_type).collect(),
                    lane_directions: s.lanes.iter().map(|l| l.direction).collect(),
                    lane_change: s.lanes.iter().map(|l| l.lane_change).collect(),
                    turn_affordances: s
                        .lanes
                        .iter()
                        .map(|l| l.turn_affordances.iter().copied().collect())
                        .collect(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| GraphEdge {
                    from: e.from_segment.clone(),
                    to: e.to_segment.clone(),
                    connecting_road: e.connecting_road.clone(),
                    junction_id: e.junction_id.clone(),
                    start_lane_id: e.start_lane_id,
                    end_lane_id: e.end_lane_id,
                    traffic_light_x: e.signal_anchor.map(|a| a.0),
                    traffic_light_y: e.signal_anchor.map(|a| a.1),
                    turn: e.turn,
                })
                .collect(),
        }
    }
}

pub const GRAPH_DUMP_FORMAT: &str = "crashscen-map-graph";

/// JSON interchange form of a [`RoadNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub format: String,
    pub version: u32,
    pub source_name: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub name: String,
    pub length: f64,
    pub junction: Option<String>,
    pub drivable: bool,
    pub lane_ids: Vec<i32>,
    pub lane_types: Vec<LaneType>,
    pub lane_directions: Vec<LaneDirection>,
    pub lane_change: Vec<LaneChange>,
    pub turn_affordances: Vec<Vec<Turn>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub connecting_road: Option<String>,
    pub junction_id: Option<String>,
    pub start_lane_id: i32,
    pub end_lane_id: i32,
    pub traffic_light_x: Option<f64>,
    pub traffic_light_y: Option<f64>,
    pub turn: Option<Turn>,
}

/// Segments (outside junctions) satisfying every constraint, sorted by id.
pub fn filter_segments(network: &RoadNetwork, constraints: &SceneConstraints) -> Result<Vec<SegmentId>, MapError> {
    let out: Vec<SegmentId> = network
        .segments
        .values()
        .filter(|s| s.junction.is_none() && s.drivable)
        .filter(|s| segment_satisfies(network, s, constraints))
        .map(|s| s.id.clone())
        .collect();
    if out.is_empty() {
        Err(MapError::NoCandidate)
    } else {
        Ok(out)
    }
}

pub(crate) fn segment_satisfies(network: &RoadNetwork, seg: &RoadSegment, c: &SceneConstraints) -> bool {
    let forward = seg.driving_lanes(LaneDirection::Forward);
    if forward.len() < c.min_driving_lanes as usize {
        return false;
    }
    if !c
        .required_lane_types
        .iter()
        .all(|t| seg.lanes.iter().any(|l| l.lane_type == *t))
    {
        return false;
    }
    if c.requires_oncoming_lanes && seg.driving_lanes(LaneDirection::Backward).is_empty() {
        return false;
    }
    if c.requires_junction && network.approach_junction(&seg.id).is_none() {
        return false;
    }
    let turns: BTreeSet<Turn> = forward
        .iter()
        .flat_map(|l| l.turn_affordances.iter().copied())
        .collect();
    c.required_turns.iter().all(|t| turns.contains(t))
}

/// World pose of the centre of `lane` at road coordinate `s`.
pub fn resolve_position(network: &RoadNetwork, segment: &str, lane: i32, s: f64) -> Result<WorldPose, MapError> {
    resolve_position_offset(network, segment, lane, s, 0.0)
}

/// As [`resolve_position`], shifted laterally by `offset` metres (positive to
/// the left of the reference line direction).
pub fn resolve_position_offset(
    network: &RoadNetwork,
    segment: &str,
    lane: i32,
    s: f64,
    offset: f64,
) -> Result<WorldPose, MapError> {
    let seg = network.segment(segment)?;
    if !(0.0..=seg.length).contains(&s) || !s.is_finite() {
        return Err(MapError::OutOfRange {
            segment: segment.to_string(),
            s,
            length: seg.length,
        });
    }
    let info = seg.lane(lane).ok_or_else(|| MapError::UnknownLane {
        segment: segment.to_string(),
        lane,
    })?;
    let t = seg.lane_center_t(lane, s).ok_or_else(|| MapError::UnknownLane {
        segment: segment.to_string(),
        lane,
    })? + offset;
    let (x, y, h) = seg.reference_at(s);
    let heading = match info.direction {
        LaneDirection::Forward => h,
        LaneDirection::Backward => h + PI,
    };
    Ok(WorldPose {
        x: x - t * h.sin(),
        y: y + t * h.cos(),
        heading: normalize_angle(heading),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_doc() -> &'static str {
        r#"<OpenDRIVE><header name="m"/>
        <road id="1" length="100" junction="-1"><link/>
          <planView><geometry s="0" x="0" y="0" hdg="0" length="100"><line/></geometry></planView>
          <lanes><laneSection s="0">
            <left><lane id="1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane></left>
            <center><lane id="0" type="none"/></center>
            <right><lane id="-1" type="driving"><width sOffset="0" a="3.5" b="0" c="0" d="0"/></lane></right>
          </laneSection></lanes>
        </road></OpenDRIVE>"#
    }

    #[test]
    fn minimal_document() {
        let net = parse_opendrive(minimal_doc()).unwrap();
        assert_eq!(net.segments.len(), 1);
        assert_eq!(net.segments["1"].lanes.len(), 2);
        assert!(net.edges.is_empty());
    }

    #[test]
    fn wrong_root_and_garbage() {
        assert!(matches!(
            parse_opendrive("<Other/>"),
            Err(MapError::MalformedDocument(_))
        ));
        assert!(matches!(
            parse_opendrive("not xml"),
            Err(MapError::MalformedDocument(_))
        ));
    }

    #[test]
    fn dangling_successor() {
        let doc = minimal_doc().replace(
            "<link/>",
            r#"<link><successor elementType="road" elementId="99" contactPoint="start"/></link>"#,
        );
        assert!(matches!(parse_opendrive(&doc), Err(MapError::DanglingReference(_))));
    }

    #[test]
    fn spiral_is_unsupported() {
        let doc = minimal_doc().replace("<line/>", r#"<spiral curvStart="0" curvEnd="0.01"/>"#);
        assert!(matches!(parse_opendrive(&doc), Err(MapError::UnsupportedFeature(_))));
    }

    #[test]
    fn straight_pose_closed_form() {
        let net = parse_opendrive(minimal_doc()).unwrap();
        let p = resolve_position(&net, "1", -1, 10.0).unwrap();
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y + 1.75).abs() < 1e-12 && p.heading.abs() < 1e-12);
        let start = resolve_position(&net, "1", -1, 0.0).unwrap();
        assert!(start.x.abs() < 1e-12);
        let back = resolve_position(&net, "1", 1, 0.0).unwrap();
        assert!((back.y - 1.75).abs() < 1e-12);
        assert!((back.heading + PI).abs() < 1e-12, "backward lane heading {}", back.heading);
        assert!(matches!(
            resolve_position(&net, "1", -1, 101.0),
            Err(MapError::OutOfRange { .. })
        ));
        assert!(matches!(
            resolve_position(&net, "1", -3, 1.0),
            Err(MapError::UnknownLane { .. })
        ));
    }

    #[test]
    fn turn_classification() {
        assert_eq!(Turn::from_heading_change(0.0), Turn::Straight);
        assert_eq!(Turn::from_heading_change(PI / 2.0), Turn::Left);
        assert_eq!(Turn::from_heading_change(-PI / 2.0), Turn::Right);
        assert_eq!(Turn::from_heading_change(PI), Turn::UTurn);
    }

    #[test]
    fn angle_normalization_range() {
        for a in [-10.0, -PI, 0.0, PI, 7.0] {
            let n = normalize_angle(a);
            assert!((-PI..PI).contains(&n));
        }
    }
}
