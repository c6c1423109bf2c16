//! Accident-report text to [`ReportFacts`] through a multi-turn dialogue with
//! an extraction backend.
//!
//! The dialogue has three turns, each answered with a JSON object:
//!
//! 1. participants: `{"av": {...}, "npcs": [{"id", "category", "description"}],
//!    "obstacles": [{"id", "kind", "description", "dimensions"}]}`
//! 2. positions: `{"positions": [{"id", "rel_pos", "lane_alignment"}]}`
//! 3. events: `{"events": [{"id", "actions": [phrase | {"action", "target_speed", "duration"}]}]}`
//!
//! Missing positions or events stop extraction with [`ExtractionError::IncompleteReport`].

pub mod backend;
pub mod codebook;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use backend::{
    strip_fence, subject_digest, BackendError, ChatMessage, DialogueTurn, ExtractionBackend, FallbackBackend,
    FixtureBackend, HttpBackend, RecordingBackend, Transcript, TranscriptEntry, TurnKind,
};
pub use codebook::{ActionDef, Codebook, LaneEffect, PositionAnchor, RelPosDef, RouteEffect, SpeedEffect};

use crate::map_graph::Turn;

pub const FACTS_FORMAT: &str = "crashscen-report-facts";
pub const FACTS_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("incomplete report: {0}")]
    IncompleteReport(String),
    #[error("action phrase '{0}' is not in the codebook")]
    UnknownAction(String),
    #[error("cannot commit to a relative position for '{0}'")]
    AmbiguousPosition(String),
    #[error("codebook: {0}")]
    Codebook(String),
    #[error("malformed facts document: {0}")]
    Facts(String),
}

/// One letter of the action alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionCode(pub char);

impl fmt::Display for ActionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for ActionCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for ActionCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_lowercase() => Ok(ActionCode(c)),
            _ => Err(serde::de::Error::custom(format!("action code must be one lowercase letter, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelPos {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
}

impl RelPos {
    pub const ALL: [RelPos; 7] = [
        RelPos::R1,
        RelPos::R2,
        RelPos::R3,
        RelPos::R4,
        RelPos::R5,
        RelPos::R6,
        RelPos::R7,
    ];

    /// R5 and R6 share the AV's segment and travel direction.
    pub fn same_segment(self) -> bool {
        matches!(self, RelPos::R5 | RelPos::R6)
    }

    pub fn allows_alignment(self) -> bool {
        matches!(self, RelPos::R5 | RelPos::R6 | RelPos::R7)
    }

    pub fn at_junction(self) -> bool {
        matches!(self, RelPos::R1 | RelPos::R2 | RelPos::R3 | RelPos::R4)
    }

    pub fn parse(s: &str) -> Option<RelPos> {
        let t = s.trim().to_ascii_uppercase();
        RelPos::ALL.into_iter().find(|r| format!("{r:?}") == t)
    }
}

impl fmt::Display for RelPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneAlignment {
    SameLane,
    DifferentLane,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpcCategory {
    Sedan,
    Van,
    Truck,
    Motorbike,
    Bicycle,
    Pedestrian,
}

impl NpcCategory {
    pub const ALL: [NpcCategory; 6] = [
        NpcCategory::Sedan,
        NpcCategory::Van,
        NpcCategory::Truck,
        NpcCategory::Motorbike,
        NpcCategory::Bicycle,
        NpcCategory::Pedestrian,
    ];

    /// Maps a free-text vehicle description to a category; unknown text is a sedan.
    pub fn from_phrase(s: &str) -> NpcCategory {
        let t = s.to_lowercase();
        let has = |words: &[&str]| words.iter().any(|w| t.contains(w));
        if has(&["pedestrian", "walker", "jogger", "person"]) {
            NpcCategory::Pedestrian
        } else if has(&["bicycl", "bike", "cyclist", "scooter"]) && !has(&["motor"]) {
            NpcCategory::Bicycle
        } else if has(&["motorcycl", "motorbike", "moped"]) {
            NpcCategory::Motorbike
        } else if has(&["truck", "semi", "lorry", "bus", "tractor"]) {
            NpcCategory::Truck
        } else if has(&["van", "minivan"]) {
            NpcCategory::Van
        } else {
            if !has(&["sedan", "car", "suv", "vehicle", "coupe", "hatchback", "pickup"]) {
                log::warn!("unrecognized participant category '{s}', using sedan");
            }
            NpcCategory::Sedan
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NpcCategory::Sedan => "sedan",
            NpcCategory::Van => "van",
            NpcCategory::Truck => "truck",
            NpcCategory::Motorbike => "motorbike",
            NpcCategory::Bicycle => "bicycle",
            NpcCategory::Pedestrian => "pedestrian",
        }
    }

    pub fn is_vehicle(self) -> bool {
        self != NpcCategory::Pedestrian
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub actions: Vec<ActionCode>,
    /// Parallel to `actions`.
    pub params: Vec<ActionParams>,
}

impl EventSequence {
    pub fn from_letters(letters: &str) -> EventSequence {
        let actions: Vec<ActionCode> = letters.chars().map(ActionCode).collect();
        EventSequence {
            params: vec![ActionParams::default(); actions.len()],
            actions,
        }
    }

    pub fn letters(&self) -> String {
        self.actions.iter().map(|a| a.0).collect()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcFact {
    pub name: String,
    pub category: NpcCategory,
    pub rel_pos: RelPos,
    #[serde(default)]
    pub lane_alignment: LaneAlignment,
    pub events: EventSequence,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFact {
    pub name: String,
    pub kind: String,
    pub rel_pos: RelPos,
    /// Length, width, height in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<[f64; 3]>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvRoute {
    #[default]
    Straight,
    Left,
    Right,
}

impl AvRoute {
    pub fn turn(self) -> Turn {
        match self {
            AvRoute::Straight => Turn::Straight,
            AvRoute::Left => Turn::Left,
            AvRoute::Right => Turn::Right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvContext {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub route: AvRoute,
    #[serde(default)]
    pub junction: bool,
    #[serde(default = "one")]
    pub min_driving_lanes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<String>,
}

fn one() -> u32 {
    1
}

impl Default for AvContext {
    fn default() -> Self {
        AvContext {
            description: String::new(),
            route: AvRoute::Straight,
            junction: false,
            min_driving_lanes: 1,
            weather: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFacts {
    pub format: String,
    pub version: u32,
    pub report_id: String,
    /// Subject digest of the source text.
    pub report_digest: String,
    pub npcs: Vec<NpcFact>,
    pub obstacles: Vec<ObstacleFact>,
    pub av_context: AvContext,
}

impl ReportFacts {
    pub fn new(report_id: impl Into<String>, report_digest: impl Into<String>) -> Self {
        ReportFacts {
            format: FACTS_FORMAT.into(),
            version: FACTS_VERSION,
            report_id: report_id.into(),
            report_digest: report_digest.into(),
            npcs: Vec::new(),
            obstacles: Vec::new(),
            av_context: AvContext::default(),
        }
    }

    /// Checks the invariants every consumer relies on.
    pub fn validate(&self, codebook: &Codebook) -> Result<(), ExtractionError> {
        if self.format != FACTS_FORMAT || self.version != FACTS_VERSION {
            return Err(ExtractionError::Facts(format!(
                "expected {FACTS_FORMAT} v{FACTS_VERSION}, got {} v{}",
                self.format, self.version
            )));
        }
        if self.av_context.min_driving_lanes < 1 {
            return Err(ExtractionError::Facts("min_driving_lanes must be at least 1".into()));
        }
        for n in &self.npcs {
            if n.events.is_empty() {
                return Err(ExtractionError::IncompleteReport(format!("{} has no events", n.name)));
            }
            if n.events.params.len() != n.events.actions.len() {
                return Err(ExtractionError::Facts(format!("{}: params and actions differ in length", n.name)));
            }
            if let Some(a) = n.events.actions.iter().find(|a| codebook.action(**a).is_none()) {
                return Err(ExtractionError::UnknownAction(a.to_string()));
            }
            if n.lane_alignment != LaneAlignment::Unspecified && !n.rel_pos.allows_alignment() {
                return Err(ExtractionError::Facts(format!(
                    "{}: lane alignment is only defined for R5-R7, not {}",
                    n.name, n.rel_pos
                )));
            }
        }
        for o in &self.obstacles {
            if let Some(d) = o.dimensions {
                if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(ExtractionError::Facts(format!("{}: dimensions must be positive", o.name)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("facts serialize")
    }

    pub fn from_json(text: &str) -> Result<ReportFacts, ExtractionError> {
        let f: ReportFacts = serde_json::from_str(text).map_err(|e| ExtractionError::Facts(e.to_string()))?;
        f.validate(Codebook::builtin())?;
        Ok(f)
    }
}

/// Maps raw action phrases to codes with the shipped codebook.
pub fn normalize_events<S: AsRef<str>>(raw_actions: &[S]) -> Result<EventSequence, ExtractionError> {
    normalize_events_with(Codebook::builtin(), raw_actions)
}

pub fn normalize_events_with<S: AsRef<str>>(
    codebook: &Codebook,
    raw_actions: &[S],
) -> Result<EventSequence, ExtractionError> {
    let raw: Vec<RawAction> = raw_actions
        .iter()
        .map(|s| RawAction::Phrase(s.as_ref().to_string()))
        .collect();
    normalize_raw(codebook, &raw)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawAction {
    Phrase(String),
    Detailed {
        action: String,
        #[serde(default)]
        target_speed: Option<f64>,
        #[serde(default)]
        duration: Option<f64>,
    },
}

fn normalize_raw(codebook: &Codebook, raw: &[RawAction]) -> Result<EventSequence, ExtractionError> {
    let mut seq = EventSequence {
        actions: Vec::new(),
        params: Vec::new(),
    };
    for r in raw {
        let (phrase, params) = match r {
            RawAction::Phrase(p) => (p.as_str(), ActionParams::default()),
            RawAction::Detailed {
                action,
                target_speed,
                duration,
            } => (
                action.as_str(),
                ActionParams {
                    target_speed: *target_speed,
                    duration: *duration,
                },
            ),
        };
        let code = codebook
            .lookup(phrase)
            .ok_or_else(|| ExtractionError::UnknownAction(phrase.to_string()))?;
        if seq.actions.last() == Some(&code) {
            let last = seq.params.last_mut().expect("params parallel to actions");
            last.target_speed = last.target_speed.or(params.target_speed);
            last.duration = last.duration.or(params.duration);
            continue;
        }
        seq.actions.push(code);
        seq.params.push(params);
    }
    Ok(seq)
}

fn system_prompt(codebook: &Codebook) -> String {
    let mut s = String::from(
        "You extract structured facts from traffic collision reports involving an autonomous vehicle (AV). \
         Answer every question with a single JSON object and nothing else. Use null when the report does not say.\n\
         Actions (use these phrases):\n",
    );
    for a in &codebook.actions {
        s.push_str(&format!("  {}: {}\n", a.code, a.name));
    }
    s.push_str("Relative positions of a participant with respect to the AV:\n");
    for r in &codebook.relative_positions {
        s.push_str(&format!("  {}: {} ({})\n", r.code, r.name, r.definition));
    }
    s
}

const PARTICIPANTS_PROMPT: &str = "Report:\n{report}\n\n\
List the participants other than the AV. Reply with \
{\"av\": {\"description\": text, \"route\": \"straight\"|\"left\"|\"right\", \"junction\": bool, \
\"min_driving_lanes\": int, \"weather\": text|null}, \
\"npcs\": [{\"id\": text, \"category\": \"sedan\"|\"van\"|\"truck\"|\"motorbike\"|\"bicycle\"|\"pedestrian\", \"description\": text}], \
\"obstacles\": [{\"id\": text, \"kind\": text, \"description\": text, \"dimensions\": [length, width, height]|null}]}.";

const POSITIONS_PROMPT: &str = "For every npc and obstacle, give its initial position relative to the AV \
as one of R1-R7, and for R5-R7 whether it is in the AV's lane. Reply with \
{\"positions\": [{\"id\": text, \"rel_pos\": \"R1\"..\"R7\"|null, \"lane_alignment\": \"same_lane\"|\"different_lane\"|\"unspecified\"}]}.";

const EVENTS_PROMPT: &str = "For every npc, list its actions in the order they happen using the action phrases. \
Reply with {\"events\": [{\"id\": text, \"actions\": [phrase | {\"action\": phrase, \"target_speed\": m/s, \"duration\": s}]}]}.";

const CLASSIFY_PROMPT: &str = "Participant description:\n{description}\n\n\
Classify its position relative to the AV. Reply with \
{\"rel_pos\": \"R1\"..\"R7\"|null, \"lane_alignment\": \"same_lane\"|\"different_lane\"|\"unspecified\"}.";

#[derive(Debug, Deserialize)]
struct ParticipantsReply {
    #[serde(default)]
    av: Option<AvReply>,
    #[serde(default)]
    npcs: Vec<NpcReply>,
    #[serde(default)]
    obstacles: Vec<ObstacleReply>,
}

#[derive(Debug, Deserialize)]
struct AvReply {
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    route: Option<String>,
    #[serde(default)]
    junction: Option<bool>,
    #[serde(default)]
    min_driving_lanes: Option<u32>,
    #[serde(default)]
    weather: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NpcReply {
    id: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ObstacleReply {
    id: String,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    dimensions: Option<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
struct PositionsReply {
    #[serde(default)]
    positions: Vec<PositionReply>,
}

#[derive(Debug, Deserialize)]
struct PositionReply {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    rel_pos: Option<String>,
    #[serde(default)]
    lane_alignment: Option<LaneAlignment>,
}

#[derive(Debug, Deserialize)]
struct EventsReply {
    #[serde(default)]
    events: Vec<EventReply>,
}

#[derive(Debug, Deserialize)]
struct EventReply {
    id: String,
    #[serde(default)]
    actions: Vec<RawAction>,
}

fn parse_reply<T: serde::de::DeserializeOwned>(turn: TurnKind, text: &str) -> Result<T, ExtractionError> {
    serde_json::from_str(strip_fence(text))
        .map_err(|e| BackendError::Format(format!("{turn:?} reply is not the expected JSON: {e}")).into())
}

struct Dialogue<'a, B: ExtractionBackend + ?Sized> {
    backend: &'a B,
    digest: String,
    messages: Vec<ChatMessage>,
}

impl<B: ExtractionBackend + ?Sized> Dialogue<'_, B> {
    fn ask(&mut self, kind: TurnKind, prompt: String) -> Result<String, ExtractionError> {
        self.messages.push(ChatMessage::user(prompt));
        let turn = DialogueTurn {
            kind,
            subject_digest: self.digest.clone(),
            messages: self.messages.clone(),
        };
        let reply = self.backend.complete(&turn)?;
        self.messages.push(ChatMessage::assistant(reply.clone()));
        Ok(reply)
    }
}

fn pos_label(rel: Option<&PositionReply>) -> Option<(RelPos, LaneAlignment)> {
    let r = rel?;
    let code = RelPos::parse(r.rel_pos.as_deref()?)?;
    Some((code, r.lane_alignment.unwrap_or_default()))
}

fn coerce_alignment(name: &str, rel: RelPos, alignment: LaneAlignment) -> LaneAlignment {
    if alignment != LaneAlignment::Unspecified && !rel.allows_alignment() {
        log::warn!("{name}: lane alignment ignored for {rel}");
        return LaneAlignment::Unspecified;
    }
    alignment
}

/// Runs the three-turn dialogue with the shipped codebook.
pub fn extract_facts<B: ExtractionBackend + ?Sized>(
    report_id: &str,
    report_text: &str,
    backend: &B,
) -> Result<ReportFacts, ExtractionError> {
    extract_facts_with(Codebook::builtin(), report_id, report_text, backend)
}

pub fn extract_facts_with<B: ExtractionBackend + ?Sized>(
    codebook: &Codebook,
    report_id: &str,
    report_text: &str,
    backend: &B,
) -> Result<ReportFacts, ExtractionError> {
    let text = report_text.trim();
    if text.is_empty() {
        return Err(ExtractionError::IncompleteReport("report text is empty".into()));
    }
    let mut dlg = Dialogue {
        backend,
        digest: subject_digest(text),
        messages: vec![ChatMessage::system(system_prompt(codebook))],
    };
    let mut facts = ReportFacts::new(report_id, dlg.digest.clone());

    let reply = dlg.ask(TurnKind::Participants, PARTICIPANTS_PROMPT.replace("{report}", text))?;
    let parts: ParticipantsReply = parse_reply(TurnKind::Participants, &reply)?;
    if parts.npcs.is_empty() && parts.obstacles.is_empty() {
        return Err(ExtractionError::IncompleteReport(
            "no participants besides the AV are described".into(),
        ));
    }
    if let Some(av) = parts.av {
        facts.av_context = AvContext {
            description: av.description.unwrap_or_default(),
            route: match av.route.as_deref().map(str::to_lowercase).as_deref() {
                Some("left") => AvRoute::Left,
                Some("right") => AvRoute::Right,
                _ => AvRoute::Straight,
            },
            junction: av.junction.unwrap_or(false),
            min_driving_lanes: av.min_driving_lanes.unwrap_or(1).max(1),
            weather: av.weather,
        };
    }

    let reply = dlg.ask(TurnKind::Positions, POSITIONS_PROMPT.to_string())?;
    let positions: PositionsReply = parse_reply(TurnKind::Positions, &reply)?;
    let position_of = |id: &str| {
        let r = positions.positions.iter().find(|p| p.id.as_deref() == Some(id));
        pos_label(r).ok_or_else(|| ExtractionError::IncompleteReport(format!("no relative position for '{id}'")))
    };

    for id in parts.npcs.iter().map(|n| &n.id).chain(parts.obstacles.iter().map(|o| &o.id)) {
        position_of(id)?;
    }

    let mut events = EventsReply { events: Vec::new() };
    if !parts.npcs.is_empty() {
        let reply = dlg.ask(TurnKind::Events, EVENTS_PROMPT.to_string())?;
        events = parse_reply(TurnKind::Events, &reply)?;
    }

    for (i, n) in parts.npcs.iter().enumerate() {
        let (rel_pos, alignment) = position_of(&n.id)?;
        let raw = events
            .events
            .iter()
            .find(|e| e.id == n.id)
            .map(|e| e.actions.as_slice())
            .unwrap_or(&[]);
        if raw.is_empty() {
            return Err(ExtractionError::IncompleteReport(format!("no events for '{}'", n.id)));
        }
        let name = format!("npc{}", i + 1);
        facts.npcs.push(NpcFact {
            category: NpcCategory::from_phrase(n.category.as_deref().unwrap_or("")),
            rel_pos,
            lane_alignment: coerce_alignment(&name, rel_pos, alignment),
            events: normalize_raw(codebook, raw)?,
            description: n.description.clone().unwrap_or_default(),
            name,
        });
    }
    for (i, o) in parts.obstacles.iter().enumerate() {
        let (rel_pos, _) = position_of(&o.id)?;
        facts.obstacles.push(ObstacleFact {
            name: format!("obstacle{}", i + 1),
            kind: o.kind.clone().unwrap_or_else(|| "obstacle".into()),
            rel_pos,
            dimensions: o.dimensions,
            description: o.description.clone().unwrap_or_default(),
        });
    }
    facts.validate(codebook)?;
    Ok(facts)
}

/// Single-turn classification of one participant description.
pub fn classify_relative_position<B: ExtractionBackend + ?Sized>(
    description: &str,
    backend: &B,
) -> Result<(RelPos, LaneAlignment), ExtractionError> {
    let text = description.trim();
    let mut dlg = Dialogue {
        backend,
        digest: subject_digest(text),
        messages: vec![ChatMessage::system(system_prompt(Codebook::builtin()))],
    };
    let reply = dlg.ask(TurnKind::ClassifyPosition, CLASSIFY_PROMPT.replace("{description}", text))?;
    let r: PositionReply = parse_reply(TurnKind::ClassifyPosition, &reply)?;
    let (rel, alignment) = pos_label(Some(&r)).ok_or_else(|| ExtractionError::AmbiguousPosition(text.to_string()))?;
    Ok((rel, coerce_alignment("participant", rel, alignment)))
}
