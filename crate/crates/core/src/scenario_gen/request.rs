//! Structured content-fill requests and the prompt that carries them.

use serde::{Deserialize, Serialize};

use crate::report_extraction::backend::{ChatMessage, DialogueTurn, TurnKind, subject_digest};

pub const REQUEST_FORMAT: &str = "crashscen-content-request";
pub const REQUEST_MARKER: &str = "REQUEST:\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePos {
    pub road_id: String,
    pub lane_id: i32,
    pub s: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Vehicle,
    Pedestrian,
    Misc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub shape: String,
    pub value: f64,
    pub dimension: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventStart {
    SimulationTime { value: f64 },
    AfterEvent { event: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventAction {
    Speed { target: f64, dynamics: Dynamics },
    LaneChange { target_lane: i32, dynamics: Dynamics },
    Route { waypoints: Vec<LanePos> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "snake_case")]
pub enum SlotSpec {
    Weather {
        weather_type: String,
        cloud_state: String,
        precipitation_type: String,
        precipitation_intensity: f64,
        visibility: f64,
        friction: f64,
        sun_intensity: f64,
        azimuth: f64,
        elevation: f64,
    },
    Signal {
        signal_id: String,
        state: String,
    },
    Definition {
        entity: String,
        object: ObjectKind,
        /// Codebook category (`sedan`, `pedestrian`, ...) or obstacle kind.
        model: String,
        /// Schema category literal (`car`, `pedestrian`, `obstacle`, ...).
        category: String,
        color: String,
        /// Width, length, height in meters.
        dimensions: [f64; 3],
        #[serde(default)]
        mass: Option<f64>,
        /// Max speed, acceleration, deceleration.
        #[serde(default)]
        performance: Option<[f64; 3]>,
    },
    Init {
        entity: String,
        position: LanePos,
        #[serde(default)]
        speed: Option<f64>,
        #[serde(default)]
        goal: Option<LanePos>,
    },
    Group {
        npc: String,
    },
    Event {
        npc: String,
        event: String,
        letter: String,
        behavior: String,
        start: EventStart,
        action: EventAction,
    },
}

impl SlotSpec {
    /// Root element the fragment for this slot must have.
    pub fn element(&self) -> &'static str {
        match self {
            SlotSpec::Weather { .. } | SlotSpec::Signal { .. } => "GlobalAction",
            SlotSpec::Definition { .. } => "ScenarioObject",
            SlotSpec::Init { .. } => "Private",
            SlotSpec::Group { .. } => "ManeuverGroup",
            SlotSpec::Event { .. } => "Event",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRequest {
    pub key: String,
    #[serde(flatten)]
    pub spec: SlotSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFillRequest {
    pub format: String,
    pub version: u32,
    pub report_id: String,
    pub slots: Vec<SlotRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFillResponse {
    pub fragments: std::collections::BTreeMap<String, String>,
}

const SYSTEM_PROMPT: &str = "You write OpenSCENARIO 1.0 XML. For every requested slot, produce one XML \
fragment whose root element is the slot's `element`. Use exactly the names, positions, speeds and \
dynamics given in the slot. Only use the elements and attributes of OpenSCENARIO 1.0. \
Answer with a JSON object {\"fragments\": {\"<slot key>\": \"<xml>\"}} and nothing else.";

impl ContentFillRequest {
    pub fn new(report_id: impl Into<String>, slots: Vec<SlotRequest>) -> Self {
        ContentFillRequest {
            format: REQUEST_FORMAT.to_string(),
            version: 1,
            report_id: report_id.into(),
            slots,
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn to_turn(&self) -> DialogueTurn {
        let body = self.canonical_json();
        let mut annotated: Vec<serde_json::Value> = Vec::new();
        for s in &self.slots {
            let mut v = serde_json::to_value(s).expect("slot serializes");
            v["element"] = serde_json::Value::String(s.spec.element().to_string());
            annotated.push(v);
        }
        let pretty = serde_json::to_string_pretty(&serde_json::json!({
            "format": self.format,
            "version": self.version,
            "report_id": self.report_id,
            "slots": annotated,
        }))
        .expect("request serializes");
        DialogueTurn {
            kind: TurnKind::ContentFill,
            subject_digest: subject_digest(&body),
            messages: vec![
                ChatMessage::system(SYSTEM_PROMPT),
                ChatMessage::user(format!("Fill these scenario slots.\n\n{REQUEST_MARKER}{pretty}")),
            ],
        }
    }

    /// Recovers the request embedded in a content-fill turn.
    pub fn from_turn(turn: &DialogueTurn) -> Option<ContentFillRequest> {
        let msg = turn.last_user_message();
        let at = msg.find(REQUEST_MARKER)?;
        serde_json::from_str(&msg[at + REQUEST_MARKER.len()..]).ok()
    }
}
