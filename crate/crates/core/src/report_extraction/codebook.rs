//! Action and relative-position codebook, loaded from JSON data.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{ActionCode, ExtractionError, RelPos};

const BUILTIN_CODEBOOK: &str = include_str!("../../data/codebook.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneEffect {
    #[default]
    None,
    ChangeLeft,
    ChangeRight,
    /// Passes the AV (or another vehicle) on its left side.
    PassLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteEffect {
    #[default]
    None,
    Straight,
    Left,
    Right,
    UTurn,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedEffect {
    #[default]
    None,
    Accelerate,
    Decelerate,
    Stop,
    Reverse,
    Yield,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDef {
    pub code: ActionCode,
    pub name: String,
    #[serde(default)]
    pub lane: LaneEffect,
    #[serde(default)]
    pub route: RouteEffect,
    #[serde(default)]
    pub speed: SpeedEffect,
    #[serde(default)]
    pub phrases: Vec<String>,
}

impl ActionDef {
    /// Whether the action restricts which lane the actor may start in.
    pub fn constrains_lane(&self) -> bool {
        self.lane != LaneEffect::None
            || matches!(self.route, RouteEffect::Left | RouteEffect::Right | RouteEffect::UTurn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionAnchor {
    CrossFromLeft,
    OppositeApproach,
    CrossFromRight,
    AheadBeyondJunction,
    AheadSameRoad,
    BehindSameRoad,
    OncomingSameRoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelPosDef {
    pub code: RelPos,
    pub name: String,
    pub anchor: PositionAnchor,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub actions: Vec<ActionDef>,
    pub relative_positions: Vec<RelPosDef>,
    #[serde(skip)]
    phrase_index: BTreeMap<String, ActionCode>,
}

pub(crate) fn normalize_phrase(s: &str) -> String {
    s.to_lowercase()
        .replace(['_', '\t', '\n'], " ")
        .trim_matches(|c: char| c.is_whitespace() || c == '.' || c == ',' || c == ';' || c == '"')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl Codebook {
    pub fn load(text: &str) -> Result<Codebook, ExtractionError> {
        let mut cb: Codebook =
            serde_json::from_str(text).map_err(|e| ExtractionError::Codebook(e.to_string()))?;
        let mut index = BTreeMap::new();
        let mut codes = std::collections::BTreeSet::new();
        for a in &cb.actions {
            if !codes.insert(a.code) {
                return Err(ExtractionError::Codebook(format!("duplicate action code {}", a.code)));
            }
            let keys = std::iter::once(a.code.0.to_string())
                .chain(std::iter::once(a.name.clone()))
                .chain(a.phrases.iter().cloned());
            for k in keys {
                let k = normalize_phrase(&k);
                if let Some(prev) = index.insert(k.clone(), a.code) {
                    if prev != a.code {
                        return Err(ExtractionError::Codebook(format!(
                            "phrase '{k}' maps to both {prev} and {}",
                            a.code
                        )));
                    }
                }
            }
        }
        for r in RelPos::ALL {
            if !cb.relative_positions.iter().any(|d| d.code == r) {
                return Err(ExtractionError::Codebook(format!("relative position {r:?} undefined")));
            }
        }
        cb.phrase_index = index;
        Ok(cb)
    }

    pub fn builtin() -> &'static Codebook {
        static CB: OnceLock<Codebook> = OnceLock::new();
        CB.get_or_init(|| Codebook::load(BUILTIN_CODEBOOK).expect("shipped codebook is valid"))
    }

    pub fn action(&self, code: ActionCode) -> Option<&ActionDef> {
        self.actions.iter().find(|a| a.code == code)
    }

    pub fn lookup(&self, phrase: &str) -> Option<ActionCode> {
        self.phrase_index.get(&normalize_phrase(phrase)).copied()
    }

    pub fn anchor(&self, rel: RelPos) -> PositionAnchor {
        self.relative_positions
            .iter()
            .find(|d| d.code == rel)
            .map(|d| d.anchor)
            .expect("codebook defines every relative position")
    }
}
