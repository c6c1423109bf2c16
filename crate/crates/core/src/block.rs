//! Scenario blocks: independently mutable fragments of a scenario document.

use serde::{Deserialize, Serialize};

use crate::xml::Element;

/// Block kinds in their fixed insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Weather,
    NpcDefinition,
    TrafficSignal,
    Event,
    Obstacle,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Weather => "weather",
            BlockKind::NpcDefinition => "npc_definition",
            BlockKind::TrafficSignal => "traffic_signal",
            BlockKind::Event => "event",
            BlockKind::Obstacle => "obstacle",
        }
    }
}

/// Named insertion point in a scenario template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// `Storyboard/Init/Actions`, before the first `Private`.
    InitGlobal,
    /// `Storyboard/Init/Actions`, appended.
    InitPrivate,
    /// `Entities`, appended.
    Entities,
    /// `Storyboard/Story/Act`, before its `StartTrigger`.
    Act,
    /// The `Maneuver` of the named NPC's maneuver group.
    Maneuver(String),
}

impl Slot {
    /// Element name of the slot's parent in the schema.
    pub fn parent_element(&self) -> &'static str {
        match self {
            Slot::InitGlobal | Slot::InitPrivate => "Actions",
            Slot::Entities => "Entities",
            Slot::Act => "Act",
            Slot::Maneuver(_) => "Maneuver",
        }
    }

    pub fn label(&self) -> String {
        match self {
            Slot::InitGlobal => "init_global".into(),
            Slot::InitPrivate => "init_private".into(),
            Slot::Entities => "entities".into(),
            Slot::Act => "act".into(),
            Slot::Maneuver(npc) => format!("maneuver:{npc}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockIdentity {
    pub tag: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPart {
    pub slot: Slot,
    pub element: Element,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBlock {
    pub kind: BlockKind,
    pub identity: BlockIdentity,
    pub parts: Vec<BlockPart>,
    /// Entity an event block belongs to.
    pub owner: Option<String>,
}

impl ScenarioBlock {
    /// Concatenated serialization of all parts, used for equality checks and
    /// fingerprints.
    pub fn xml(&self) -> String {
        self.parts
            .iter()
            .map(|p| format!("<!-- {} -->\n{}", p.slot.label(), p.element.to_xml_string()))
            .collect()
    }

    pub fn part(&self, slot: &Slot) -> Option<&Element> {
        self.parts.iter().find(|p| &p.slot == slot).map(|p| &p.element)
    }

    pub fn part_mut(&mut self, slot: &Slot) -> Option<&mut Element> {
        self.parts.iter_mut().find(|p| &p.slot == slot).map(|p| &mut p.element)
    }
}

/// Name of the AV's scenario object. The ego belongs to the template, never to
/// a block.
pub const EGO_NAME: &str = "ego";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("slot conflict: {0}")]
    SlotConflict(String),
    #[error("missing slot: {0}")]
    MissingSlot(String),
}

impl ScenarioBlock {
    /// Key used to pair up blocks across documents. Identical to the identity
    /// except for weather, whose name follows the weather type.
    pub fn key(&self) -> String {
        match self.kind {
            BlockKind::Weather => "weather".to_string(),
            _ => format!("{}:{}", self.identity.tag, self.identity.name),
        }
    }
}

const ACTIONS_PATH: &str = "Storyboard/Init/Actions";
const ACT_PATH: &str = "Storyboard/Story/Act";

fn slot_parent<'a>(root: &'a mut Element, slot: &Slot) -> Result<&'a mut Element, BlockError> {
    let missing = || BlockError::MissingSlot(slot.label());
    match slot {
        Slot::InitGlobal | Slot::InitPrivate => root.find_mut(ACTIONS_PATH).ok_or_else(missing),
        Slot::Entities => root.child_mut("Entities").ok_or_else(missing),
        Slot::Act => root.find_mut(ACT_PATH).ok_or_else(missing),
        Slot::Maneuver(npc) => {
            let act = root.find_mut(ACT_PATH).ok_or_else(missing)?;
            let group = act
                .elements_mut()
                .find(|g| g.name == "ManeuverGroup" && group_actor(g) == Some(npc.as_str()))
                .ok_or_else(missing)?;
            group.child_mut("Maneuver").ok_or_else(missing)
        }
    }
}

fn group_actor(group: &Element) -> Option<&str> {
    group.find("Actors/EntityRef").and_then(|e| e.attr("entityRef"))
}

fn is_environment(ga: &Element) -> bool {
    ga.name == "GlobalAction" && ga.child("EnvironmentAction").is_some()
}

fn signal_name(ga: &Element) -> Option<&str> {
    ga.find("InfrastructureAction/TrafficSignalAction/TrafficSignalStateAction")
        .and_then(|e| e.attr("name"))
}

fn conflicts(root: &Element, block: &ScenarioBlock) -> Option<String> {
    let id = &block.identity;
    let actions = root.find(ACTIONS_PATH)?;
    match block.kind {
        BlockKind::Weather => actions
            .elements()
            .any(is_environment)
            .then(|| "the scenario already has a weather block".to_string()),
        BlockKind::TrafficSignal => actions
            .elements()
            .any(|g| signal_name(g) == Some(id.name.as_str()))
            .then(|| format!("signal '{}' is already set", id.name)),
        BlockKind::NpcDefinition | BlockKind::Obstacle => root
            .child("Entities")?
            .children_named("ScenarioObject")
            .any(|o| o.attr("name") == Some(id.name.as_str()))
            .then(|| format!("entity '{}' already exists", id.name)),
        BlockKind::Event => root
            .descendants()
            .into_iter()
            .any(|e| e.name == "Event" && e.attr("name") == Some(id.name.as_str()))
            .then(|| format!("event '{}' already exists", id.name)),
    }
}

/// Inserts every part of `block` at its slot.
pub fn insert_block(root: &mut Element, block: &ScenarioBlock) -> Result<(), BlockError> {
    if let Some(msg) = conflicts(root, block) {
        return Err(BlockError::SlotConflict(msg));
    }
    for part in &block.parts {
        let parent = slot_parent(root, &part.slot)?;
        let node = crate::xml::Node::Element(part.element.clone());
        match &part.slot {
            Slot::InitGlobal => {
                let at = parent
                    .children
                    .iter()
                    .position(|c| matches!(c, crate::xml::Node::Element(e) if e.name != "GlobalAction"))
                    .unwrap_or(parent.children.len());
                parent.children.insert(at, node);
            }
            Slot::Act => {
                let at = parent
                    .children
                    .iter()
                    .position(|c| matches!(c, crate::xml::Node::Element(e) if e.name == "StartTrigger"))
                    .unwrap_or(parent.children.len());
                parent.children.insert(at, node);
            }
            Slot::InitPrivate | Slot::Entities | Slot::Maneuver(_) => parent.children.push(node),
        }
    }
    Ok(())
}

/// Inserts `blocks` into a copy of `template` in their fixed kind order.
/// The sort is stable, so blocks of one kind keep their given order.
pub fn compose(template: &Element, blocks: &[ScenarioBlock]) -> Result<Element, BlockError> {
    let mut ordered: Vec<&ScenarioBlock> = blocks.iter().collect();
    ordered.sort_by_key(|b| b.kind);
    let mut root = template.clone();
    for b in ordered {
        insert_block(&mut root, b)?;
    }
    Ok(root)
}

fn name_of(e: &Element) -> String {
    e.attr("name").unwrap_or_default().to_string()
}

/// Splits a document into its template and blocks (kind order, then
/// document order). `compose` on the result rebuilds the document.
pub fn extract_blocks(doc: &Element) -> (Element, Vec<ScenarioBlock>) {
    let mut root = doc.clone();
    let mut weather = Vec::new();
    let mut signals = Vec::new();
    let mut npcs = Vec::new();
    let mut events = Vec::new();
    let mut obstacles = Vec::new();

    let objects: Vec<Element> = root
        .child_mut("Entities")
        .map(|ents| ents.take_children_where(|o| o.name == "ScenarioObject" && o.attr("name") != Some(EGO_NAME)))
        .unwrap_or_default();
    let mut privates: Vec<Element> = Vec::new();
    if let Some(actions) = root.find_mut(ACTIONS_PATH) {
        for ga in actions.take_children_where(|g| g.name == "GlobalAction") {
            if is_environment(&ga) {
                let name = ga.find("EnvironmentAction/Environment").map(name_of).unwrap_or_default();
                weather.push(ScenarioBlock {
                    kind: BlockKind::Weather,
                    identity: BlockIdentity { tag: "Environment".into(), name },
                    parts: vec![BlockPart { slot: Slot::InitGlobal, element: ga }],
                    owner: None,
                });
            } else {
                let name = signal_name(&ga).unwrap_or_default().to_string();
                signals.push(ScenarioBlock {
                    kind: BlockKind::TrafficSignal,
                    identity: BlockIdentity { tag: "TrafficSignalStateAction".into(), name },
                    parts: vec![BlockPart { slot: Slot::InitGlobal, element: ga }],
                    owner: None,
                });
            }
        }
        let names: Vec<String> = objects.iter().map(name_of).collect();
        privates = actions.take_children_where(|p| {
            p.name == "Private" && p.attr("entityRef").is_some_and(|r| names.iter().any(|n| n == r))
        });
    }
    let mut groups: Vec<Element> = root
        .find_mut(ACT_PATH)
        .map(|act| act.take_children_where(|g| g.name == "ManeuverGroup"))
        .unwrap_or_default();

    for obj in objects {
        let name = name_of(&obj);
        let is_obstacle = obj.child("MiscObject").is_some();
        let mut parts = vec![BlockPart { slot: Slot::Entities, element: obj }];
        if let Some(i) = privates.iter().position(|p| p.attr("entityRef") == Some(name.as_str())) {
            parts.push(BlockPart { slot: Slot::InitPrivate, element: privates.remove(i) });
        }
        if !is_obstacle {
            if let Some(i) = groups.iter().position(|g| group_actor(g) == Some(name.as_str())) {
                let mut group = groups.remove(i);
                if let Some(m) = group.child_mut("Maneuver") {
                    for ev in m.take_children_where(|e| e.name == "Event") {
                        events.push(ScenarioBlock {
                            kind: BlockKind::Event,
                            identity: BlockIdentity { tag: "Event".into(), name: name_of(&ev) },
                            parts: vec![BlockPart { slot: Slot::Maneuver(name.clone()), element: ev }],
                            owner: Some(name.clone()),
                        });
                    }
                }
                parts.push(BlockPart { slot: Slot::Act, element: group });
            }
        }
        let block = ScenarioBlock {
            kind: if is_obstacle { BlockKind::Obstacle } else { BlockKind::NpcDefinition },
            identity: BlockIdentity { tag: "ScenarioObject".into(), name },
            parts,
            owner: None,
        };
        if is_obstacle {
            obstacles.push(block);
        } else {
            npcs.push(block);
        }
    }
    // Groups driving the ego (or unknown actors) are template structure.
    if let Some(act) = root.find_mut(ACT_PATH) {
        for g in groups {
            let at = act
                .children
                .iter()
                .position(|c| matches!(c, crate::xml::Node::Element(e) if e.name == "StartTrigger"))
                .unwrap_or(act.children.len());
            act.children.insert(at, crate::xml::Node::Element(g));
        }
    }
    let mut blocks = weather;
    blocks.extend(npcs);
    blocks.extend(signals);
    blocks.extend(events);
    blocks.extend(obstacles);
    (root, blocks)
}
