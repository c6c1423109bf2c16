//! Block mutation: disassembly of a seed into mutable blocks, value selection
//! strategies and the nine block operators.

mod operators;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::block::{extract_blocks, BlockIdentity, BlockKind, ScenarioBlock};
use crate::map_graph::RoadNetwork;
use crate::params::{GaussianParams, Operator, OperatorParams, ParameterTable, Strategy};
use crate::placement::LaneAssignment;
use crate::report_extraction::codebook::{Codebook, SpeedEffect};
use crate::report_extraction::ActionCode;
use crate::scenario_gen::{ScenarioDocument, ScenarioTemplate};
use crate::schema_model::{builtin_schema, validate_block};
use crate::xml::Element;

pub use operators::obstacle_insertion_block;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutationError {
    #[error("operator {operator} does not apply to {block}")]
    OperatorKindMismatch { operator: Operator, block: String },
    #[error("{0}: every literal has already been used")]
    DomainExhausted(Operator),
    #[error("{0} needs the road network and lane assignment")]
    MissingContext(Operator),
    #[error("invalid mutation spec: {0}")]
    InvalidSpec(String),
    #[error("variant of {block} is invalid: {finding}")]
    InvalidVariant { block: String, finding: String },
}

/// An operator with its strategy and parameter row.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationSpec {
    pub operator: Operator,
    pub strategy: Strategy,
    pub params: OperatorParams,
    pub gaussian: GaussianParams,
}

impl MutationSpec {
    pub fn new(operator: Operator, params: OperatorParams, gaussian: GaussianParams) -> Result<MutationSpec, MutationError> {
        if !operator.legal_strategies().contains(&params.strategy) {
            return Err(MutationError::InvalidSpec(format!(
                "strategy {:?} is not legal for {operator}",
                params.strategy
            )));
        }
        if params.strategy == Strategy::Gaussian && !(gaussian.sigma_fraction > 0.0) {
            return Err(MutationError::InvalidSpec("gaussian sigma must be positive".into()));
        }
        if params.strategy == Strategy::Enumerative && params.literals.is_empty() {
            return Err(MutationError::InvalidSpec(format!("{operator} has no literals")));
        }
        Ok(MutationSpec {
            operator,
            strategy: params.strategy,
            params,
            gaussian,
        })
    }

    pub fn from_table(table: &ParameterTable, operator: Operator) -> Result<MutationSpec, MutationError> {
        MutationSpec::new(operator, table.operator(operator).clone(), table.gaussian.clone())
    }

    fn range(&self, r: Option<[f64; 2]>, what: &str) -> Result<[f64; 2], MutationError> {
        r.ok_or_else(|| MutationError::InvalidSpec(format!("{} has no {what} range", self.operator)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Literal(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Literal(s) => s.parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueDomain {
    /// Closed interval for uniform sampling.
    Range([f64; 2]),
    /// Literal set; `tried` holds the ones already emitted.
    Literals { all: Vec<String>, tried: Vec<String> },
    /// Clamp bounds for gaussian noise. Without one the configured factors
    /// around the original apply.
    Clamp(Option<[f64; 2]>),
}

/// Map data for context-aware operators.
#[derive(Debug, Clone, Copy)]
pub struct SceneContext<'a> {
    pub network: &'a RoadNetwork,
    pub assignment: &'a LaneAssignment,
}

#[derive(Debug, Clone, Copy)]
pub struct MutationContext<'a> {
    pub params: &'a ParameterTable,
    pub scene: Option<SceneContext<'a>>,
}

const QUANTUM: f64 = 1e6;

/// Rounds to the 6 decimals written to XML, moving inward when rounding
/// would leave `[lo, hi]`.
pub fn quantize(v: f64, lo: f64, hi: f64) -> f64 {
    let q = (v * QUANTUM).round() / QUANTUM;
    if q < lo {
        ((lo * QUANTUM).ceil() / QUANTUM).min(hi)
    } else if q > hi {
        ((hi * QUANTUM).floor() / QUANTUM).max(lo)
    } else {
        q
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    let [lo, hi] = r;
    let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    quantize(v, lo, hi)
}

fn ordered(a: f64, b: f64) -> [f64; 2] {
    if a <= b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Picks a new value for one attribute under the MutationSpec strategy.
pub fn sample_value<R: Rng + ?Sized>(
    spec: &MutationSpec,
    original: &Value,
    domain: &ValueDomain,
    rng: &mut R,
    context: Option<&SceneContext<'_>>,
) -> Result<Value, MutationError> {
    let bad = |what: &str| MutationError::InvalidSpec(format!("{} cannot use a {what} domain", spec.operator));
    match (spec.strategy, domain) {
        (Strategy::Enumerative, ValueDomain::Literals { all, tried }) => all
            .iter()
            .find(|l| !tried.contains(l))
            .map(|l| Value::Literal(l.clone()))
            .ok_or(MutationError::DomainExhausted(spec.operator)),
        (Strategy::Enumerative, _) => Err(bad("non-literal")),
        (Strategy::ContextAware, _) if context.is_none() => Err(MutationError::MissingContext(spec.operator)),
        (Strategy::RandomSampling | Strategy::ContextAware, ValueDomain::Range(r)) => Ok(Value::Number(uniform(rng, *r))),
        (Strategy::RandomSampling | Strategy::ContextAware, ValueDomain::Literals { all, .. }) => all
            .choose(rng)
            .map(|l| Value::Literal(l.clone()))
            .ok_or_else(|| bad("empty literal")),
        (Strategy::Gaussian, ValueDomain::Clamp(clamp)) => {
            let x = original
                .as_f64()
                .ok_or_else(|| MutationError::InvalidSpec(format!("{}: original {original:?} is not numeric", spec.operator)))?;
            let [f0, f1] = spec.gaussian.clamp_factor;
            let [lo, hi] = clamp.unwrap_or_else(|| ordered(f0 * x, f1 * x));
            let sigma = spec.gaussian.sigma_fraction * x.abs();
            if sigma == 0.0 {
                return Ok(Value::Number(x));
            }
            let noise = Normal::new(0.0, sigma).map_err(|e| MutationError::InvalidSpec(e.to_string()))?;
            Ok(Value::Number(quantize((x + noise.sample(rng)).clamp(lo, hi), lo, hi)))
        }
        (_, ValueDomain::Clamp(_)) => Err(bad("clamp")),
        (Strategy::Gaussian, _) => Err(bad("non-clamp")),
    }
}

/// One attribute rewritten by a mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeChange {
    /// Slot label of the block part.
    pub part: String,
    /// Element path inside the part, `Name[i]` when siblings share a name.
    pub path: String,
    pub attribute: String,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockVariant {
    pub base: BlockIdentity,
    pub operator: Operator,
    /// Position among the variants of its base block.
    pub index: usize,
    pub block: ScenarioBlock,
    pub provenance: Vec<AttributeChange>,
}

fn diff_elements(part: &str, path: &str, a: &Element, b: &Element, out: &mut Vec<AttributeChange>) {
    let mut names: Vec<&str> = a.attrs.iter().map(|(k, _)| k.as_str()).collect();
    for (k, _) in &b.attrs {
        if !names.contains(&k.as_str()) {
            names.push(k);
        }
    }
    for k in names {
        let (old, new) = (a.attr(k).unwrap_or_default(), b.attr(k).unwrap_or_default());
        if old != new {
            out.push(AttributeChange {
                part: part.to_string(),
                path: path.to_string(),
                attribute: k.to_string(),
                old: old.to_string(),
                new: new.to_string(),
            });
        }
    }
    let (ca, cb): (Vec<&Element>, Vec<&Element>) = (a.elements().collect(), b.elements().collect());
    let same_shape = ca.len() == cb.len() && ca.iter().zip(&cb).all(|(x, y)| x.name == y.name);
    if !same_shape {
        out.push(AttributeChange {
            part: part.to_string(),
            path: path.to_string(),
            attribute: "*".into(),
            old: a.to_xml_string(),
            new: b.to_xml_string(),
        });
        return;
    }
    for (i, (x, y)) in ca.iter().zip(&cb).enumerate() {
        let twins = ca.iter().filter(|c| c.name == x.name).count();
        let seg = if twins > 1 {
            let nth = ca[..i].iter().filter(|c| c.name == x.name).count();
            format!("{}[{nth}]", x.name)
        } else {
            x.name.clone()
        };
        diff_elements(part, &format!("{path}/{seg}"), x, y, out);
    }
}

/// Attribute-level difference between two versions of a block.
pub fn block_provenance(base: &ScenarioBlock, variant: &ScenarioBlock) -> Vec<AttributeChange> {
    let mut out = Vec::new();
    for (a, b) in base.parts.iter().zip(&variant.parts) {
        diff_elements(&a.slot.label(), &a.element.name, &a.element, &b.element, &mut out);
    }
    out
}

fn describe(block: &ScenarioBlock) -> String {
    format!("{} block {}", block.kind.as_str(), block.key())
}

/// Applies one operator to a block. Sampled strategies give `count`
/// variants, enumerative ones one variant per configured literal.
pub fn mutate_block<R: Rng + ?Sized>(
    block: &ScenarioBlock,
    spec: &MutationSpec,
    count: usize,
    rng: &mut R,
    context: &MutationContext<'_>,
) -> Result<Vec<BlockVariant>, MutationError> {
    let schema = builtin_schema();
    let mut out = Vec::new();
    let mut tried: Vec<String> = Vec::new();
    let n = if spec.strategy == Strategy::Enumerative {
        spec.params.literals.len()
    } else {
        count
    };
    for index in 0..n {
        let mut variant = block.clone();
        let literal = if spec.strategy == Strategy::Enumerative {
            let domain = ValueDomain::Literals {
                all: spec.params.literals.clone(),
                tried: tried.clone(),
            };
            match sample_value(spec, &Value::Literal(String::new()), &domain, rng, context.scene.as_ref())? {
                Value::Literal(l) => {
                    tried.push(l.clone());
                    Some(l)
                }
                Value::Number(_) => unreachable!("literal domains yield literals"),
            }
        } else {
            None
        };
        operators::apply(&mut variant, spec, index, literal.as_deref(), rng, context)?;
        let report = validate_block(schema, &variant);
        if let Some(f) = report.findings.first() {
            return Err(MutationError::InvalidVariant {
                block: describe(block),
                finding: format!("{}: {}", f.path, f.message),
            });
        }
        let provenance = block_provenance(block, &variant);
        out.push(BlockVariant {
            base: block.identity.clone(),
            operator: spec.operator,
            index,
            block: variant,
            provenance,
        });
    }
    Ok(out)
}

/// Splits a valid document into its template and mutable blocks, one block
/// per event.
pub fn disassemble(doc: &ScenarioDocument) -> (ScenarioTemplate, Vec<ScenarioBlock>) {
    let (skeleton, blocks) = extract_blocks(&doc.root);
    (ScenarioTemplate::from_parts(skeleton, doc.metadata.clone(), &blocks), blocks)
}

/// Letter of an event block, taken from its `<npc>_e<k>_<letter>` name.
pub fn event_letter(block: &ScenarioBlock) -> Option<char> {
    let (_, tail) = block.identity.name.rsplit_once('_')?;
    let mut cs = tail.chars();
    match (cs.next(), cs.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

/// Whether an event's speed change slows the entity down.
pub fn decelerating(block: &ScenarioBlock) -> bool {
    event_letter(block)
        .and_then(|c| Codebook::builtin().action(ActionCode(c)))
        .is_some_and(|d| matches!(d.speed, SpeedEffect::Decelerate | SpeedEffect::Yield | SpeedEffect::Stop))
}

/// Plan class of a block: the key into the parameter table's `plans`.
pub fn block_class(block: &ScenarioBlock) -> &'static str {
    let first = block.parts.first().map(|p| &p.element);
    match block.kind {
        BlockKind::Weather => "weather",
        BlockKind::TrafficSignal => "traffic_signal",
        BlockKind::Obstacle => "obstacle",
        BlockKind::NpcDefinition => {
            if first.is_some_and(|e| e.child("Pedestrian").is_some()) {
                "pedestrian"
            } else {
                "vehicle"
            }
        }
        BlockKind::Event => {
            let ev = first.map(|e| e.descendants()).unwrap_or_default();
            if ev.iter().any(|e| e.name == "RoutingAction") {
                "route_event"
            } else if ev.iter().any(|e| e.name == "LaneChangeAction") {
                "lane_event"
            } else if ev
                .iter()
                .find(|e| e.name == "AbsoluteTargetSpeed")
                .and_then(|e| e.attr_f64("value"))
                .is_some_and(|v| v == 0.0)
            {
                "stop_event"
            } else {
                "speed_event"
            }
        }
    }
}

/// Per-block generator seed derived from the root seed and a label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Mutates every block with the operators its class is planned for. Blocks
/// are processed in parallel with seeds derived from `root_seed`; the result
/// keeps block order.
pub fn mutate_blocks(
    blocks: &[ScenarioBlock],
    root_seed: u64,
    context: &MutationContext<'_>,
) -> Result<Vec<(ScenarioBlock, Vec<BlockVariant>)>, MutationError> {
    blocks
        .par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root_seed, &b.key()));
            let ops = context.params.plans.get(block_class(b)).cloned().unwrap_or_default();
            let mut variants = Vec::new();
            for op in ops {
                let spec = MutationSpec::from_table(context.params, op)?;
                let offset = variants.len();
                for mut v in mutate_block(b, &spec, context.params.count(op), &mut rng, context)? {
                    v.index += offset;
                    variants.push(v);
                }
            }
            Ok((b.clone(), variants))
        })
        .collect()
}
