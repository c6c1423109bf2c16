//! Stage chaining shared by the command-line front end and the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    diff_derivation, feature_vector, grow_tree, node_file, prune, read_manifest, AssemblyError, BlockChange, BlockDelta, FeatureConfig,
    ScenarioTree,
};
use crate::block::BlockKind;
use crate::map_graph::RoadNetwork;
use crate::oracle::{
    classify_behaviors, lift_association, read_signal_log, read_trace, BehaviorCategory, BehaviorFinding, OracleConfig, OracleError,
    SceneGeometry, TriggerAssociation,
};
use crate::mutation::{disassemble, mutate_blocks, obstacle_insertion_block, MutationContext, MutationError, SceneContext};
use crate::params::ParameterTable;
use crate::placement::{assign_lanes, select_segment, PlacementError};
use crate::report_extraction::backend::ExtractionBackend;
use crate::report_extraction::ReportFacts;
use crate::scenario_gen::{fill_content_with, init_template_with, ScenarioDocument, ScenarioError};
use crate::schema_model::{builtin_schema, SchemaGraph};

/// Name of the obstacle added to seeds that have none.
pub const INSERTED_OBSTACLE: &str = "obstacle_oim";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Analysis(OracleError),
    #[error("node {node}: {source}")]
    Oracle { node: usize, source: OracleError },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Facts to a validated seed document: segment selection, lane assignment,
/// template initialization and content filling.
pub fn generate_seed<B: ExtractionBackend + ?Sized>(
    network: &RoadNetwork,
    facts: &ReportFacts,
    seed: u64,
    backend: &B,
    params: &ParameterTable,
) -> Result<ScenarioDocument, PipelineError> {
    generate_seed_with(network, facts, seed, backend, params, builtin_schema())
}

/// As [`generate_seed`], checking fragments against `schema`.
pub fn generate_seed_with<B: ExtractionBackend + ?Sized>(
    network: &RoadNetwork,
    facts: &ReportFacts,
    seed: u64,
    backend: &B,
    params: &ParameterTable,
    schema: &SchemaGraph,
) -> Result<ScenarioDocument, PipelineError> {
    let context = select_segment(network, facts, seed)?;
    let assignment = assign_lanes(&context, network, facts)?;
    let template = init_template_with(network, &context, params);
    Ok(fill_content_with(&template, network, facts, &assignment, backend, params, schema)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOptions {
    pub seed: u64,
    /// Add a default obstacle block when the seed has none.
    pub insert_obstacle: bool,
    /// Leaf retention fraction for pruning; `None` keeps the full tree.
    pub retention: Option<f64>,
}

impl Default for GrowOptions {
    fn default() -> Self {
        GrowOptions {
            seed: 0,
            insert_obstacle: false,
            retention: None,
        }
    }
}

/// Seed document to derivation tree: disassembly, block mutation, assembly
/// and optional pruning.
pub fn grow(doc: &ScenarioDocument, network: &RoadNetwork, params: &ParameterTable, opts: &GrowOptions) -> Result<ScenarioTree, PipelineError> {
    let (template, mut blocks) = disassemble(doc);
    let assignment = doc.metadata.assignment.clone();
    let scene = assignment.as_ref().map(|a| SceneContext { network, assignment: a });
    if opts.insert_obstacle && !blocks.iter().any(|b| b.kind == BlockKind::Obstacle) {
        match &scene {
            Some(sc) => blocks.push(obstacle_insertion_block(params, sc, INSERTED_OBSTACLE)),
            None => log::warn!("seed has no lane assignment; skipping obstacle insertion"),
        }
    }
    let ctx = MutationContext { params, scene };
    let variants = mutate_blocks(&blocks, opts.seed, &ctx)?;
    let mut tree = grow_tree(&template, &variants)?;
    tree.root_seed = Some(opts.seed);
    Ok(match opts.retention {
        Some(r) => prune(&tree, r, opts.seed, &FeatureConfig::from_params(params))?,
        None => tree,
    })
}

/// Serializable form of a parent-to-child [`BlockDelta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaReport {
    None,
    BlockAdded { block: String, block_kind: BlockKind },
    AttributeChanged { changes: Vec<BlockChange> },
    Divergent { reason: String },
}

impl From<&BlockDelta> for DeltaReport {
    fn from(d: &BlockDelta) -> Self {
        match d {
            BlockDelta::None => DeltaReport::None,
            BlockDelta::BlockAdded(b) => DeltaReport::BlockAdded {
                block: b.key(),
                block_kind: b.kind,
            },
            BlockDelta::AttributeChanged(c) => DeltaReport::AttributeChanged { changes: c.clone() },
            BlockDelta::Divergent(r) => DeltaReport::Divergent { reason: r.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnalysis {
    pub id: usize,
    pub parent: Option<usize>,
    pub categories: BTreeSet<BehaviorCategory>,
    pub findings: Vec<BehaviorFinding>,
    /// Derivation step from the parent node.
    pub delta: Option<DeltaReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    pub report_id: String,
    pub map_file: String,
    pub nodes: Vec<NodeAnalysis>,
    pub triggers: Vec<TriggerAssociation>,
    pub warnings: Vec<String>,
}

/// Trace files `node_<id>.jsonl` in `dir`, by node id.
fn trace_files(dir: &Path) -> Result<BTreeMap<usize, std::path::PathBuf>, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let id = name
            .strip_prefix("node_")
            .and_then(|r| r.strip_suffix(".jsonl"))
            .and_then(|r| r.parse::<usize>().ok());
        if let Some(id) = id {
            out.insert(id, path);
        }
    }
    Ok(out)
}

/// Runs the oracle over every node of a written tree that has a trace in
/// `traces_dir`, then mines triggers over the analyzed nodes. A signal log
/// `node_<id>.signals.jsonl` next to a trace enables red-light checks.
pub fn analyze(
    tree_dir: &Path,
    traces_dir: &Path,
    network: &RoadNetwork,
    params: &ParameterTable,
    cfg: &OracleConfig,
) -> Result<AnalysisReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Analysis)?;
    let manifest = read_manifest(tree_dir)?;
    let known: BTreeMap<usize, Option<usize>> = manifest.nodes.iter().map(|n| (n.id, n.parent)).collect();
    let mut warnings = Vec::new();
    let mut ids = Vec::new();
    for (id, path) in trace_files(traces_dir)? {
        if known.contains_key(&id) {
            ids.push(id);
        } else {
            let w = format!("{}: no node {id} in the tree; skipped", path.display());
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    if ids.is_empty() {
        warnings.push("no traces to analyze".into());
    }

    let feature_cfg = FeatureConfig::from_params(params);
    let analyzed: Vec<(NodeAnalysis, crate::assembly::StructuralFeatures)> = ids
        .par_iter()
        .map(|&id| {
            let doc = ScenarioDocument::read(&tree_dir.join(node_file(id)))?;
            let oracle = |source| PipelineError::Oracle { node: id, source };
            let geometry = SceneGeometry::from_scenario(&doc, network).map_err(oracle)?;
            let trace = read_trace(&traces_dir.join(format!("node_{id}.jsonl"))).map_err(oracle)?;
            let log_path = traces_dir.join(format!("node_{id}.signals.jsonl"));
            let log = if log_path.exists() {
                Some(read_signal_log(&log_path).map_err(oracle)?)
            } else {
                None
            };
            let mut findings = classify_behaviors(&trace, &geometry, log.as_deref(), cfg).map_err(oracle)?;
            for f in &mut findings {
                f.node = Some(id);
            }
            let parent = known[&id];
            let delta = match parent {
                Some(p) => {
                    let pdoc = ScenarioDocument::read(&tree_dir.join(node_file(p)))?;
                    Some(DeltaReport::from(&diff_derivation(&pdoc, &doc)))
                }
                None => None,
            };
            let node = NodeAnalysis {
                id,
                parent,
                categories: findings.iter().map(|f| f.category).collect(),
                findings,
                delta,
            };
            Ok((node, feature_vector(&doc, &feature_cfg)))
        })
        .collect::<Result<_, PipelineError>>()?;

    let pairs: Vec<_> = analyzed.iter().map(|(n, f)| (n.categories.clone(), f.clone())).collect();
    let triggers = if pairs.is_empty() {
        Vec::new()
    } else {
        match lift_association(&pairs, cfg.min_support) {
            Ok(t) => t,
            Err(OracleError::DegenerateDistribution(why)) => {
                let w = format!("no trigger table: degenerate distribution ({why})");
                log::warn!("{w}");
                warnings.push(w);
                Vec::new()
            }
            Err(e) => return Err(PipelineError::Analysis(e)),
        }
    };
    Ok(AnalysisReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        report_id: manifest.report_id,
        map_file: manifest.map_file,
        nodes: analyzed.into_iter().map(|(n, _)| n).collect(),
        triggers,
        warnings,
    })
}
