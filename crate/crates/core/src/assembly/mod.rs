//! Scenario assembly: derivation trees grown from block variants, structural
//! features, pruning and parent/child comparison.

mod features;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{compose, insert_block, BlockError, BlockKind, ScenarioBlock};
use crate::mutation::{block_provenance, derive_seed, disassemble, AttributeChange, BlockVariant};
use crate::params::Operator;
use crate::scenario_gen::{write_atomic, ScenarioDocument, ScenarioError, ScenarioTemplate};
use crate::schema_model::builtin_schema;

pub use features::{bin_index, feature_vector, FeatureConfig, StructuralFeatures};

/// Upper bound on tree size accepted by `grow_tree`.
pub const MAX_NODES: u64 = 250_000;

pub const MANIFEST_FORMAT: &str = "crashscen-tree";

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("block {later} ({later_kind}) comes after {earlier} ({earlier_kind}) in the insertion order")]
    InvalidOrder {
        earlier: String,
        earlier_kind: &'static str,
        later: String,
        later_kind: &'static str,
    },
    #[error("block {0} has no variants")]
    NoVariants(String),
    #[error("tree would have {0} nodes, more than the limit of {MAX_NODES}")]
    TooLarge(u64),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("node {id} is invalid: {finding}")]
    InvalidNode { id: usize, finding: String },
    #[error("retention must be in (0, 1], got {0}")]
    InvalidRetention(f64),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("tree manifest: {0}")]
    Manifest(String),
}

/// Number of non-root nodes of a tree whose i-th block has `counts[i]`
/// variants: the sum over k of the product of the first k counts.
pub fn expected_count(counts: &[usize]) -> u64 {
    let mut total: u64 = 0;
    let mut level: u64 = 1;
    for &c in counts {
        level = level.saturating_mul(c as u64);
        total = total.saturating_add(level);
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub document: ScenarioDocument,
    /// The variant this node added to its parent; `None` for the root.
    pub inserted: Option<BlockVariant>,
    pub pruned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub template: ScenarioTemplate,
    /// Indexed by node id; ids follow breadth-first order with the root at 0.
    pub nodes: Vec<TreeNode>,
    /// Variant count of each inserted block, in insertion order.
    pub variant_counts: Vec<usize>,
    /// Root seed the variants were drawn with, when known.
    pub root_seed: Option<u64>,
}

impl ScenarioTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.children.is_empty() && n.parent.is_some())
    }

    pub fn retained(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| !n.pruned)
    }

    /// Path of node ids from the root to `id`.
    pub fn lineage(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }
}

/// Template plus blocks, with the template's metadata.
pub fn compose_full(template: &ScenarioTemplate, blocks: &[ScenarioBlock]) -> Result<ScenarioDocument, AssemblyError> {
    Ok(ScenarioDocument {
        root: compose(&template.skeleton, blocks)?,
        metadata: template.metadata.clone(),
    })
}

fn check_order(variants: &[(ScenarioBlock, Vec<BlockVariant>)]) -> Result<(), AssemblyError> {
    for w in variants.windows(2) {
        let (a, b) = (&w[0].0, &w[1].0);
        if b.kind < a.kind {
            return Err(AssemblyError::InvalidOrder {
                earlier: a.key(),
                earlier_kind: a.kind.as_str(),
                later: b.key(),
                later_kind: b.kind.as_str(),
            });
        }
    }
    for (b, vs) in variants {
        if vs.is_empty() {
            return Err(AssemblyError::NoVariants(b.key()));
        }
    }
    Ok(())
}

/// Grows the derivation tree: level k holds every node of level k-1 extended
/// by each variant of block k. Levels are built in parallel; ids are assigned
/// in parent order, then variant order.
pub fn grow_tree(template: &ScenarioTemplate, variants: &[(ScenarioBlock, Vec<BlockVariant>)]) -> Result<ScenarioTree, AssemblyError> {
    check_order(variants)?;
    let counts: Vec<usize> = variants.iter().map(|(_, v)| v.len()).collect();
    let total = expected_count(&counts);
    if total > MAX_NODES {
        return Err(AssemblyError::TooLarge(total));
    }
    let schema = builtin_schema();
    let mut nodes = vec![TreeNode {
        id: 0,
        parent: None,
        children: Vec::new(),
        depth: 0,
        document: template.document(),
        inserted: None,
        pruned: false,
    }];
    let mut frontier = vec![0usize];
    for (depth, (_, vs)) in variants.iter().enumerate() {
        let built: Vec<Vec<Result<ScenarioDocument, AssemblyError>>> = frontier
            .par_iter()
            .map(|&pid| {
                let parent = &nodes[pid].document;
                vs.iter()
                    .map(|v| {
                        let mut root = parent.root.clone();
                        insert_block(&mut root, &v.block)?;
                        Ok(ScenarioDocument {
                            root,
                            metadata: parent.metadata.clone(),
                        })
                    })
                    .collect()
            })
            .collect();
        let mut next = Vec::with_capacity(frontier.len() * vs.len());
        for (pid, docs) in frontier.iter().zip(built) {
            for (v, doc) in vs.iter().zip(docs) {
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    parent: Some(*pid),
                    children: Vec::new(),
                    depth: depth + 1,
                    document: doc?,
                    inserted: Some(v.clone()),
                    pruned: false,
                });
                nodes[*pid].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    let invalid = nodes.par_iter().find_map_first(|n| {
        let report = n.document.validate(schema);
        report
            .findings
            .first()
            .map(|f| AssemblyError::InvalidNode {
                id: n.id,
                finding: format!("{}: {}", f.path, f.message),
            })
    });
    if let Some(e) = invalid {
        return Err(e);
    }
    Ok(ScenarioTree {
        template: template.clone(),
        nodes,
        variant_counts: counts,
        root_seed: None,
    })
}

/// Retained ids: items grouped by equal features, and within each group
/// `ceil(retention * size)` chosen by a seeded shuffle.
pub fn cluster_and_retain(items: &[(usize, StructuralFeatures)], retention: f64, seed: u64) -> Result<BTreeSet<usize>, AssemblyError> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(AssemblyError::InvalidRetention(retention));
    }
    let mut clusters: BTreeMap<&StructuralFeatures, Vec<usize>> = BTreeMap::new();
    for (id, f) in items {
        clusters.entry(f).or_default().push(*id);
    }
    let mut keep = BTreeSet::new();
    for (i, (_, mut ids)) in clusters.into_iter().enumerate() {
        ids.sort_unstable();
        let n = ids.len();
        let k = ((retention * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("cluster:{i}")));
        ids.shuffle(&mut rng);
        keep.extend(ids.into_iter().take(k.min(n)));
    }
    Ok(keep)
}

/// Marks redundant leaves as pruned, then every internal node without a
/// retained leaf below it.
pub fn prune(tree: &ScenarioTree, retention: f64, seed: u64, cfg: &FeatureConfig) -> Result<ScenarioTree, AssemblyError> {
    let leaves: Vec<(usize, StructuralFeatures)> = tree
        .leaves()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|n| (n.id, feature_vector(&n.document, cfg)))
        .collect();
    let keep = cluster_and_retain(&leaves, retention, seed)?;
    Ok(apply_retention(tree, &keep))
}

/// Tree with only the leaves in `keep` (and their ancestors) retained.
pub fn apply_retention(tree: &ScenarioTree, keep: &BTreeSet<usize>) -> ScenarioTree {
    let mut out = tree.clone();
    for n in out.nodes.iter_mut() {
        n.pruned = n.parent.is_some();
    }
    for &leaf in keep {
        for id in tree.lineage(leaf) {
            out.nodes[id].pruned = false;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockChange {
    pub key: String,
    pub changes: Vec<AttributeChange>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockDelta {
    None,
    /// The child is the parent plus this block.
    BlockAdded(ScenarioBlock),
    /// Same blocks, some with different attribute values.
    AttributeChanged(Vec<BlockChange>),
    Divergent(String),
}

/// Relation between two documents in terms of their blocks.
pub fn diff_derivation(parent: &ScenarioDocument, child: &ScenarioDocument) -> BlockDelta {
    if parent.root == child.root {
        return BlockDelta::None;
    }
    let (tp, bp) = disassemble(parent);
    let (tc, bc) = disassemble(child);
    if tp.skeleton != tc.skeleton {
        return BlockDelta::Divergent("templates differ".into());
    }
    let index = |bs: &[ScenarioBlock]| -> BTreeMap<String, ScenarioBlock> { bs.iter().map(|b| (b.key(), b.clone())).collect() };
    let (mp, mc) = (index(&bp), index(&bc));
    let added: Vec<&String> = mc.keys().filter(|k| !mp.contains_key(*k)).collect();
    let removed = mp.keys().any(|k| !mc.contains_key(k));
    if !removed && added.len() == 1 && mp.iter().all(|(k, b)| mc[k] == *b) {
        return BlockDelta::BlockAdded(mc[added[0]].clone());
    }
    if !removed && added.is_empty() {
        let changes: Vec<BlockChange> = mp
            .iter()
            .filter(|(k, b)| mc[*k] != **b)
            .map(|(k, b)| BlockChange {
                key: k.clone(),
                changes: block_provenance(b, &mc[k]),
            })
            .collect();
        return BlockDelta::AttributeChanged(changes);
    }
    BlockDelta::Divergent(format!("{} block(s) added, blocks removed: {removed}", added.len()))
}

/// One node in `tree.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub file: String,
    pub pruned: bool,
    #[serde(default)]
    pub inserted: Option<ManifestInsertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInsertion {
    pub block: String,
    pub kind: BlockKind,
    pub operator: Operator,
    pub variant: usize,
    pub provenance: Vec<AttributeChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeManifest {
    pub format: String,
    pub version: u32,
    pub report_id: String,
    pub map_file: String,
    pub variant_counts: Vec<usize>,
    pub expected_count: u64,
    #[serde(default)]
    pub root_seed: Option<u64>,
    #[serde(default)]
    pub tool_version: String,
    pub nodes: Vec<ManifestNode>,
}

pub fn node_file(id: usize) -> String {
    format!("node_{id}.xosc")
}

impl ScenarioTree {
    pub fn manifest(&self) -> TreeManifest {
        TreeManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            report_id: self.template.metadata.report_id.clone(),
            map_file: self.template.metadata.map_file.clone(),
            variant_counts: self.variant_counts.clone(),
            expected_count: expected_count(&self.variant_counts),
            root_seed: self.root_seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            nodes: self
                .nodes
                .iter()
                .map(|n| ManifestNode {
                    id: n.id,
                    parent: n.parent,
                    children: n.children.clone(),
                    depth: n.depth,
                    file: node_file(n.id),
                    pruned: n.pruned,
                    inserted: n.inserted.as_ref().map(|v| ManifestInsertion {
                        block: v.block.key(),
                        kind: v.block.kind,
                        operator: v.operator,
                        variant: v.index,
                        provenance: v.provenance.clone(),
                    }),
                })
                .collect(),
        }
    }
}

/// Writes every node as `node_<id>.xosc` plus `tree.json` into `dir`.
pub fn write_tree(tree: &ScenarioTree, dir: &Path) -> Result<TreeManifest, AssemblyError> {
    std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    tree.nodes
        .par_iter()
        .try_for_each(|n| n.document.serialize(&dir.join(node_file(n.id))))?;
    let manifest = tree.manifest();
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| AssemblyError::Manifest(e.to_string()))?;
    write_atomic(&dir.join("tree.json"), (text + "\n").as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<TreeManifest, AssemblyError> {
    let path = dir.join("tree.json");
    let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let m: TreeManifest = serde_json::from_str(&text).map_err(|e| AssemblyError::Manifest(e.to_string()))?;
    if m.format != MANIFEST_FORMAT {
        return Err(AssemblyError::Manifest(format!("unexpected format '{}'", m.format)));
    }
    Ok(m)
}
