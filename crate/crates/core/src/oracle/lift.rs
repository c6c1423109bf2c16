use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BehaviorCategory, OracleError};
use crate::assembly::StructuralFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerAssociation {
    /// `component=value`.
    pub feature: String,
    pub category: BehaviorCategory,
    pub lift: f64,
    /// Nodes with both the feature and the category.
    pub support: usize,
    pub feature_count: usize,
    pub category_count: usize,
    pub nodes: usize,
}

/// Lift `P(f ∧ c) / (P(f) P(c))` of every feature value and category that
/// co-occur in at least `min_support` nodes, from exact counts. Ranked by lift,
/// then support, descending.
pub fn lift_association(
    nodes: &[(BTreeSet<BehaviorCategory>, StructuralFeatures)],
    min_support: usize,
) -> Result<Vec<TriggerAssociation>, OracleError> {
    let n = nodes.len();
    let flagged = nodes.iter().filter(|(c, _)| !c.is_empty()).count();
    if flagged == 0 {
        return Err(OracleError::DegenerateDistribution("no node has findings".into()));
    }
    if flagged == n {
        return Err(OracleError::DegenerateDistribution("every node has findings".into()));
    }

    let mut feature_count: BTreeMap<String, usize> = BTreeMap::new();
    let mut category_count: BTreeMap<BehaviorCategory, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(String, BehaviorCategory), usize> = BTreeMap::new();
    for (cats, feats) in nodes {
        for c in cats {
            *category_count.entry(*c).or_default() += 1;
        }
        for (k, v) in &feats.components {
            let f = format!("{k}={v}");
            *feature_count.entry(f.clone()).or_default() += 1;
            for c in cats {
                *joint.entry((f.clone(), *c)).or_default() += 1;
            }
        }
    }

    let mut out: Vec<TriggerAssociation> = joint
        .into_iter()
        .filter(|(_, s)| *s >= min_support.max(1))
        .map(|((feature, category), support)| {
            let nf = feature_count[&feature];
            let nc = category_count[&category];
            TriggerAssociation {
                lift: (support * n) as f64 / (nf * nc) as f64,
                feature,
                category,
                support,
                feature_count: nf,
                category_count: nc,
                nodes: n,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.lift
            .total_cmp(&a.lift)
            .then(b.support.cmp(&a.support))
            .then_with(|| a.feature.cmp(&b.feature))
            .then(a.category.cmp(&b.category))
    });
    Ok(out)
}

pub fn write_triggers_csv(path: &Path, rows: &[TriggerAssociation]) -> Result<(), OracleError> {
    let io = |e: csv::Error| OracleError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))
}
