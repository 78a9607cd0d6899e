use serde::{Deserialize, Serialize};

use super::Hypergraph;
use crate::error::{Error, Result};

/// Per-node duplication statistics over the non-isolated nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceStats {
    /// `D(v)`; `None` for isolated nodes.
    pub duplication: Vec<Option<f64>>,
    /// `w_v = ln D(v)`; `None` for isolated nodes.
    pub log_weight: Vec<Option<f64>>,
    pub w_max: f64,
    pub w_avg: f64,
    pub w_min: f64,
}

/// Total size of the edges containing `v` divided by the number of distinct
/// nodes in their union (`v` included).
pub fn duplication_score(hg: &Hypergraph, v: usize) -> Result<f64> {
    let mut seen = vec![false; hg.node_count()];
    duplication_with_scratch(hg, v, &mut seen)
}

fn duplication_with_scratch(hg: &Hypergraph, v: usize, seen: &mut [bool]) -> Result<f64> {
    let edges = hg.edges_of_node(v);
    if edges.is_empty() {
        return Err(Error::UndefinedDuplication(v));
    }
    let mut total = 0usize;
    let mut touched = Vec::new();
    for &e in edges {
        let members = hg.nodes_of_edge(e);
        total += members.len();
        for &u in members {
            if !seen[u] {
                seen[u] = true;
                touched.push(u);
            }
        }
    }
    let unique = touched.len();
    for u in touched {
        seen[u] = false;
    }
    Ok(total as f64 / unique as f64)
}

pub fn incidence_stats(hg: &Hypergraph) -> Result<IncidenceStats> {
    let mut seen = vec![false; hg.node_count()];
    let duplication = (0..hg.node_count())
        .map(|v| if hg.is_isolated(v) { Ok(None) } else { duplication_with_scratch(hg, v, &mut seen).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    IncidenceStats::from_duplication(duplication)
}

impl IncidenceStats {
    /// Summarizes per-node duplication scores (`None` = isolated).
    pub fn from_duplication(duplication: Vec<Option<f64>>) -> Result<Self> {
        let log_weight: Vec<Option<f64>> = duplication.iter().map(|d| d.map(f64::ln)).collect();
        let present: Vec<f64> = log_weight.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Invalid("every node is isolated".into()));
        }
        let w_max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w_min = present.iter().copied().fold(f64::INFINITY, f64::min);
        let w_avg = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self { duplication, log_weight, w_max, w_avg, w_min })
    }
}
