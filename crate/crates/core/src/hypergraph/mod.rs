//! Sparse hypergraphs built from binary patient × feature matrices.
//!
//! Nodes are features and every patient contributes one hyperedge holding
//! the features recorded as 1. Ids are dense, 0-based and assigned in input
//! order; labels are carried alongside.

use std::io::Write;

use crate::error::{Error, Result};
use crate::io::BinaryMatrix;

mod stats;

pub use stats::{duplication_score, incidence_stats, IncidenceStats};

/// What to do with a patient row that has no feature set to 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyRowPolicy {
    #[default]
    Reject,
    /// Skip the patient; the caller records it in its run manifest.
    Drop,
}

/// Immutable bidirectional incidence structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    node_labels: Vec<String>,
    edge_labels: Vec<String>,
    edges_of_node: Vec<Vec<usize>>,
    nodes_of_edge: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Builds one hyperedge per row. Returns the graph and the ids of dropped
    /// rows (always empty under [`EmptyRowPolicy::Reject`]).
    pub fn from_binary_matrix(matrix: &BinaryMatrix, policy: EmptyRowPolicy) -> Result<(Self, Vec<String>)> {
        let width = matrix.feature_names.len();
        let mut edges = Vec::with_capacity(matrix.rows.len());
        let mut empty = Vec::new();
        for (id, row) in &matrix.rows {
            if row.len() != width {
                return Err(Error::Invalid(format!("row {id} has {} entries, vocabulary has {width}", row.len())));
            }
            let members: Vec<usize> = row
                .iter()
                .enumerate()
                .filter_map(|(j, &x)| match x {
                    0 => None,
                    1 => Some(Ok(j)),
                    other => Some(Err(Error::Invalid(format!("row {id}: non-binary entry {other}")))),
                })
                .collect::<Result<_>>()?;
            if members.is_empty() {
                empty.push(id.clone());
            } else {
                edges.push((id.clone(), members));
            }
        }
        if !empty.is_empty() && policy == EmptyRowPolicy::Reject {
            return Err(Error::EmptyRows(empty));
        }
        Ok((Self::from_edge_lists(matrix.feature_names.clone(), edges)?, empty))
    }

    /// Builds from explicit member lists. Members are sorted and deduplicated;
    /// empty edges are rejected.
    pub fn from_edge_lists(node_labels: Vec<String>, edges: Vec<(String, Vec<usize>)>) -> Result<Self> {
        let n = node_labels.len();
        let mut edges_of_node = vec![Vec::new(); n];
        let mut edge_labels = Vec::with_capacity(edges.len());
        let mut nodes_of_edge = Vec::with_capacity(edges.len());
        for (e, (label, mut members)) in edges.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::EmptyRows(vec![label]));
            }
            if let Some(&bad) = members.iter().find(|&&v| v >= n) {
                return Err(Error::Invalid(format!("edge {label}: node {bad} out of range ({n} nodes)")));
            }
            for &v in &members {
                edges_of_node[v].push(e);
            }
            edge_labels.push(label);
            nodes_of_edge.push(members);
        }
        Ok(Self { node_labels, edge_labels, edges_of_node, nodes_of_edge })
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_labels.len()
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn edge_labels(&self) -> &[String] {
        &self.edge_labels
    }

    /// Sorted member nodes of edge `e`.
    pub fn nodes_of_edge(&self, e: usize) -> &[usize] {
        &self.nodes_of_edge[e]
    }

    /// Sorted incident edges of node `v`.
    pub fn edges_of_node(&self, v: usize) -> &[usize] {
        &self.edges_of_node[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges_of_node[v].len()
    }

    pub fn is_isolated(&self, v: usize) -> bool {
        self.edges_of_node[v].is_empty()
    }

    /// Number of nonzero incidences.
    pub fn incidence_count(&self) -> usize {
        self.nodes_of_edge.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, v: usize, e: usize) -> bool {
        self.nodes_of_edge[e].binary_search(&v).is_ok()
    }

    pub fn edge_index(&self, label: &str) -> Option<usize> {
        self.edge_labels.iter().position(|l| l == label)
    }

    /// Re-emits the binary matrix, one row per edge.
    pub fn to_binary_matrix(&self) -> BinaryMatrix {
        let rows = self
            .edge_labels
            .iter()
            .zip(&self.nodes_of_edge)
            .map(|(label, members)| {
                let mut row = vec![0u8; self.node_count()];
                members.iter().for_each(|&v| row[v] = 1);
                (label.clone(), row)
            })
            .collect();
        BinaryMatrix { feature_names: self.node_labels.clone(), rows }
    }

    /// Sub-hypergraph on the listed edges (in that order); all nodes are
    /// kept so node ids stay valid.
    pub fn select_edges(&self, edges: &[usize]) -> Self {
        let lists = edges.iter().map(|&e| (self.edge_labels[e].clone(), self.nodes_of_edge[e].clone())).collect();
        Self::from_edge_lists(self.node_labels.clone(), lists).expect("edges of a valid hypergraph")
    }

    /// Writes the incidence as `edge_id,node_id` lines.
    pub fn write_incidence_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "edge_id,node_id")?;
        for (e, members) in self.nodes_of_edge.iter().enumerate() {
            for v in members {
                writeln!(w, "{e},{v}")?;
            }
        }
        Ok(())
    }
}
