use rand::Rng;

use crate::hypergraph::Hypergraph;

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

/// Each node joins each edge with probability `density`; empty edges get
/// the first non-isolated node.
pub fn random_hypergraph(rng: &mut impl Rng, n: usize, m: usize, density: f64, isolated: &[usize]) -> Hypergraph {
    let edges = (0..m)
        .map(|e| {
            let mut members: Vec<usize> =
                (0..n).filter(|v| !isolated.contains(v) && rng.random_bool(density)).collect();
            if members.is_empty() {
                members.push((0..n).find(|v| !isolated.contains(v)).unwrap());
            }
            (format!("p{e}"), members)
        })
        .collect();
    Hypergraph::from_edge_lists(labels(n), edges).unwrap()
}
