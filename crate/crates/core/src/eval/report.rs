//! Result grids and their text rendering.

use serde::{Deserialize, Serialize};

use super::cv::Aggregate;
use super::metrics::Metrics;

/// One method × classifier cell of a comparison grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub method: String,
    pub classifier: String,
    pub aggregate: Aggregate,
}

/// Left-aligned labels and `mean±sd` cells with three decimals.
pub fn render_table(rows: &[GridRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![["Method", "Model"].iter().chain(Metrics::NAMES.iter()).map(|s| s.to_string()).collect()];
    for r in rows {
        let mut line = vec![r.method.clone(), r.classifier.clone()];
        let (m, s) = (r.aggregate.mean.values(), r.aggregate.sd.values());
        line.extend((0..4).map(|k| format!("{:.3}±{:.3}", m[k], s[k])));
        cells.push(line);
    }
    let widths: Vec<usize> = (0..6).map(|c| cells.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, line) in cells.iter().enumerate() {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out
}
