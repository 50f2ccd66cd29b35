use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{roles, RunRecord};

/// Smallest |delta| that counts as a change (0.1 percentage point).
pub const CHANGE_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    Increase,
    Decrease,
    NoChange,
    Missing,
}

impl Change {
    pub fn classify(delta: f64) -> Self {
        // deltas are differences of count ratios; absorb representation error at the boundary
        if delta.abs() + 1e-12 < CHANGE_THRESHOLD {
            Change::NoChange
        } else if delta > 0.0 {
            Change::Increase
        } else {
            Change::Decrease
        }
    }

    fn arrow(self) -> &'static str {
        match self {
            Change::Increase => "↑",
            Change::Decrease => "↓",
            Change::NoChange => "=",
            Change::Missing => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub source: String,
    pub target: String,
    pub run_ids: Vec<String>,
    /// Mean final accuracy over replicates.
    pub acc: Option<f64>,
    /// Original model accuracy on the diagonal, the row's selffer elsewhere.
    pub reference_acc: Option<f64>,
    pub delta: Option<f64>,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub tag: String,
    /// Targets, by descending training-set size.
    pub rows: Vec<String>,
    /// Sources, same order as `rows`.
    pub cols: Vec<String>,
    pub train_sizes: BTreeMap<String, usize>,
    pub cells: Vec<Vec<MatrixCell>>,
}

fn mean_by<'a>(records: impl Iterator<Item = &'a RunRecord>) -> BTreeMap<(String, String), (f64, Vec<String>)> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let source = r
            .plan_summary
            .as_ref()
            .map(|p| p.source.dataset.clone())
            .unwrap_or_else(|| r.dataset.clone());
        groups.entry((source, r.dataset.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let mean = rs.iter().map(|r| r.final_acc).sum::<f64>() / rs.len() as f64;
            (k, (mean, rs.iter().map(|r| r.run_id.clone()).collect()))
        })
        .collect()
}

/// Builds the cross-dataset transfer table for `tag` from completed records.
/// With `allow_partial`, absent cells are marked missing instead of failing.
pub fn matrix_table(records: &[RunRecord], tag: &str, allow_partial: bool) -> Result<MatrixTable> {
    let tagged: Vec<&RunRecord> = records.iter().filter(|r| r.tag == tag && r.is_completed()).collect();
    if tagged.is_empty() {
        return Err(Error::NoRecords(tag.to_string()));
    }
    let of_role = |role: &'static str| tagged.iter().copied().filter(move |r| r.role == role);
    let base = mean_by(of_role(roles::BASE));
    let selffer = mean_by(of_role(roles::SELFFER));
    let transfer = mean_by(of_role(roles::TRANSFER));

    let mut train_sizes = BTreeMap::new();
    for r in &tagged {
        let e = train_sizes.entry(r.dataset.clone()).or_insert(0);
        *e = (*e).max(r.train_size);
    }
    let mut rows: Vec<String> = train_sizes.keys().cloned().collect();
    rows.sort_by(|a, b| train_sizes[b].cmp(&train_sizes[a]).then(a.cmp(b)));
    let cols = rows.clone();

    let mut missing = Vec::new();
    let mut cells = Vec::new();
    for target in &rows {
        let own = |m: &BTreeMap<(String, String), (f64, Vec<String>)>| m.get(&(target.clone(), target.clone())).cloned();
        let row_selffer = own(&selffer);
        let row_base = own(&base);
        let mut row = Vec::new();
        for source in &cols {
            let (entry, reference) = if source == target {
                (row_selffer.clone(), row_base.as_ref().map(|b| b.0))
            } else {
                (
                    transfer.get(&(source.clone(), target.clone())).cloned(),
                    row_selffer.as_ref().map(|s| s.0),
                )
            };
            let (acc, run_ids) = match entry {
                Some((a, ids)) => (Some(a), ids),
                None => (None, Vec::new()),
            };
            let delta = acc.zip(reference).map(|(a, r)| a - r);
            let change = delta.map(Change::classify).unwrap_or(Change::Missing);
            if change == Change::Missing {
                missing.push((source.clone(), target.clone()));
            }
            row.push(MatrixCell {
                source: source.clone(),
                target: target.clone(),
                run_ids,
                acc,
                reference_acc: reference,
                delta,
                change,
            });
        }
        cells.push(row);
    }
    if !missing.is_empty() && !allow_partial {
        return Err(Error::IncompleteMatrix(missing));
    }
    Ok(MatrixTable {
        tag: tag.to_string(),
        rows,
        cols,
        train_sizes,
        cells,
    })
}

impl MatrixTable {
    /// Plain-text rendering: rows are targets, columns sources; each cell is
    /// accuracy in percent and the signed delta against its reference.
    pub fn render_text(&self) -> String {
        let width = 22;
        let mut out = String::new();
        let _ = writeln!(out, "{} (rows: target, columns: source)", self.tag);
        let _ = write!(out, "{:<20}", "");
        for c in &self.cols {
            let _ = write!(out, "{c:>width$}");
        }
        out.push('\n');
        for (target, row) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "{target:<20}");
            for cell in row {
                let text = match (cell.acc, cell.delta) {
                    (Some(a), Some(d)) => format!("{:.1} ({:+.1}{})", a * 100.0, d * 100.0, cell.change.arrow()),
                    _ => "missing".to_string(),
                };
                let _ = write!(out, "{text:>width$}");
            }
            out.push('\n');
        }
        out.push_str("diagonal: selffer vs original; off-diagonal: vs the row's selffer\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold() {
        assert_eq!(Change::classify(0.0005), Change::NoChange);
        assert_eq!(Change::classify(-0.0009), Change::NoChange);
        assert_eq!(Change::classify(0.001), Change::Increase);
        assert_eq!(Change::classify(0.871 - 0.870), Change::Increase);
        assert_eq!(Change::classify(-0.02), Change::Decrease);
    }
}
