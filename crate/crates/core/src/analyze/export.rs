use std::fs;
use std::path::Path;

use serde::Serialize;

use super::shared_component_labels;
use crate::error::{Error, Result};
use crate::explain::Explanation;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub id: String,
    pub target_label: String,
    pub score: f64,
    /// In component order.
    pub coefficients: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessRow {
    pub id: String,
    pub score: f64,
    pub surrogate_score: f64,
    pub faithfulness_r: f64,
}

/// One row per explanation: id, target label, black-box score, then one
/// column per component coefficient in component order. A JSON mirror is
/// written beside the CSV.
pub fn export_coefficients(explanations: &[(String, Explanation)], path: &Path) -> Result<()> {
    let labels = shared_component_labels(explanations.iter().map(|(_, e)| e))?;
    let mut header = vec!["id".to_string(), "target_label".into(), "score".into()];
    header.extend(labels.iter().cloned());
    let rows: Vec<CoefficientRow> = explanations
        .iter()
        .map(|(id, e)| CoefficientRow {
            id: id.clone(),
            target_label: e.target_label.clone(),
            score: e.instance_score,
            coefficients: labels.iter().cloned().zip(e.coefficients.iter().copied()).collect(),
        })
        .collect();
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for r in &rows {
        let mut record = vec![r.id.clone(), r.target_label.clone(), r.score.to_string()];
        record.extend(r.coefficients.iter().map(|(_, c)| c.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    write_mirror(path, &rows)
}

/// One row per explanation: id, black-box score, surrogate score at the
/// all-ones mask and the weighted faithfulness correlation.
pub fn export_faithfulness(explanations: &[(String, Explanation)], path: &Path) -> Result<()> {
    let rows: Vec<FaithfulnessRow> = explanations
        .iter()
        .map(|(id, e)| FaithfulnessRow {
            id: id.clone(),
            score: e.instance_score,
            surrogate_score: e.intercept + e.coefficients.iter().sum::<f64>(),
            faithfulness_r: e.faithfulness_r,
        })
        .collect();
    let mut w = writer(path)?;
    w.write_record(["id", "score", "surrogate_score", "faithfulness_r"])?;
    for r in &rows {
        w.write_record([
            r.id.clone(),
            r.score.to_string(),
            r.surrogate_score.to_string(),
            r.faithfulness_r.to_string(),
        ])?;
    }
    w.flush()?;
    write_mirror(path, &rows)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(file))
}

fn write_mirror<T: Serialize>(csv_path: &Path, rows: &[T]) -> Result<()> {
    let path = csv_path.with_extension("json");
    fs::write(&path, serde_json::to_string_pretty(rows)?).map_err(|source| Error::Unwritable {
        path,
        source,
    })
}
