use std::path::Path;

use super::{DataError, Dataset, Result};
use crate::tensor::Tensor;

/// Comma-separated features with an integer label in the last column. A
/// first line whose first token is not a number is taken as a header.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let line = k + 1;
        let record = record.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && record.get(0).is_some_and(|t| t.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 {
            return Err(DataError::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(DataError::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let n = record.len();
        for field in record.iter().take(n - 1) {
            data.push(field.parse::<f64>().map_err(|_| DataError::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?);
        }
        let label = &record[n - 1];
        labels.push(label.parse::<usize>().map_err(|_| DataError::Parse {
            line,
            message: format!("label must be a non-negative integer, got {label:?}"),
        })?);
    }
    let Some(width) = width else {
        return Err(DataError::Invalid("CSV file holds no samples".into()));
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Tensor::new(vec![labels.len(), width - 1], data).expect("uniform row width");
    Dataset::new(features, labels, num_classes)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text)
}
