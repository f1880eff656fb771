use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskKind, Targets};
use crate::error::{Error, Result};

/// Which column holds the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum TargetColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

impl TargetColumn {
    pub fn parse(s: &str) -> TargetColumn {
        if s.eq_ignore_ascii_case("last") {
            TargetColumn::Last
        } else if let Ok(i) = s.parse() {
            TargetColumn::Index(i)
        } else {
            TargetColumn::Name(s.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// A first row containing any non-numeric cell is treated as a header.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub target: TargetColumn,
    pub header: HeaderMode,
    pub kind: TaskKind,
    /// Classification only; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            target: TargetColumn::Last,
            header: HeaderMode::Auto,
            kind: TaskKind::Regression,
            num_classes: None,
            delimiter: b',',
        }
    }
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
        row,
        column,
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite { row, column });
    }
    Ok(v)
}

/// Loads a delimited text file into a [`Dataset`], preserving row order.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let first_is_header = match schema.header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => records[0].iter().any(|c| c.trim().parse::<f64>().is_err()),
    };
    let ncols = records[0].len();
    if ncols < 2 {
        return Err(Error::invalid("need at least one feature and one target column"));
    }
    let header: Vec<String> = if first_is_header {
        records[0].iter().map(str::to_string).collect()
    } else {
        (0..ncols).map(|j| format!("c{j}")).collect()
    };
    let target_idx = match &schema.target {
        TargetColumn::Last => ncols - 1,
        TargetColumn::Index(i) if *i < ncols => *i,
        TargetColumn::Index(i) => {
            return Err(Error::invalid(format!(
                "target column {i} out of range for {ncols} columns"
            )))
        }
        TargetColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("no column named {name:?}")))?,
    };

    let body = &records[usize::from(first_is_header)..];
    if body.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = ncols - 1;
    let mut feats = Vec::with_capacity(body.len() * d);
    let mut target = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        let row_no = r + usize::from(first_is_header);
        if rec.len() != ncols {
            return Err(Error::DimensionMismatch {
                expected: ncols,
                got: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell, row_no, j)?;
            if j == target_idx {
                target.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let features = Array2::from_shape_vec((body.len(), d), feats)
        .map_err(|e| Error::invalid(e.to_string()))?;

    let targets = match schema.kind {
        TaskKind::Regression => Targets::Real(target),
        TaskKind::Classification => {
            let mut labels = Vec::with_capacity(target.len());
            for (r, &t) in target.iter().enumerate() {
                if t < 0.0 || t.fract() != 0.0 {
                    return Err(Error::invalid(format!(
                        "row {r}: class label {t} is not a non-negative integer"
                    )));
                }
                labels.push(t as usize);
            }
            let inferred = labels.iter().max().map_or(0, |m| m + 1);
            Targets::Class {
                labels,
                num_classes: schema.num_classes.unwrap_or(inferred.max(2)),
            }
        }
    };

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(name, features, targets)?
        .with_column_names(feature_names, header[target_idx].clone())
}

/// Writes features followed by the target as the last column, with a header.
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    w.write_record(&header)?;
    let target = ds.targets.as_real();
    let mut row = Vec::with_capacity(ds.d() + 1);
    for (i, feats) in ds.features.rows().into_iter().enumerate() {
        row.clear();
        row.extend(feats.iter().map(|v| v.to_string()));
        row.push(match &ds.targets {
            Targets::Class { labels, .. } => labels[i].to_string(),
            Targets::Real(_) => target[i].to_string(),
        });
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_headerless_file_with_last_column_target() {
        let f = tmp_file("1,2\n3,4\n5,6\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.features, array![[1.0], [3.0], [5.0]]);
        assert_eq!(ds.targets, Targets::Real(vec![2.0, 4.0, 6.0]));
    }

    #[test]
    fn non_numeric_data_row_is_an_error() {
        let f = tmp_file("1,2\na,b\n");
        let err = load_csv(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 1, .. }), "{err}");
    }

    #[test]
    fn header_row_is_detected_and_named_target_selected() {
        let f = tmp_file("a,y,b\n1,10,2\n3,30,4\n");
        let schema = CsvSchema {
            target: TargetColumn::Name("y".into()),
            ..CsvSchema::default()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.features, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(ds.targets, Targets::Real(vec![10.0, 30.0]));
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn missing_file_and_empty_file_are_errors() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv", &CsvSchema::default()),
            Err(Error::Io { .. })
        ));
        let f = tmp_file("");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::EmptyDataset)
        ));
        let f = tmp_file("a,b\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn non_finite_cell_is_rejected() {
        let f = tmp_file("1,2\nNaN,3\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::NonFinite { row: 1, column: 0 })
        ));
    }

    #[test]
    fn classification_labels_are_parsed() {
        let f = tmp_file("0.5,0\n1.5,2\n2.5,1\n");
        let schema = CsvSchema {
            kind: TaskKind::Classification,
            ..CsvSchema::default()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(
            ds.targets,
            Targets::Class {
                labels: vec![0, 2, 1],
                num_classes: 3
            }
        );
    }
}
