//! CSV formats shared by the pipeline stages.
//!
//! Every table starts with a `patient_id` column. Binary matrices hold 0/1
//! cells, baseline tables hold numbers with empty cells for missing values,
//! and label files are exactly `patient_id,label`.

use std::path::Path;

use crate::error::{Error, Result};

pub const ID_COLUMN: &str = "patient_id";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<(String, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl BinaryMatrix {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|(id, _)| id.clone()).collect()
    }
}

impl BaselineTable {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Compares two column lists and reports the difference as a schema error.
pub fn check_columns(file: &str, expected: &[String], actual: &[String]) -> Result<()> {
    if expected == actual {
        return Ok(());
    }
    let missing: Vec<String> = expected.iter().filter(|c| !actual.contains(c)).cloned().collect();
    let unexpected: Vec<String> = actual.iter().filter(|c| !expected.contains(c)).cloned().collect();
    let (missing, unexpected) = if missing.is_empty() && unexpected.is_empty() {
        (vec!["<column order differs>".to_string()], Vec::new())
    } else {
        (missing, unexpected)
    };
    Err(Error::Schema { file: file.to_string(), missing, unexpected })
}

/// Checks that two tables list the same patients in the same order.
pub fn check_same_patients(file: &str, expected: &[String], actual: &[String]) -> Result<()> {
    if expected == actual {
        return Ok(());
    }
    let missing: Vec<String> = expected.iter().filter(|c| !actual.contains(c)).cloned().collect();
    let unexpected: Vec<String> = actual.iter().filter(|c| !expected.contains(c)).cloned().collect();
    Err(Error::Schema {
        file: format!("{file} (patient rows)"),
        missing: if missing.is_empty() && unexpected.is_empty() { vec!["<row order differs>".into()] } else { missing },
        unexpected,
    })
}

fn open(path: &Path) -> Result<(csv::Reader<std::fs::File>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.first().map(String::as_str) != Some(ID_COLUMN) {
        return Err(Error::Schema {
            file: path.display().to_string(),
            missing: vec![ID_COLUMN.to_string()],
            unexpected: headers.first().cloned().into_iter().collect(),
        });
    }
    Ok((reader, headers))
}

pub fn read_binary_matrix(path: &Path) -> Result<BinaryMatrix> {
    let (mut reader, headers) = open(path)?;
    let feature_names = headers[1..].to_vec();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|cell| match cell.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Invalid(format!("{}: patient {id}: non-binary cell {other:?}", path.display()))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push((id, values));
    }
    Ok(BinaryMatrix { feature_names, rows })
}

pub fn write_binary_matrix(path: &Path, matrix: &BinaryMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once(ID_COLUMN).chain(matrix.feature_names.iter().map(String::as_str)))?;
    for (id, row) in &matrix.rows {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(id.clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_baseline(path: &Path) -> Result<BaselineTable> {
    let (mut reader, headers) = open(path)?;
    let feature_names = headers[1..].to_vec();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Invalid(format!("{}: patient {id}: bad number {cell:?}", path.display())))?;
                if v.is_finite() {
                    Ok(Some(v))
                } else {
                    Err(Error::Invalid(format!("{}: patient {id}: non-finite value", path.display())))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    Ok(BaselineTable { feature_names, rows })
}

pub fn write_baseline(path: &Path, table: &BaselineTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once(ID_COLUMN).chain(table.feature_names.iter().map(String::as_str)))?;
    for (id, row) in &table.rows {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(id.clone());
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, u8)>> {
    let (mut reader, headers) = open(path)?;
    check_columns(&path.display().to_string(), &[ID_COLUMN.to_string(), "label".to_string()], &headers)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let label = match record.get(1).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(Error::Invalid(format!("{}: patient {id}: label {other:?}", path.display()))),
        };
        out.push((id, label));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[(String, u8)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([ID_COLUMN, "label"])?;
    for (id, y) in labels {
        w.write_record([id.as_str(), &y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_matrix_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = BinaryMatrix {
            feature_names: vec!["a".into(), "b".into()],
            rows: vec![("p1".into(), vec![1, 0]), ("p2".into(), vec![0, 1])],
        };
        write_binary_matrix(&path, &m).unwrap();
        assert_eq!(read_binary_matrix(&path).unwrap(), m);
        std::fs::write(&path, "patient_id,a\np1,2\n").unwrap();
        assert!(read_binary_matrix(&path).is_err());
        std::fs::write(&path, "id,a\np1,1\n").unwrap();
        assert!(matches!(read_binary_matrix(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn baseline_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        std::fs::write(&path, "patient_id,x,y\np1,1.5,\np2,,3\n").unwrap();
        let t = read_baseline(&path).unwrap();
        assert_eq!(t.rows[0].1, vec![Some(1.5), None]);
        assert_eq!(t.rows[1].1, vec![None, Some(3.0)]);
        write_baseline(&path, &t).unwrap();
        assert_eq!(read_baseline(&path).unwrap(), t);
    }

    #[test]
    fn label_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "patient_id,outcome\np1,1\n").unwrap();
        match read_labels(&path) {
            Err(Error::Schema { missing, unexpected, .. }) => {
                assert_eq!(missing, vec!["label".to_string()]);
                assert_eq!(unexpected, vec!["outcome".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
