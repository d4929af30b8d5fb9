//! Dataset CSV format.
//!
//! Header `y,c,x0,...,x{D-1}`; `y` is -1 or +1, `c` is an integer subgroup id
//! or -1 for unknown, features are decimal floats. No quoting. Floats are
//! written in shortest round-trip form, so save/load is lossless.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Result, UcslError};

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let d = dataset.dim();
    let mut out = String::from("y,c");
    for j in 0..d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..dataset.n() {
        out.push_str(&format!("{},{}", dataset.y[i], dataset.c_true[i]));
        for j in 0..d {
            let v = dataset.x[[i, j]];
            if !v.is_finite() {
                return Err(UcslError::ContractViolation(format!(
                    "non-finite feature at row {i}, column {j}"
                )));
            }
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> UcslError {
    UcslError::Parse { line, msg: msg.into() }
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header 'y,c,x0,...'"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "y" || cols[1] != "c" {
        return Err(parse_err(1, format!("malformed header '{header}', expected 'y,c,x0,...'")));
    }
    let d = cols.len() - 2;
    for (j, col) in cols[2..].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(parse_err(
                1,
                format!("malformed header: column {} is '{col}', expected 'x{j}'", j + 2),
            ));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut c_true = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                line_no,
                format!("row has {} fields, expected {}", fields.len(), d + 2),
            ));
        }
        let yv: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-numeric y value '{}'", fields[0])))?;
        if yv != -1 && yv != 1 {
            return Err(parse_err(line_no, format!("y must be -1 or +1, got {yv}")));
        }
        let cv: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-numeric c value '{}'", fields[1])))?;
        if cv < -1 || cv > i32::MAX as i64 {
            return Err(parse_err(line_no, format!("c must be -1 or a subgroup id, got {cv}")));
        }
        if cv >= 0 && yv != 1 {
            return Err(parse_err(
                line_no,
                format!("control sample carries subgroup label {cv}"),
            ));
        }
        let mut row = Vec::with_capacity(d);
        for (j, field) in fields[2..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(line_no, format!("non-numeric cell '{field}' in column x{j}"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line_no,
                    format!("non-finite cell '{field}' in column x{j}"),
                ));
            }
            row.push(v);
        }
        y.push(yv as i8);
        c_true.push(cv as i32);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(2, "dataset has no rows"));
    }
    let n = rows.len();
    let mut x = Array2::zeros((n, d));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    LabeledDataset::new(x, y, c_true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn roundtrip_is_lossless() {
        let ds = gen_synthetic(&SynthConfig::new(15, 10, 2, 3)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&ds, f.path()).unwrap();
        let loaded = load_dataset(f.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn parses_positive_with_subgroup() {
        let f = write_tmp("y,c,x0\n+1,0,1.5\n");
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.y, vec![1]);
        assert_eq!(ds.c_true, vec![0]);
        assert_eq!(ds.x, array![[1.5]]);
    }

    #[test]
    fn rejects_invalid_y_with_line_number() {
        let f = write_tmp("y,c,x0\n0,0,1.5\n");
        let err = load_dataset(f.path()).unwrap_err();
        match err {
            UcslError::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("y must be -1 or +1"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_malformed_header() {
        let f = write_tmp("a,b,c\n");
        assert!(matches!(load_dataset(f.path()), Err(UcslError::Parse { line: 1, .. })));
    }

    #[test]
    fn rejects_ragged_rows() {
        let f = write_tmp("y,c,x0,x1\n1,0,1.5\n");
        assert!(matches!(load_dataset(f.path()), Err(UcslError::Parse { line: 2, .. })));
    }

    #[test]
    fn rejects_non_numeric_cell() {
        let f = write_tmp("y,c,x0\n1,0,abc\n");
        let err = load_dataset(f.path()).unwrap_err();
        assert!(err.to_string().contains("non-numeric cell"));
    }

    #[test]
    fn rejects_non_finite_cell() {
        let f = write_tmp("y,c,x0\n1,0,NaN\n");
        assert!(load_dataset(f.path()).is_err());
    }
}
