//! Return series from CSV, with optional log-differencing and unit-SD rescaling.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub column: String,
    /// Treat the column as prices and take log differences.
    #[serde(default)]
    pub log_diff: bool,
}

impl ColumnSpec {
    pub fn returns(column: &str) -> Self {
        ColumnSpec { column: column.to_string(), log_diff: false }
    }

    pub fn prices(column: &str) -> Self {
        ColumnSpec { column: column.to_string(), log_diff: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    /// The divisor applied to the raw returns.
    pub scale: f64,
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Divides by `scale`, or by the series' own sample SD when `scale` is `None`.
pub fn rescale(raw: Vec<f64>, scale: Option<f64>) -> Result<Series> {
    if raw.is_empty() {
        return Err(Error::EmptySeries);
    }
    let scale = match scale {
        Some(s) => s,
        None if raw.len() >= 2 => sample_sd(&raw),
        None => 1.0,
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("cannot rescale by {scale}")));
    }
    Ok(Series { values: raw.into_iter().map(|v| v / scale).collect(), scale })
}

/// Raw column values; prices become log differences.
pub fn read_column<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let idx = headers
        .iter()
        .position(|h| h == spec.column)
        .ok_or_else(|| Error::Parse { line: 1, message: format!("column '{}' not found", spec.column) })?;
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = rec.get(idx).ok_or_else(|| Error::Parse { line, message: "missing field".into() })?;
        let v: f64 = field.parse().map_err(|_| Error::Parse { line, message: format!("'{field}' is not a number") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, message: format!("non-finite value '{field}'") });
        }
        if spec.log_diff && v <= 0.0 {
            return Err(Error::Parse { line, message: format!("price must be positive, got {v}") });
        }
        raw.push(v);
    }
    let out: Vec<f64> = if spec.log_diff { raw.windows(2).map(|w| (w[1] / w[0]).ln()).collect() } else { raw };
    if out.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(out)
}

/// Loads and rescales a series. Pass the training scale to reuse it on a test file.
pub fn load_returns(path: &Path, spec: &ColumnSpec, scale: Option<f64>) -> Result<Series> {
    let file = std::fs::File::open(path)?;
    rescale(read_column(file, spec)?, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescaled_sd_is_one() {
        let s = rescale(vec![2.0, 4.0, 6.0], None).unwrap();
        assert!((sample_sd(&s.values) - 1.0).abs() < 1e-12);
        assert_eq!(s.scale, 2.0);
    }

    #[test]
    fn log_differences() {
        let e = std::f64::consts::E;
        let csv = format!("date,price\n1,1\n2,{e}\n3,{}\n", e * e);
        let r = read_column(csv.as_bytes(), &ColumnSpec::prices("price")).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_error_reports_line() {
        let csv = "r\n0.1\n0.2\nabc\n";
        match read_column(csv.as_bytes(), &ColumnSpec::returns("r")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_missing_column() {
        assert_eq!(read_column("r\n".as_bytes(), &ColumnSpec::returns("r")), Err(Error::EmptySeries));
        assert!(matches!(read_column("a\n1\n".as_bytes(), &ColumnSpec::returns("r")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn training_scale_carries_over() {
        let train = rescale(vec![1.0, -1.0, 2.0, -2.0], None).unwrap();
        let test = rescale(vec![3.0, -3.0, 0.5], Some(train.scale)).unwrap();
        assert_eq!(test.scale, train.scale);
        assert!((sample_sd(&test.values) - 1.0).abs() > 0.1);
    }
}
