use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named columns indexed by time, plus scalar summaries (fitted exponents,
/// violation scores) and free-form metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub scalars: BTreeMap<String, f64>,
    pub metadata: BTreeMap<String, String>,
}

impl DiagnosticsSeries {
    pub fn new(name: impl Into<String>, times: Vec<f64>) -> Self {
        DiagnosticsSeries {
            name: name.into(),
            times,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.times.len() {
            return Err(Error::Mismatch(format!(
                "column `{name}` has {} rows, series `{}` has {}",
                values.len(),
                self.name,
                self.times.len()
            )));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.push_column(name, values)?;
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    pub fn set_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.insert(name.into(), value);
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("t".to_string())
            .chain(self.columns.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// One row per time; floats use the shortest round-trip representation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for (r, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            row.extend(self.columns.iter().map(|(_, v)| fmt_f64(v[r])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, name: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Format(format!("{}: first column must be `t`", path.display())));
        }
        let mut times = Vec::new();
        let mut cols = vec![Vec::new(); header.len() - 1];
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("{}: bad number `{s}`: {e}", path.display())))
            };
            times.push(parse(&rec[0])?);
            for (c, col) in cols.iter_mut().enumerate() {
                col.push(parse(&rec[c + 1])?);
            }
        }
        let mut s = DiagnosticsSeries::new(name, times);
        for (h, col) in header.into_iter().skip(1).zip(cols) {
            s.push_column(h, col)?;
        }
        Ok(s)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of log y against log x over entries with x, y > 0.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = DiagnosticsSeries::new("x", vec![0.0, 0.1, 0.30000000000000004])
            .with_column("a", vec![1.0 / 3.0, -2.5e-17, 7.0])
            .unwrap();
        let path = dir.path().join("x.csv");
        s.write_csv(&path).unwrap();
        let back = DiagnosticsSeries::read_csv(&path, "x").unwrap();
        assert_eq!(back.times, s.times);
        assert_eq!(back.columns, s.columns);
    }

    #[test]
    fn column_length_is_checked() {
        let mut s = DiagnosticsSeries::new("x", vec![0.0, 1.0]);
        assert!(s.push_column("a", vec![1.0]).is_err());
    }

    #[test]
    fn fits() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 1.5).abs() < 1e-12);
        let (s, c) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
