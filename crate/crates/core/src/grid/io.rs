//! Field files: one line of JSON header, a newline, then little-endian f64
//! samples in point-major order with components innermost.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::chart::{ChartKind, ChartSpec, GridChart};
use super::field::{CellMask, Field, Rank};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MASK_KIND: &str = "mask";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub version: u32,
    pub kind: String,
    pub dim: usize,
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub periodic: Vec<bool>,
    pub component_order: Vec<String>,
}

impl FieldHeader {
    fn new(chart: &GridChart, kind: &str, component_order: Vec<String>) -> Self {
        FieldHeader {
            version: FORMAT_VERSION,
            kind: kind.to_string(),
            dim: chart.dim(),
            shape: chart.shape().to_vec(),
            spacing: chart.spacing().to_vec(),
            origin: chart.origin().to_vec(),
            periodic: chart.periodic().to_vec(),
            component_order,
        }
    }

    pub fn chart(&self) -> Result<Arc<GridChart>> {
        let kind = if self.periodic.iter().all(|p| *p) {
            ChartKind::Torus
        } else if self.periodic.iter().all(|p| !p) {
            ChartKind::AfBox
        } else {
            return Err(Error::Format("mixed periodicity in header".into()));
        };
        super::make_chart(&ChartSpec {
            kind,
            dim: self.dim,
            shape: self.shape.clone(),
            spacing: Some(self.spacing.clone()),
            extent: None,
            origin: Some(self.origin.clone()),
            periodic: Some(self.periodic.clone()),
        })
    }
}

fn write_raw(path: &Path, header: &FieldHeader, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let split = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing header line", path.display())))?;
    let header: FieldHeader = serde_json::from_slice(&bytes[..split])?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", header.version)));
    }
    let body = &bytes[split + 1..];
    if body.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: truncated sample data", path.display())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

pub fn read_header(path: &Path) -> Result<FieldHeader> {
    let bytes = fs::read(path)?;
    let split = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing header line", path.display())))?;
    Ok(serde_json::from_slice(&bytes[..split])?)
}

pub fn write_field<K: Rank>(path: &Path, field: &Field<K>) -> Result<()> {
    let header = FieldHeader::new(field.chart(), K::KIND, K::labels(field.dim()));
    write_raw(path, &header, field.data().iter().cloned())
}

/// Read a field; the mask is not part of the file (see [`read_mask`]).
pub fn read_field<K: Rank>(path: &Path) -> Result<Field<K>> {
    let (header, values) = read_raw(path)?;
    if header.kind != K::KIND {
        return Err(Error::Format(format!(
            "{}: expected a {} field, found {}",
            path.display(),
            K::KIND,
            header.kind
        )));
    }
    let chart = header.chart()?;
    if header.component_order != K::labels(chart.dim()) {
        return Err(Error::Format(format!("{}: unexpected component order", path.display())));
    }
    Field::new(chart, values)
}

/// Like [`read_field`] but reusing an existing chart when the header matches it.
pub fn read_field_on<K: Rank>(path: &Path, chart: &Arc<GridChart>) -> Result<Field<K>> {
    let f: Field<K> = read_field(path)?;
    if **f.chart() != **chart {
        return Err(Error::Mismatch(format!("{}: chart differs", path.display())));
    }
    Field::new(chart.clone(), f.into_data())
}

/// Masks are stored as scalar-shaped files of 0.0 / 1.0 with kind `mask`.
pub fn write_mask(path: &Path, chart: &GridChart, mask: &CellMask) -> Result<()> {
    let header = FieldHeader::new(chart, MASK_KIND, vec!["excluded".into()]);
    write_raw(path, &header, mask.flags().iter().map(|e| if *e { 1.0 } else { 0.0 }))
}

pub fn read_mask(path: &Path) -> Result<(Arc<GridChart>, CellMask)> {
    let (header, values) = read_raw(path)?;
    if header.kind != MASK_KIND {
        return Err(Error::Format(format!("{}: not a mask file", path.display())));
    }
    let chart = header.chart()?;
    if values.len() != chart.npoints() {
        return Err(Error::Format(format!("{}: wrong mask length", path.display())));
    }
    Ok((chart, CellMask::from_flags(values.iter().map(|v| *v != 0.0).collect())))
}
