use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension the chart and its kernels support.
pub const MAX_DIM: usize = 4;

/// Minimum points per axis; the one-sided second-derivative stencil is 4 wide
/// and leaves room for an interior on each side.
pub const MIN_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Torus,
    AfBox,
}

/// User-facing chart parameters. Length-1 vectors broadcast to every axis;
/// exactly one of `spacing` / `extent` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub dim: usize,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<Vec<bool>>,
}

impl ChartSpec {
    /// Periodic cube `[origin, origin + side)^dim` with `points` samples per axis.
    pub fn torus(dim: usize, points: usize, side: f64) -> Self {
        ChartSpec {
            kind: ChartKind::Torus,
            dim,
            shape: vec![points],
            spacing: None,
            extent: Some(vec![side]),
            origin: None,
            periodic: None,
        }
    }

    /// Box `[-half_width, half_width)^dim` sampled at `points` per axis.
    pub fn af_box(dim: usize, points: usize, half_width: f64) -> Self {
        ChartSpec {
            kind: ChartKind::AfBox,
            dim,
            shape: vec![points],
            spacing: None,
            extent: Some(vec![2.0 * half_width]),
            origin: Some(vec![-half_width]),
            periodic: None,
        }
    }

    pub fn with_origin(mut self, origin: Vec<f64>) -> Self {
        self.origin = Some(origin);
        self
    }
}

fn broadcast<T: Clone>(v: &[T], dim: usize, name: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(Error::InvalidChart(format!(
            "`{name}` has {n} entries for a {dim}-dimensional chart"
        ))),
    }
}

/// A 1D finite-difference stencil: grid indices along one axis and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub idx: [u32; 4],
    pub w: [f64; 4],
    pub len: u8,
}

impl Stencil {
    fn new(entries: &[(usize, f64)]) -> Self {
        let mut s = Stencil {
            idx: [0; 4],
            w: [0.0; 4],
            len: entries.len() as u8,
        };
        for (k, &(i, w)) in entries.iter().enumerate() {
            s.idx[k] = i as u32;
            s.w[k] = w;
        }
        s
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(|k| (self.idx[k] as usize, self.w[k]))
    }
}

/// A validated structured chart. Point `p` has row-major multi-index with the
/// last axis fastest; its coordinates are `origin + index * spacing`.
#[derive(Debug)]
pub struct GridChart {
    kind: ChartKind,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    periodic: Vec<bool>,
    strides: Vec<usize>,
    npoints: usize,
    axis_coords: Vec<Vec<f64>>,
    d1: Vec<Vec<Stencil>>,
    d2: Vec<Vec<Stencil>>,
}

impl PartialEq for GridChart {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.shape == other.shape
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.periodic == other.periodic
    }
}

/// Validate a chart spec and build the chart.
pub fn make_chart(spec: &ChartSpec) -> Result<Arc<GridChart>> {
    GridChart::new(spec).map(Arc::new)
}

impl GridChart {
    pub fn new(spec: &ChartSpec) -> Result<Self> {
        let dim = spec.dim;
        if dim < 3 {
            return Err(Error::InvalidChart(format!("dimension {dim} < 3")));
        }
        if dim > MAX_DIM {
            return Err(Error::UnsupportedDim(dim));
        }
        let shape = broadcast(&spec.shape, dim, "shape")?;
        if let Some(&s) = shape.iter().find(|&&s| s < MIN_POINTS) {
            return Err(Error::InvalidChart(format!(
                "shape entry {s} is below the stencil minimum of {MIN_POINTS} points"
            )));
        }
        let spacing = match (&spec.spacing, &spec.extent) {
            (Some(h), None) => broadcast(h, dim, "spacing")?,
            (None, Some(e)) => {
                let e = broadcast(e, dim, "extent")?;
                e.iter().zip(&shape).map(|(e, &n)| e / n as f64).collect()
            }
            _ => {
                return Err(Error::InvalidChart(
                    "exactly one of `spacing` and `extent` must be given".into(),
                ))
            }
        };
        if let Some(h) = spacing.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidChart(format!("spacing {h} is not strictly positive")));
        }
        let origin = match &spec.origin {
            Some(o) => broadcast(o, dim, "origin")?,
            None => vec![0.0; dim],
        };
        let periodic = match &spec.periodic {
            Some(p) => broadcast(p, dim, "periodic")?,
            None => vec![spec.kind == ChartKind::Torus; dim],
        };
        match spec.kind {
            ChartKind::Torus if periodic.iter().any(|p| !p) => {
                return Err(Error::InvalidChart(
                    "torus charts must be periodic along every axis".into(),
                ))
            }
            ChartKind::AfBox if periodic.iter().any(|p| *p) => {
                return Err(Error::InvalidChart(
                    "AF box charts cannot have periodic axes".into(),
                ))
            }
            _ => {}
        }

        let mut strides = vec![1; dim];
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let npoints = shape.iter().product();
        let axis_coords = (0..dim)
            .map(|a| (0..shape[a]).map(|i| origin[a] + i as f64 * spacing[a]).collect())
            .collect();
        let d1 = (0..dim)
            .map(|a| (0..shape[a]).map(|i| first_stencil(i, shape[a], spacing[a], periodic[a])).collect())
            .collect();
        let d2 = (0..dim)
            .map(|a| (0..shape[a]).map(|i| second_stencil(i, shape[a], spacing[a], periodic[a])).collect())
            .collect();
        Ok(GridChart {
            kind: spec.kind,
            shape,
            spacing,
            origin,
            periodic,
            strides,
            npoints,
            axis_coords,
            d1,
            d2,
        })
    }

    /// The spec this chart was built from (explicit spacing form).
    pub fn spec(&self) -> ChartSpec {
        ChartSpec {
            kind: self.kind,
            dim: self.dim(),
            shape: self.shape.clone(),
            spacing: Some(self.spacing.clone()),
            extent: None,
            origin: Some(self.origin.clone()),
            periodic: Some(self.periodic.clone()),
        }
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.shape.len()
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }
    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    pub fn npoints(&self) -> usize {
        self.npoints
    }
    pub fn is_torus(&self) -> bool {
        self.kind == ChartKind::Torus
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
    /// Side length `shape * spacing` of axis `a`.
    pub fn extent(&self, a: usize) -> f64 {
        self.shape[a] as f64 * self.spacing[a]
    }
    /// Half of the smallest side length.
    pub fn half_width(&self) -> f64 {
        (0..self.dim()).map(|a| self.extent(a)).fold(f64::INFINITY, f64::min) / 2.0
    }
    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.origin[a] + self.extent(a) / 2.0).collect()
    }
    /// Largest chart distance between two points of the domain.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|a| {
                let l = if self.periodic[a] {
                    self.extent(a) / 2.0
                } else {
                    (self.shape[a] - 1) as f64 * self.spacing[a]
                };
                l * l
            })
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn multi_index(&self, p: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rem = p;
        for a in (0..self.dim()).rev() {
            idx[a] = rem % self.shape[a];
            rem /= self.shape[a];
        }
        idx
    }

    #[inline]
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    pub fn axis_coord(&self, a: usize, i: usize) -> f64 {
        self.axis_coords[a][i]
    }

    #[inline]
    pub fn coords(&self, p: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(p);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            x[a] = self.axis_coords[a][idx[a]];
        }
        x
    }

    pub fn coords_vec(&self, p: usize) -> Vec<f64> {
        self.coords(p)[..self.dim()].to_vec()
    }

    #[inline]
    pub fn first_stencil(&self, a: usize, i: usize) -> &Stencil {
        &self.d1[a][i]
    }

    #[inline]
    pub fn second_stencil(&self, a: usize, i: usize) -> &Stencil {
        &self.d2[a][i]
    }

    /// `to - from`, taking the minimal image along periodic axes.
    #[inline]
    pub fn displacement(&self, from: &[f64], to: &[f64]) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            let mut v = to[a] - from[a];
            if self.periodic[a] {
                let l = self.extent(a);
                v -= l * (v / l).round();
            }
            d[a] = v;
        }
        d
    }

    #[inline]
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.displacement(x, y);
        d[..self.dim()].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Whether `x` lies in the sampled domain (always true along periodic axes).
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| {
            self.periodic[a] || {
                let s = (x[a] - self.origin[a]) / self.spacing[a];
                s >= -1e-9 && s <= (self.shape[a] - 1) as f64 + 1e-9
            }
        })
    }
}

fn first_stencil(i: usize, n: usize, h: f64, periodic: bool) -> Stencil {
    let c = 1.0 / (2.0 * h);
    if periodic {
        Stencil::new(&[((i + n - 1) % n, -c), ((i + 1) % n, c)])
    } else if i == 0 {
        Stencil::new(&[(0, -3.0 * c), (1, 4.0 * c), (2, -c)])
    } else if i == n - 1 {
        Stencil::new(&[(n - 1, 3.0 * c), (n - 2, -4.0 * c), (n - 3, c)])
    } else {
        Stencil::new(&[(i - 1, -c), (i + 1, c)])
    }
}

fn second_stencil(i: usize, n: usize, h: f64, periodic: bool) -> Stencil {
    let c = 1.0 / (h * h);
    if periodic {
        Stencil::new(&[((i + n - 1) % n, c), (i, -2.0 * c), ((i + 1) % n, c)])
    } else if i == 0 {
        Stencil::new(&[(0, 2.0 * c), (1, -5.0 * c), (2, 4.0 * c), (3, -c)])
    } else if i == n - 1 {
        Stencil::new(&[(n - 1, 2.0 * c), (n - 2, -5.0 * c), (n - 3, 4.0 * c), (n - 4, -c)])
    } else {
        Stencil::new(&[(i - 1, c), (i, -2.0 * c), (i + 1, c)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn torus_covers_periodic_box() {
        let c = make_chart(&ChartSpec::torus(3, 32, 2.0 * PI)).unwrap();
        assert_eq!(c.npoints(), 32 * 32 * 32);
        assert!((c.spacing()[0] - 2.0 * PI / 32.0).abs() < 1e-15);
        assert!(c.periodic().iter().all(|p| *p));
        assert_eq!(c.coords(0)[..3], [0.0, 0.0, 0.0]);
        assert!((c.extent(2) - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn af_box_is_centered() {
        let spec = ChartSpec {
            kind: ChartKind::AfBox,
            dim: 3,
            shape: vec![64],
            spacing: Some(vec![0.5]),
            extent: None,
            origin: Some(vec![-16.0]),
            periodic: None,
        };
        let c = make_chart(&spec).unwrap();
        assert_eq!(c.coords(0)[..3], [-16.0, -16.0, -16.0]);
        assert_eq!(c.coords(c.npoints() - 1)[..3], [15.5, 15.5, 15.5]);
        assert_eq!(c.half_width(), 16.0);
        assert!(c.periodic().iter().all(|p| !p));
        assert!(c.contains(&[15.5, -16.0, 0.0]));
        assert!(!c.contains(&[15.6, 0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            make_chart(&ChartSpec::torus(3, 4, 1.0)),
            Err(Error::InvalidChart(_))
        ));
        let mut s = ChartSpec::torus(3, 16, 1.0);
        s.extent = None;
        s.spacing = Some(vec![0.0]);
        assert!(make_chart(&s).is_err());
        let mut s = ChartSpec::torus(3, 16, 1.0);
        s.periodic = Some(vec![true, false, true]);
        assert!(make_chart(&s).is_err());
        let mut s = ChartSpec::af_box(3, 16, 1.0);
        s.periodic = Some(vec![true]);
        assert!(make_chart(&s).is_err());
        assert!(matches!(
            make_chart(&ChartSpec::torus(5, 8, 1.0)),
            Err(Error::UnsupportedDim(5))
        ));
        assert!(make_chart(&ChartSpec::torus(2, 8, 1.0)).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let c = make_chart(&ChartSpec::torus(3, 8, 1.0)).unwrap();
        for p in [0, 1, 7, 8, 63, 64, 511] {
            let idx = c.multi_index(p);
            assert_eq!(c.linear_index(&idx[..3]), p);
        }
    }

    #[test]
    fn minimal_image_distance() {
        let c = make_chart(&ChartSpec::torus(3, 16, 1.0)).unwrap();
        let d = c.distance(&[0.05, 0.5, 0.5], &[0.95, 0.5, 0.5]);
        assert!((d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn boundary_stencils_are_exact_on_quadratics() {
        // One-sided second-order stencils reproduce derivatives of quadratics exactly.
        let h = 0.25;
        let n = 10;
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 1.0;
        for i in [0, 1, n - 2, n - 1] {
            let x = i as f64 * h;
            let s1 = first_stencil(i, n, h, false);
            let d1: f64 = s1.entries().map(|(j, w)| w * f(j as f64 * h)).sum();
            assert!((d1 - (6.0 * x - 2.0)).abs() < 1e-11, "d1 at {i}");
            let s2 = second_stencil(i, n, h, false);
            let d2: f64 = s2.entries().map(|(j, w)| w * f(j as f64 * h)).sum();
            assert!((d2 - 6.0).abs() < 1e-10, "d2 at {i}");
        }
    }
}
