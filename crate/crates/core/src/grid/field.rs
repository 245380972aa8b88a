use std::fmt;
use std::marker::PhantomData;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::chart::GridChart;
use crate::linalg::{sym_index, sym_pairs};

/// Component layout of a field kind.
pub trait Rank: Clone + Copy + fmt::Debug + Send + Sync + 'static {
    /// Tag written into serialized headers.
    const KIND: &'static str;
    fn width(dim: usize) -> usize;
    /// Component labels in storage order, e.g. `g_01`.
    fn labels(dim: usize) -> Vec<String>;
}

#[derive(Clone, Copy, Debug)]
pub struct Scalar;
#[derive(Clone, Copy, Debug)]
pub struct Vector;
#[derive(Clone, Copy, Debug)]
pub struct SymTensor;
#[derive(Clone, Copy, Debug)]
pub struct Christoffel;

impl Rank for Scalar {
    const KIND: &'static str = "scalar";
    fn width(_dim: usize) -> usize {
        1
    }
    fn labels(_dim: usize) -> Vec<String> {
        vec!["f".into()]
    }
}

impl Rank for Vector {
    const KIND: &'static str = "vector";
    fn width(dim: usize) -> usize {
        dim
    }
    fn labels(dim: usize) -> Vec<String> {
        (0..dim).map(|k| format!("v^{k}")).collect()
    }
}

impl Rank for SymTensor {
    const KIND: &'static str = "sym_tensor";
    fn width(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }
    fn labels(dim: usize) -> Vec<String> {
        sym_pairs(dim).into_iter().map(|(i, j)| format!("g_{i}{j}")).collect()
    }
}

impl Rank for Christoffel {
    const KIND: &'static str = "christoffel";
    fn width(dim: usize) -> usize {
        dim * dim * (dim + 1) / 2
    }
    fn labels(dim: usize) -> Vec<String> {
        let pairs = sym_pairs(dim);
        (0..dim)
            .flat_map(|k| pairs.iter().map(move |(i, j)| format!("G^{k}_{i}{j}")))
            .collect()
    }
}

/// Offset of Γ^k_{ij} inside one point's Christoffel block.
#[inline]
pub fn christoffel_index(k: usize, i: usize, j: usize, dim: usize) -> usize {
    k * (dim * (dim + 1) / 2) + sym_index(i, j, dim)
}

/// Per-point exclusion flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    excluded: Vec<bool>,
}

impl CellMask {
    pub fn empty(npoints: usize) -> Self {
        CellMask {
            excluded: vec![false; npoints],
        }
    }

    pub fn from_flags(excluded: Vec<bool>) -> Self {
        CellMask { excluded }
    }

    pub fn from_fn(chart: &GridChart, f: impl Fn(&[f64]) -> bool + Sync + Send) -> Self {
        let dim = chart.dim();
        CellMask {
            excluded: crate::par::map_points(chart.npoints(), |p| f(&chart.coords(p)[..dim])),
        }
    }

    #[inline]
    pub fn is_excluded(&self, p: usize) -> bool {
        self.excluded[p]
    }
    pub fn flags(&self) -> &[bool] {
        &self.excluded
    }
    pub fn len(&self) -> usize {
        self.excluded.len()
    }
    pub fn is_empty(&self) -> bool {
        self.excluded.is_empty()
    }
    pub fn count(&self) -> usize {
        self.excluded.iter().filter(|e| **e).count()
    }
    pub fn any(&self) -> bool {
        self.excluded.iter().any(|e| *e)
    }

    pub fn union(&self, other: &CellMask) -> CellMask {
        CellMask {
            excluded: self.excluded.iter().zip(&other.excluded).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn contains(&self, other: &CellMask) -> bool {
        self.excluded.iter().zip(&other.excluded).all(|(a, b)| *a || !*b)
    }

    /// Points whose stencil footprint along `axis` touches an excluded point.
    pub fn widen_axis(&self, chart: &GridChart, axis: usize, order: usize) -> CellMask {
        let excluded = crate::par::map_points(chart.npoints(), |p| {
            self.excluded[p] || {
                let idx = chart.multi_index(p);
                let base = p - idx[axis] * chart.strides()[axis];
                let st = if order == 1 {
                    chart.first_stencil(axis, idx[axis])
                } else {
                    chart.second_stencil(axis, idx[axis])
                };
                st.entries().any(|(i, _)| self.excluded[base + i * chart.strides()[axis]])
            }
        });
        CellMask { excluded }
    }

    /// Points whose full second-derivative footprint (including mixed
    /// derivatives) touches an excluded point.
    pub fn widen_jet(&self, chart: &GridChart) -> CellMask {
        let dim = chart.dim();
        let strides = chart.strides();
        let excluded = crate::par::map_points(chart.npoints(), |p| {
            if self.excluded[p] {
                return true;
            }
            let idx = chart.multi_index(p);
            for a in 0..dim {
                let base = p - idx[a] * strides[a];
                if chart
                    .second_stencil(a, idx[a])
                    .entries()
                    .any(|(i, _)| self.excluded[base + i * strides[a]])
                {
                    return true;
                }
                for b in (a + 1)..dim {
                    let base = base - idx[b] * strides[b];
                    for (i, _) in chart.first_stencil(a, idx[a]).entries() {
                        for (j, _) in chart.first_stencil(b, idx[b]).entries() {
                            if self.excluded[base + i * strides[a] + j * strides[b]] {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        });
        CellMask { excluded }
    }
}

/// A field sampled at every chart point, `K::width(dim)` values per point,
/// stored point-major.
#[derive(Clone)]
pub struct Field<K: Rank> {
    chart: Arc<GridChart>,
    data: Vec<f64>,
    mask: Option<Arc<CellMask>>,
    _rank: PhantomData<K>,
}

pub type ScalarField = Field<Scalar>;
pub type VectorField = Field<Vector>;
pub type SymTensorField = Field<SymTensor>;
pub type MetricField = Field<SymTensor>;
pub type ChristoffelField = Field<Christoffel>;

impl<K: Rank> fmt::Debug for Field<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("kind", &K::KIND)
            .field("shape", &self.chart.shape())
            .field("masked", &self.mask.as_ref().map(|m| m.count()))
            .finish()
    }
}

impl<K: Rank> Field<K> {
    pub fn new(chart: Arc<GridChart>, data: Vec<f64>) -> Result<Self> {
        let expected = chart.npoints() * K::width(chart.dim());
        if data.len() != expected {
            return Err(Error::Mismatch(format!(
                "{} field needs {expected} samples, got {}",
                K::KIND,
                data.len()
            )));
        }
        Ok(Field {
            chart,
            data,
            mask: None,
            _rank: PhantomData,
        })
    }

    pub fn zeros(chart: Arc<GridChart>) -> Self {
        let n = chart.npoints() * K::width(chart.dim());
        Field {
            chart,
            data: vec![0.0; n],
            mask: None,
            _rank: PhantomData,
        }
    }

    /// Same value block at every point.
    pub fn constant(chart: Arc<GridChart>, values: &[f64]) -> Result<Self> {
        let w = K::width(chart.dim());
        if values.len() != w {
            return Err(Error::Mismatch(format!(
                "{} needs {w} components, got {}",
                K::KIND,
                values.len()
            )));
        }
        let data = values.iter().cloned().cycle().take(w * chart.npoints()).collect();
        Field::new(chart, data)
    }

    /// Sample `f(x, out)` at every point coordinate.
    pub fn from_fn(chart: Arc<GridChart>, f: impl Fn(&[f64], &mut [f64]) + Sync + Send) -> Self {
        let mut field = Field::zeros(chart);
        let dim = field.chart.dim();
        let w = field.width();
        let chart = field.chart.clone();
        crate::par::fill_points(&mut field.data, w, |p, out| f(&chart.coords(p)[..dim], out));
        field
    }

    pub fn chart(&self) -> &Arc<GridChart> {
        &self.chart
    }
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }
    pub fn width(&self) -> usize {
        K::width(self.chart.dim())
    }
    pub fn npoints(&self) -> usize {
        self.chart.npoints()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[f64] {
        let w = self.width();
        &self.data[p * w..(p + 1) * w]
    }

    pub fn mask(&self) -> Option<&Arc<CellMask>> {
        self.mask.as_ref()
    }

    pub fn with_mask(mut self, mask: Option<Arc<CellMask>>) -> Self {
        self.mask = mask;
        self
    }

    pub fn set_mask(&mut self, mask: Option<Arc<CellMask>>) {
        self.mask = mask;
    }

    #[inline]
    pub fn is_masked(&self, p: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m.is_excluded(p))
    }

    /// Error on any non-finite sample at a non-masked point.
    pub fn check_finite(&self) -> Result<()> {
        let w = self.width();
        for (p, block) in self.data.chunks(w).enumerate() {
            if !self.is_masked(p) && block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { point: p });
            }
        }
        Ok(())
    }

    pub fn same_chart<L: Rank>(&self, other: &Field<L>) -> Result<()> {
        if Arc::ptr_eq(&self.chart, &other.chart) || *self.chart == *other.chart {
            Ok(())
        } else {
            Err(Error::Mismatch("fields live on different charts".into()))
        }
    }

    /// Union of both masks (either may be absent).
    pub fn joint_mask<L: Rank>(&self, other: &Field<L>) -> Option<Arc<CellMask>> {
        match (&self.mask, &other.mask) {
            (None, None) => None,
            (Some(m), None) | (None, Some(m)) => Some(m.clone()),
            (Some(a), Some(b)) if Arc::ptr_eq(a, b) => Some(a.clone()),
            (Some(a), Some(b)) => Some(Arc::new(a.union(b))),
        }
    }

    /// Max over non-masked points and components of |self - other|.
    pub fn sup_diff(&self, other: &Field<K>) -> Result<f64> {
        self.same_chart(other)?;
        let w = self.width();
        let mask = self.joint_mask(other);
        let mut sup: f64 = 0.0;
        for p in 0..self.npoints() {
            if mask.as_ref().is_some_and(|m| m.is_excluded(p)) {
                continue;
            }
            for c in 0..w {
                sup = sup.max((self.data[p * w + c] - other.data[p * w + c]).abs());
            }
        }
        Ok(sup)
    }

    /// Max over non-masked points and components of |self|.
    pub fn sup_abs(&self) -> f64 {
        let w = self.width();
        let mut sup: f64 = 0.0;
        for p in 0..self.npoints() {
            if !self.is_masked(p) {
                for v in &self.data[p * w..(p + 1) * w] {
                    sup = sup.max(v.abs());
                }
            }
        }
        sup
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Lattice translation on a torus: `out(x) = self(x + shift * spacing)`.
    pub fn shifted(&self, shift: &[isize]) -> Self {
        let chart = self.chart.clone();
        let dim = chart.dim();
        let w = self.width();
        let mut out = Field::zeros(chart.clone());
        crate::par::fill_points(&mut out.data, w, |p, block| {
            let mut idx = chart.multi_index(p);
            for a in 0..dim {
                let n = chart.shape()[a] as isize;
                idx[a] = (idx[a] as isize + shift[a]).rem_euclid(n) as usize;
            }
            let q = chart.linear_index(&idx[..dim]);
            block.copy_from_slice(&self.data[q * w..(q + 1) * w]);
        });
        out.mask = self.mask.as_ref().map(|m| {
            let flags = (0..chart.npoints())
                .map(|p| {
                    let mut idx = chart.multi_index(p);
                    for a in 0..dim {
                        let n = chart.shape()[a] as isize;
                        idx[a] = (idx[a] as isize + shift[a]).rem_euclid(n) as usize;
                    }
                    m.is_excluded(chart.linear_index(&idx[..dim]))
                })
                .collect();
            Arc::new(CellMask::from_flags(flags))
        });
        out
    }
}

impl ScalarField {
    #[inline]
    pub fn value(&self, p: usize) -> f64 {
        self.data[p]
    }

    pub fn from_scalar_fn(chart: Arc<GridChart>, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> Self {
        Field::from_fn(chart, |x, out| out[0] = f(x))
    }

    /// (min, max) over non-masked points; `None` when every point is masked.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = (0..self.npoints()).filter(|&p| !self.is_masked(p)).map(|p| self.data[p]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

impl MetricField {
    /// The coordinate identity metric δ.
    pub fn euclidean(chart: Arc<GridChart>) -> Self {
        let dim = chart.dim();
        let block: Vec<f64> = sym_pairs(dim).into_iter().map(|(i, j)| if i == j { 1.0 } else { 0.0 }).collect();
        Field::constant(chart, &block).expect("euclidean block width")
    }

    /// Error at the first non-masked point whose leading principal minors are
    /// not all positive.
    pub fn check_positive_definite(&self) -> Result<()> {
        crate::dispatch_dim!(self.dim(), check_pd::<N>(self))
    }
}

fn check_pd<const N: usize>(g: &MetricField) -> Result<()> {
    for p in 0..g.npoints() {
        if g.is_masked(p) {
            continue;
        }
        let m = crate::linalg::unpack::<N>(g.at(p));
        if crate::linalg::cholesky(&m).is_none() {
            return Err(Error::SingularMetric {
                point: p,
                coords: g.chart().coords_vec(p),
            });
        }
    }
    Ok(())
}

/// Stencil derivative of every component along `axis`; `order` is 1 or 2.
/// The output mask is the input mask widened by the stencil footprint.
pub fn partial_derivative<K: Rank>(f: &Field<K>, axis: usize, order: usize) -> Result<Field<K>> {
    let chart = f.chart().clone();
    if axis >= chart.dim() {
        return Err(Error::Precondition(format!("axis {axis} out of range for dim {}", chart.dim())));
    }
    if order != 1 && order != 2 {
        return Err(Error::Precondition(format!("derivative order {order} is not 1 or 2")));
    }
    let w = f.width();
    let stride = chart.strides()[axis];
    let mut out = Field::<K>::zeros(chart.clone());
    crate::par::fill_points(&mut out.data, w, |p, block| {
        let i = chart.multi_index(p)[axis];
        let base = p - i * stride;
        let st = if order == 1 {
            chart.first_stencil(axis, i)
        } else {
            chart.second_stencil(axis, i)
        };
        for (j, wt) in st.entries() {
            let q = (base + j * stride) * w;
            for c in 0..w {
                block[c] += wt * f.data[q + c];
            }
        }
    });
    out.mask = f.mask().map(|m| Arc::new(m.widen_axis(&chart, axis, order)));
    Ok(out)
}

/// Cell lookup along each axis for multilinear interpolation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub lo: [usize; crate::grid::MAX_DIM],
    pub hi: [usize; crate::grid::MAX_DIM],
    pub frac: [f64; crate::grid::MAX_DIM],
}

pub(crate) fn locate(chart: &GridChart, x: &[f64]) -> Result<Cell> {
    let dim = chart.dim();
    let mut cell = Cell {
        lo: [0; crate::grid::MAX_DIM],
        hi: [0; crate::grid::MAX_DIM],
        frac: [0.0; crate::grid::MAX_DIM],
    };
    for a in 0..dim {
        let n = chart.shape()[a];
        let mut s = (x[a] - chart.origin()[a]) / chart.spacing()[a];
        if !s.is_finite() {
            return Err(Error::OutOfDomain(x[..dim].to_vec()));
        }
        // Snap coordinates that sit on a node up to round-off.
        let r = s.round();
        if (s - r).abs() <= 1e-9 * r.abs().max(1.0) {
            s = r;
        }
        if chart.periodic()[a] {
            s = s.rem_euclid(n as f64);
            let mut i = s.floor() as usize;
            if i >= n {
                i = 0;
                s = 0.0;
            }
            cell.lo[a] = i;
            cell.hi[a] = (i + 1) % n;
            cell.frac[a] = s - i as f64;
        } else {
            if s < 0.0 || s > (n - 1) as f64 {
                return Err(Error::OutOfDomain(x[..dim].to_vec()));
            }
            let i = (s.floor() as usize).min(n - 2);
            cell.lo[a] = i;
            cell.hi[a] = i + 1;
            cell.frac[a] = s - i as f64;
        }
    }
    Ok(cell)
}

/// Multilinear interpolation into `out`, which must hold one component block.
pub(crate) fn interpolate_into<K: Rank>(f: &Field<K>, x: &[f64], out: &mut [f64]) -> Result<()> {
    let chart = f.chart();
    let dim = chart.dim();
    let w = f.width();
    let cell = locate(chart, x)?;
    out.iter_mut().for_each(|v| *v = 0.0);
    for corner in 0..(1usize << dim) {
        let mut weight = 1.0;
        let mut p = 0;
        for a in 0..dim {
            let (i, wa) = if corner >> a & 1 == 1 {
                (cell.hi[a], cell.frac[a])
            } else {
                (cell.lo[a], 1.0 - cell.frac[a])
            };
            weight *= wa;
            p += i * chart.strides()[a];
        }
        if weight == 0.0 {
            continue;
        }
        let block = &f.data[p * w..(p + 1) * w];
        for c in 0..w {
            out[c] += weight * block[c];
        }
    }
    Ok(())
}

/// Multilinear interpolation of every component at chart point `x`.
pub fn interpolate<K: Rank>(f: &Field<K>, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != f.dim() {
        return Err(Error::Mismatch(format!(
            "point has {} coordinates, chart has dimension {}",
            x.len(),
            f.dim()
        )));
    }
    let mut out = vec![0.0; f.width()];
    interpolate_into(f, x, &mut out)?;
    Ok(out)
}

/// Result of a masked quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegralRecord {
    pub value: f64,
    /// Fraction of the (coordinate) chart volume excluded by the mask.
    pub excluded_fraction: f64,
}

/// Riemann sum of `f * sqrt(det g) * cell volume` with a fixed pairwise
/// reduction. Masked points (either field's mask) contribute zero.
pub fn integrate_scalar(f: &ScalarField, g: &MetricField) -> Result<IntegralRecord> {
    f.same_chart(g)?;
    crate::dispatch_dim!(f.dim(), integrate_impl::<N>(f, g))
}

fn integrate_impl<const N: usize>(f: &ScalarField, g: &MetricField) -> Result<IntegralRecord> {
    let mask = f.joint_mask(g);
    let excluded = |p: usize| mask.as_ref().is_some_and(|m| m.is_excluded(p));
    let n = f.npoints();
    let mut terms = vec![0.0; n];
    crate::par::try_fill_points::<Error, _>(&mut terms, 1, |p, out| {
        if excluded(p) {
            out[0] = 0.0;
            return Ok(());
        }
        let m = crate::linalg::unpack::<N>(g.at(p));
        let l = crate::linalg::cholesky(&m).ok_or_else(|| Error::SingularMetric {
            point: p,
            coords: g.chart().coords_vec(p),
        })?;
        let mut sqrt_det = 1.0;
        for (i, row) in l.iter().enumerate() {
            sqrt_det *= row[i];
        }
        out[0] = f.value(p) * sqrt_det;
        Ok(())
    })?;
    let value = crate::par::pairwise_sum(&terms) * g.chart().cell_volume();
    let count = mask.as_ref().map_or(0, |m| m.count());
    Ok(IntegralRecord {
        value,
        excluded_fraction: count as f64 / n as f64,
    })
}
