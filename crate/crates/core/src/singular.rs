//! C⁰ metrics that are smooth away from a singular set Σ, tube
//! volumes, codimension fits and the mollified approximating sequence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::linear_fit;
use crate::error::{Error, Result};
use crate::grid::{integrate_scalar, CellMask, GridChart, MetricField, ScalarField, MAX_DIM};
use crate::metrics::{make_metric, MetricKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetKind {
    PointSet,
    /// Polyline through the anchors. Each segment must be at most one period long.
    CurveSegment,
    ClusterSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularSetSpec {
    pub kind: SetKind,
    pub anchors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl SingularSetSpec {
    pub fn point(p: Vec<f64>) -> Self {
        SingularSetSpec {
            kind: SetKind::PointSet,
            anchors: vec![p],
            alpha: None,
        }
    }

    pub fn curve(anchors: Vec<Vec<f64>>) -> Self {
        SingularSetSpec {
            kind: SetKind::CurveSegment,
            anchors,
            alpha: None,
        }
    }

    /// p₁ = start, p_{k+1} = p_k + k^{−α} · dir/|dir|.
    pub fn cluster_sequence(start: &[f64], dir: &[f64], alpha: f64, count: usize) -> Self {
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let mut p = start.to_vec();
        let mut anchors = vec![p.clone()];
        for k in 1..count {
            let step = (k as f64).powf(-alpha) / norm;
            for (x, d) in p.iter_mut().zip(dir) {
                *x += step * d;
            }
            anchors.push(p.clone());
        }
        SingularSetSpec {
            kind: SetKind::ClusterSequence,
            anchors,
            alpha: Some(alpha),
        }
    }

    pub fn validate(&self, chart: &GridChart) -> Result<()> {
        let n = chart.dim();
        if self.anchors.is_empty() {
            return Err(Error::config("singular_set.anchors", "at least one anchor is required"));
        }
        for (k, a) in self.anchors.iter().enumerate() {
            if a.len() != n || !chart.contains(a) {
                return Err(Error::config(
                    format!("singular_set.anchors[{k}]"),
                    format!("{a:?} is not a point of the chart"),
                ));
            }
        }
        match self.kind {
            SetKind::CurveSegment => {
                if self.anchors.len() < 2 {
                    return Err(Error::config("singular_set.anchors", "a curve needs two or more anchors"));
                }
            }
            SetKind::ClusterSequence => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::config("singular_set.alpha", "cluster sequences need alpha"))?;
                if !(alpha > 1.0) {
                    return Err(Error::config("singular_set.alpha", "alpha must exceed 1"));
                }
                for (k, w) in self.anchors.windows(2).enumerate() {
                    let d = chart.distance(&w[0], &w[1]);
                    let bound = ((k + 1) as f64).powf(-alpha);
                    if d > bound * (1.0 + 1e-9) {
                        return Err(Error::config(
                            format!("singular_set.anchors[{}]", k + 1),
                            format!("step {d} exceeds k^-alpha = {bound}"),
                        ));
                    }
                }
            }
            SetKind::PointSet => {
                if self.alpha.is_some() {
                    return Err(Error::config("singular_set.alpha", "only cluster sequences take alpha"));
                }
            }
        }
        Ok(())
    }

    /// Chart (flat, minimal-image) distance from `x` to the set.
    pub fn distance(&self, chart: &GridChart, x: &[f64]) -> f64 {
        let n = chart.dim();
        match self.kind {
            SetKind::PointSet | SetKind::ClusterSequence => {
                self.anchors.iter().map(|a| chart.distance(x, a)).fold(f64::INFINITY, f64::min)
            }
            SetKind::CurveSegment => self
                .anchors
                .windows(2)
                .map(|w| {
                    // Measure from the segment midpoint so a full-period segment stays whole.
                    let mut mid = [0.0; MAX_DIM];
                    let mut half = [0.0; MAX_DIM];
                    for a in 0..n {
                        half[a] = 0.5 * (w[1][a] - w[0][a]);
                        mid[a] = w[0][a] + half[a];
                    }
                    let d = chart.displacement(&mid[..n], x);
                    let hl2: f64 = half[..n].iter().map(|v| v * v).sum();
                    let s = if hl2 > 0.0 {
                        ((0..n).map(|a| d[a] * half[a]).sum::<f64>() / hl2).clamp(-1.0, 1.0)
                    } else {
                        0.0
                    };
                    (0..n).map(|a| (d[a] - s * half[a]).powi(2)).sum::<f64>().sqrt()
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn distance_field(&self, chart: &Arc<GridChart>) -> ScalarField {
        ScalarField::from_scalar_fn(chart.clone(), |x| self.distance(chart, x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    HolderBump,
    LogBump,
}

fn default_base() -> MetricKind {
    MetricKind::Flat
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularMetricSpec {
    #[serde(default = "default_base")]
    pub base: MetricKind,
    pub modulus_beta: f64,
    pub amplitude: f64,
    pub profile: Profile,
    /// Support radius of the cutoff η.
    pub r_cut: f64,
}

/// C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let f = |u: f64| (-1.0 / u).exp();
    f(s) / (f(s) + f(1.0 - s))
}

/// η(r): 1 on r ≤ r_cut/2, 0 on r ≥ r_cut.
pub fn cutoff(r: f64, r_cut: f64) -> f64 {
    1.0 - smooth_step(2.0 * r / r_cut - 1.0)
}

impl SingularMetricSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.modulus_beta > 0.0 && self.modulus_beta < 1.0) {
            return Err(Error::config("singular_metric.modulus_beta", "beta must lie in (0, 1)"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::config("singular_metric.amplitude", "must be finite"));
        }
        if !(self.r_cut > 0.0) {
            return Err(Error::config("singular_metric.r_cut", "must be positive"));
        }
        Ok(())
    }

    /// Conformal factor 1 + A φ(r).
    pub fn factor(&self, r: f64) -> f64 {
        let eta = cutoff(r, self.r_cut);
        if eta == 0.0 {
            return 1.0;
        }
        let phi = match self.profile {
            Profile::HolderBump => r.powf(self.modulus_beta),
            // Modulus 1/log(e r_cut / r): continuous, not Hölder.
            Profile::LogBump => {
                if r == 0.0 {
                    0.0
                } else {
                    1.0 / (std::f64::consts::E * self.r_cut / r).ln()
                }
            }
        };
        1.0 + self.amplitude * phi * eta
    }
}

/// Singular metric, its mask (r < 2 · max spacing) and the distance-to-Σ field.
#[derive(Clone, Debug)]
pub struct SingularData {
    pub metric: MetricField,
    pub mask: CellMask,
    pub distance: ScalarField,
    /// sqrt of the largest |factor| deviation: bounds the ratio between g-distances
    /// and the chart distances used for Σ(ε).
    pub distance_distortion: f64,
}

pub fn make_singular_metric(
    chart: &Arc<GridChart>,
    sset: &SingularSetSpec,
    mspec: &SingularMetricSpec,
) -> Result<SingularData> {
    sset.validate(chart)?;
    mspec.validate()?;
    let base = make_metric(chart, &mspec.base)?;
    let dist = sset.distance_field(chart);
    let w = base.width();
    let mut data = base.data().to_vec();
    let mut worst = 1.0f64;
    for p in 0..chart.npoints() {
        let f = mspec.factor(dist.value(p));
        if !(f > 0.0) {
            return Err(Error::Amplitude {
                amplitude: mspec.amplitude,
                point: p,
            });
        }
        worst = worst.max(f).max(1.0 / f);
        data[p * w..(p + 1) * w].iter_mut().for_each(|v| *v *= f);
    }
    let limit = 2.0 * chart.max_spacing();
    let mask = CellMask::from_flags((0..chart.npoints()).map(|p| dist.value(p) < limit).collect());
    let mask_arc = Arc::new(match base.mask() {
        Some(m) => mask.union(m),
        None => mask.clone(),
    });
    let metric = MetricField::new(chart.clone(), data)?.with_mask(Some(mask_arc.clone()));
    metric.check_positive_definite()?;
    Ok(SingularData {
        metric,
        mask: (*mask_arc).clone(),
        distance: dist,
        distance_distortion: worst.sqrt(),
    })
}

/// h-volume of the rasterized tube Σ(ε) = {r < ε}.
pub fn tube_volume(sset: &SingularSetSpec, h: &MetricField, eps: f64) -> Result<f64> {
    let chart = h.chart();
    sset.validate(chart)?;
    let limit = 2.0 * chart.max_spacing();
    if !(eps > limit) {
        return Err(Error::Resolution(format!(
            "tube radius {eps} is not above 2 x spacing = {limit}"
        )));
    }
    let clamp = eps >= chart.diameter();
    let ind = ScalarField::from_scalar_fn(chart.clone(), |x| {
        if clamp || sset.distance(chart, x) < eps {
            1.0
        } else {
            0.0
        }
    });
    let h = h.clone().with_mask(None);
    Ok(integrate_scalar(&ind, &h)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodimFit {
    pub slope: f64,
    pub intercept: f64,
    pub eps: Vec<f64>,
    pub volumes: Vec<f64>,
}

/// Least-squares slope of log V(Σ(ε)) against log ε.
pub fn codimension_fit(sset: &SingularSetSpec, h: &MetricField, eps_list: &[f64]) -> Result<CodimFit> {
    if eps_list.len() < 4 {
        return Err(Error::Precondition(format!(
            "codimension fit needs at least 4 radii, got {}",
            eps_list.len()
        )));
    }
    let lo = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_list.iter().cloned().fold(0.0, f64::max);
    if !(hi >= 8.0 * lo) {
        return Err(Error::Precondition(format!(
            "radii must span a factor of 8 or more, got {lo}..{hi}"
        )));
    }
    let volumes = eps_list
        .iter()
        .map(|&e| tube_volume(sset, h, e))
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
    let (slope, intercept) =
        linear_fit(&lx, &ly).ok_or_else(|| Error::Conditioning("degenerate tube volumes".into()))?;
    Ok(CodimFit {
        slope,
        intercept,
        eps: eps_list.to_vec(),
        volumes,
    })
}

/// Normalized discrete bump of chart radius `s` as (offset, weight) pairs.
fn mollifier(chart: &GridChart, s: f64) -> Vec<([isize; MAX_DIM], f64)> {
    let n = chart.dim();
    let reach: Vec<isize> = (0..n).map(|a| (s / chart.spacing()[a]).floor() as isize).collect();
    let mut out = Vec::new();
    let mut off = [0isize; MAX_DIM];
    let total: usize = reach.iter().map(|r| (2 * r + 1) as usize).product();
    for lin in 0..total {
        let mut rem = lin;
        let mut r2 = 0.0;
        for a in (0..n).rev() {
            let w = (2 * reach[a] + 1) as usize;
            off[a] = (rem % w) as isize - reach[a];
            rem /= w;
            r2 += (off[a] as f64 * chart.spacing()[a]).powi(2);
        }
        let q = r2 / (s * s);
        if q < 1.0 {
            out.push((off, (-1.0 / (1.0 - q)).exp()));
        }
    }
    let sum: f64 = out.iter().map(|(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= sum);
    out
}

/// g_i: equal to g0 outside Σ(1/i); inside, a blend of g0 and its
/// convolution with a mollifier of radius 1/(4i).
pub fn mollify_blend(g0: &MetricField, sset: &SingularSetSpec, i: usize) -> Result<MetricField> {
    let chart = g0.chart().clone();
    sset.validate(&chart)?;
    g0.check_finite()?;
    let rho = 1.0 / i.max(1) as f64;
    if i == 0 || rho < chart.max_spacing() {
        return Err(Error::Resolution(format!(
            "tube radius 1/{i} is below the grid spacing {}",
            chart.max_spacing()
        )));
    }
    let n = chart.dim();
    let kernel = mollifier(&chart, rho / 4.0);
    let w = g0.width();
    let src = g0.data();
    let mut out = g0.clone();
    crate::par::fill_points(out.data_mut(), w, |p, block| {
        let x = chart.coords(p);
        let r = sset.distance(&chart, &x[..n]);
        if r >= rho {
            block.copy_from_slice(&src[p * w..(p + 1) * w]);
            return;
        }
        let idx = chart.multi_index(p);
        let mut acc = [0.0; 10];
        let mut wsum = 0.0;
        'taps: for (off, wt) in &kernel {
            let mut q = 0;
            for a in 0..n {
                let m = chart.shape()[a] as isize;
                let mut j = idx[a] as isize + off[a];
                if chart.periodic()[a] {
                    j = j.rem_euclid(m);
                } else if j < 0 || j >= m {
                    continue 'taps;
                }
                q += j as usize * chart.strides()[a];
            }
            wsum += wt;
            for c in 0..w {
                acc[c] += wt * src[q * w + c];
            }
        }
        let chi = smooth_step(2.0 * r / rho - 1.0);
        for c in 0..w {
            block[c] = chi * src[p * w + c] + (1.0 - chi) * acc[c] / wsum;
        }
    });
    out.check_positive_definite()?;
    Ok(out)
}
