//! Asymptotically flat charts: decay validation, ADM mass by sphere
//! quadrature, extrapolation in 1/r and mass along a flow.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::scalar_curvature;
use crate::diagnostics::{linear_fit, DiagnosticsSeries};
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::grid::{interpolate_into, partial_derivative, GridChart, MetricField, SymTensorField};
use crate::linalg::sym_index;
use crate::metrics::{make_metric, MetricKind};
use crate::singular::smooth_step;

/// Default latitude × longitude node counts for sphere quadrature.
pub const QUAD_THETA: usize = 32;
pub const QUAD_PHI: usize = 64;

/// Largest mass radius allowed on a flowing AF box, as a fraction of the half-width.
pub const MASS_RADIUS_FRACTION: f64 = 0.8;

/// Below this level a decaying quantity is reported as a floor, not fitted.
pub const DECAY_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfChartSpec {
    pub n: usize,
    pub tau: f64,
    pub alpha: f64,
    pub q: f64,
    pub inner_radius: f64,
}

impl AfChartSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n as f64;
        if !(self.tau > (n - 2.0) / 2.0) {
            return Err(Error::config("af.tau", format!("tau must exceed (n-2)/2 = {}", (n - 2.0) / 2.0)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("af.alpha", "alpha must lie in (0, 1]"));
        }
        if !(self.q > n && self.q <= n + 2.0) {
            return Err(Error::config("af.q", format!("q must lie in ({n}, {}]", n + 2.0)));
        }
        if !(self.inner_radius > 0.0) {
            return Err(Error::config("af.inner_radius", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AfKind {
    Flat,
    SchwarzschildIsotropic { mass: f64, r_min: f64 },
    ConformalTail { c: f64, r_min: f64 },
}

impl From<&AfKind> for MetricKind {
    fn from(k: &AfKind) -> Self {
        match *k {
            AfKind::Flat => MetricKind::Flat,
            AfKind::SchwarzschildIsotropic { mass, r_min } => MetricKind::Schwarzschild { mass, r_min },
            AfKind::ConformalTail { c, r_min } => MetricKind::ConformalTail { c, r_min },
        }
    }
}

pub fn make_af_metric(chart: &Arc<GridChart>, kind: &AfKind) -> Result<MetricField> {
    if chart.is_torus() {
        return Err(Error::InvalidChart("AF metrics need an AF box chart".into()));
    }
    make_metric(chart, &MetricKind::from(kind))
}

/// h = φ g + (1 − φ) δ with φ = 1 for r ≤ r_in and 0 for r ≥ r_out.
pub fn blended_background(g: &MetricField, r_in: f64, r_out: f64) -> Result<MetricField> {
    if !(r_out > r_in && r_in >= 0.0) {
        return Err(Error::config("background.radii", "need 0 <= r_in < r_out"));
    }
    let chart = g.chart().clone();
    let n = chart.dim();
    let center = chart.center();
    let w = g.width();
    let mut out = g.clone().with_mask(None);
    crate::par::fill_points(out.data_mut(), w, |p, block| {
        let x = chart.coords(p);
        let r = chart.distance(&x[..n], &center);
        let phi = 1.0 - smooth_step((r - r_in) / (r_out - r_in));
        for i in 0..n {
            for j in i..n {
                let k = sym_index(i, j, n);
                let delta = if i == j { 1.0 } else { 0.0 };
                block[k] = phi * g.at(p)[k] + (1.0 - phi) * delta;
            }
        }
    });
    out.check_positive_definite()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub quantity: String,
    pub required: f64,
    /// Fitted exponent p in sup ~ r^{−p}; `None` when every sample is below the floor.
    pub exponent: Option<f64>,
    pub samples: Vec<(f64, f64)>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub radii: Vec<f64>,
    pub fits: Vec<DecayFit>,
    pub pass: bool,
}

/// Fitted decay exponents of |σ|, |∂σ|, |∂²σ| (σ = g − δ) and |𝓡| over dyadic
/// annuli [r, 2r) with r from `inner_radius` up to half of the chart half-width.
pub fn validate_decay(g: &MetricField, spec: &AfChartSpec) -> Result<DecayReport> {
    spec.validate()?;
    let chart = g.chart().clone();
    if chart.is_torus() {
        return Err(Error::InvalidChart("decay validation needs an AF box".into()));
    }
    if spec.n != chart.dim() {
        return Err(Error::Mismatch(format!("spec is for n = {}, chart has n = {}", spec.n, chart.dim())));
    }
    let outer = chart.half_width() / 2.0;
    let mut radii = vec![spec.inner_radius];
    while radii.last().unwrap() * 2.0 <= outer * (1.0 + 1e-12) {
        radii.push(radii.last().unwrap() * 2.0);
    }
    if radii.len() < 3 {
        return Err(Error::Precondition(format!(
            "dyadic range [{}, {outer}] spans less than a factor of 4",
            spec.inner_radius
        )));
    }
    let n = chart.dim();
    let w = g.width();
    let center = chart.center();
    let radius_of = |p: usize| chart.distance(&chart.coords(p)[..n], &center);
    let shell = |p: usize, k: usize| {
        let r = radius_of(p);
        r >= radii[k] && r < 2.0 * radii[k]
    };

    let d1: Vec<SymTensorField> = (0..n).map(|a| partial_derivative(g, a, 1)).collect::<Result<_>>()?;
    let mut d2 = Vec::new();
    for a in 0..n {
        for b in a..n {
            d2.push(if a == b {
                partial_derivative(g, a, 2)?
            } else {
                partial_derivative(&d1[a], b, 1)?
            });
        }
    }
    let scalar = scalar_curvature(g)?;
    let masked = |p: usize| g.is_masked(p);

    let sup_over = |k: usize, f: &dyn Fn(usize) -> f64| {
        (0..chart.npoints())
            .filter(|&p| !masked(p) && shell(p, k))
            .map(f)
            .fold(0.0f64, f64::max)
    };
    let sigma = |p: usize| {
        (0..w)
            .map(|c| {
                let (i, j) = crate::linalg::sym_pairs(n)[c];
                (g.at(p)[c] - if i == j { 1.0 } else { 0.0 }).abs()
            })
            .fold(0.0, f64::max)
    };
    let dsig = |p: usize| d1.iter().flat_map(|f| f.at(p).iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let ddsig = |p: usize| d2.iter().flat_map(|f| f.at(p).iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let scal = |p: usize| scalar.value(p).abs();

    let mut fits = Vec::new();
    type Quantity<'a> = (&'a str, f64, &'a dyn Fn(usize) -> f64);
    let quantities: [Quantity; 4] = [
        ("sigma", spec.tau, &sigma),
        ("d_sigma", spec.tau + 1.0, &dsig),
        ("dd_sigma", spec.tau + 2.0, &ddsig),
        ("scalar", spec.q, &scal),
    ];
    for (name, required, f) in quantities {
        let samples: Vec<(f64, f64)> = (0..radii.len()).map(|k| (radii[k], sup_over(k, f))).collect();
        let live: Vec<&(f64, f64)> = samples.iter().filter(|(_, v)| *v > DECAY_FLOOR).collect();
        let exponent = if live.len() < samples.len() || live.len() < 2 {
            None
        } else {
            let lx: Vec<f64> = live.iter().map(|(r, _)| r.ln()).collect();
            let ly: Vec<f64> = live.iter().map(|(_, v)| v.ln()).collect();
            linear_fit(&lx, &ly).map(|(s, _)| -s)
        };
        let pass = exponent.is_none_or(|e| e >= required - 0.2);
        fits.push(DecayFit {
            quantity: name.into(),
            required,
            exponent,
            samples,
            pass,
        });
    }
    let pass = fits.iter().all(|f| f.pass);
    Ok(DecayReport { radii, fits, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub radius: f64,
    pub mass: f64,
    pub quadrature_points: usize,
}

/// Gauss-Legendre nodes and weights on [−1, 1] (Golub-Welsch).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Largest trusted sphere radius on `chart`: two cells inside the box.
pub fn max_mass_radius(chart: &GridChart) -> f64 {
    chart.half_width() - 2.0 * chart.max_spacing()
}

/// Mass-flux derivative fields ∂_a g for the quadrature.
pub struct MassProbe {
    g: MetricField,
    d1: Vec<SymTensorField>,
}

impl MassProbe {
    pub fn new(g: &MetricField) -> Result<Self> {
        let chart = g.chart();
        if chart.is_torus() {
            return Err(Error::InvalidChart("ADM mass needs an AF box".into()));
        }
        if chart.dim() != 3 {
            return Err(Error::Unsupported("ADM mass quadrature is implemented for n = 3".into()));
        }
        let d1 = (0..3).map(|a| partial_derivative(g, a, 1)).collect::<Result<_>>()?;
        Ok(MassProbe { g: g.clone(), d1 })
    }

    pub fn mass(&self, radius: f64) -> Result<MassRecord> {
        self.mass_with(radius, QUAD_THETA, QUAD_PHI)
    }

    /// (1/16π) ∫_{S_r} (∂_i g_ij − ∂_j g_ii) ν^j dA with Gauss-Legendre in cos θ
    /// and the uniform rule in φ, reduced in a fixed order.
    pub fn mass_with(&self, radius: f64, n_theta: usize, n_phi: usize) -> Result<MassRecord> {
        let chart = self.g.chart();
        let limit = max_mass_radius(chart);
        if !(radius > 0.0 && radius <= limit) {
            return Err(Error::Radius { radius, limit });
        }
        let center = chart.center();
        let (nodes, weights) = gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let terms = crate::par::map_points(n_theta * n_phi, |q| {
            let (it, ip) = (q / n_phi, q % n_phi);
            let ct = nodes[it];
            let st = (1.0 - ct * ct).sqrt();
            let ph = (ip as f64 + 0.5) * dphi;
            let nu = [st * ph.cos(), st * ph.sin(), ct];
            let x: Vec<f64> = (0..3).map(|a| center[a] + radius * nu[a]).collect();
            let mut dg = [[0.0; 6]; 3];
            for a in 0..3 {
                interpolate_into(&self.d1[a], &x, &mut dg[a])?;
            }
            let mut flux = 0.0;
            for j in 0..3 {
                let mut v = 0.0;
                for i in 0..3 {
                    v += dg[i][sym_index(i, j, 3)] - dg[j][sym_index(i, i, 3)];
                }
                flux += v * nu[j];
            }
            Ok(flux * weights[it] * dphi * radius * radius)
        });
        let terms = terms.into_iter().collect::<Result<Vec<f64>>>()?;
        let total = crate::par::pairwise_sum(&terms);
        Ok(MassRecord {
            radius,
            mass: total / (16.0 * std::f64::consts::PI),
            quadrature_points: n_theta * n_phi,
        })
    }
}

pub fn adm_mass(g: &MetricField, radius: f64) -> Result<MassRecord> {
    MassProbe::new(g)?.mass(radius)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassExtrapolation {
    pub m_inf: f64,
    pub coefficients: [f64; 3],
    pub fit_residual: f64,
    pub condition: f64,
    pub records: Vec<MassRecord>,
}

/// Largest design-matrix condition number accepted by the 1/r fit.
pub const MAX_CONDITION: f64 = 1e8;

/// Least-squares fit of m(r) = m∞ + A/r + B/r² to the given records.
pub fn fit_mass_series(records: &[MassRecord]) -> Result<MassExtrapolation> {
    if records.len() < 3 {
        return Err(Error::Precondition(format!(
            "mass extrapolation needs at least 3 radii, got {}",
            records.len()
        )));
    }
    if records.windows(2).any(|w| !(w[1].radius > w[0].radius)) {
        return Err(Error::Precondition("radii must be strictly increasing".into()));
    }
    let m = records.len();
    let a = DMatrix::from_fn(m, 3, |i, j| records[i].radius.powi(-(j as i32)));
    let b = DVector::from_iterator(m, records.iter().map(|r| r.mass));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning(format!(
            "radii too clustered: condition number {condition:.3e}"
        )));
    }
    let x = svd
        .solve(&b, 1e-14 * smax)
        .map_err(|e| Error::Conditioning(e.to_string()))?;
    let resid = (&a * &x - &b).norm();
    Ok(MassExtrapolation {
        m_inf: x[0],
        coefficients: [x[0], x[1], x[2]],
        fit_residual: resid,
        condition,
        records: records.to_vec(),
    })
}

pub fn mass_extrapolate(g: &MetricField, radii: &[f64]) -> Result<MassExtrapolation> {
    if radii.len() < 3 {
        return Err(Error::Precondition(format!(
            "mass extrapolation needs at least 3 radii, got {}",
            radii.len()
        )));
    }
    let probe = MassProbe::new(g)?;
    let records = radii.iter().map(|&r| probe.mass(r)).collect::<Result<Vec<_>>>()?;
    fit_mass_series(&records)
}

/// Fitted far-field decay exponent of 𝓡_− over dyadic annuli from `r0` up to
/// `r1`; `None` when 𝓡_− vanishes there.
fn r_minus_decay(g: &MetricField, r0: f64, r1: f64) -> Result<Option<f64>> {
    let chart = g.chart();
    let n = chart.dim();
    let center = chart.center();
    let scalar = scalar_curvature(g)?;
    let mut samples = Vec::new();
    let mut r = r0;
    while 2.0 * r <= r1 * (1.0 + 1e-12) {
        let sup = (0..chart.npoints())
            .filter(|&p| !g.is_masked(p))
            .filter(|&p| {
                let d = chart.distance(&chart.coords(p)[..n], &center);
                d >= r && d < 2.0 * r
            })
            .map(|p| (-scalar.value(p)).max(0.0))
            .fold(0.0f64, f64::max);
        samples.push((r, sup));
        r *= 2.0;
    }
    if samples.len() < 2 || samples.iter().any(|(_, v)| *v <= DECAY_FLOOR) {
        return Ok(None);
    }
    let lx: Vec<f64> = samples.iter().map(|(r, _)| r.ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|(_, v)| v.ln()).collect();
    Ok(linear_fit(&lx, &ly).map(|(s, _)| -s))
}

/// Extrapolated ADM mass per snapshot. Columns: `m_r<k>` per radius,
/// `extrapolated_mass`, `fit_residual`, `R_minus_decay_exponent` (NaN when
/// 𝓡_− vanishes in the far field). Scalars: `violation` = max m − m(0),
/// `drift` = max |m − m(0)|.
pub fn mass_along_flow(traj: &FlowTrajectory, radii: &[f64]) -> Result<DiagnosticsSeries> {
    let chart = traj.chart();
    let limit = MASS_RADIUS_FRACTION * chart.half_width();
    if let Some(&r) = radii.iter().find(|&&r| r > limit) {
        return Err(Error::Radius { radius: r, limit });
    }
    let mut per_radius = vec![Vec::new(); radii.len()];
    let mut ext = Vec::new();
    let mut resid = Vec::new();
    let mut decay = Vec::new();
    for s in &traj.snapshots {
        let fit = mass_extrapolate(&s.g, radii)?;
        for (k, rec) in fit.records.iter().enumerate() {
            per_radius[k].push(rec.mass);
        }
        ext.push(fit.m_inf);
        resid.push(fit.fit_residual);
        let r0 = radii[0] / 2.0;
        decay.push(r_minus_decay(&s.g, r0, limit)?.unwrap_or(f64::NAN));
    }
    let mut series = DiagnosticsSeries::new("mass_along_flow", traj.times());
    for (k, col) in per_radius.into_iter().enumerate() {
        series.push_column(format!("m_r{}", k + 1), col)?;
    }
    let m0 = ext[0];
    series.set_scalar("initial_mass", m0);
    series.set_scalar("violation", ext.iter().map(|m| m - m0).fold(0.0, f64::max));
    series.set_scalar("drift", ext.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max));
    for (k, r) in radii.iter().enumerate() {
        series.metadata.insert(format!("m_r{}", k + 1), format!("radius {r}"));
    }
    series.push_column("extrapolated_mass", ext)?;
    series.push_column("fit_residual", resid)?;
    series.push_column("R_minus_decay_exponent", decay)?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_chart, ChartSpec};

    fn af_chart(points: usize, hw: f64) -> Arc<GridChart> {
        make_chart(&ChartSpec::af_box(3, points, hw)).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((i14 - 2.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn flat_mass_is_zero() {
        let chart = af_chart(32, 8.0);
        let g = make_af_metric(&chart, &AfKind::Flat).unwrap();
        assert!(adm_mass(&g, 5.0).unwrap().mass.abs() < 1e-14);
    }

    #[test]
    fn conformal_tail_mass_is_half_c() {
        // Oracle: for g = (1 + c/r)δ in n = 3 the flux integral equals c/2 at every radius.
        let chart = af_chart(48, 12.0);
        let g = make_af_metric(&chart, &AfKind::ConformalTail { c: 0.4, r_min: 1.0 }).unwrap();
        let rec = adm_mass(&g, 8.0).unwrap();
        assert_eq!(rec.quadrature_points, QUAD_THETA * QUAD_PHI);
        assert!((rec.mass - 0.2).abs() < 2e-3, "{}", rec.mass);
    }

    #[test]
    fn radius_limits() {
        let chart = af_chart(32, 8.0);
        let g = make_af_metric(&chart, &AfKind::Flat).unwrap();
        assert!(matches!(adm_mass(&g, 7.9), Err(Error::Radius { .. })));
        assert!(matches!(mass_extrapolate(&g, &[3.0, 4.0]), Err(Error::Precondition(_))));
        assert!(matches!(
            mass_extrapolate(&g, &[4.0, 4.0 + 1e-6, 4.0 + 2e-6]),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn extrapolation_recovers_exact_series() {
        let recs: Vec<MassRecord> = [6.0, 8.0, 10.0, 12.0]
            .iter()
            .map(|&r: &f64| MassRecord {
                radius: r,
                mass: 2.0 - 0.5 / r + 3.0 / (r * r),
                quadrature_points: 1,
            })
            .collect();
        let fit = fit_mass_series(&recs).unwrap();
        assert!((fit.m_inf - 2.0).abs() < 1e-12);
        assert!(fit.fit_residual < 1e-12);
    }

    #[test]
    fn schwarzschild_decay_report() {
        let chart = af_chart(64, 16.0);
        let g = make_af_metric(&chart, &AfKind::SchwarzschildIsotropic { mass: 1.0, r_min: 1.0 }).unwrap();
        let spec = AfChartSpec {
            n: 3,
            tau: 1.0,
            alpha: 0.5,
            q: 4.0,
            inner_radius: 2.0,
        };
        let rep = validate_decay(&g, &spec).unwrap();
        assert_eq!(rep.radii, vec![2.0, 4.0, 8.0]);
        let sigma = rep.fits[0].exponent.unwrap();
        assert!(sigma > 0.8 && sigma < 1.5, "{sigma}");
        assert!(rep.pass, "{rep:?}");
        let flat = make_af_metric(&chart, &AfKind::Flat).unwrap();
        assert!(validate_decay(&flat, &spec).unwrap().fits.iter().all(|f| f.exponent.is_none()));
    }

    #[test]
    fn af_spec_bounds() {
        let ok = AfChartSpec {
            n: 3,
            tau: 1.0,
            alpha: 1.0,
            q: 5.0,
            inner_radius: 1.0,
        };
        ok.validate().unwrap();
        assert!(AfChartSpec { tau: 0.5, ..ok.clone() }.validate().is_err());
        assert!(AfChartSpec { q: 3.0, ..ok.clone() }.validate().is_err());
        assert!(AfChartSpec { q: 5.5, ..ok }.validate().is_err());
    }
}
