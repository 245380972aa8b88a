use std::sync::Arc;

use crate::curvature::pointwise::{metric_jet, norm2_rank3, Jet};
use crate::curvature::{
    background_norms_with, covariant_derivatives, curvature_package, laplace_beltrami, ricci_tensor,
    scalar_curvature, Background,
};
use crate::error::{Error, Result};
use crate::flow::{deturck_vector_with, sigma_profile, FlowState, FlowTrajectory};
use crate::grid::{
    integrate_scalar, partial_derivative, CellMask, GridChart, IntegralRecord, MetricField, ScalarField,
    SymTensorField,
};
use crate::linalg::{spd_inverse, unpack};
use crate::singular::SingularSetSpec;

use super::series::{linear_fit, loglog_slope, DiagnosticsSeries};

fn union(a: Option<&Arc<CellMask>>, b: Option<&Arc<CellMask>>) -> Option<CellMask> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.union(b)),
        (Some(a), None) | (None, Some(a)) => Some((**a).clone()),
        (None, None) => None,
    }
}

fn live(mask: &Option<CellMask>, p: usize) -> bool {
    !mask.as_ref().is_some_and(|m| m.is_excluded(p))
}

/// ∫ (𝓡 − σ)_− dμ_g for a given scalar field, over unmasked points.
pub fn negative_part_of(scalar: &ScalarField, g: &MetricField, sigma: f64) -> Result<IntegralRecord> {
    let phi = ScalarField::new(
        scalar.chart().clone(),
        scalar.data().iter().map(|r| (sigma - r).max(0.0)).collect(),
    )?
    .with_mask(scalar.mask().cloned());
    integrate_scalar(&phi, g)
}

/// ∫ (𝓡_{g(t)} − σ(t))_− dμ_{g(t)}.
pub fn negative_part_functional(state: &FlowState, sigma0: f64, n: usize) -> Result<IntegralRecord> {
    let sigma = sigma_profile(sigma0, n, state.t)?;
    negative_part_of(&scalar_curvature(&state.g)?, &state.g, sigma)
}

/// Pair test on a sampled series: max over s > t of F(s)(t/s)^a − F(t), clipped at 0.
pub fn monotonicity_violation(times: &[f64], values: &[f64], a: f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, (&t, &ft)) in times.iter().zip(values).enumerate() {
        for (&s, &fs) in times.iter().zip(values).skip(i + 1) {
            let ratio = if s > 0.0 { (t / s).powf(a) } else { 1.0 };
            worst = worst.max(fs * ratio - ft);
        }
    }
    worst
}

/// F(t) per snapshot with the pair-test violation and the trend of F·t^{−a/4}.
pub fn monotonicity_check(traj: &FlowTrajectory, sigma0: f64, a: f64) -> Result<DiagnosticsSeries> {
    if traj.snapshots.len() < 2 {
        return Err(Error::Precondition("monotonicity needs at least 2 snapshots".into()));
    }
    let n = traj.chart().dim();
    let mut f = Vec::new();
    let mut excl = Vec::new();
    for s in &traj.snapshots {
        let rec = negative_part_functional(s, sigma0, n)?;
        f.push(rec.value);
        excl.push(rec.excluded_fraction);
    }
    monotonicity_series(&traj.times(), f, excl, a)
}

pub fn monotonicity_series(times: &[f64], f: Vec<f64>, excluded: Vec<f64>, a: f64) -> Result<DiagnosticsSeries> {
    let violation = monotonicity_violation(times, &f, a);
    let weighted: Vec<f64> = times
        .iter()
        .zip(&f)
        .map(|(&t, &v)| if t > 0.0 { v * t.powf(-a / 4.0) } else { f64::NAN })
        .collect();
    let (px, py): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&weighted)
        .filter(|(t, w)| **t > 0.0 && **w > 0.0)
        .map(|(t, w)| (*t, *w))
        .unzip();
    let max_f = f.iter().cloned().fold(0.0, f64::max);
    let mut s = DiagnosticsSeries::new("monotonicity", times.to_vec())
        .with_column("F", f)?
        .with_column("F_weighted", weighted)?
        .with_column("excluded_fraction", excluded)?;
    s.set_scalar("a", a);
    s.set_scalar("violation", violation);
    s.set_scalar("max_F", max_f);
    if let Some(slope) = loglog_slope(&px, &py) {
        s.set_scalar("weighted_trend_slope", slope);
    }
    Ok(s)
}

/// Smallest C with 𝓡 ≥ σ(t) − C t^ℓ r^{−2(ℓ+1)} at unmasked points, per
/// snapshot with t > 0. Without a singular set r ≡ ∞, so C is 0 or ∞.
pub fn local_lowerbound_check(
    traj: &FlowTrajectory,
    sset: Option<&SingularSetSpec>,
    sigma0: f64,
    ell: f64,
) -> Result<DiagnosticsSeries> {
    let chart = traj.chart().clone();
    let n = chart.dim();
    let dist = sset.map(|s| s.distance_field(&chart));
    let mut times = Vec::new();
    let mut cs = Vec::new();
    for s in traj.snapshots.iter().filter(|s| s.t > 0.0) {
        let sigma = sigma_profile(sigma0, n, s.t)?;
        let r = scalar_curvature(&s.g)?;
        let mask = union(r.mask(), s.g.mask());
        let mut c = 0.0f64;
        for p in (0..chart.npoints()).filter(|&p| live(&mask, p)) {
            let deficit = sigma - r.value(p);
            if deficit <= 0.0 {
                continue;
            }
            c = c.max(match &dist {
                Some(d) => deficit * d.value(p).powf(2.0 * (ell + 1.0)) / s.t.powf(ell),
                None => f64::INFINITY,
            });
        }
        times.push(s.t);
        cs.push(c);
    }
    let t_end = times.last().copied().unwrap_or(0.0);
    let (tx, cy): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&cs)
        .filter(|(t, c)| **t >= t_end / 10.0 && **c > 0.0 && c.is_finite())
        .map(|(t, c)| (*t, *c))
        .unzip();
    let max_c = cs.iter().cloned().fold(0.0, f64::max);
    let mut out = DiagnosticsSeries::new("local_lowerbound", times).with_column("C", cs)?;
    out.set_scalar("ell", ell);
    out.set_scalar("max_C", max_c);
    if let Some(slope) = loglog_slope(&tx, &cy) {
        out.set_scalar("log_C_slope", slope);
    }
    Ok(out)
}

/// B(t) = t · sup(|∇̃g|²_h + |∇̃²g|_h + |Rm|_g) per snapshot with t > 0, with
/// the separate sups and the fitted growth exponent of sup|∇̃g|².
pub fn curvature_bound_check(traj: &FlowTrajectory, h: &MetricField) -> Result<DiagnosticsSeries> {
    let bg = Background::new(h)?;
    let mut times = Vec::new();
    let (mut g2, mut hs, mut rm, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in traj.snapshots.iter().filter(|s| s.t > 0.0) {
        let (grad2, hess) = background_norms_with(&s.g, &bg)?;
        let pkg = curvature_package(&s.g)?;
        let mask = union(grad2.mask(), pkg.riemann_norm.mask());
        let (mut a1, mut a2, mut a3, mut tot) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in (0..s.g.npoints()).filter(|&p| live(&mask, p)) {
            let (x, y, z) = (grad2.value(p), hess.value(p), pkg.riemann_norm.value(p));
            a1 = a1.max(x);
            a2 = a2.max(y);
            a3 = a3.max(z);
            tot = tot.max(x + y + z);
        }
        times.push(s.t);
        g2.push(a1);
        hs.push(a2);
        rm.push(a3);
        b.push(s.t * tot);
    }
    if times.is_empty() {
        return Err(Error::Precondition("curvature bound needs a snapshot with t > 0".into()));
    }
    let delta = b.iter().cloned().fold(0.0, f64::max);
    let grad_exp = loglog_slope(&times, &g2);
    let b_fit = linear_fit(&times, &b);
    let mut out = DiagnosticsSeries::new("curvature_bound", times)
        .with_column("sup_grad2", g2)?
        .with_column("sup_hess", hs)?
        .with_column("sup_rm", rm)?
        .with_column("B", b)?;
    out.set_scalar("delta_effective", delta);
    if let Some(e) = grad_exp {
        out.set_scalar("grad2_exponent", e);
    }
    if let Some((slope, intercept)) = b_fit {
        out.set_scalar("B_linear_slope", slope);
        out.set_scalar("B_linear_intercept", intercept);
    }
    Ok(out)
}

/// sup |Ric(g) − σ₀ (n − 2σ₀ t)^{−1} g| (largest component) over unmasked points.
pub fn einstein_residual(state: &FlowState, sigma0: f64, n: usize) -> Result<f64> {
    sigma_profile(sigma0, n, state.t)?;
    let lambda = sigma0 / (n as f64 - 2.0 * sigma0 * state.t);
    let ric = ricci_tensor(&state.g)?;
    let mask = union(ric.mask(), state.g.mask());
    let w = ric.width();
    let mut worst = 0.0f64;
    for p in (0..state.g.npoints()).filter(|&p| live(&mask, p)) {
        for c in 0..w {
            worst = worst.max((ric.at(p)[c] - lambda * state.g.at(p)[c]).abs());
        }
    }
    Ok(worst)
}

/// |Ric|²_g and |Ric°|²_g = |Ric|² − 𝓡²/n at every point.
fn ricci_squares(g: &MetricField, ric: &SymTensorField) -> Result<(Vec<f64>, Vec<f64>)> {
    crate::dispatch_dim!(g.dim(), ricci_squares_impl::<N>(g, ric))
}

fn ricci_squares_impl<const N: usize>(g: &MetricField, ric: &SymTensorField) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = crate::par::map_points(g.npoints(), |p| {
        let Some((inv, _)) = spd_inverse::<N>(&unpack(g.at(p))) else {
            return (f64::NAN, f64::NAN);
        };
        let r = unpack::<N>(ric.at(p));
        let mut full = 0.0;
        let mut tr = 0.0;
        for i in 0..N {
            for j in 0..N {
                tr += inv[i][j] * r[i][j];
                let mut up = 0.0;
                for a in 0..N {
                    for b in 0..N {
                        up += inv[i][a] * inv[j][b] * r[a][b];
                    }
                }
                full += up * r[i][j];
            }
        }
        (full, full - tr * tr / N as f64)
    });
    Ok(out.into_iter().unzip())
}

/// Centered-difference residual of the scalar evolution inequality,
/// E = ∂_t𝓡 − Δ_g𝓡 − (2/n)𝓡² − ⟨W, ∇𝓡⟩. Columns: `min_residual` (E should
/// not be significantly negative) and `identity_residual`, the sup of
/// |E − 2|Ric°|²|, which vanishes for an exact flow.
pub fn scalar_evolution_residual(traj: &FlowTrajectory, h: &MetricField) -> Result<DiagnosticsSeries> {
    let k = traj.snapshots.len();
    if k < 3 {
        return Err(Error::Precondition(format!(
            "scalar evolution needs at least 3 snapshots, got {k}"
        )));
    }
    let bg = Background::new(h)?;
    let chart = traj.chart().clone();
    let n = chart.dim();
    let scal: Vec<ScalarField> = traj.snapshots.iter().map(|s| scalar_curvature(&s.g)).collect::<Result<_>>()?;
    let mut times = Vec::new();
    let mut mins = Vec::new();
    let mut ident = Vec::new();
    for i in 1..k - 1 {
        let s = &traj.snapshots[i];
        let dt = traj.snapshots[i + 1].t - traj.snapshots[i - 1].t;
        let r = &scal[i];
        let lap = laplace_beltrami(&s.g, r)?;
        let (w, _) = deturck_vector_with(&s.g, &bg)?;
        let grads: Vec<ScalarField> = (0..n).map(|a| partial_derivative(r, a, 1)).collect::<Result<_>>()?;
        let ric = ricci_tensor(&s.g)?;
        let (_, tl) = ricci_squares(&s.g, &ric)?;
        let mut mask = union(lap.mask(), w.mask());
        for f in [scal[i - 1].mask(), scal[i + 1].mask(), grads[0].mask()] {
            mask = union(mask.map(Arc::new).as_ref(), f);
        }
        let (mut lo, mut id) = (f64::INFINITY, 0.0f64);
        for p in (0..chart.npoints()).filter(|&p| live(&mask, p)) {
            let rt = (scal[i + 1].value(p) - scal[i - 1].value(p)) / dt;
            let adv: f64 = (0..n).map(|a| w.at(p)[a] * grads[a].value(p)).sum();
            let e = rt - lap.value(p) - 2.0 / n as f64 * r.value(p).powi(2) - adv;
            lo = lo.min(e);
            id = id.max((e - 2.0 * tl[p]).abs());
        }
        times.push(s.t);
        mins.push(if lo.is_finite() { lo } else { 0.0 });
        ident.push(id);
    }
    let worst = mins.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = DiagnosticsSeries::new("scalar_evolution", times)
        .with_column("min_residual", mins)?
        .with_column("identity_residual", ident)?;
    out.set_scalar("min_residual", worst);
    Ok(out)
}

/// Residual of the scalar evolution for a frozen (time-independent) metric:
/// ∂_t𝓡 = 0, so E = −Δ𝓡 − (2/n)𝓡² − ⟨W, ∇𝓡⟩ with W taken against `h`.
pub fn frozen_scalar_residual(g: &MetricField, h: &MetricField) -> Result<f64> {
    let traj = FlowTrajectory {
        background: h.clone(),
        snapshots: (0..3).map(|k| FlowState { t: k as f64, g: g.clone() }).collect(),
        controls: Default::default(),
        steps: Vec::new(),
    };
    let s = scalar_evolution_residual(&traj, h)?;
    Ok(s.column("min_residual").expect("column")[0])
}

/// Two series: sup|g(t) − g₀| (largest component, unmasked points) and, on
/// the region at chart distance ≥ `away_radius` from Σ, sup of
/// |g(t) − g₀|_h + |∇̃(g(t) − g₀)|_h.
pub fn c0_convergence_probe(
    traj: &FlowTrajectory,
    g0: &MetricField,
    sset: Option<&SingularSetSpec>,
    away_radius: f64,
) -> Result<DiagnosticsSeries> {
    let chart = traj.chart().clone();
    g0.same_chart(&traj.background)?;
    let bg = Background::new(&traj.background)?;
    let dist = sset.map(|s| s.distance_field(&chart));
    let away: Vec<bool> = (0..chart.npoints())
        .map(|p| dist.as_ref().is_none_or(|d| d.value(p) >= away_radius))
        .collect();
    let mut global = Vec::new();
    let mut local = Vec::new();
    for s in &traj.snapshots {
        let diff: Vec<f64> = s.g.data().iter().zip(g0.data()).map(|(a, b)| a - b).collect();
        let mask = union(s.g.mask(), g0.mask()).map(|m| m.widen_jet(&chart));
        let (gs, ls) = crate::dispatch_dim!(chart.dim(), probe_impl::<N>(&chart, &diff, &bg, &mask, &away))?;
        global.push(gs);
        local.push(ls);
    }
    let mut out = DiagnosticsSeries::new("c0_convergence", traj.times())
        .with_column("sup_dist", global)?
        .with_column("away_c1_dist", local)?;
    out.set_scalar("away_radius", away_radius);
    Ok(out)
}

fn probe_impl<const N: usize>(
    chart: &GridChart,
    diff: &[f64],
    bg: &Background,
    mask: &Option<CellMask>,
    away: &[bool],
) -> Result<(f64, f64)> {
    let vals = crate::par::map_points(chart.npoints(), |p| {
        if !live(mask, p) {
            return (0.0, 0.0);
        }
        let w = N * (N + 1) / 2;
        let comp = diff[p * w..(p + 1) * w].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !away[p] {
            return (comp, 0.0);
        }
        let jet: Jet<N> = metric_jet(chart, diff, p, false);
        let b = bg.at::<N>(p);
        let (d1, _) = covariant_derivatives(&jet, &b);
        let mut d0 = 0.0;
        for i in 0..N {
            for j in 0..N {
                let mut s = 0.0;
                for a in 0..N {
                    for c in 0..N {
                        s += b.frame[i][a] * b.frame[j][c] * jet.g[a][c];
                    }
                }
                d0 += s * s;
            }
        }
        (comp, d0.sqrt() + norm2_rank3(&d1, &b.frame).sqrt())
    });
    Ok(vals
        .into_iter()
        .fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(x), b.max(y))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_chart, ChartSpec};
    use crate::metrics::{make_metric, MetricKind};
    use std::f64::consts::PI;

    fn torus(n: usize, side: f64) -> Arc<GridChart> {
        make_chart(&ChartSpec::torus(3, n, side)).unwrap()
    }

    #[test]
    fn negative_part_synthetic_fields() {
        let chart = torus(8, 1.0);
        let g = MetricField::euclidean(chart.clone());
        let above = ScalarField::constant(chart.clone(), &[-1.0]).unwrap();
        assert_eq!(negative_part_of(&above, &g, -2.0).unwrap().value, 0.0);
        let below = ScalarField::constant(chart.clone(), &[-3.0]).unwrap();
        assert!((negative_part_of(&below, &g, -2.0).unwrap().value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negative_part_of_sin_plus() {
        let chart = torus(32, 2.0 * PI);
        let g = MetricField::euclidean(chart.clone());
        let r = ScalarField::from_scalar_fn(chart, |x| -x[0].sin().max(0.0));
        let v = negative_part_of(&r, &g, 0.0).unwrap().value;
        let want = (2.0 * PI).powi(2) * 2.0;
        assert!((v - want).abs() < 1e-2 * want, "{v} {want}");
    }

    #[test]
    fn pair_test_arithmetic() {
        let t = [0.1, 0.2, 0.4, 0.8];
        assert_eq!(monotonicity_violation(&t, &[2.0; 4], 0.25), 0.0);
        // F = t grows faster than (s/t)^a allows.
        let grow: Vec<f64> = t.to_vec();
        let v = monotonicity_violation(&t, &grow, 0.25);
        let want = 0.8 * (0.1f64 / 0.8).powf(0.25) - 0.1;
        assert!((v - want).abs() < 1e-15);
        // F = 1/t decays, which the pair test accepts.
        let decay: Vec<f64> = t.iter().map(|x| 1.0 / x).collect();
        assert_eq!(monotonicity_violation(&t, &decay, 0.25), 0.0);
    }

    #[test]
    fn einstein_residual_normalization() {
        let chart = torus(8, 2.0 * PI);
        let state = FlowState {
            t: 0.0,
            g: MetricField::euclidean(chart),
        };
        assert_eq!(einstein_residual(&state, 0.0, 3).unwrap(), 0.0);
        assert!((einstein_residual(&state, -6.0, 3).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(einstein_residual(&state, 1.0, 3), Err(Error::SigmaRegime(_))));
    }

    #[test]
    fn frozen_metric_is_not_a_solution() {
        let chart = torus(24, 2.0 * PI);
        let g = make_metric(&chart, &MetricKind::ConformalSines { amplitude: 0.1 }).unwrap();
        let e = frozen_scalar_residual(&g, &g).unwrap();
        assert!(e < -1e-2, "{e}");
    }

    #[test]
    fn lowerbound_fit_is_direct_arithmetic() {
        let chart = torus(8, 2.0 * PI);
        let g = MetricField::euclidean(chart.clone());
        let traj = FlowTrajectory {
            background: g.clone(),
            snapshots: vec![FlowState { t: 0.0, g: g.clone() }, FlowState { t: 0.5, g }],
            controls: Default::default(),
            steps: Vec::new(),
        };
        let s = local_lowerbound_check(&traj, None, 0.0, 2.0).unwrap();
        assert_eq!(s.times, vec![0.5]);
        assert_eq!(s.column("C").unwrap(), &[0.0]);
    }
}
