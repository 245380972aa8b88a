use serde::{Deserialize, Serialize};

use super::deturck::rhs_into;
use crate::curvature::{scalar_curvature, Background};
use crate::diagnostics::DiagnosticsSeries;
use crate::error::{Error, Result};
use crate::grid::{integrate_scalar, GridChart, MetricField, ScalarField};
use crate::linalg::{cholesky, relative_eigenvalues, sym_eigenvalues, unpack};

/// Eigenvalue band against h that the flow must stay inside.
pub const CLOSENESS_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "RK2")]
    Rk2,
    #[serde(rename = "RK4")]
    Rk4,
}

fn default_cfl() -> f64 {
    0.5
}
fn default_max_dt() -> f64 {
    0.01
}
fn default_scheme() -> Scheme {
    Scheme::Rk2
}
fn default_closeness() -> f64 {
    1.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepControls {
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    #[serde(default = "default_max_dt")]
    pub max_dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_closeness")]
    pub closeness_threshold: f64,
    /// Bypass the CFL rule with a fixed step (for experiments on stability).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_dt: Option<f64>,
}

impl Default for StepControls {
    fn default() -> Self {
        StepControls {
            cfl_fraction: default_cfl(),
            max_dt: default_max_dt(),
            scheme: default_scheme(),
            snapshot_times: Vec::new(),
            closeness_threshold: default_closeness(),
            force_dt: None,
        }
    }
}

impl StepControls {
    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    /// Evenly spaced snapshot times `T/k, 2T/k, ..., T`.
    pub fn uniform_snapshots(mut self, t_end: f64, count: usize) -> Self {
        self.snapshot_times = (1..=count).map(|k| t_end * k as f64 / count as f64).collect();
        self
    }

    pub fn validate(&self, t_end: f64) -> Result<()> {
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction < 1.0) {
            return Err(Error::config("controls.cfl_fraction", "must lie in (0, 1)"));
        }
        if !(self.max_dt > 0.0) || !self.max_dt.is_finite() {
            return Err(Error::config("controls.max_dt", "must be positive"));
        }
        if !(self.closeness_threshold > 1.0) {
            return Err(Error::config("controls.closeness_threshold", "must exceed 1"));
        }
        if let Some(dt) = self.force_dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::config("controls.force_dt", "must be positive"));
            }
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::config("flow.t_end", "must be positive"));
        }
        let mut prev = -1.0;
        for &t in &self.snapshot_times {
            if !(t > prev) {
                return Err(Error::config("controls.snapshot_times", "must be strictly increasing"));
            }
            if !(0.0..=t_end).contains(&t) {
                return Err(Error::config("controls.snapshot_times", format!("{t} lies outside [0, {t_end}]")));
            }
            prev = t;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
}

/// Per-step bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub volume: f64,
    pub sup_dist_to_g0: f64,
    pub dt: f64,
    pub min_eig_ratio: f64,
    pub max_eig_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub background: MetricField,
    pub snapshots: Vec<FlowState>,
    pub controls: StepControls,
    pub steps: Vec<StepRecord>,
}

impl FlowTrajectory {
    pub fn chart(&self) -> &std::sync::Arc<GridChart> {
        self.background.chart()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn initial(&self) -> &FlowState {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &FlowState {
        self.snapshots.last().expect("trajectory has a t = 0 snapshot")
    }

    /// Per-step records as a series with the flow CSV columns.
    pub fn step_series(&self) -> DiagnosticsSeries {
        let mut s = DiagnosticsSeries::new("flow", self.steps.iter().map(|r| r.t).collect());
        let col = |f: fn(&StepRecord) -> f64| self.steps.iter().map(f).collect::<Vec<f64>>();
        s.columns = vec![
            ("volume".into(), col(|r| r.volume)),
            ("sup_dist_to_g0".into(), col(|r| r.sup_dist_to_g0)),
            ("dt".into(), col(|r| r.dt)),
            ("min_eig_ratio".into(), col(|r| r.min_eig_ratio)),
            ("max_eig_ratio".into(), col(|r| r.max_eig_ratio)),
        ];
        s
    }
}

/// σ(t) = σ₀ / (1 − (2/n) σ₀ t), defined for σ₀ ≤ 0.
pub fn sigma_profile(sigma0: f64, n: usize, t: f64) -> Result<f64> {
    if sigma0 > 0.0 || !sigma0.is_finite() {
        return Err(Error::SigmaRegime(sigma0));
    }
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("flow time {t} is negative")));
    }
    Ok(sigma0 / (1.0 - 2.0 / n as f64 * sigma0 * t))
}

/// RHS damping on AF boxes: 1 inside 0.85 of the half-width, 0 beyond 0.9,
/// with a C² ramp between. `None` on a torus.
pub fn freeze_weights(chart: &GridChart) -> Option<Vec<f64>> {
    if chart.is_torus() {
        return None;
    }
    let hw = chart.half_width();
    let center = chart.center();
    let (r0, r1) = (0.85 * hw, 0.9 * hw);
    Some(crate::par::map_points(chart.npoints(), |p| {
        let r = chart.distance(&chart.coords(p), &center);
        if r <= r0 {
            1.0
        } else if r >= r1 {
            0.0
        } else {
            let s = (r - r0) / (r1 - r0);
            1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
        }
    }))
}

fn min_eigenvalue<const N: usize>(g: &MetricField) -> Result<f64> {
    let lows = crate::par::map_points(g.npoints(), |p| sym_eigenvalues::<N>(&unpack(g.at(p)))[0]);
    Ok(lows.into_iter().fold(f64::INFINITY, f64::min))
}

/// Time step from the parabolic CFL rule, capped by `max_dt`.
pub fn choose_dt(g: &MetricField, controls: &StepControls) -> Result<f64> {
    if let Some(dt) = controls.force_dt {
        return Ok(dt);
    }
    let lmin = crate::dispatch_dim!(g.dim(), min_eigenvalue::<N>(g))?;
    if !(lmin > 0.0) {
        return Err(Error::Precondition("metric has a non-positive eigenvalue".into()));
    }
    let h = g.chart().min_spacing();
    let n = g.dim() as f64;
    let dt = controls.cfl_fraction * h * h * lmin / (2.0 * n);
    Ok(dt.min(controls.max_dt))
}

fn eval_rhs<const N: usize>(
    chart: &GridChart,
    g: &[f64],
    bg: &Background,
    freeze: Option<&[f64]>,
    t: f64,
    out: &mut [f64],
) -> Result<()> {
    rhs_into::<N>(chart, g, bg, freeze, out).map_err(|p| Error::StepRejected {
        t,
        point: p,
        coords: chart.coords_vec(p),
    })
}

fn axpy(out: &mut [f64], base: &[f64], a: f64, x: &[f64]) {
    for ((o, b), v) in out.iter_mut().zip(base).zip(x) {
        *o = b + a * v;
    }
}

fn advance<const N: usize>(
    g: &MetricField,
    t: f64,
    dt: f64,
    bg: &Background,
    scheme: Scheme,
    freeze: Option<&[f64]>,
) -> Result<MetricField> {
    let chart = g.chart().clone();
    let y = g.data();
    let len = y.len();
    let mut k1 = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let mut next = vec![0.0; len];
    eval_rhs::<N>(&chart, y, bg, freeze, t, &mut k1)?;
    match scheme {
        Scheme::Rk2 => {
            let mut k2 = vec![0.0; len];
            axpy(&mut tmp, y, dt, &k1);
            eval_rhs::<N>(&chart, &tmp, bg, freeze, t + dt, &mut k2)?;
            for i in 0..len {
                next[i] = y[i] + 0.5 * dt * (k1[i] + k2[i]);
            }
        }
        Scheme::Rk4 => {
            let mut k2 = vec![0.0; len];
            let mut k3 = vec![0.0; len];
            let mut k4 = vec![0.0; len];
            axpy(&mut tmp, y, 0.5 * dt, &k1);
            eval_rhs::<N>(&chart, &tmp, bg, freeze, t + 0.5 * dt, &mut k2)?;
            axpy(&mut tmp, y, 0.5 * dt, &k2);
            eval_rhs::<N>(&chart, &tmp, bg, freeze, t + 0.5 * dt, &mut k3)?;
            axpy(&mut tmp, y, dt, &k3);
            eval_rhs::<N>(&chart, &tmp, bg, freeze, t + dt, &mut k4)?;
            for i in 0..len {
                next[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    let w = N * (N + 1) / 2;
    let bad = crate::par::map_points(chart.npoints(), |p| {
        let block = &next[p * w..(p + 1) * w];
        !block.iter().all(|v| v.is_finite()) || cholesky::<N>(&unpack(block)).is_none()
    });
    if let Some(p) = bad.iter().position(|b| *b) {
        return Err(Error::StepRejected {
            t: t + dt,
            point: p,
            coords: chart.coords_vec(p),
        });
    }
    Ok(MetricField::new(chart, next)?.with_mask(g.mask().cloned()))
}

fn advance_dispatch(
    g: &MetricField,
    t: f64,
    dt: f64,
    bg: &Background,
    scheme: Scheme,
    freeze: Option<&[f64]>,
) -> Result<MetricField> {
    crate::dispatch_dim!(g.dim(), advance::<N>(g, t, dt, bg, scheme, freeze))
}

/// One explicit step with the CFL-limited time step; returns the new state
/// and the step size used.
pub fn step(state: &FlowState, h: &Background, controls: &StepControls) -> Result<(FlowState, f64)> {
    state.g.same_chart(h.metric())?;
    let dt = choose_dt(&state.g, controls)?;
    let freeze = freeze_weights(state.g.chart());
    let g = advance_dispatch(&state.g, state.t, dt, h, controls.scheme, freeze.as_deref())?;
    Ok((FlowState { t: state.t + dt, g }, dt))
}

fn ratio_range<const N: usize>(g: &MetricField, bg: &Background) -> Result<(f64, f64)> {
    let ranges = crate::par::map_points(g.npoints(), |p| {
        let ev = relative_eigenvalues::<N>(&unpack(g.at(p)), &bg.at::<N>(p).frame);
        (ev[0], ev[N - 1])
    });
    Ok(ranges
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b))))
}

/// Smallest and largest eigenvalue of g relative to h over all points.
pub fn eigen_ratio_range(g: &MetricField, bg: &Background) -> Result<(f64, f64)> {
    crate::dispatch_dim!(g.dim(), ratio_range::<N>(g, bg))
}

fn total_volume(g: &MetricField) -> Result<f64> {
    let g = g.clone().with_mask(None);
    let one = ScalarField::from_scalar_fn(g.chart().clone(), |_| 1.0);
    Ok(integrate_scalar(&one, &g)?.value)
}

/// Evolve g0 under the h-flow up to `t_end`, recording snapshots at the
/// requested times (always including t = 0 and `t_end`).
///
/// The mask of g0 is carried along as metadata; every point is evolved.
pub fn run_flow(g0: &MetricField, h: &MetricField, t_end: f64, controls: &StepControls) -> Result<FlowTrajectory> {
    g0.same_chart(h)?;
    controls.validate(t_end)?;
    g0.check_finite()?;
    let bg = Background::new(h)?;
    run_flow_with(g0, &bg, t_end, controls)
}

pub fn run_flow_with(g0: &MetricField, bg: &Background, t_end: f64, controls: &StepControls) -> Result<FlowTrajectory> {
    controls.validate(t_end)?;
    let (lo, hi) = eigen_ratio_range(g0, bg)?;
    let thr = controls.closeness_threshold;
    if !(lo >= 1.0 / thr && hi <= thr) {
        let observed = if hi > thr { hi } else { lo };
        return Err(Error::NotClose { threshold: thr, observed });
    }

    let mut targets: Vec<f64> = controls.snapshot_times.iter().cloned().filter(|t| *t > 0.0).collect();
    if targets.last().is_none_or(|last| *last < t_end) {
        targets.push(t_end);
    }
    let freeze = freeze_weights(g0.chart());
    let mut traj = FlowTrajectory {
        background: bg.metric().clone(),
        snapshots: vec![FlowState { t: 0.0, g: g0.clone() }],
        controls: controls.clone(),
        steps: Vec::new(),
    };
    let mut state = FlowState { t: 0.0, g: g0.clone() };
    let (band_lo, band_hi) = CLOSENESS_BAND;
    for target in targets {
        while state.t < target {
            let outcome = (|| -> Result<(FlowState, StepRecord)> {
                let mut dt = choose_dt(&state.g, controls)?;
                let remaining = target - state.t;
                let landing = dt >= remaining * (1.0 - 1e-9);
                if landing {
                    dt = remaining;
                }
                let g = advance_dispatch(&state.g, state.t, dt, bg, controls.scheme, freeze.as_deref())?;
                let t = if landing { target } else { state.t + dt };
                let (lo, hi) = eigen_ratio_range(&g, bg)?;
                if !(lo >= band_lo && hi <= band_hi) {
                    return Err(Error::ClosenessLost {
                        t,
                        observed: if hi > band_hi { hi } else { lo },
                        lo: band_lo,
                        hi: band_hi,
                    });
                }
                let record = StepRecord {
                    t,
                    volume: total_volume(&g)?,
                    sup_dist_to_g0: g.clone().with_mask(None).sup_diff(&g0.clone().with_mask(None))?,
                    dt,
                    min_eig_ratio: lo,
                    max_eig_ratio: hi,
                };
                Ok((FlowState { t, g }, record))
            })();
            match outcome {
                Ok((next, record)) => {
                    log::debug!("t = {:.6} dt = {:.3e}", record.t, record.dt);
                    state = next;
                    traj.steps.push(record);
                }
                Err(reason) => {
                    return Err(Error::FlowAborted {
                        reason: Box::new(reason),
                        partial: Box::new(traj),
                    })
                }
            }
        }
        traj.snapshots.push(state.clone());
    }
    Ok(traj)
}

/// Volume per snapshot and the residual of d/dt Vol = −∫R dμ between
/// consecutive snapshots (trapezoidal in time; the first row is 0).
pub fn volume_series(traj: &FlowTrajectory) -> Result<DiagnosticsSeries> {
    if !traj.chart().is_torus() {
        return Err(Error::Unsupported("volume series needs a closed (torus) chart".into()));
    }
    let mut vols = Vec::new();
    let mut int_r = Vec::new();
    for s in &traj.snapshots {
        let g = s.g.clone().with_mask(None);
        vols.push(total_volume(&g)?);
        let r = scalar_curvature(&g)?;
        int_r.push(integrate_scalar(&r, &g)?.value);
    }
    let times = traj.times();
    let mut resid = vec![0.0; times.len()];
    for k in 1..times.len() {
        let dv = (vols[k] - vols[k - 1]) / (times[k] - times[k - 1]);
        resid[k] = (dv + 0.5 * (int_r[k] + int_r[k - 1])).abs();
    }
    let v0 = vols[0];
    let mut s = DiagnosticsSeries::new("volume", times);
    s.push_column("volume", vols.clone())?;
    s.push_column("integral_scalar", int_r)?;
    s.push_column("residual", resid)?;
    s.push_column("volume_ratio", vols.iter().map(|v| v / v0).collect())?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_chart, ChartSpec};
    use crate::linalg::sym_index;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn torus(n: usize) -> Arc<GridChart> {
        make_chart(&ChartSpec::torus(3, n, 2.0 * PI)).unwrap()
    }

    #[test]
    fn sigma_profile_values() {
        assert_eq!(sigma_profile(0.0, 3, 5.0).unwrap(), 0.0);
        assert_eq!(sigma_profile(-6.0, 3, 0.25).unwrap(), -3.0);
        assert_eq!(sigma_profile(-2.0, 4, 0.0).unwrap(), -2.0);
        assert!(matches!(sigma_profile(0.5, 3, 0.0), Err(Error::SigmaRegime(_))));
        let a = sigma_profile(-1.0, 3, 0.1).unwrap();
        let b = sigma_profile(-1.0, 3, 0.2).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn flat_state_is_fixed() {
        let chart = torus(8);
        let d = MetricField::euclidean(chart);
        let bg = Background::new(&d).unwrap();
        let (next, dt) = step(&FlowState { t: 0.0, g: d.clone() }, &bg, &StepControls::default()).unwrap();
        assert!(dt > 0.0);
        assert_eq!(next.g.data(), d.data());
    }

    #[test]
    fn heat_decay_after_one_step() {
        let chart = torus(16);
        let g = MetricField::from_fn(chart.clone(), |x, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
            out[sym_index(1, 1, 3)] += 0.05 * x[0].sin();
        });
        let d = MetricField::euclidean(chart);
        let bg = Background::new(&d).unwrap();
        let before = g.sup_diff(&d).unwrap();
        let (next, _) = step(&FlowState { t: 0.0, g }, &bg, &StepControls::default()).unwrap();
        assert!(next.g.sup_diff(&d).unwrap() < before);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let chart = torus(16);
        let g = MetricField::from_fn(chart.clone(), |x, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
            // Grid-scale oscillation: the stiffest mode.
            let s = if (x[0] * 16.0 / (2.0 * PI)).round() as i64 % 2 == 0 { 1.0 } else { -1.0 };
            out[0] += 0.05 * s;
        });
        let d = MetricField::euclidean(chart);
        let controls = StepControls {
            force_dt: Some(2.0),
            ..StepControls::default()
        };
        match run_flow(&g, &d, 20.0, &controls) {
            Err(Error::FlowAborted { reason, partial }) => {
                assert!(matches!(*reason, Error::StepRejected { .. } | Error::ClosenessLost { .. }));
                assert_eq!(partial.snapshots.len(), 1);
            }
            other => panic!("expected an aborted flow, got {other:?}"),
        }
    }

    #[test]
    fn closeness_precondition() {
        let chart = torus(8);
        let d = MetricField::euclidean(chart);
        let r = run_flow(&d.scaled(1.5), &d, 0.1, &StepControls::default());
        assert!(matches!(r, Err(Error::NotClose { .. })));
    }

    #[test]
    fn flat_trajectory_is_constant() {
        let chart = torus(8);
        let d = MetricField::euclidean(chart);
        let controls = StepControls::default().uniform_snapshots(0.1, 4);
        let traj = run_flow(&d, &d, 0.1, &controls).unwrap();
        let mut expected = vec![0.0];
        expected.extend(&controls.snapshot_times);
        assert_eq!(traj.times(), expected);
        for s in &traj.snapshots {
            assert_eq!(s.g.data(), d.data());
        }
        assert!(traj.steps.iter().all(|r| r.sup_dist_to_g0 == 0.0));
        let vs = volume_series(&traj).unwrap();
        assert!(vs.column("residual").unwrap().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn rk2_time_convergence() {
        let chart = torus(12);
        let g0 = MetricField::from_fn(chart.clone(), |x, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
            out[0] += 0.05 * x[1].sin() * x[2].cos();
            out[1] += 0.02 * x[2].sin();
        });
        let d = MetricField::euclidean(chart);
        let run = |dt: f64| {
            let c = StepControls {
                force_dt: Some(dt),
                ..StepControls::default()
            };
            run_flow(&g0, &d, 0.08, &c).unwrap().last().g.clone()
        };
        let a = run(0.02);
        let b = run(0.01);
        let c = run(0.005);
        let e1 = a.sup_diff(&b).unwrap();
        let e2 = b.sup_diff(&c).unwrap();
        assert!((e1 / e2).log2() >= 1.8, "{e1} {e2}");
    }
}
