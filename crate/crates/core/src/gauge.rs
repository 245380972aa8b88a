//! Gauge diffeomorphisms of the h-flow.
//!
//! Maps are stored as the chart coordinates of each grid point's image.
//! Torus images are wrapped into the fundamental domain; on AF boxes an image
//! that leaves the chart is frozen and masked for all later times.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curvature::{christoffel, ricci_tensor, Background};
use crate::diagnostics::DiagnosticsSeries;
use crate::error::{Error, Result};
use crate::flow::{deturck_vector_with, FlowTrajectory};
use crate::grid::io::{read_field_on, read_mask, write_field, write_mask};
use crate::grid::{
    christoffel_index, interpolate_into, partial_derivative, CellMask, ChristoffelField, GridChart,
    MetricField, ScalarField, VectorField, MAX_DIM,
};
use crate::linalg::sym_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ForwardFromIdentity,
    BackwardFromIdentityAtT,
}

#[derive(Clone, Debug)]
pub struct DiffeoTrajectory {
    pub times: Vec<f64>,
    /// Image coordinates per grid point; each map's mask marks escaped points.
    pub maps: Vec<VectorField>,
    pub direction: Direction,
}

impl DiffeoTrajectory {
    pub fn chart(&self) -> &Arc<GridChart> {
        self.maps[0].chart()
    }

    pub fn anchor_index(&self) -> usize {
        match self.direction {
            Direction::ForwardFromIdentity => 0,
            Direction::BackwardFromIdentityAtT => self.times.len() - 1,
        }
    }
}

/// The identity map: grid coordinates of every point.
pub fn identity_map(chart: &Arc<GridChart>) -> VectorField {
    VectorField::from_fn(chart.clone(), |x, out| out.copy_from_slice(x))
}

fn wrap(chart: &GridChart, x: &mut [f64]) {
    for a in 0..chart.dim() {
        if chart.periodic()[a] {
            let l = chart.extent(a);
            let o = chart.origin()[a];
            x[a] = o + (x[a] - o).rem_euclid(l);
            // rem_euclid may round up to exactly l.
            if x[a] >= o + l {
                x[a] = o;
            }
        }
    }
}

/// Integrate `dx/dt = sign · V(x, t)` through the snapshot times with Heun's
/// method, `substeps` per interval, V linear in time between snapshots.
/// The identity anchor sits at the first time (forward) or the last (backward).
pub fn integrate_velocity(
    times: &[f64],
    velocity: &[VectorField],
    sign: f64,
    direction: Direction,
    substeps: usize,
) -> Result<DiffeoTrajectory> {
    if times.is_empty() || times.len() != velocity.len() {
        return Err(Error::Mismatch("one velocity field per snapshot time is required".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("snapshot times must be strictly increasing".into()));
    }
    let chart = velocity[0].chart().clone();
    for v in velocity {
        chart_check(&chart, v)?;
    }
    let substeps = substeps.max(1);
    let dim = chart.dim();
    let npts = chart.npoints();
    let order: Vec<usize> = match direction {
        Direction::ForwardFromIdentity => (0..times.len()).collect(),
        Direction::BackwardFromIdentityAtT => (0..times.len()).rev().collect(),
    };

    let mut maps: Vec<Option<VectorField>> = vec![None; times.len()];
    let mut pos = identity_map(&chart).into_data();
    let mut escaped = vec![false; npts];
    maps[order[0]] = Some(identity_map(&chart));

    for win in order.windows(2) {
        let (a, b) = (win[0], win[1]);
        let (ta, tb) = (times[a], times[b]);
        let h = (tb - ta) / substeps as f64;
        let (va, vb) = (&velocity[a], &velocity[b]);
        let eval = |x: &[f64], t: f64, out: &mut [f64]| -> Result<()> {
            let s = (t - ta) / (tb - ta);
            let mut wa = [0.0; MAX_DIM];
            let mut wb = [0.0; MAX_DIM];
            interpolate_into(va, x, &mut wa[..dim])?;
            interpolate_into(vb, x, &mut wb[..dim])?;
            for k in 0..dim {
                out[k] = sign * ((1.0 - s) * wa[k] + s * wb[k]);
            }
            Ok(())
        };
        let next: Vec<Option<[f64; MAX_DIM]>> = crate::par::map_points(npts, |p| {
            if escaped[p] {
                return None;
            }
            let mut x = [0.0; MAX_DIM];
            x[..dim].copy_from_slice(&pos[p * dim..(p + 1) * dim]);
            for s in 0..substeps {
                let t0 = ta + s as f64 * h;
                let mut k1 = [0.0; MAX_DIM];
                let mut k2 = [0.0; MAX_DIM];
                eval(&x[..dim], t0, &mut k1).ok()?;
                let mut y = x;
                for k in 0..dim {
                    y[k] += h * k1[k];
                }
                wrap(&chart, &mut y[..dim]);
                eval(&y[..dim], t0 + h, &mut k2).ok()?;
                for k in 0..dim {
                    x[k] += 0.5 * h * (k1[k] + k2[k]);
                }
                wrap(&chart, &mut x[..dim]);
                if !chart.contains(&x[..dim]) {
                    return None;
                }
            }
            Some(x)
        });
        for (p, r) in next.into_iter().enumerate() {
            match r {
                Some(x) => pos[p * dim..(p + 1) * dim].copy_from_slice(&x[..dim]),
                None => escaped[p] = true,
            }
        }
        let mask = escaped
            .iter()
            .any(|&e| e)
            .then(|| Arc::new(CellMask::from_flags(escaped.clone())));
        maps[b] = Some(VectorField::new(chart.clone(), pos.clone())?.with_mask(mask));
    }
    Ok(DiffeoTrajectory {
        times: times.to_vec(),
        maps: maps.into_iter().map(|m| m.expect("every time visited")).collect(),
        direction,
    })
}

fn chart_check(chart: &Arc<GridChart>, f: &VectorField) -> Result<()> {
    if **f.chart() != **chart {
        return Err(Error::Mismatch("velocity fields live on different charts".into()));
    }
    Ok(())
}

/// W^k of every snapshot against the trajectory background.
pub fn deturck_fields(traj: &FlowTrajectory) -> Result<Vec<VectorField>> {
    let bg = Background::new(&traj.background)?;
    traj.snapshots
        .iter()
        .map(|s| deturck_vector_with(&s.g, &bg).map(|(up, _)| up))
        .collect()
}

/// Φ_t with ∂_tΦ = −W(Φ, t), Φ = id at the first snapshot.
pub fn integrate_phi(traj: &FlowTrajectory) -> Result<DiffeoTrajectory> {
    integrate_phi_with(traj, 1)
}

pub fn integrate_phi_with(traj: &FlowTrajectory, substeps: usize) -> Result<DiffeoTrajectory> {
    let w = deturck_fields(traj)?;
    integrate_velocity(&traj.times(), &w, -1.0, Direction::ForwardFromIdentity, substeps)
}

/// Ψ_t with ∂_tΨ = Ŵ(Ψ, t), Ψ = id at `t_end`. For the normalized flow the
/// raised field Ŵ^k equals W^k: the factor n/(n − 2σ₀t) on Ŵ_j is undone by
/// the inverse of the normalized metric, so σ₀ only enters the validation.
pub fn integrate_psi(traj: &FlowTrajectory, sigma0: f64, t_end: f64) -> Result<DiffeoTrajectory> {
    if sigma0 > 0.0 || !sigma0.is_finite() {
        return Err(Error::SigmaRegime(sigma0));
    }
    let times = traj.times();
    let last = *times.last().expect("nonempty trajectory");
    if (last - t_end).abs() > 1e-12 * t_end.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "trajectory ends at {last}, not at T = {t_end}"
        )));
    }
    let w = deturck_fields(traj)?;
    integrate_velocity(&times, &w, 1.0, Direction::BackwardFromIdentityAtT, 1)
}

/// Minimal-image displacement Φ(x) − x per grid point.
fn displacement(map: &VectorField) -> VectorField {
    let chart = map.chart().clone();
    let dim = chart.dim();
    let data = map.data();
    let mut out = VectorField::zeros(chart.clone());
    crate::par::fill_points(out.data_mut(), dim, |p, block| {
        let x = chart.coords(p);
        let d = chart.displacement(&x[..dim], &data[p * dim..(p + 1) * dim]);
        block.copy_from_slice(&d[..dim]);
    });
    out.with_mask(map.mask().cloned())
}

/// ∂_iΦ^a as `jac[i][a]` fields (one VectorField per axis i).
fn jacobian(map: &VectorField) -> Result<Vec<VectorField>> {
    let d = displacement(map);
    let dim = map.dim();
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut di = partial_derivative(&d, i, 1)?;
        let data = di.data_mut();
        for p in 0..map.npoints() {
            data[p * dim + i] += 1.0;
        }
        out.push(di);
    }
    Ok(out)
}

/// (Φ*g)_ij(x) = ∂_iΦ^a ∂_jΦ^b g_ab(Φ(x)). Escaped points keep g(x) and are masked.
pub fn pullback_metric(map: &VectorField, g: &MetricField) -> Result<MetricField> {
    map.same_chart(g)?;
    let chart = g.chart().clone();
    let dim = chart.dim();
    let w = g.width();
    let jac = jacobian(map)?;
    let map_mask = map.mask().map(|m| m.widen_jet(&chart));
    let mut out = MetricField::zeros(chart.clone());
    crate::par::try_fill_points::<Error, _>(out.data_mut(), w, |p, block| {
        if map_mask.as_ref().is_some_and(|m| m.is_excluded(p)) {
            block.copy_from_slice(g.at(p));
            return Ok(());
        }
        let mut gb = [0.0; 10];
        interpolate_into(g, map.at(p), &mut gb[..w])?;
        for i in 0..dim {
            for j in i..dim {
                let mut s = 0.0;
                for a in 0..dim {
                    let ja = jac[i].at(p)[a];
                    for b in 0..dim {
                        s += ja * jac[j].at(p)[b] * gb[sym_index(a, b, dim)];
                    }
                }
                block[sym_index(i, j, dim)] = s;
            }
        }
        Ok(())
    })?;
    let mask = match (map_mask, g.mask()) {
        (Some(a), Some(b)) => Some(a.union(&b.widen_jet(&chart))),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b.widen_jet(&chart)),
        (None, None) => None,
    };
    Ok(out.with_mask(mask.map(Arc::new)))
}

/// Sup and mean (over unmasked points) of the largest absolute component.
fn sup_mean(values: &[f64], width: usize, mask: Option<&CellMask>) -> (f64, f64) {
    let per_point: Vec<f64> = values
        .chunks(width)
        .enumerate()
        .filter(|(p, _)| !mask.is_some_and(|m| m.is_excluded(*p)))
        .map(|(_, b)| b.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    if per_point.is_empty() {
        return (0.0, 0.0);
    }
    let sup = per_point.iter().cloned().fold(0.0, f64::max);
    (sup, crate::par::pairwise_sum(&per_point) / per_point.len() as f64)
}

fn residual_series(name: &str, times: &[f64], metrics: &[MetricField]) -> Result<DiagnosticsSeries> {
    if metrics.len() < 3 {
        return Err(Error::Precondition(format!(
            "centered time differences need at least 3 snapshots, got {}",
            metrics.len()
        )));
    }
    let mut ts = Vec::new();
    let mut sups = Vec::new();
    let mut means = Vec::new();
    for k in 1..metrics.len() - 1 {
        let (prev, cur, next) = (&metrics[k - 1], &metrics[k], &metrics[k + 1]);
        let dt = times[k + 1] - times[k - 1];
        let ric = ricci_tensor(cur)?;
        let mut res = ric.data().to_vec();
        for (q, r) in res.iter_mut().enumerate() {
            *r = (next.data()[q] - prev.data()[q]) / dt + 2.0 * *r;
        }
        let mut mask = ric.mask().map(|m| (**m).clone());
        for m in [prev.mask(), next.mask()].into_iter().flatten() {
            mask = Some(match mask {
                Some(x) => x.union(m),
                None => (**m).clone(),
            });
        }
        let (s, m) = sup_mean(&res, cur.width(), mask.as_ref());
        ts.push(times[k]);
        sups.push(s);
        means.push(m);
    }
    DiagnosticsSeries::new(name, ts)
        .with_column("sup_residual", sups)?
        .with_column("mean_residual", means)
}

/// Centered-difference residual of ∂_t ĝ = −2 Ric(ĝ) for ĝ = Φ_t^* g(t).
pub fn ricci_flow_residual(traj: &FlowTrajectory, phi: &DiffeoTrajectory) -> Result<DiagnosticsSeries> {
    let times = traj.times();
    if phi.times.len() != times.len() || phi.times.iter().zip(&times).any(|(a, b)| a != b) {
        return Err(Error::Mismatch("diffeomorphism times differ from the trajectory".into()));
    }
    if traj.snapshots.len() < 3 {
        return residual_series("ricci_flow_residual", &times, &[]);
    }
    let pulled = traj
        .snapshots
        .iter()
        .zip(&phi.maps)
        .map(|(s, m)| pullback_metric(m, &s.g))
        .collect::<Result<Vec<_>>>()?;
    residual_series("ricci_flow_residual", &times, &pulled)
}

/// The same residual with the pullback skipped (negative control).
pub fn unpulled_ricci_flow_residual(traj: &FlowTrajectory) -> Result<DiagnosticsSeries> {
    let metrics: Vec<MetricField> = traj.snapshots.iter().map(|s| s.g.clone()).collect();
    residual_series("unpulled_ricci_flow_residual", &traj.times(), &metrics)
}

/// sup|W|_h and sup|W|_h · t^{1/2} per snapshot. No bound is asserted.
pub fn deturck_growth_series(traj: &FlowTrajectory) -> Result<DiagnosticsSeries> {
    let w = deturck_fields(traj)?;
    let h = &traj.background;
    let dim = h.dim();
    let mut sup = Vec::new();
    for wf in &w {
        let mask = wf.mask();
        let mut m = 0.0f64;
        for p in 0..wf.npoints() {
            if mask.is_some_and(|mk| mk.is_excluded(p)) {
                continue;
            }
            let v = wf.at(p);
            let hp = h.at(p);
            let mut s = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    s += hp[sym_index(i, j, dim)] * v[i] * v[j];
                }
            }
            m = m.max(s.sqrt());
        }
        sup.push(m);
    }
    let times = traj.times();
    let scaled = sup.iter().zip(&times).map(|(s, t)| s * t.sqrt()).collect();
    DiagnosticsSeries::new("deturck_growth", times)
        .with_column("sup_w", sup)?
        .with_column("sup_w_sqrt_t", scaled)
}

/// Pointwise defect of the second-order identity
/// ∂_i∂_jΨ^m = Γ̂^k_ij ∂_kΨ^m − Γ̄^m_kl ∂_iΨ^l ∂_jΨ^k,
/// with Γ̂ from `g_hat` and Γ̄ from `g_bar` evaluated at Ψ(x). Returns the
/// largest absolute component per point.
pub fn calabi_hartman_defect(map: &VectorField, g_hat: &MetricField, g_bar: &MetricField) -> Result<ScalarField> {
    map.same_chart(g_hat)?;
    map.same_chart(g_bar)?;
    let chart = map.chart().clone();
    let dim = chart.dim();
    let jac = jacobian(map)?;
    let d = displacement(map);
    let mut hess = vec![vec![None; dim]; dim];
    for i in 0..dim {
        for j in i..dim {
            let f = if i == j {
                partial_derivative(&d, i, 2)?
            } else {
                partial_derivative(&partial_derivative(&d, i, 1)?, j, 1)?
            };
            hess[i][j] = Some(f);
        }
    }
    let gh: ChristoffelField = christoffel(g_hat)?;
    let gb: ChristoffelField = christoffel(g_bar)?;
    let cw = gb.width();
    let mut out = ScalarField::zeros(chart.clone());
    crate::par::try_fill_points::<Error, _>(out.data_mut(), 1, |p, o| {
        let mut gbar = [0.0; 40];
        interpolate_into(&gb, map.at(p), &mut gbar[..cw])?;
        let ghat = gh.at(p);
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                let hij = hess[i.min(j)][i.max(j)].as_ref().expect("filled");
                for m in 0..dim {
                    let mut rhs = 0.0;
                    for k in 0..dim {
                        rhs += ghat[christoffel_index(k, i, j, dim)] * jac[k].at(p)[m];
                        for l in 0..dim {
                            rhs -= gbar[christoffel_index(m, k, l, dim)] * jac[i].at(p)[l] * jac[j].at(p)[k];
                        }
                    }
                    worst = worst.max((hij.at(p)[m] - rhs).abs());
                }
            }
        }
        o[0] = worst;
        Ok(())
    })?;
    Ok(out.with_mask(map.mask().map(|m| Arc::new(m.widen_jet(&chart)))))
}

pub const DIFFEO_MANIFEST: &str = "diffeo.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffeoManifest {
    pub version: u32,
    pub direction: Direction,
    pub times: Vec<f64>,
    pub maps: Vec<String>,
    pub masks: Vec<Option<String>>,
}

pub fn write_diffeo(dir: &Path, d: &DiffeoTrajectory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = DiffeoManifest {
        version: 1,
        direction: d.direction,
        times: d.times.clone(),
        maps: Vec::new(),
        masks: Vec::new(),
    };
    for (k, m) in d.maps.iter().enumerate() {
        let name = format!("map_{k:04}.field");
        write_field(&dir.join(&name), m)?;
        manifest.maps.push(name);
        let mask = m.mask().map(|mask| {
            let name = format!("map_{k:04}.mask");
            write_mask(&dir.join(&name), m.chart(), mask).map(|_| name)
        });
        manifest.masks.push(mask.transpose()?);
    }
    std::fs::write(dir.join(DIFFEO_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_diffeo(dir: &Path) -> Result<DiffeoTrajectory> {
    let manifest: DiffeoManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(DIFFEO_MANIFEST))?)?;
    if manifest.maps.is_empty() || manifest.maps.len() != manifest.times.len() || manifest.masks.len() != manifest.maps.len()
    {
        return Err(Error::Format("diffeo manifest lists inconsistent entries".into()));
    }
    let header = crate::grid::io::read_header(&dir.join(&manifest.maps[0]))?;
    let chart = header.chart()?;
    let mut maps = Vec::new();
    for (name, mask) in manifest.maps.iter().zip(&manifest.masks) {
        let mut f: VectorField = read_field_on(&dir.join(name), &chart)?;
        if let Some(mname) = mask {
            let (_, m) = read_mask(&dir.join(mname))?;
            f.set_mask(Some(Arc::new(m)));
        }
        maps.push(f);
    }
    Ok(DiffeoTrajectory {
        times: manifest.times,
        maps,
        direction: manifest.direction,
    })
}
