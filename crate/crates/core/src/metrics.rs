//! Closed-form metric constructors used as initial data and backgrounds.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellMask, GridChart, MetricField};
use crate::linalg::sym_index;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    /// δ.
    Flat,
    /// Constant diagonal metric.
    ConstantDiag { diag: Vec<f64> },
    /// e^{2u} δ with u = A sin x₀ sin x₁.
    ConformalSines { amplitude: f64 },
    /// δ + ε sin x₀ sin x₁ (e₀⊗e₀ + e₁⊗e₁).
    PerturbedFlat { epsilon: f64 },
    /// δ + ε sin(x_axis) e_c⊗e_c.
    DiagonalSine { epsilon: f64, axis: usize, component: usize },
    /// ψ^{4/(n−2)} δ with ψ = 1 + A (r² + a²)^{−p/2}; scalar-positive for 0 < p < n − 2.
    PositiveStar { amplitude: f64, core: f64, power: f64 },
    /// (1 + m/(2r))⁴ δ in n = 3, capped inside `r_min`.
    Schwarzschild { mass: f64, r_min: f64 },
    /// (1 + c r^{−(n−2)}) δ, capped inside `r_min`.
    ConformalTail { c: f64, r_min: f64 },
}

impl MetricKind {
    pub fn is_af(&self) -> bool {
        matches!(
            self,
            MetricKind::PositiveStar { .. } | MetricKind::Schwarzschild { .. } | MetricKind::ConformalTail { .. }
        )
    }

    fn validate(&self, chart: &GridChart) -> Result<()> {
        let n = chart.dim();
        let bad = |path: &str, msg: String| Err(Error::config(path, msg));
        match self {
            MetricKind::ConstantDiag { diag } => {
                if diag.len() != n || diag.iter().any(|d| !(*d > 0.0)) {
                    return bad("metric.diag", format!("needs {n} positive entries"));
                }
            }
            MetricKind::DiagonalSine { axis, component, .. } => {
                if *axis >= n || *component >= n {
                    return bad("metric.axis", "axis/component out of range".into());
                }
            }
            MetricKind::PositiveStar { amplitude, core, power } => {
                if !(*amplitude >= 0.0) || !(*core > 0.0) || !(*power > 0.0 && *power < (n - 2) as f64) {
                    return bad("metric", "positive star needs A >= 0, a > 0, 0 < p < n - 2".into());
                }
            }
            MetricKind::Schwarzschild { mass, r_min } => {
                if n != 3 {
                    return Err(Error::Unsupported("the isotropic Schwarzschild metric is built for n = 3".into()));
                }
                if !(*mass >= 0.0) || !(*r_min > 0.0) {
                    return bad("metric.mass", "mass must be >= 0 and r_min > 0".into());
                }
            }
            MetricKind::ConformalTail { c, r_min } if !(*r_min > 0.0) || !(1.0 + c * r_min.powi(2 - n as i32) > 0.0) => {
                return bad("metric.c", "tail must keep 1 + c r^(2-n) positive outside r_min".into());
            }
            _ => {}
        }
        if self.is_af() && chart.is_torus() {
            return Err(Error::Unsupported("radial AF metrics need an AF box chart".into()));
        }
        Ok(())
    }
}

/// Smooth even-polynomial continuation `a + b r² + c r⁴` of a radial profile
/// inside `r0`, matching value, slope and curvature at `r0`.
pub fn cap_profile(r: f64, r0: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    let c = (f2 - f1 / r0) / (8.0 * r0 * r0);
    let b = (f1 - 4.0 * c * r0 * r0 * r0) / (2.0 * r0);
    let a = f0 - b * r0 * r0 - c * r0.powi(4);
    a + b * r * r + c * r.powi(4)
}

/// Conformal factor 1 + u(r) of the AF kinds, capped inside r_min.
pub(crate) fn af_factor(kind: &MetricKind, n: usize, r: f64) -> f64 {
    match *kind {
        MetricKind::Schwarzschild { mass, r_min } => {
            let psi = |r: f64| {
                let v = 1.0 + mass / (2.0 * r);
                (v, -mass / (2.0 * r * r), mass / (r * r * r))
            };
            let p = if r >= r_min {
                psi(r).0
            } else {
                let (f0, f1, f2) = psi(r_min);
                cap_profile(r, r_min, f0, f1, f2)
            };
            p.powi(4)
        }
        MetricKind::ConformalTail { c, r_min } => {
            let k = (n - 2) as f64;
            let u = |r: f64| (c * r.powf(-k), -k * c * r.powf(-k - 1.0), k * (k + 1.0) * c * r.powf(-k - 2.0));
            if r >= r_min {
                1.0 + u(r).0
            } else {
                let (f0, f1, f2) = u(r_min);
                1.0 + cap_profile(r, r_min, f0, f1, f2)
            }
        }
        MetricKind::PositiveStar { amplitude, core, power } => {
            let psi = 1.0 + amplitude * (r * r + core * core).powf(-power / 2.0);
            psi.powf(4.0 / (n as f64 - 2.0))
        }
        _ => 1.0,
    }
}

/// Cap radius of an AF kind, if any.
pub(crate) fn cap_radius(kind: &MetricKind) -> Option<f64> {
    match kind {
        MetricKind::Schwarzschild { r_min, .. } | MetricKind::ConformalTail { r_min, .. } => Some(*r_min),
        _ => None,
    }
}

/// Pointwise metric block of `kind` at chart point `x`.
pub(crate) fn metric_block(kind: &MetricKind, chart: &GridChart, x: &[f64], out: &mut [f64]) {
    let n = chart.dim();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut diag = |v: f64| {
        for i in 0..n {
            out[sym_index(i, i, n)] = v;
        }
    };
    match kind {
        MetricKind::Flat => diag(1.0),
        MetricKind::ConstantDiag { diag: d } => {
            for i in 0..n {
                out[sym_index(i, i, n)] = d[i];
            }
        }
        MetricKind::ConformalSines { amplitude } => diag((2.0 * amplitude * x[0].sin() * x[1].sin()).exp()),
        MetricKind::PerturbedFlat { epsilon } => {
            diag(1.0);
            let s = epsilon * x[0].sin() * x[1].sin();
            out[sym_index(0, 0, n)] += s;
            out[sym_index(1, 1, n)] += s;
        }
        MetricKind::DiagonalSine { epsilon, axis, component } => {
            diag(1.0);
            out[sym_index(*component, *component, n)] += epsilon * x[*axis].sin();
        }
        af => {
            let center = chart.center();
            let r = chart.distance(x, &center);
            diag(af_factor(af, n, r));
        }
    }
}

/// Sample `kind` on `chart`. AF kinds with a cap return the cap region as a mask.
pub fn make_metric(chart: &Arc<GridChart>, kind: &MetricKind) -> Result<MetricField> {
    kind.validate(chart)?;
    let g = MetricField::from_fn(chart.clone(), |x, out| metric_block(kind, chart, x, out));
    let mask = cap_radius(kind).map(|r0| {
        let center = chart.center();
        Arc::new(CellMask::from_fn(chart, |x| chart.distance(x, &center) < r0))
    });
    let g = g.with_mask(mask);
    g.check_finite()?;
    g.check_positive_definite()?;
    Ok(g)
}
