//! Christoffel symbols, Ricci/scalar curvature, |Rm|, the Laplace-Beltrami
//! operator and background-covariant derivative norms.

mod background;
pub(crate) mod pointwise;

use std::sync::Arc;

pub use background::{background_norms, background_norms_with, Background};
pub(crate) use background::{covariant_derivatives, BackgroundPoint};

use crate::error::{Error, Result};
use crate::grid::{
    christoffel_index, Christoffel, ChristoffelField, Field, MetricField, Rank, ScalarField, SymTensor,
    SymTensorField,
};
use crate::linalg::pack;
use pointwise::{connection, metric_jet, norm2_rank4, packed_jet, ricci, riemann_lowered, trace, Jet};

#[derive(Clone, Debug)]
pub struct CurvaturePackage {
    pub christoffel: ChristoffelField,
    pub ricci: SymTensorField,
    pub scalar: ScalarField,
    /// Pointwise |Rm|_g.
    pub riemann_norm: ScalarField,
}

pub(crate) fn singular_at(g: &MetricField, p: usize) -> Error {
    Error::SingularMetric {
        point: p,
        coords: g.chart().coords_vec(p),
    }
}

pub fn christoffel(g: &MetricField) -> Result<ChristoffelField> {
    crate::dispatch_dim!(g.dim(), christoffel_impl::<N>(g))
}

fn christoffel_impl<const N: usize>(g: &MetricField) -> Result<ChristoffelField> {
    let chart = g.chart().clone();
    let w = Christoffel::width(N);
    let mut out = ChristoffelField::zeros(chart.clone());
    crate::par::try_fill_points(out.data_mut(), w, |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, false);
        let Some(c) = connection(&jet, false) else {
            return masked_or_fail(g, p, block);
        };
        for k in 0..N {
            for i in 0..N {
                for j in i..N {
                    block[christoffel_index(k, i, j, N)] = c.gamma[k][i][j];
                }
            }
        }
        Ok(())
    })?;
    let mask = g.mask().map(|m| Arc::new(m.widen_jet(&chart)));
    Ok(out.with_mask(mask))
}

fn masked_or_fail(g: &MetricField, p: usize, block: &mut [f64]) -> Result<()> {
    if g.is_masked(p) {
        block.iter_mut().for_each(|v| *v = f64::NAN);
        Ok(())
    } else {
        Err(singular_at(g, p))
    }
}

pub fn curvature_package(g: &MetricField) -> Result<CurvaturePackage> {
    crate::dispatch_dim!(g.dim(), package_impl::<N>(g))
}

fn package_impl<const N: usize>(g: &MetricField) -> Result<CurvaturePackage> {
    let chart = g.chart().clone();
    let cw = Christoffel::width(N);
    let sw = SymTensor::width(N);
    let width = cw + sw + 2;
    let mut buf = vec![0.0; width * chart.npoints()];
    crate::par::try_fill_points(&mut buf, width, |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, true);
        let Some(c) = connection(&jet, true) else {
            return masked_or_fail(g, p, block);
        };
        for k in 0..N {
            for i in 0..N {
                for j in i..N {
                    block[christoffel_index(k, i, j, N)] = c.gamma[k][i][j];
                }
            }
        }
        let ric = ricci(&c);
        pack(&ric, &mut block[cw..cw + sw]);
        block[cw + sw] = trace(&c.ginv, &ric);
        let rm = riemann_lowered(&jet.g, &c);
        block[cw + sw + 1] = norm2_rank4(&rm, &c.frame).sqrt();
        Ok(())
    })?;
    let mask = g.mask().map(|m| Arc::new(m.widen_jet(&chart)));
    let split = |lo: usize, hi: usize| -> Vec<f64> {
        buf.chunks(width).flat_map(|b| b[lo..hi].iter().cloned()).collect()
    };
    Ok(CurvaturePackage {
        christoffel: Field::new(chart.clone(), split(0, cw))?.with_mask(mask.clone()),
        ricci: Field::new(chart.clone(), split(cw, cw + sw))?.with_mask(mask.clone()),
        scalar: Field::new(chart.clone(), split(cw + sw, cw + sw + 1))?.with_mask(mask.clone()),
        riemann_norm: Field::new(chart, split(cw + sw + 1, width))?.with_mask(mask),
    })
}

pub fn ricci_tensor(g: &MetricField) -> Result<SymTensorField> {
    crate::dispatch_dim!(g.dim(), ricci_impl::<N>(g))
}

fn ricci_impl<const N: usize>(g: &MetricField) -> Result<SymTensorField> {
    let chart = g.chart().clone();
    let mut out = SymTensorField::zeros(chart.clone());
    crate::par::try_fill_points(out.data_mut(), SymTensor::width(N), |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, true);
        let Some(c) = connection(&jet, true) else {
            return masked_or_fail(g, p, block);
        };
        pack(&ricci(&c), block);
        Ok(())
    })?;
    let mask = g.mask().map(|m| Arc::new(m.widen_jet(&chart)));
    Ok(out.with_mask(mask))
}

pub fn scalar_curvature(g: &MetricField) -> Result<ScalarField> {
    crate::dispatch_dim!(g.dim(), scalar_impl::<N>(g))
}

fn scalar_impl<const N: usize>(g: &MetricField) -> Result<ScalarField> {
    let chart = g.chart().clone();
    let mut out = ScalarField::zeros(chart.clone());
    crate::par::try_fill_points(out.data_mut(), 1, |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, true);
        let Some(c) = connection(&jet, true) else {
            return masked_or_fail(g, p, block);
        };
        block[0] = trace(&c.ginv, &ricci(&c));
        Ok(())
    })?;
    let mask = g.mask().map(|m| Arc::new(m.widen_jet(&chart)));
    Ok(out.with_mask(mask))
}

/// Δ_g f = g^ij (∂_i∂_j f − Γ^k_ij ∂_k f).
pub fn laplace_beltrami(g: &MetricField, f: &ScalarField) -> Result<ScalarField> {
    g.same_chart(f)?;
    crate::dispatch_dim!(g.dim(), laplace_impl::<N>(g, f))
}

fn laplace_impl<const N: usize>(g: &MetricField, f: &ScalarField) -> Result<ScalarField> {
    let chart = g.chart().clone();
    let mut out = ScalarField::zeros(chart.clone());
    crate::par::try_fill_points(out.data_mut(), 1, |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, false);
        let Some(c) = connection(&jet, false) else {
            return masked_or_fail(g, p, block);
        };
        let fj = packed_jet(&chart, f.data(), 1, p, true);
        let mut s = 0.0;
        for i in 0..N {
            for j in 0..N {
                let mut hess = fj.d2[i][j][0];
                for k in 0..N {
                    hess -= c.gamma[k][i][j] * fj.d1[k][0];
                }
                s += c.ginv[i][j] * hess;
            }
        }
        block[0] = s;
        Ok(())
    })?;
    let mask = g.joint_mask(f).map(|m| Arc::new(m.widen_jet(&chart)));
    Ok(out.with_mask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_chart, ChartSpec, GridChart};
    use crate::linalg::sym_index;
    use std::f64::consts::PI;

    fn torus(n: usize) -> Arc<GridChart> {
        make_chart(&ChartSpec::torus(3, n, 2.0 * PI)).unwrap()
    }

    fn diag(chart: Arc<GridChart>, f: impl Fn(&[f64]) -> [f64; 3] + Sync + Send) -> MetricField {
        MetricField::from_fn(chart, move |x, out| {
            let d = f(x);
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = d[0];
            out[3] = d[1];
            out[5] = d[2];
        })
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let chart = torus(8);
        let pkg = curvature_package(&MetricField::euclidean(chart.clone())).unwrap();
        assert_eq!(pkg.christoffel.sup_abs(), 0.0);
        assert_eq!(pkg.ricci.sup_abs(), 0.0);
        assert_eq!(pkg.scalar.sup_abs(), 0.0);
        assert_eq!(pkg.riemann_norm.sup_abs(), 0.0);
        let pkg = curvature_package(&diag(chart, |_| [4.0, 0.25, 9.0])).unwrap();
        assert_eq!(pkg.scalar.sup_abs(), 0.0);
        assert_eq!(pkg.christoffel.sup_abs(), 0.0);
    }

    #[test]
    fn christoffel_of_exponential_diagonal() {
        // Γ^0_00 = ½ g^00 ∂_0 g_00 = cos x for g_00 = exp(2 sin x).
        let mut errs = Vec::new();
        for n in [16, 32] {
            let chart = torus(n);
            let g = diag(chart.clone(), |x| [(2.0 * x[0].sin()).exp(), 1.0, 1.0]);
            let gam = christoffel(&g).unwrap();
            let mut err: f64 = 0.0;
            for p in 0..chart.npoints() {
                let x = chart.coords(p);
                err = err.max((gam.at(p)[christoffel_index(0, 0, 0, 3)] - x[0].cos()).abs());
                // Symmetric storage: only the one diagonal entry is nonzero.
                assert_eq!(gam.at(p)[christoffel_index(1, 0, 1, 3)], 0.0);
            }
            errs.push(err);
        }
        let h = 2.0 * PI / 16.0;
        assert!(errs[0] < 1.0 * h * h, "err {}", errs[0]);
        assert!((errs[0] / errs[1]).log2() > 1.8);
    }

    /// R for e^{2u}δ with u = A sin x sin y in n = 3, written out by hand.
    fn conformal_oracle(a: f64, x: &[f64]) -> f64 {
        let (sx, cx, sy, cy) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
        let u = a * sx * sy;
        let lap = -2.0 * a * sx * sy;
        let grad2 = a * a * (cx * cx * sy * sy + sx * sx * cy * cy);
        (-2.0 * u).exp() * (-4.0 * lap - 2.0 * grad2)
    }

    #[test]
    fn conformal_scalar_curvature_converges() {
        let mut errs = Vec::new();
        for n in [16, 32] {
            let chart = torus(n);
            let g = diag(chart.clone(), |x| {
                let e = (0.2 * x[0].sin() * x[1].sin()).exp();
                [e, e, e]
            });
            let r = scalar_curvature(&g).unwrap();
            let mut err: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for p in 0..chart.npoints() {
                let exact = conformal_oracle(0.1, &chart.coords(p));
                err = err.max((r.value(p) - exact).abs());
                scale = scale.max(exact.abs());
            }
            errs.push(err / scale);
        }
        assert!(errs[0] < 0.05, "{errs:?}");
        assert!((errs[0] / errs[1]).log2() > 1.8, "{errs:?}");
    }

    #[test]
    fn ricci_trace_and_symmetry() {
        let chart = torus(16);
        let g = MetricField::from_fn(chart.clone(), |x, out| {
            out[sym_index(0, 0, 3)] = 1.0 + 0.1 * x[1].sin();
            out[sym_index(0, 1, 3)] = 0.05 * (x[0] + x[2]).cos();
            out[sym_index(0, 2, 3)] = 0.0;
            out[sym_index(1, 1, 3)] = 1.2 + 0.1 * x[2].cos();
            out[sym_index(1, 2, 3)] = 0.03 * x[0].sin();
            out[sym_index(2, 2, 3)] = 0.9;
        });
        let pkg = curvature_package(&g).unwrap();
        let sc = scalar_curvature(&g).unwrap();
        let ric = ricci_tensor(&g).unwrap();
        assert_eq!(ric.data(), pkg.ricci.data());
        for p in 0..chart.npoints() {
            let m = crate::linalg::unpack::<3>(g.at(p));
            let (ginv, _) = crate::linalg::spd_inverse(&m).unwrap();
            let r = crate::linalg::unpack::<3>(pkg.ricci.at(p));
            let tr = trace(&ginv, &r);
            assert!((tr - pkg.scalar.value(p)).abs() < 1e-12);
            assert_eq!(sc.value(p), pkg.scalar.value(p));
            assert!(pkg.riemann_norm.value(p) >= 0.0);
        }
    }

    #[test]
    fn constant_rescale_covariance() {
        let chart = torus(16);
        let g = diag(chart.clone(), |x| {
            let e = (0.2 * x[0].sin() * x[1].sin()).exp();
            [e, e, e]
        });
        let c = 2.5;
        let r1 = scalar_curvature(&g).unwrap();
        let r2 = scalar_curvature(&g.scaled(c)).unwrap();
        let scale = r1.sup_abs();
        for p in 0..chart.npoints() {
            assert!((r2.value(p) * c - r1.value(p)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn laplacian_of_sine() {
        let chart = torus(32);
        let f = ScalarField::from_scalar_fn(chart.clone(), |x| x[0].sin());
        let h = 2.0 * PI / 32.0;
        for (scale, expect) in [(1.0, 1.0), (4.0, 0.25)] {
            let g = MetricField::euclidean(chart.clone()).scaled(scale);
            let lap = laplace_beltrami(&g, &f).unwrap();
            for p in 0..chart.npoints() {
                let x = chart.coords(p);
                assert!((lap.value(p) + expect * x[0].sin()).abs() < 0.1 * h * h);
            }
        }
        let c = ScalarField::from_scalar_fn(chart.clone(), |_| 2.0);
        let lap = laplace_beltrami(&MetricField::euclidean(chart), &c).unwrap();
        assert_eq!(lap.sup_abs(), 0.0);
    }

    #[test]
    fn background_norm_examples() {
        let chart = torus(32);
        let h = MetricField::euclidean(chart.clone());
        let (a, b) = background_norms(&h, &h).unwrap();
        assert_eq!(a.sup_abs() + b.sup_abs(), 0.0);
        let gc = MetricField::from_fn(chart.clone(), |_, out| {
            out.copy_from_slice(&[1.1, 0.02, -0.01, 0.95, 0.03, 1.05])
        });
        let (a, b) = background_norms(&gc, &h).unwrap();
        assert_eq!(a.sup_abs() + b.sup_abs(), 0.0);

        let g = diag(chart.clone(), |x| [1.0 + 0.1 * x[0].sin(), 1.0, 1.0]);
        let (a, b) = background_norms(&g, &h).unwrap();
        let hh = 2.0 * PI / 32.0;
        for p in 0..chart.npoints() {
            let x = chart.coords(p);
            assert!((a.value(p) - 0.01 * x[0].cos().powi(2)).abs() < 0.01 * hh * hh);
            assert!((b.value(p) - 0.1 * x[0].sin().abs()).abs() < 0.1 * hh * hh);
        }
    }

    #[test]
    fn singular_metric_is_reported() {
        let chart = torus(8);
        let mut g = MetricField::euclidean(chart);
        g.data_mut()[6 * 9 + 3] = 0.0;
        assert!(matches!(christoffel(&g), Err(Error::SingularMetric { point: 9, .. })));
        assert!(matches!(scalar_curvature(&g), Err(Error::SingularMetric { point: 9, .. })));
    }
}
