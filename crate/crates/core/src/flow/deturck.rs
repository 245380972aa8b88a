use std::sync::Arc;

use crate::curvature::pointwise::{connection, metric_jet, ricci, Connection, Jet};
use crate::curvature::{singular_at, Background, BackgroundPoint};
use crate::error::Result;
use crate::grid::{GridChart, MetricField, SymTensor, SymTensorField, Vector, VectorField, Rank};
use crate::linalg::{pack, Mat};

/// W^k = g^pq (Γ^k_pq − Γ̃^k_pq) and, when `second`, ∂_m W^k as `dw[m][k]`.
#[inline]
pub(crate) fn deturck_point<const N: usize>(
    c: &Connection<N>,
    b: &BackgroundPoint<N>,
    second: bool,
) -> ([f64; N], [[f64; N]; N]) {
    let mut w = [0.0; N];
    let mut dw = [[0.0; N]; N];
    for k in 0..N {
        let mut s = 0.0;
        for p in 0..N {
            for q in 0..N {
                s += c.ginv[p][q] * (c.gamma[k][p][q] - b.gamma[k][p][q]);
            }
        }
        w[k] = s;
    }
    if second {
        for m in 0..N {
            for k in 0..N {
                let mut s = 0.0;
                for p in 0..N {
                    for q in 0..N {
                        s += c.dginv[m][p][q] * (c.gamma[k][p][q] - b.gamma[k][p][q])
                            + c.ginv[p][q] * (c.dgamma[m][k][p][q] - b.dgamma[m][k][p][q]);
                    }
                }
                dw[m][k] = s;
            }
        }
    }
    (w, dw)
}

/// −2 R_ij + ∇_i W_j + ∇_j W_i at one point.
#[inline]
pub(crate) fn rhs_point<const N: usize>(jet: &Jet<N>, c: &Connection<N>, b: &BackgroundPoint<N>) -> Mat<N> {
    let ric = ricci(c);
    let (w_up, dw_up) = deturck_point(c, b, true);
    let g = &jet.g;
    let mut w_low = [0.0; N];
    for j in 0..N {
        for k in 0..N {
            w_low[j] += g[j][k] * w_up[k];
        }
    }
    // ∇_i W_j = ∂_i (g_jk W^k) − Γ^k_ij W_k
    let mut nab = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += jet.dg[i][j][k] * w_up[k] + g[j][k] * dw_up[i][k] - c.gamma[k][i][j] * w_low[k];
            }
            nab[i][j] = s;
        }
    }
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in i..N {
            let v = -2.0 * ric[i][j] + nab[i][j] + nab[j][i];
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Fill `out` with the h-flow right-hand side of the packed metric samples `g`.
/// `freeze` scales the result pointwise. Returns the first non-positive point.
pub(crate) fn rhs_into<const N: usize>(
    chart: &GridChart,
    g: &[f64],
    bg: &Background,
    freeze: Option<&[f64]>,
    out: &mut [f64],
) -> std::result::Result<(), usize> {
    let w = SymTensor::width(N);
    crate::par::try_fill_points(out, w, |p, block| {
        if freeze.is_some_and(|f| f[p] == 0.0) {
            block.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let jet: Jet<N> = metric_jet(chart, g, p, true);
        let c = connection(&jet, true).ok_or(p)?;
        let b = bg.at::<N>(p);
        let r = rhs_point(&jet, &c, &b);
        pack(&r, block);
        if let Some(f) = freeze {
            block.iter_mut().for_each(|v| *v *= f[p]);
        }
        Ok(())
    })
}

/// The DeTurck field W^k and its lowered form W_j = g_jk W^k.
pub fn deturck_vector(g: &MetricField, h: &MetricField) -> Result<(VectorField, VectorField)> {
    g.same_chart(h)?;
    deturck_vector_with(g, &Background::new(h)?)
}

pub fn deturck_vector_with(g: &MetricField, bg: &Background) -> Result<(VectorField, VectorField)> {
    crate::dispatch_dim!(g.dim(), deturck_impl::<N>(g, bg))
}

fn deturck_impl<const N: usize>(g: &MetricField, bg: &Background) -> Result<(VectorField, VectorField)> {
    let chart = g.chart().clone();
    let mut buf = vec![0.0; 2 * N * chart.npoints()];
    crate::par::try_fill_points::<crate::Error, _>(&mut buf, 2 * N, |p, block| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, false);
        let c = connection(&jet, false).ok_or_else(|| singular_at(g, p))?;
        let (w, _) = deturck_point(&c, &bg.at::<N>(p), false);
        for k in 0..N {
            block[k] = w[k];
            block[N + k] = (0..N).map(|j| jet.g[k][j] * w[j]).sum();
        }
        Ok(())
    })?;
    let mask = g.joint_mask(bg.metric()).map(|m| Arc::new(m.widen_jet(&chart)));
    let up = buf.chunks(2 * N).flat_map(|b| b[..N].iter().cloned()).collect();
    let down = buf.chunks(2 * N).flat_map(|b| b[N..].iter().cloned()).collect();
    debug_assert_eq!(Vector::width(N), N);
    Ok((
        VectorField::new(chart.clone(), up)?.with_mask(mask.clone()),
        VectorField::new(chart, down)?.with_mask(mask),
    ))
}

/// ∂_t g = −2 Ric(g) + ∇_i W_j + ∇_j W_i.
pub fn hflow_rhs(g: &MetricField, h: &MetricField) -> Result<SymTensorField> {
    g.same_chart(h)?;
    hflow_rhs_with(g, &Background::new(h)?)
}

pub fn hflow_rhs_with(g: &MetricField, bg: &Background) -> Result<SymTensorField> {
    crate::dispatch_dim!(g.dim(), rhs_impl::<N>(g, bg))
}

fn rhs_impl<const N: usize>(g: &MetricField, bg: &Background) -> Result<SymTensorField> {
    let chart = g.chart().clone();
    let mut out = SymTensorField::zeros(chart.clone());
    rhs_into::<N>(&chart, g.data(), bg, None, out.data_mut()).map_err(|p| singular_at(g, p))?;
    let mask = g.joint_mask(bg.metric()).map(|m| Arc::new(m.widen_jet(&chart)));
    Ok(out.with_mask(mask))
}
