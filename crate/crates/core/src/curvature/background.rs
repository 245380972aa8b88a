use std::sync::Arc;

use super::pointwise::{connection, metric_jet, norm2_rank3, norm2_rank4, Jet, T3, T4};
use crate::error::{Error, Result};
use crate::grid::{MetricField, ScalarField};
use crate::linalg::Mat;

/// A background metric h with its connection cached per point.
///
/// A spatially constant h (the common case) is stored once and has Γ̃ = 0
/// exactly.
#[derive(Clone, Debug)]
pub struct Background {
    h: MetricField,
    constant: bool,
    gamma: Vec<f64>,
    dgamma: Vec<f64>,
    frame: Vec<f64>,
}

#[derive(Clone, Copy)]
pub(crate) struct BackgroundPoint<const N: usize> {
    pub gamma: T3<N>,
    pub dgamma: T4<N>,
    /// Inverse Cholesky factor of h.
    pub frame: Mat<N>,
}

impl Background {
    pub fn new(h: &MetricField) -> Result<Self> {
        crate::dispatch_dim!(h.dim(), build::<N>(h))
    }

    pub fn metric(&self) -> &MetricField {
        &self.h
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    #[inline]
    pub(crate) fn at<const N: usize>(&self, p: usize) -> BackgroundPoint<N> {
        let e = if self.constant { 0 } else { p };
        let g3 = &self.gamma[e * N * N * N..];
        let g4 = &self.dgamma[e * N * N * N * N..];
        let fr = &self.frame[e * N * N..];
        let mut out = BackgroundPoint {
            gamma: [[[0.0; N]; N]; N],
            dgamma: [[[[0.0; N]; N]; N]; N],
            frame: [[0.0; N]; N],
        };
        for a in 0..N {
            for b in 0..N {
                out.frame[a][b] = fr[a * N + b];
                for c in 0..N {
                    out.gamma[a][b][c] = g3[(a * N + b) * N + c];
                    for d in 0..N {
                        out.dgamma[a][b][c][d] = g4[((a * N + b) * N + c) * N + d];
                    }
                }
            }
        }
        out
    }
}

fn build<const N: usize>(h: &MetricField) -> Result<Background> {
    let w = h.width();
    let first = &h.data()[..w];
    let constant = h.data().chunks(w).all(|b| b == first);
    let npts = if constant { 1 } else { h.npoints() };
    let chart = h.chart().clone();
    let stride = N * N * N + N * N * N * N + N * N;
    let mut buf = vec![0.0; npts * stride];
    crate::par::try_fill_points(&mut buf, stride, |p, out| {
        let jet: Jet<N> = metric_jet(&chart, h.data(), p, !constant);
        let Some(c) = connection(&jet, !constant) else {
            if h.is_masked(p) {
                out.iter_mut().for_each(|v| *v = f64::NAN);
                return Ok(());
            }
            return Err(Error::SingularMetric {
                point: p,
                coords: chart.coords_vec(p),
            });
        };
        let (g3, rest) = out.split_at_mut(N * N * N);
        let (g4, fr) = rest.split_at_mut(N * N * N * N);
        for a in 0..N {
            for b in 0..N {
                fr[a * N + b] = c.frame[a][b];
                for cc in 0..N {
                    g3[(a * N + b) * N + cc] = if constant { 0.0 } else { c.gamma[a][b][cc] };
                    for d in 0..N {
                        g4[((a * N + b) * N + cc) * N + d] = if constant { 0.0 } else { c.dgamma[a][b][cc][d] };
                    }
                }
            }
        }
        Ok(())
    })?;
    let mut gamma = Vec::with_capacity(npts * N * N * N);
    let mut dgamma = Vec::with_capacity(npts * N * N * N * N);
    let mut frame = Vec::with_capacity(npts * N * N);
    for block in buf.chunks(stride) {
        gamma.extend_from_slice(&block[..N * N * N]);
        dgamma.extend_from_slice(&block[N * N * N..N * N * N + N * N * N * N]);
        frame.extend_from_slice(&block[N * N * N + N * N * N * N..]);
    }
    Ok(Background {
        h: h.clone(),
        constant,
        gamma,
        dgamma,
        frame,
    })
}

/// Pointwise |∇̃g|²_h and the full tensor norm |∇̃²g|_h, where ∇̃ is the
/// Levi-Civita connection of h.
pub fn background_norms(g: &MetricField, h: &MetricField) -> Result<(ScalarField, ScalarField)> {
    g.same_chart(h)?;
    background_norms_with(g, &Background::new(h)?)
}

pub fn background_norms_with(g: &MetricField, bg: &Background) -> Result<(ScalarField, ScalarField)> {
    g.same_chart(bg.metric())?;
    crate::dispatch_dim!(g.dim(), norms_impl::<N>(g, bg))
}

/// ∇̃_k g_ij (`[k][i][j]`) and ∇̃_m∇̃_k g_ij (`[m][k][i][j]`) at one point.
pub(crate) fn covariant_derivatives<const N: usize>(jet: &Jet<N>, b: &BackgroundPoint<N>) -> (T3<N>, T4<N>) {
    let g = &jet.g;
    let mut d1 = [[[0.0; N]; N]; N];
    for k in 0..N {
        for i in 0..N {
            for j in i..N {
                let mut s = jet.dg[k][i][j];
                for l in 0..N {
                    s -= b.gamma[l][k][i] * g[l][j] + b.gamma[l][k][j] * g[i][l];
                }
                d1[k][i][j] = s;
                d1[k][j][i] = s;
            }
        }
    }
    // ∂_m of the first covariant derivative.
    let mut pd = [[[[0.0; N]; N]; N]; N];
    for m in 0..N {
        for k in 0..N {
            for i in 0..N {
                for j in i..N {
                    let mut s = jet.ddg[m][k][i][j];
                    for l in 0..N {
                        s -= b.dgamma[m][l][k][i] * g[l][j] + b.gamma[l][k][i] * jet.dg[m][l][j];
                        s -= b.dgamma[m][l][k][j] * g[i][l] + b.gamma[l][k][j] * jet.dg[m][i][l];
                    }
                    pd[m][k][i][j] = s;
                    pd[m][k][j][i] = s;
                }
            }
        }
    }
    let mut d2 = [[[[0.0; N]; N]; N]; N];
    for m in 0..N {
        for k in 0..N {
            for i in 0..N {
                for j in i..N {
                    let mut s = pd[m][k][i][j];
                    for l in 0..N {
                        s -= b.gamma[l][m][k] * d1[l][i][j];
                        s -= b.gamma[l][m][i] * d1[k][l][j];
                        s -= b.gamma[l][m][j] * d1[k][i][l];
                    }
                    d2[m][k][i][j] = s;
                    d2[m][k][j][i] = s;
                }
            }
        }
    }
    (d1, d2)
}

fn norms_impl<const N: usize>(g: &MetricField, bg: &Background) -> Result<(ScalarField, ScalarField)> {
    let chart = g.chart().clone();
    let mut buf = vec![0.0; 2 * chart.npoints()];
    crate::par::fill_points(&mut buf, 2, |p, out| {
        let jet: Jet<N> = metric_jet(&chart, g.data(), p, true);
        let b = bg.at::<N>(p);
        let (d1, d2) = covariant_derivatives(&jet, &b);
        out[0] = norm2_rank3(&d1, &b.frame);
        out[1] = norm2_rank4(&d2, &b.frame).sqrt();
    });
    let mask = g.joint_mask(bg.metric()).map(|m| Arc::new(m.widen_jet(&chart)));
    let first = ScalarField::new(chart.clone(), buf.iter().step_by(2).cloned().collect())?.with_mask(mask.clone());
    let second = ScalarField::new(chart, buf.iter().skip(1).step_by(2).cloned().collect())?.with_mask(mask);
    Ok((first, second))
}
