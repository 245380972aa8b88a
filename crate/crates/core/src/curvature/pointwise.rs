//! Per-point geometry from stencil jets.
//!
//! Derivatives of the connection come from the chain rule on the second
//! derivatives of g rather than from differentiating a sampled Γ field. This
//! keeps every quantity on the compact 3-point stencils and makes the mixed
//! second-derivative terms of the DeTurck operator cancel exactly.

use crate::grid::{GridChart, MAX_DIM};
use crate::linalg::{cholesky, lower_inverse, sym_index, Mat};

/// Largest per-point block handled by [`packed_jet`] (packed n = 4 tensor).
pub(crate) const MAX_W: usize = 10;

pub(crate) type T3<const N: usize> = [[[f64; N]; N]; N];
pub(crate) type T4<const N: usize> = [[[[f64; N]; N]; N]; N];

/// Value, first and second stencil derivatives of one point's component block.
#[derive(Clone, Copy)]
pub(crate) struct PackedJet {
    pub v: [f64; MAX_W],
    pub d1: [[f64; MAX_W]; MAX_DIM],
    pub d2: [[[f64; MAX_W]; MAX_DIM]; MAX_DIM],
}

pub(crate) fn packed_jet(chart: &GridChart, data: &[f64], w: usize, p: usize, second: bool) -> PackedJet {
    debug_assert!(w <= MAX_W);
    let dim = chart.dim();
    let idx = chart.multi_index(p);
    let strides = chart.strides();
    let mut j = PackedJet {
        v: [0.0; MAX_W],
        d1: [[0.0; MAX_W]; MAX_DIM],
        d2: [[[0.0; MAX_W]; MAX_DIM]; MAX_DIM],
    };
    j.v[..w].copy_from_slice(&data[p * w..(p + 1) * w]);
    for a in 0..dim {
        let sa = strides[a];
        let base = p - idx[a] * sa;
        let d1a = chart.first_stencil(a, idx[a]);
        for (i, wt) in d1a.entries() {
            let q = (base + i * sa) * w;
            for c in 0..w {
                j.d1[a][c] += wt * data[q + c];
            }
        }
        if !second {
            continue;
        }
        for (i, wt) in chart.second_stencil(a, idx[a]).entries() {
            let q = (base + i * sa) * w;
            for c in 0..w {
                j.d2[a][a][c] += wt * data[q + c];
            }
        }
        for b in (a + 1)..dim {
            let sb = strides[b];
            let base_ab = base - idx[b] * sb;
            let d1b = chart.first_stencil(b, idx[b]);
            for (i, wi) in d1a.entries() {
                for (k, wk) in d1b.entries() {
                    let q = (base_ab + i * sa + k * sb) * w;
                    let wt = wi * wk;
                    for c in 0..w {
                        j.d2[a][b][c] += wt * data[q + c];
                    }
                }
            }
            j.d2[b][a] = j.d2[a][b];
        }
    }
    j
}

/// Metric jet: g_ij, ∂_m g_ij as `dg[m][i][j]`, ∂_m∂_l g_ij as `ddg[m][l][i][j]`.
#[derive(Clone, Copy)]
pub(crate) struct Jet<const N: usize> {
    pub g: Mat<N>,
    pub dg: T3<N>,
    pub ddg: T4<N>,
}

pub(crate) fn metric_jet<const N: usize>(chart: &GridChart, data: &[f64], p: usize, second: bool) -> Jet<N> {
    let w = N * (N + 1) / 2;
    let pj = packed_jet(chart, data, w, p, second);
    let mut jet = Jet {
        g: [[0.0; N]; N],
        dg: [[[0.0; N]; N]; N],
        ddg: [[[[0.0; N]; N]; N]; N],
    };
    for i in 0..N {
        for j in i..N {
            let c = sym_index(i, j, N);
            jet.g[i][j] = pj.v[c];
            jet.g[j][i] = pj.v[c];
            for m in 0..N {
                jet.dg[m][i][j] = pj.d1[m][c];
                jet.dg[m][j][i] = pj.d1[m][c];
                if second {
                    for l in 0..N {
                        jet.ddg[m][l][i][j] = pj.d2[m][l][c];
                        jet.ddg[m][l][j][i] = pj.d2[m][l][c];
                    }
                }
            }
        }
    }
    jet
}

/// Levi-Civita data at one point. `gamma[k][i][j]` = Γ^k_ij,
/// `dgamma[m][k][i][j]` = ∂_m Γ^k_ij, `dginv[m][k][l]` = ∂_m g^kl.
#[derive(Clone, Copy)]
pub(crate) struct Connection<const N: usize> {
    pub ginv: Mat<N>,
    /// Inverse of the lower Cholesky factor: g^{-1} = eᵀ e.
    pub frame: Mat<N>,
    pub gamma: T3<N>,
    pub dginv: T3<N>,
    pub dgamma: T4<N>,
}

/// `None` when g is not positive definite at this point.
pub(crate) fn connection<const N: usize>(jet: &Jet<N>, second: bool) -> Option<Connection<N>> {
    let l = cholesky(&jet.g)?;
    let e = lower_inverse(&l);
    let mut ginv = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..N {
                s += e[k][i] * e[k][j];
            }
            ginv[i][j] = s;
            ginv[j][i] = s;
        }
    }
    // Γ_lij, first kind.
    let mut low = [[[0.0; N]; N]; N];
    for l in 0..N {
        for i in 0..N {
            for j in i..N {
                let v = 0.5 * (jet.dg[i][j][l] + jet.dg[j][i][l] - jet.dg[l][i][j]);
                low[l][i][j] = v;
                low[l][j][i] = v;
            }
        }
    }
    let mut gamma = [[[0.0; N]; N]; N];
    for k in 0..N {
        for i in 0..N {
            for j in i..N {
                let mut s = 0.0;
                for l in 0..N {
                    s += ginv[k][l] * low[l][i][j];
                }
                gamma[k][i][j] = s;
                gamma[k][j][i] = s;
            }
        }
    }

    let mut dginv = [[[0.0; N]; N]; N];
    let mut dgamma = [[[[0.0; N]; N]; N]; N];
    if second {
        for m in 0..N {
            // ∂_m g^kl = -g^ka ∂_m g_ab g^bl
            let mut t = [[0.0; N]; N];
            for a in 0..N {
                for l in 0..N {
                    let mut s = 0.0;
                    for b in 0..N {
                        s += jet.dg[m][a][b] * ginv[b][l];
                    }
                    t[a][l] = s;
                }
            }
            for k in 0..N {
                for l in k..N {
                    let mut s = 0.0;
                    for a in 0..N {
                        s -= ginv[k][a] * t[a][l];
                    }
                    dginv[m][k][l] = s;
                    dginv[m][l][k] = s;
                }
            }
            let mut dlow = [[[0.0; N]; N]; N];
            for l in 0..N {
                for i in 0..N {
                    for j in i..N {
                        let v = 0.5
                            * (jet.ddg[m][i][j][l] + jet.ddg[m][j][i][l] - jet.ddg[m][l][i][j]);
                        dlow[l][i][j] = v;
                        dlow[l][j][i] = v;
                    }
                }
            }
            for k in 0..N {
                for i in 0..N {
                    for j in i..N {
                        let mut s = 0.0;
                        for l in 0..N {
                            s += dginv[m][k][l] * low[l][i][j] + ginv[k][l] * dlow[l][i][j];
                        }
                        dgamma[m][k][i][j] = s;
                        dgamma[m][k][j][i] = s;
                    }
                }
            }
        }
    }
    Some(Connection {
        ginv,
        frame: e,
        gamma,
        dginv,
        dgamma,
    })
}

/// R_ij = ∂_kΓ^k_ij − ∂_jΓ^k_ik + Γ^k_kl Γ^l_ij − Γ^k_jl Γ^l_ik.
pub(crate) fn ricci<const N: usize>(c: &Connection<N>) -> Mat<N> {
    let mut trace = [0.0; N];
    for l in 0..N {
        for k in 0..N {
            trace[l] += c.gamma[k][k][l];
        }
    }
    let mut r = [[0.0; N]; N];
    for i in 0..N {
        for j in i..N {
            let mut s = 0.0;
            for k in 0..N {
                s += c.dgamma[k][k][i][j] - c.dgamma[j][k][i][k];
                s += trace[k] * c.gamma[k][i][j];
                for l in 0..N {
                    s -= c.gamma[k][j][l] * c.gamma[l][i][k];
                }
            }
            r[i][j] = s;
            r[j][i] = s;
        }
    }
    r
}

pub(crate) fn trace<const N: usize>(ginv: &Mat<N>, t: &Mat<N>) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in 0..N {
            s += ginv[i][j] * t[i][j];
        }
    }
    s
}

/// Fully lowered Riemann tensor R_abcd = g_ae R^e_bcd with
/// R^a_bcd = ∂_cΓ^a_db − ∂_dΓ^a_cb + Γ^a_ce Γ^e_db − Γ^a_de Γ^e_cb.
pub(crate) fn riemann_lowered<const N: usize>(g: &Mat<N>, c: &Connection<N>) -> T4<N> {
    let mut up = [[[[0.0; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for cc in 0..N {
                for d in (cc + 1)..N {
                    let mut s = c.dgamma[cc][a][d][b] - c.dgamma[d][a][cc][b];
                    for e in 0..N {
                        s += c.gamma[a][cc][e] * c.gamma[e][d][b] - c.gamma[a][d][e] * c.gamma[e][cc][b];
                    }
                    up[a][b][cc][d] = s;
                    up[a][b][d][cc] = -s;
                }
            }
        }
    }
    let mut low = [[[[0.0; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for cc in 0..N {
                for d in 0..N {
                    let mut s = 0.0;
                    for e in 0..N {
                        s += g[a][e] * up[e][b][cc][d];
                    }
                    low[a][b][cc][d] = s;
                }
            }
        }
    }
    low
}

/// Squared norm of a covariant 3-tensor in the orthonormal frame `e`
/// (rows of e are the coframe of the metric whose inverse is eᵀe).
pub(crate) fn norm2_rank3<const N: usize>(t: &T3<N>, e: &Mat<N>) -> f64 {
    let mut a1 = [[[0.0; N]; N]; N];
    for a in 0..N {
        for j in 0..N {
            for k in 0..N {
                let mut s = 0.0;
                for i in 0..=a {
                    s += e[a][i] * t[i][j][k];
                }
                a1[a][j][k] = s;
            }
        }
    }
    let mut a2 = [[[0.0; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for k in 0..N {
                let mut s = 0.0;
                for j in 0..=b {
                    s += e[b][j] * a1[a][j][k];
                }
                a2[a][b][k] = s;
            }
        }
    }
    let mut total = 0.0;
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                let mut s = 0.0;
                for k in 0..=c {
                    s += e[c][k] * a2[a][b][k];
                }
                total += s * s;
            }
        }
    }
    total
}

/// Squared norm of a covariant 4-tensor in the orthonormal frame `e`.
pub(crate) fn norm2_rank4<const N: usize>(t: &T4<N>, e: &Mat<N>) -> f64 {
    let mut cur = *t;
    for slot in 0..4 {
        let mut next = [[[[0.0; N]; N]; N]; N];
        for i0 in 0..N {
            for i1 in 0..N {
                for i2 in 0..N {
                    for i3 in 0..N {
                        let mut s = 0.0;
                        let target = [i0, i1, i2, i3][slot];
                        for k in 0..=target {
                            let mut ix = [i0, i1, i2, i3];
                            ix[slot] = k;
                            s += e[target][k] * cur[ix[0]][ix[1]][ix[2]][ix[3]];
                        }
                        next[i0][i1][i2][i3] = s;
                    }
                }
            }
        }
        cur = next;
    }
    let mut total = 0.0;
    for a in cur.iter().flatten().flatten().flatten() {
        total += a * a;
    }
    total
}
