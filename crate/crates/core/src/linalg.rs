//! Small dense kernels for per-point matrices (n = 3, 4).

pub type Mat<const N: usize> = [[f64; N]; N];

/// Index of the packed component (i, j), i <= j, in lexicographic order.
#[inline]
pub fn sym_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// Packed (i, j) pairs in storage order.
pub fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

#[inline]
pub fn unpack<const N: usize>(packed: &[f64]) -> Mat<N> {
    let mut m = [[0.0; N]; N];
    let mut c = 0;
    for i in 0..N {
        for j in i..N {
            m[i][j] = packed[c];
            m[j][i] = packed[c];
            c += 1;
        }
    }
    m
}

#[inline]
pub fn pack<const N: usize>(m: &Mat<N>, out: &mut [f64]) {
    let mut c = 0;
    for i in 0..N {
        for j in i..N {
            out[c] = m[i][j];
            c += 1;
        }
    }
}

/// Lower Cholesky factor; `None` when a pivot is not strictly positive.
#[inline]
pub fn cholesky<const N: usize>(a: &Mat<N>) -> Option<Mat<N>> {
    let mut l = [[0.0; N]; N];
    for j in 0..N {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        for i in (j + 1)..N {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / ljj;
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix.
#[inline]
pub fn lower_inverse<const N: usize>(l: &Mat<N>) -> Mat<N> {
    let mut inv = [[0.0; N]; N];
    for i in 0..N {
        inv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * inv[k][j];
            }
            inv[i][j] = s / l[i][i];
        }
    }
    inv
}

/// Inverse and determinant of a symmetric positive-definite matrix.
#[inline]
pub fn spd_inverse<const N: usize>(a: &Mat<N>) -> Option<(Mat<N>, f64)> {
    let l = cholesky(a)?;
    let li = lower_inverse(&l);
    let mut inv = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..N {
                s += li[k][i] * li[k][j];
            }
            inv[i][j] = s;
            inv[j][i] = s;
        }
    }
    let mut det = 1.0;
    for (i, row) in l.iter().enumerate() {
        det *= row[i] * row[i];
    }
    Some((inv, det))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues<const N: usize>(a: &Mat<N>) -> [f64; N] {
    let mut m = *a;
    for _sweep in 0..50 {
        let mut off = 0.0;
        for i in 0..N {
            for j in (i + 1)..N {
                off += m[i][j] * m[i][j];
            }
        }
        let scale: f64 = (0..N).map(|i| m[i][i] * m[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev = [0.0; N];
    for i in 0..N {
        ev[i] = m[i][i];
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Eigenvalues of `g` relative to `h`, given the inverse Cholesky factor of `h`
/// (`l_inv` with h = L L^T): spectrum of L^{-1} g L^{-T}.
pub fn relative_eigenvalues<const N: usize>(g: &Mat<N>, l_inv: &Mat<N>) -> [f64; N] {
    let mut tmp = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..=i {
                s += l_inv[i][k] * g[k][j];
            }
            tmp[i][j] = s;
        }
    }
    let mut m = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..=j {
                s += tmp[i][k] * l_inv[j][k];
            }
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    sym_eigenvalues(&m)
}
