//! Small dense linear-algebra kernels: Householder QR, triangular inversion
//! and a Cholesky solver used by the reference (oracle) paths.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Economy QR factorization `A = Q R` with `Q` n×p (orthonormal columns)
/// and `R` p×p upper triangular.
#[derive(Debug, Clone)]
pub struct Qr {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
}

/// Householder QR of an n×p matrix with n ≥ p.
///
/// Diagonal entries of `R` are made non-negative by flipping the sign of the
/// matching column of `Q`.
pub fn householder_qr(a: ArrayView2<f64>) -> Result<Qr> {
    let (n, p) = a.dim();
    if n < p {
        return Err(Error::Design(format!("QR needs n >= p, got {n}x{p}")));
    }
    let mut work = a.to_owned();
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(p);
    let mut betas = Vec::with_capacity(p);

    for k in 0..p {
        let mut v = Array1::<f64>::zeros(n - k);
        for i in k..n {
            v[i - k] = work[[i, k]];
        }
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            vs.push(v);
            betas.push(0.0);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.dot(&v);
        let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
        for j in k..p {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * work[[i, j]];
            }
            s *= beta;
            for i in k..n {
                work[[i, j]] -= s * v[i - k];
            }
        }
        vs.push(v);
        betas.push(beta);
    }

    let mut r = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            r[[i, j]] = work[[i, j]];
        }
    }

    // Accumulate Q by applying the reflectors in reverse to the first p
    // columns of the identity.
    let mut q = Array2::<f64>::zeros((n, p));
    for j in 0..p {
        q[[j, j]] = 1.0;
    }
    for k in (0..p).rev() {
        let v = &vs[k];
        let beta = betas[k];
        if beta == 0.0 {
            continue;
        }
        for j in 0..p {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * q[[i, j]];
            }
            s *= beta;
            for i in k..n {
                q[[i, j]] -= s * v[i - k];
            }
        }
    }

    for k in 0..p {
        if r[[k, k]] < 0.0 {
            for j in k..p {
                r[[k, j]] = -r[[k, j]];
            }
            for i in 0..n {
                q[[i, k]] = -q[[i, k]];
            }
        }
    }
    Ok(Qr { q, r })
}

impl Qr {
    /// Ratio of the smallest to largest absolute diagonal entry of `R`.
    pub fn diag_ratio(&self) -> f64 {
        let d: Vec<f64> = self.r.diag().iter().map(|v| v.abs()).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }

    /// Least-squares solution of `A x = b` given the factorization of `A`.
    pub fn solve_ls(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let qtb = self.q.t().dot(&b);
        solve_upper(self.r.view(), qtb.view())
    }
}

/// Back substitution for an upper-triangular system `U x = b`.
pub fn solve_upper(u: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let p = b.len();
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in (i + 1)..p {
            s -= u[[i, j]] * x[j];
        }
        x[i] = s / u[[i, i]];
    }
    x
}

/// Inverse of a lower-triangular matrix by forward substitution on the
/// columns of the identity. The result is lower triangular.
pub fn invert_lower(l: ArrayView2<f64>) -> Array2<f64> {
    let p = l.nrows();
    let mut inv = Array2::<f64>::zeros((p, p));
    for col in 0..p {
        for i in col..p {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[[i, k]] * inv[[k, col]];
            }
            inv[[i, col]] = s / l[[i, i]];
        }
    }
    inv
}

/// Cholesky factor `L` (lower) of a symmetric positive-definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Design("matrix is not positive definite".into()));
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `A x = b` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    let p = b.len();
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    Ok(solve_upper(l.t(), y.view()))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    let mut inv = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut e = Array1::<f64>::zeros(p);
        e[j] = 1.0;
        let col = cholesky_solve(a, e.view())?;
        inv.column_mut(j).assign(&col);
    }
    Ok(inv)
}

/// `Zᵀ diag(w) Z`.
pub fn weighted_gram(z: ArrayView2<f64>, w: ArrayView1<f64>) -> Array2<f64> {
    let (n, p) = z.dim();
    let mut g = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        let wi = w[i];
        for a in 0..p {
            let za = z[[i, a]] * wi;
            for b in a..p {
                g[[a, b]] += za * z[[i, b]];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[[a, b]] = g[[b, a]];
        }
    }
    g
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
