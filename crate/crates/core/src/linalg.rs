//! Small dense/banded linear algebra kernels used by the solvers.

use crate::error::{Error, Result};

/// Factored tridiagonal system (Thomas algorithm, no pivoting).
///
/// Safe for the diagonally dominant / SPD tridiagonal systems produced by the
/// 1D stencils; general systems go through [`Banded`].
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    // LU factors: lower multipliers and the modified diagonal.
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    /// Factors the system with sub/main/super diagonals `(a, b, c)`.
    pub fn new(a: &[f64], b: &[f64], c: &[f64]) -> Result<Tridiagonal> {
        let n = b.len();
        assert_eq!(a.len(), n.saturating_sub(1));
        assert_eq!(c.len(), n.saturating_sub(1));
        let mut lower = vec![0.0; n.saturating_sub(1)];
        let mut diag = b.to_vec();
        for i in 1..n {
            if diag[i - 1] == 0.0 {
                return Err(Error::SolveFailure {
                    residual: f64::INFINITY,
                    iterations: i,
                    context: "tridiagonal factorization hit a zero pivot",
                });
            }
            let l = a[i - 1] / diag[i - 1];
            lower[i - 1] = l;
            diag[i] -= l * c[i - 1];
        }
        Ok(Tridiagonal {
            lower,
            diag,
            upper: c.to_vec(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            let l = self.lower[i - 1];
            x[i] -= l * x[i - 1];
        }
        x[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.diag[i];
        }
        x
    }
}

/// General banded matrix in LAPACK band storage with room for pivot fill-in.
///
/// Entry `(i, j)` is stored when `-(ku + kl) <= i - j <= kl`; partial pivoting
/// can push fill into the extra `kl` superdiagonals.
#[derive(Debug)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl Banded {
    /// Builds the band matrix from `(row, col, value)` triplets; duplicate
    /// positions accumulate. Bandwidths are taken from the data.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Banded {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for &(i, j, _) in triplets {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut data = vec![0.0; ldab * n];
        for &(i, j, v) in triplets {
            data[j * ldab + (kl + ku + i - j)] += v;
        }
        Banded {
            n,
            kl,
            ku,
            ldab,
            data,
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.ldab + (self.kl + self.ku + i - j)]
    }

    /// LU factorization with partial pivoting (unblocked dgbtrf).
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let width = self.ku + self.kl; // columns touched to the right of the pivot
        for j in 0..n {
            // Pivot search within the lower band.
            let last = (j + self.kl).min(n - 1);
            let mut p = j;
            let mut best = self.at(j, j).abs();
            for r in j + 1..=last {
                let v = self.at(r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::SolveFailure {
                    residual: f64::INFINITY,
                    iterations: j,
                    context: "banded LU hit a zero pivot column",
                });
            }
            self.pivots[j] = p;
            let cend = (j + width).min(n - 1);
            if p != j {
                for c in j..=cend {
                    let a = self.at(p, c);
                    let b = self.at(j, c);
                    *self.at_mut(p, c) = b;
                    *self.at_mut(j, c) = a;
                }
            }
            let pivot = self.at(j, j);
            for r in j + 1..=last {
                let l = self.at(r, j) / pivot;
                *self.at_mut(r, j) = l;
                if l != 0.0 {
                    for c in j + 1..=cend {
                        let u = self.at(j, c);
                        if u != 0.0 {
                            *self.at_mut(r, c) -= l * u;
                        }
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve before factor");
        let n = self.n;
        let mut x = rhs.to_vec();
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap(p, j);
            }
            let last = (j + self.kl).min(n - 1);
            for r in j + 1..=last {
                x[r] -= self.at(r, j) * x[j];
            }
        }
        for i in (0..n).rev() {
            let cend = (i + self.ku + self.kl).min(n - 1);
            let mut v = x[i];
            for c in i + 1..=cend {
                v -= self.at(i, c) * x[c];
            }
            x[i] = v / self.at(i, i);
        }
        x
    }
}

/// Conjugate gradients in a weighted inner product.
///
/// `apply` must be self-adjoint positive definite with respect to the
/// `weights` inner product. Returns the solution and the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    weights: &[f64],
    rhs: &[f64],
    rel_tol: f64,
    max_iters: usize,
    context: &'static str,
) -> Result<(Vec<f64>, usize)> {
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    };
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for iter in 0..max_iters {
        if rr.sqrt() <= rel_tol * rhs_norm {
            return Ok((x, iter));
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolveFailure {
                residual: rr.sqrt() / rhs_norm,
                iterations: iter,
                context,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= rel_tol * rhs_norm {
        return Ok((x, max_iters));
    }
    Err(Error::SolveFailure {
        residual: rr.sqrt() / rhs_norm,
        iterations: max_iters,
        context,
    })
}

/// Right-preconditioned BiCGStab with Euclidean inner products.
pub fn bicgstab(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    rel_tol: f64,
    max_iters: usize,
    context: &'static str,
) -> Result<(Vec<f64>, usize)> {
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let norm = |a: &[f64]| -> f64 { dot(a, a).sqrt() };
    let n = rhs.len();
    let rhs_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];

    for iter in 0..max_iters {
        if norm(&r) <= rel_tol * rhs_norm {
            return Ok((x, iter));
        }
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < f64::MIN_POSITIVE * 1e10 {
            return Err(Error::SolveFailure {
                residual: norm(&r) / rhs_norm,
                iterations: iter,
                context,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precondition(&p);
        v = apply(&ph);
        alpha = rho / dot(&r0, &v);
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        if norm(&s) <= rel_tol * rhs_norm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok((x, iter + 1));
        }
        let sh = precondition(&s);
        let t = apply(&sh);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::SolveFailure {
                residual: norm(&s) / rhs_norm,
                iterations: iter,
                context,
            });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            return Err(Error::SolveFailure {
                residual: norm(&r) / rhs_norm,
                iterations: iter,
                context,
            });
        }
    }
    if norm(&r) <= rel_tol * rhs_norm {
        return Ok((x, max_iters));
    }
    Err(Error::SolveFailure {
        residual: norm(&r) / rhs_norm,
        iterations: max_iters,
        context,
    })
}
