//! Small dense complex linear algebra for the `K×K` zero-forcing systems.
//!
//! Large-scale gains span many orders of magnitude, so Gram matrices are
//! badly scaled but usually well conditioned once equilibrated. The Cholesky
//! rank test below is therefore relative to each diagonal entry.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error(
        "matrix is numerically rank deficient at column {column}: relative pivot {relative_pivot:.3e} \
         (equilibrated condition estimate {condition_estimate:.3e})"
    )]
    RankDeficient { column: usize, relative_pivot: f64, condition_estimate: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// `Gᴴ·diag(w)·G` for an `M×K` matrix `G` and `M` nonnegative weights.
pub fn weighted_gram<T: Real>(g: ArrayView2<'_, Complex<T>>, w: &[T]) -> Array2<Complex<T>> {
    let (m, k) = g.dim();
    assert_eq!(w.len(), m, "weight length must match row count");
    let mut a = Array2::<Complex<T>>::zeros((k, k));
    for (row, &wm) in g.rows().into_iter().zip(w) {
        for i in 0..k {
            let gi = row[i].conj() * wm;
            for j in i..k {
                a[[i, j]] += gi * row[j];
            }
        }
    }
    for i in 0..k {
        a[[i, i]].im = T::zero();
        for j in 0..i {
            a[[i, j]] = a[[j, i]].conj();
        }
    }
    a
}

/// `A = L·Lᴴ` for a Hermitian positive definite `A`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Array2<Complex<T>>,
    /// `L_jj² / A_jj`, the pivots of the equilibrated factorization.
    relative_pivots: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &Array2<Complex<T>>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::Shape(format!("{}x{} is not square", n, a.ncols())));
        }
        let tol = T::epsilon() * T::lit(1e3 * n.max(1) as f64);
        let mut l = Array2::<Complex<T>>::zeros((n, n));
        let mut relative_pivots = Vec::with_capacity(n);
        for j in 0..n {
            let ajj = a[[j, j]].re;
            let mut d = ajj;
            for p in 0..j {
                d -= l[[j, p]].norm_sqr();
            }
            let rel = if ajj > T::zero() { d / ajj } else { T::zero() };
            if !(rel > tol) {
                let mut pivots = relative_pivots.clone();
                pivots.push(rel.max(T::zero()));
                return Err(LinalgError::RankDeficient {
                    column: j,
                    relative_pivot: rel.as_f64(),
                    condition_estimate: condition_from_pivots(&pivots),
                });
            }
            relative_pivots.push(rel);
            let ljj = d.sqrt();
            l[[j, j]] = Complex::new(ljj, T::zero());
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for p in 0..j {
                    s -= l[[i, p]] * l[[j, p]].conj();
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Cholesky { l, relative_pivots })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex<T>]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        // L·y = b
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[[i, p]] * b[p];
            }
            b[i] = s / self.l[[i, i]].re;
        }
        // Lᴴ·x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= self.l[[p, i]].conj() * b[p];
            }
            b[i] = s / self.l[[i, i]].re;
        }
    }

    pub fn solve(&self, b: &Array1<Complex<T>>) -> Array1<Complex<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Array1::from(x)
    }

    /// Solves `A·X = B` column by column.
    pub fn solve_matrix(&self, b: &Array2<Complex<T>>) -> Array2<Complex<T>> {
        let mut x = b.clone();
        let mut col = vec![Complex::new(T::zero(), T::zero()); self.dim()];
        for mut c in x.columns_mut() {
            for (dst, src) in col.iter_mut().zip(c.iter()) {
                *dst = *src;
            }
            self.solve_in_place(&mut col);
            for (dst, src) in c.iter_mut().zip(&col) {
                *dst = *src;
            }
        }
        x
    }

    /// Diagonal of `A⁻¹ = L⁻ᴴL⁻¹`, i.e. `(A⁻¹)_kk = Σ_i |(L⁻¹)_ik|²`.
    pub fn inverse_diagonal(&self) -> Vec<T> {
        let n = self.dim();
        let mut out = vec![T::zero(); n];
        let mut col = vec![Complex::new(T::zero(), T::zero()); n];
        for k in 0..n {
            // Column k of L⁻¹ via forward substitution on e_k.
            for v in col.iter_mut() {
                *v = Complex::new(T::zero(), T::zero());
            }
            col[k] = Complex::new(T::one(), T::zero());
            for i in k..n {
                let mut s = col[i];
                for p in k..i {
                    s -= self.l[[i, p]] * col[p];
                }
                col[i] = s / self.l[[i, i]].re;
            }
            for i in k..n {
                out[k] += col[i].norm_sqr();
            }
        }
        out
    }

    /// Rough condition number of the equilibrated matrix, from the relative pivots.
    pub fn condition_estimate(&self) -> f64 {
        condition_from_pivots(&self.relative_pivots)
    }
}

fn condition_from_pivots<T: Real>(pivots: &[T]) -> f64 {
    let max = pivots.iter().map(|p| p.as_f64()).fold(0.0, f64::max);
    let min = pivots.iter().map(|p| p.as_f64()).fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `Aᴴ` for a complex matrix.
pub fn adjoint<T: Real>(a: ArrayView2<'_, Complex<T>>) -> Array2<Complex<T>> {
    a.t().mapv(|z| z.conj())
}

/// Plain matrix product for complex matrices.
pub fn matmul<T: Real>(a: ArrayView2<'_, Complex<T>>, b: ArrayView2<'_, Complex<T>>) -> Array2<Complex<T>> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "inner dimensions must agree");
    let mut c = Array2::<Complex<T>>::zeros((n, m));
    for i in 0..n {
        for p in 0..k {
            let aip = a[[i, p]];
            for j in 0..m {
                c[[i, j]] += aip * b[[p, j]];
            }
        }
    }
    c
}

/// Frobenius distance of a square matrix from the identity.
pub fn identity_error<T: Real>(a: ArrayView2<'_, Complex<T>>) -> T {
    let mut s = T::zero();
    for ((i, j), z) in a.indexed_iter() {
        let target = if i == j { T::one() } else { T::zero() };
        s += (z.re - target).powi(2) + z.im.powi(2);
    }
    s.sqrt()
}
