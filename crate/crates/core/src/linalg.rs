//! Dense symmetric linear algebra for the geometry metrics: a small
//! row-major matrix type, cyclic Jacobi eigendecomposition, and the
//! Moore-Penrose pseudoinverse of symmetric PSD matrices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat<F> {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let v = self.at(i, k);
                if v == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += v * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn trace(&self) -> F {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).fold(F::zero(), |acc, i| acc + self.at(i, i))
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l2_norm<F: Scalar>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose COLUMNS are the eigenvectors,
/// so `A = V diag(λ) Vᵀ`.
pub fn sym_eig<F: Scalar>(m: &Mat<F>) -> Result<(Vec<F>, Mat<F>)> {
    let tol = F::from_f64(1e-10);
    if !m.is_symmetric(tol) {
        return Err(Error::Contract("sym_eig requires a symmetric matrix".into()));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Mat::identity(n);
    let eps = F::epsilon();

    for _sweep in 0..100 {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        let scale = a.frobenius_norm().max(F::one());
        if off.sqrt() <= eps * scale * F::from_f64(n as f64) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() <= eps * scale {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (F::from_f64(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                // rotate rows/columns p and q
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let eigvals: Vec<F> = (0..n).map(|i| a.at(i, i)).collect();
    Ok((eigvals, v))
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix via
/// eigendecomposition. Eigenvalues below `rtol·λ_max` with
/// `rtol = p·ε_mach·16` are treated as zero.
pub fn pinv_psd<F: Scalar>(m: &Mat<F>) -> Result<Mat<F>> {
    let (eigvals, v) = sym_eig(m)?;
    let n = m.rows;
    let lambda_max = eigvals
        .iter()
        .fold(F::zero(), |acc, &l| acc.max(l.abs()));
    let cutoff = F::from_f64(n as f64) * F::epsilon() * F::from_f64(16.0) * lambda_max;
    let mut out = Mat::zeros(n, n);
    for k in 0..n {
        let l = eigvals[k];
        if l.abs() <= cutoff || l == F::zero() {
            continue;
        }
        let inv = F::one() / l;
        for i in 0..n {
            let vik = v.at(i, k);
            if vik == F::zero() {
                continue;
            }
            for j in 0..n {
                let add = inv * vik * v.at(j, k);
                out.data[i * n + j] += add;
            }
        }
    }
    Ok(out)
}

/// `p×k` matrix with orthonormal columns, drawn from a seeded Gaussian and
/// orthonormalized by modified Gram-Schmidt. Requires `p ≥ k`.
pub fn random_orthonormal_columns<F: Scalar>(p: usize, k: usize, seed: u64) -> Result<Mat<F>> {
    if p < k {
        return Err(Error::Config(format!(
            "cannot fit {} orthonormal columns in dimension {}",
            k, p
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<F>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<F> = (0..p)
            .map(|_| F::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        for c in &cols {
            let proj = dot(&v, c);
            for (vi, &ci) in v.iter_mut().zip(c.iter()) {
                *vi -= proj * ci;
            }
        }
        let norm = l2_norm(&v);
        if norm < F::from_f64(1e-8) {
            continue; // degenerate draw, resample
        }
        for vi in &mut v {
            *vi /= norm;
        }
        cols.push(v);
    }
    let mut out = Mat::zeros(p, k);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..p {
            out.set(i, j, c[i]);
        }
    }
    Ok(out)
}
