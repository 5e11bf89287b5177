//! Standard simplex equiangular tight frame construction.

use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal_columns, Mat};
use crate::scalar::Scalar;

/// `C` unit-norm vectors in `R^p` with pairwise inner products `−1/(C−1)`,
/// obtained from `√(C/(C−1)) (I − (1/C)·1·1ᵀ)` and a seeded random orthogonal
/// embedding of its `(C−1)`-dimensional row space. Rows sum to zero.
pub fn standard_etf<F: Scalar>(c: usize, p: usize, seed: u64) -> Result<Mat<F>> {
    if c < 2 {
        return Err(Error::Config("ETF needs at least 2 vertices".into()));
    }
    if p < c - 1 {
        return Err(Error::Config(format!(
            "cannot embed a {}-vertex simplex in dimension {} (need >= {})",
            c,
            p,
            c - 1
        )));
    }

    // M = sqrt(C/(C-1)) (I - J/C), rows live in the hyperplane orthogonal to 1.
    let scale = F::from_f64((c as f64 / (c as f64 - 1.0)).sqrt());
    let inv_c = F::from_f64(1.0 / c as f64);
    let mut m = Mat::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            let delta = if i == j { F::one() } else { F::zero() };
            m.set(i, j, scale * (delta - inv_c));
        }
    }

    // Orthonormal basis (rows) of the hyperplane: Gram-Schmidt on e_i − 1/C.
    let mut basis: Vec<Vec<F>> = Vec::with_capacity(c - 1);
    for i in 0..c - 1 {
        let mut v: Vec<F> = (0..c)
            .map(|j| if i == j { F::one() - inv_c } else { -inv_c })
            .collect();
        for b in &basis {
            let proj = crate::linalg::dot(&v, b);
            for (vi, &bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm = crate::linalg::l2_norm(&v);
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }

    // Coordinates in the hyperplane: X = M Bᵀ, shape C×(C−1).
    let mut coords = Mat::zeros(c, c - 1);
    for i in 0..c {
        for (k, b) in basis.iter().enumerate() {
            coords.set(i, k, crate::linalg::dot(m.row(i), b));
        }
    }

    // Embed into R^p with orthonormal columns: frame = X Qᵀ, shape C×p.
    let q = random_orthonormal_columns::<F>(p, c - 1, seed)?;
    Ok(coords.matmul(&q.transpose()))
}
