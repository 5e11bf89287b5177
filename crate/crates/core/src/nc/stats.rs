//! Per-class feature collections and their first/second-order statistics.

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Mat};
use crate::scalar::Scalar;

/// Representation vectors grouped by class label.
#[derive(Debug, Clone)]
pub struct FeatureSet<F: Scalar> {
    dim: usize,
    classes: Vec<Vec<Vec<F>>>,
}

impl<F: Scalar> FeatureSet<F> {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        FeatureSet {
            dim,
            classes: vec![Vec::new(); num_classes],
        }
    }

    pub fn push(&mut self, class: usize, vector: Vec<F>) -> Result<()> {
        if class >= self.classes.len() {
            return Err(Error::Index(format!(
                "class {} out of range [0,{})",
                class,
                self.classes.len()
            )));
        }
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} in feature set of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        self.classes[class].push(vector);
        Ok(())
    }

    /// Group the rows of `features` by `labels`.
    pub fn from_rows(features: &Mat<F>, labels: &[usize], num_classes: usize) -> Result<Self> {
        if features.rows != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.rows,
                labels.len()
            )));
        }
        let mut fs = FeatureSet::new(num_classes, features.cols);
        for (i, &label) in labels.iter().enumerate() {
            fs.push(label, features.row(i).to_vec())?;
        }
        Ok(fs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &[Vec<F>] {
        &self.classes[c]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.counts();
        counts.windows(2).all(|w| w[0] == w[1])
    }

    /// All vectors in class-major order, with their class labels.
    pub fn iter_all(&self) -> impl Iterator<Item = (usize, &[F])> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(c, vs)| vs.iter().map(move |v| (c, v.as_slice())))
    }
}

/// Class means, global mean, and scatter matrices of a [`FeatureSet`].
#[derive(Debug, Clone)]
pub struct ClassStats<F: Scalar> {
    pub dim: usize,
    /// Non-centered class means, one row per class.
    pub class_means: Vec<Vec<F>>,
    pub global_mean: Vec<F>,
    /// Between-class covariance `AVG_c (μ_c−μ_G)(μ_c−μ_G)ᵀ`.
    pub sigma_b: Mat<F>,
    /// Within-class covariance `AVG_{i,c} (h−μ_c)(h−μ_c)ᵀ`.
    pub sigma_w: Mat<F>,
}

impl<F: Scalar> ClassStats<F> {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn centered_means(&self) -> Vec<Vec<F>> {
        self.class_means
            .iter()
            .map(|m| m.iter().zip(&self.global_mean).map(|(&a, &g)| a - g).collect())
            .collect()
    }

    /// Globally-centered class means scaled to unit norm. Errors if any
    /// centered mean is (numerically) zero.
    pub fn normalized_centered_means(&self) -> Result<Vec<Vec<F>>> {
        self.centered_means()
            .into_iter()
            .enumerate()
            .map(|(c, m)| {
                let norm = l2_norm(&m);
                if norm <= F::from_f64(1e-300) {
                    return Err(Error::Degenerate(format!(
                        "class {} has zero centered mean",
                        c
                    )));
                }
                Ok(m.into_iter().map(|v| v / norm).collect())
            })
            .collect()
    }
}

/// Compute means and scatter matrices. Every class must contain at least one
/// vector; the global mean averages over all vectors (so for unbalanced sets
/// it is not the mean of the class means).
pub fn class_stats<F: Scalar>(fs: &FeatureSet<F>) -> Result<ClassStats<F>> {
    let p = fs.dim();
    let c_count = fs.num_classes();
    if c_count < 2 {
        return Err(Error::Contract("need at least 2 classes".into()));
    }
    if let Some(empty) = fs.counts().iter().position(|&n| n == 0) {
        return Err(Error::Contract(format!("class {} has no vectors", empty)));
    }

    let mut class_means = Vec::with_capacity(c_count);
    let mut global_mean = vec![F::zero(); p];
    let total = fs.total();
    for c in 0..c_count {
        let vs = fs.class(c);
        let inv = F::one() / F::from_f64(vs.len() as f64);
        let mut mean = vec![F::zero(); p];
        for v in vs {
            for (mi, &vi) in mean.iter_mut().zip(v) {
                *mi += vi;
            }
            for (gi, &vi) in global_mean.iter_mut().zip(v) {
                *gi += vi;
            }
        }
        for mi in &mut mean {
            *mi *= inv;
        }
        class_means.push(mean);
    }
    let inv_total = F::one() / F::from_f64(total as f64);
    for gi in &mut global_mean {
        *gi *= inv_total;
    }

    let mut sigma_b = Mat::zeros(p, p);
    for mean in &class_means {
        let centered: Vec<F> = mean.iter().zip(&global_mean).map(|(&a, &g)| a - g).collect();
        accumulate_outer(&mut sigma_b, &centered);
    }
    let inv_c = F::one() / F::from_f64(c_count as f64);
    for v in &mut sigma_b.data {
        *v *= inv_c;
    }

    let mut sigma_w = Mat::zeros(p, p);
    for c in 0..c_count {
        let mean = &class_means[c];
        for v in fs.class(c) {
            let centered: Vec<F> = v.iter().zip(mean).map(|(&a, &m)| a - m).collect();
            accumulate_outer(&mut sigma_w, &centered);
        }
    }
    for v in &mut sigma_w.data {
        *v *= inv_total;
    }

    Ok(ClassStats {
        dim: p,
        class_means,
        global_mean,
        sigma_b,
        sigma_w,
    })
}

fn accumulate_outer<F: Scalar>(m: &mut Mat<F>, v: &[F]) {
    let p = v.len();
    for i in 0..p {
        let vi = v[i];
        if vi == F::zero() {
            continue;
        }
        for j in 0..p {
            m.data[i * p + j] += vi * v[j];
        }
    }
}
