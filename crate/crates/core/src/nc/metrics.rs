//! Neural collapse metrics: NC1–NC4, simplex similarity, angular distances,
//! nearest-class-center classifiers, and predicted-group geometry.

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, pinv_psd, Mat};
use crate::nc::stats::{class_stats, ClassStats, FeatureSet};
use crate::scalar::Scalar;

/// All scalar metric values for one (model, dataset, layer) triple.
#[derive(Debug, Clone)]
pub struct NcReport<F: Scalar> {
    pub nc1: F,
    pub nc2_equinorm: F,
    pub nc2_equiangular: F,
    pub nc3: F,
    pub nc4_mismatch: F,
    pub ncc_accuracy: F,
    pub ncc_matching_rate: F,
    pub simplex_similarity: Option<F>,
    pub noncentered_angular: Option<F>,
}

fn clamp_unit<F: Scalar>(x: F) -> F {
    // unit-vector inner products drift past ±1 by ~1e-16, which acos
    // turns into NaN
    x.max(-F::one()).min(F::one())
}

/// `Tr(Σ_B† Σ_W)`, the within-/between-class variability ratio.
pub fn nc1<F: Scalar>(stats: &ClassStats<F>) -> Result<F> {
    let pinv = pinv_psd(&stats.sigma_b)?;
    Ok(pinv.matmul(&stats.sigma_w).trace())
}

/// (equinorm, equiangular): population std of the centered-mean norms, and
/// the average over ordered pairs `c≠c'` of `|⟨μ̃_c,μ̃_{c'}⟩ + 1/(C−1)|`.
pub fn nc2<F: Scalar>(stats: &ClassStats<F>) -> Result<(F, F)> {
    let c = stats.num_classes();
    let centered = stats.centered_means();
    let norms: Vec<F> = centered.iter().map(|m| l2_norm(m)).collect();
    let inv_c = F::one() / F::from_f64(c as f64);
    let mean_norm = norms.iter().fold(F::zero(), |a, &b| a + b) * inv_c;
    let var = norms
        .iter()
        .fold(F::zero(), |a, &n| a + (n - mean_norm) * (n - mean_norm))
        * inv_c;
    let equinorm = var.sqrt();

    let tilde = stats.normalized_centered_means()?;
    let target = F::one() / F::from_f64(c as f64 - 1.0);
    let mut acc = F::zero();
    let mut pairs = 0usize;
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            acc += (dot(&tilde[i], &tilde[j]) + target).abs();
            pairs += 1;
        }
    }
    let equiangular = acc / F::from_f64(pairs as f64);
    Ok((equinorm, equiangular))
}

/// `√(Σ_c ‖w_c/‖w_c‖ − μ̃_c‖²)`: self-duality of classifier rows and
/// centered class means.
pub fn nc3<F: Scalar>(stats: &ClassStats<F>, w: &Mat<F>) -> Result<F> {
    let c = stats.num_classes();
    if w.rows != c || w.cols != stats.dim {
        return Err(Error::Dimension(format!(
            "classifier {}x{} vs {} classes of dimension {}",
            w.rows, w.cols, c, stats.dim
        )));
    }
    let tilde = stats.normalized_centered_means()?;
    let mut acc = F::zero();
    for ci in 0..c {
        let row = w.row(ci);
        let norm = l2_norm(row);
        if norm <= F::from_f64(1e-300) {
            return Err(Error::Degenerate(format!("classifier row {} is zero", ci)));
        }
        for (j, &wj) in row.iter().enumerate() {
            let d = wj / norm - tilde[ci][j];
            acc += d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Nearest-center prediction; ties resolve to the lowest class index.
pub fn ncc_predict<F: Scalar>(h: &[F], centers: &[Vec<F>]) -> usize {
    let mut best = 0usize;
    let mut best_d = F::infinity();
    for (c, center) in centers.iter().enumerate() {
        let d = h
            .iter()
            .zip(center)
            .fold(F::zero(), |a, (&x, &m)| a + (x - m) * (x - m));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn linear_argmax<F: Scalar>(h: &[F], w: &Mat<F>, b: &[F]) -> usize {
    let mut best = 0usize;
    let mut best_v = F::neg_infinity();
    for c in 0..w.rows {
        let v = dot(w.row(c), h) + b[c];
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

/// Fraction of points in `fs` where the linear classifier and the NCC rule
/// (centers taken from `fs` itself) disagree.
pub fn nc4_mismatch<F: Scalar>(fs: &FeatureSet<F>, w: &Mat<F>, b: &[F]) -> Result<F> {
    let stats = class_stats(fs)?;
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for (_, h) in fs.iter_all() {
        if linear_argmax(h, w, b) != ncc_predict(h, &stats.class_means) {
            mismatches += 1;
        }
        total += 1;
    }
    Ok(F::from_f64(mismatches as f64 / total as f64))
}

/// Rate at which the NCC classifier with `centers` (from the reference set S)
/// agrees with the network prediction on the evaluation set. `net_preds` must
/// align with `fs_eval.iter_all()` order.
pub fn ncc_matching_rate<F: Scalar>(
    fs_eval: &FeatureSet<F>,
    net_preds: &[usize],
    centers: &[Vec<F>],
) -> Result<F> {
    if net_preds.len() != fs_eval.total() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} vectors",
            net_preds.len(),
            fs_eval.total()
        )));
    }
    let mut agree = 0usize;
    for ((_, h), &pred) in fs_eval.iter_all().zip(net_preds) {
        if ncc_predict(h, centers) == pred {
            agree += 1;
        }
    }
    Ok(F::from_f64(agree as f64 / fs_eval.total() as f64))
}

/// Accuracy of the NCC classifier with `centers` (from S) against the
/// ground-truth grouping of `fs_eval`.
pub fn ncc_accuracy<F: Scalar>(fs_eval: &FeatureSet<F>, centers: &[Vec<F>]) -> Result<F> {
    if fs_eval.total() == 0 {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    for (label, h) in fs_eval.iter_all() {
        if ncc_predict(h, centers) == label {
            correct += 1;
        }
    }
    Ok(F::from_f64(correct as f64 / fs_eval.total() as f64))
}

/// Mean per-class angle between the normalized centered class means of two
/// simplices (each centered by its own global mean). Radians in `[0,π]`.
pub fn simplex_similarity<F: Scalar>(a: &ClassStats<F>, b: &ClassStats<F>) -> Result<F> {
    if a.num_classes() != b.num_classes() || a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "simplices {}x{} vs {}x{}",
            a.num_classes(),
            a.dim,
            b.num_classes(),
            b.dim
        )));
    }
    let ta = a.normalized_centered_means()?;
    let tb = b.normalized_centered_means()?;
    let mut acc = F::zero();
    for (ma, mb) in ta.iter().zip(&tb) {
        acc += clamp_unit(dot(ma, mb)).acos();
    }
    Ok(acc / F::from_f64(a.num_classes() as f64))
}

/// Mean per-class angle between NON-centered class means of two simplices.
pub fn noncentered_angular<F: Scalar>(a: &ClassStats<F>, b: &ClassStats<F>) -> Result<F> {
    if a.num_classes() != b.num_classes() || a.dim != b.dim {
        return Err(Error::Dimension("mismatched simplices".into()));
    }
    let mut acc = F::zero();
    for (c, (ma, mb)) in a.class_means.iter().zip(&b.class_means).enumerate() {
        let (na, nb) = (l2_norm(ma), l2_norm(mb));
        if na <= F::from_f64(1e-300) || nb <= F::from_f64(1e-300) {
            return Err(Error::Degenerate(format!("class {} has zero mean", c)));
        }
        acc += clamp_unit(dot(ma, mb) / (na * nb)).acos();
    }
    Ok(acc / F::from_f64(a.num_classes() as f64))
}

/// Geometry of perturbed representations grouped by PREDICTED label,
/// relative to the clean simplex (clean global mean, clean class means).
#[derive(Debug, Clone)]
pub struct PredictedGroup<F: Scalar> {
    pub class: usize,
    pub count: usize,
    /// `‖ν_c − μ_G^{clean}‖`; absent when the group is empty.
    pub mean_norm: Option<F>,
    /// Angle between the centered predicted mean and the clean centered
    /// class mean of the same class.
    pub angle_to_clean: Option<F>,
}

pub fn predicted_group_stats<F: Scalar>(
    fs_predicted: &FeatureSet<F>,
    clean_stats: &ClassStats<F>,
) -> Result<Vec<PredictedGroup<F>>> {
    if fs_predicted.dim() != clean_stats.dim {
        return Err(Error::Dimension(format!(
            "predicted features of dim {} vs clean stats of dim {}",
            fs_predicted.dim(),
            clean_stats.dim
        )));
    }
    let clean_tilde = clean_stats.normalized_centered_means()?;
    let mut out = Vec::with_capacity(fs_predicted.num_classes());
    for c in 0..fs_predicted.num_classes() {
        let group = fs_predicted.class(c);
        if group.is_empty() {
            out.push(PredictedGroup {
                class: c,
                count: 0,
                mean_norm: None,
                angle_to_clean: None,
            });
            continue;
        }
        let inv = F::one() / F::from_f64(group.len() as f64);
        let mut nu = vec![F::zero(); fs_predicted.dim()];
        for v in group {
            for (ni, &vi) in nu.iter_mut().zip(v) {
                *ni += vi;
            }
        }
        for ni in &mut nu {
            *ni *= inv;
        }
        let centered: Vec<F> = nu
            .iter()
            .zip(&clean_stats.global_mean)
            .map(|(&a, &g)| a - g)
            .collect();
        let norm = l2_norm(&centered);
        if norm <= F::from_f64(1e-300) {
            out.push(PredictedGroup {
                class: c,
                count: group.len(),
                mean_norm: Some(norm),
                angle_to_clean: None,
            });
            continue;
        }
        let cosine = dot(&centered, &clean_tilde[c]) / norm;
        out.push(PredictedGroup {
            class: c,
            count: group.len(),
            mean_norm: Some(norm),
            angle_to_clean: Some(clamp_unit(cosine).acos()),
        });
    }
    Ok(out)
}

/// Full report for an evaluation set. `reference` supplies the NCC centers
/// (and the simplex the similarity metrics compare against); when absent the
/// evaluation set's own statistics are used, which matches the S = S' case.
pub fn nc_report<F: Scalar>(
    fs_eval: &FeatureSet<F>,
    net_preds: &[usize],
    w: &Mat<F>,
    b: &[F],
    reference: Option<&ClassStats<F>>,
) -> Result<NcReport<F>> {
    let stats_eval = class_stats(fs_eval)?;
    let (equinorm, equiangular) = nc2(&stats_eval)?;
    let centers = reference.map_or(&stats_eval.class_means, |r| &r.class_means);
    let (similarity, angular) = match reference {
        Some(r) => (
            Some(simplex_similarity(&stats_eval, r)?),
            Some(noncentered_angular(&stats_eval, r)?),
        ),
        None => (None, None),
    };
    Ok(NcReport {
        nc1: nc1(&stats_eval)?,
        nc2_equinorm: equinorm,
        nc2_equiangular: equiangular,
        nc3: nc3(&stats_eval, w)?,
        nc4_mismatch: nc4_mismatch(fs_eval, w, b)?,
        ncc_accuracy: ncc_accuracy(fs_eval, centers)?,
        ncc_matching_rate: ncc_matching_rate(fs_eval, net_preds, centers)?,
        simplex_similarity: similarity,
        noncentered_angular: angular,
    })
}
