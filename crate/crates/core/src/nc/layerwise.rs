//! Depth profiles of collapse: per-tap NC metrics with average-pool
//! subsampling of representations too large for the NC1 pseudoinverse.

use crate::error::Result;
use crate::linalg::Mat;
use crate::models::Network;
use crate::nc::metrics::{nc1, nc2, ncc_accuracy, ncc_matching_rate};
use crate::nc::stats::{class_stats, FeatureSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LayerwiseEntry<F: Scalar> {
    pub depth: usize,
    /// Representation dimension after any pooling.
    pub dim: usize,
    pub nc1: F,
    pub nc2_equinorm: F,
    pub nc2_equiangular: F,
    /// NCC accuracy on the evaluation set, centers from the reference set.
    pub ncc_accuracy: F,
    /// Agreement between the per-layer NCC rule and the full network output.
    pub ncc_matching_rate: F,
}

/// Smallest pooling window (dividing both spatial sizes) that brings
/// `c·(h/k)·(w/k)` under `max_dim`; falls back to the coarsest common
/// divisor if none suffices.
fn pooling_window(c: usize, h: usize, w: usize, max_dim: usize) -> usize {
    let mut fallback = 1;
    for k in 1..=h.min(w) {
        if h % k != 0 || w % k != 0 {
            continue;
        }
        fallback = k;
        if c * (h / k) * (w / k) <= max_dim {
            return k;
        }
    }
    fallback
}

fn avg_pool_rows<F: Scalar>(data: &[F], n: usize, c: usize, h: usize, w: usize, k: usize) -> Mat<F> {
    let (oh, ow) = (h / k, w / k);
    let inv = F::one() / F::from_f64((k * k) as f64);
    let mut out = Mat::zeros(n, c * oh * ow);
    for i in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += data[((i * c + ci) * h + oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out.set(i, ci * oh * ow + oy * ow + ox, acc * inv);
                }
            }
        }
    }
    out
}

/// Run the network over `inputs` and return one flattened (and, where
/// needed, average-pool subsampled) feature matrix per tap, plus the
/// network's argmax predictions.
pub fn pooled_tap_features<F: Scalar>(
    net: &Network<F>,
    inputs: &Tensor<F>,
    max_dim: usize,
) -> Result<(Vec<Mat<F>>, Vec<usize>)> {
    let (logits, taps) = net.forward_with_taps(inputs)?;
    let n = inputs.shape()[0];
    let mut features = Vec::with_capacity(taps.len());
    for tap in &taps {
        let shape = tap.shape();
        let mat = if shape.len() == 4 && shape[1] * shape[2] * shape[3] > max_dim {
            let (c, h, w) = (shape[1], shape[2], shape[3]);
            let k = pooling_window(c, h, w, max_dim);
            avg_pool_rows(&tap.data(), n, c, h, w, k)
        } else {
            let cols = tap.numel() / n;
            Mat {
                rows: n,
                cols,
                data: tap.to_vec(),
            }
        };
        features.push(mat);
    }

    let c = net.num_classes;
    let lv = logits.data();
    let preds = (0..n)
        .map(|i| {
            let row = &lv[i * c..(i + 1) * c];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect();
    Ok((features, preds))
}

/// Per-tap NC metrics: statistics of the evaluation set grouped by its
/// labels, with NCC centers taken from the reference set.
pub fn layerwise_report<F: Scalar>(
    net: &Network<F>,
    ref_inputs: &Tensor<F>,
    ref_labels: &[usize],
    eval_inputs: &Tensor<F>,
    eval_labels: &[usize],
    max_dim: usize,
) -> Result<Vec<LayerwiseEntry<F>>> {
    let c = net.num_classes;
    let (ref_feats, _) = pooled_tap_features(net, ref_inputs, max_dim)?;
    let (eval_feats, eval_preds) = pooled_tap_features(net, eval_inputs, max_dim)?;

    let mut entries = Vec::with_capacity(ref_feats.len());
    for (depth, (rf, ef)) in ref_feats.iter().zip(&eval_feats).enumerate() {
        let build = || -> Result<LayerwiseEntry<F>> {
            let ref_fs = FeatureSet::from_rows(rf, ref_labels, c)?;
            let centers = class_stats(&ref_fs)?.class_means;
            let eval_fs = FeatureSet::from_rows(ef, eval_labels, c)?;
            let eval_stats = class_stats(&eval_fs)?;
            let (equinorm, equiangular) = nc2(&eval_stats)?;
            Ok(LayerwiseEntry {
                depth,
                dim: rf.cols,
                nc1: nc1(&eval_stats)?,
                nc2_equinorm: equinorm,
                nc2_equiangular: equiangular,
                ncc_accuracy: ncc_accuracy(&eval_fs, &centers)?,
                ncc_matching_rate: ncc_matching_rate(&eval_fs, &eval_preds, &centers)?,
            })
        };
        entries.push(build().map_err(|e| e.with_layer(depth))?);
    }
    Ok(entries)
}
