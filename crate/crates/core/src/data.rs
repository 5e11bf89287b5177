//! Dataset construction and ingestion: synthetic Gaussian-mixture tasks on
//! ETF-placed centers, IDX small-image loading, per-channel normalization
//! statistics, and balanced subsampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nc::etf::standard_etf;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An immutable labeled dataset. Raw inputs live in `[0,1]`; normalization
/// happens inside the model path, never here.
#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    /// Per-example shape, without the batch dimension.
    pub input_shape: Vec<usize>,
    /// Row-major, `len() * input_dim()` values in `[0,1]`.
    pub inputs: Vec<F>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Generator provenance and squash parameters, as key-value pairs.
    pub metadata: Vec<(String, String)>,
}

impl<F: Scalar> Dataset<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        counts.windows(2).all(|w| w[0] == w[1])
    }

    pub fn example(&self, i: usize) -> &[F] {
        let d = self.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Batch tensor `[k, input_shape...]` for the given example indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<F>> {
        let d = self.input_dim();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.input_shape);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!(
                    "example {} out of range for dataset of {}",
                    i,
                    self.len()
                )));
            }
            data.extend_from_slice(self.example(i));
        }
        Tensor::new(&shape, data)
    }

    /// The whole dataset as one batch tensor.
    pub fn to_tensor(&self) -> Result<Tensor<F>> {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.batch(&indices)
    }
}

/// Balanced Gaussian mixture: class centers at `center_radius` times the
/// vertices of a standard simplex ETF embedded in `dim`, isotropic Gaussian
/// noise, then an affine min-max squash of the whole batch into `[0,1]`.
/// The squash offset/scale land in the metadata so distances stay auditable.
pub fn make_gaussian_mixture<F: Scalar>(
    num_classes: usize,
    n_per_class: usize,
    dim: usize,
    center_radius: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset<F>> {
    if num_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::Config("negative noise_std".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Config("need at least 1 example per class".into()));
    }
    let centers = standard_etf::<f64>(num_classes, dim, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n = num_classes * n_per_class;
    let mut raw = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for _ in 0..n_per_class {
            labels.push(c);
            for j in 0..dim {
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * noise_std;
                raw.push(center_radius * centers.at(c, j) + noise);
            }
        }
    }

    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let inputs: Vec<F> = raw
        .iter()
        .map(|&x| {
            let y = if scale > 0.0 { (x - lo) * scale } else { 0.5 };
            F::from_f64(y)
        })
        .collect();

    Ok(Dataset {
        input_shape: vec![dim],
        inputs,
        labels,
        num_classes,
        metadata: vec![
            ("generator".into(), "gaussian_mixture".into()),
            ("classes".into(), num_classes.to_string()),
            ("n_per_class".into(), n_per_class.to_string()),
            ("dim".into(), dim.to_string()),
            ("center_radius".into(), format!("{center_radius:e}")),
            ("noise_std".into(), format!("{noise_std:e}")),
            ("seed".into(), seed.to_string()),
            ("squash_offset".into(), format!("{lo:e}")),
            ("squash_scale".into(), format!("{scale:e}")),
        ],
    })
}

fn read_u32_be(r: &mut impl Read, offset: &mut usize, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| {
        Error::Format(format!("{}: truncated at byte {} ({e})", path.display(), offset))
    })?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

fn read_idx_header(r: &mut impl Read, offset: &mut usize, path: &Path, ndims: u8) -> Result<Vec<usize>> {
    let magic = read_u32_be(r, offset, path)?;
    let bytes = magic.to_be_bytes();
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Format(format!(
            "{}: bad IDX magic {:#010x} at byte 0 (want unsigned-byte type 0x08)",
            path.display(),
            magic
        )));
    }
    if bytes[3] != ndims {
        return Err(Error::Format(format!(
            "{}: IDX rank {} at byte 3, expected {}",
            path.display(),
            bytes[3],
            ndims
        )));
    }
    (0..ndims)
        .map(|_| read_u32_be(r, offset, path).map(|d| d as usize))
        .collect()
}

/// Load an IDX image file (rank 3: count × rows × cols, unsigned bytes)
/// paired with an IDX label file (rank 1). Pixels scale to `[0,1]` with
/// byte 255 mapping to exactly 1.
pub fn load_idx<F: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<F>> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let mut off = 0usize;
    let idims = read_idx_header(&mut ir, &mut off, images_path, 3)?;
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let mut pixels = vec![0u8; n * h * w];
    ir.read_exact(&mut pixels).map_err(|e| {
        Error::Format(format!(
            "{}: truncated pixel data at byte {} ({e})",
            images_path.display(),
            off
        ))
    })?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let mut loff = 0usize;
    let ldims = read_idx_header(&mut lr, &mut loff, labels_path, 1)?;
    if ldims[0] != n {
        return Err(Error::Format(format!(
            "{}: {} labels for {} images",
            labels_path.display(),
            ldims[0],
            n
        )));
    }
    let mut bytes = vec![0u8; n];
    lr.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!(
            "{}: truncated label data at byte {} ({e})",
            labels_path.display(),
            loff
        ))
    })?;

    let labels: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let inputs = pixels
        .iter()
        .map(|&p| F::from_f64(p as f64 / 255.0))
        .collect();
    Ok(Dataset {
        input_shape: vec![1, h, w],
        inputs,
        labels,
        num_classes,
        metadata: vec![("generator".into(), "idx".into())],
    })
}

/// Write a dataset with image-shaped inputs back out as an IDX pair.
/// Values are rounded to the nearest byte; byte-valued inputs round-trip
/// bit-exactly.
pub fn save_idx<F: Scalar>(ds: &Dataset<F>, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (h, w) = match ds.input_shape.as_slice() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(Error::Contract(format!(
                "IDX export needs single-channel image inputs, got shape {:?}",
                other
            )))
        }
    };
    let mut iw = BufWriter::new(File::create(images_path)?);
    iw.write_all(&[0, 0, 0x08, 3])?;
    for d in [ds.len(), h, w] {
        iw.write_all(&(d as u32).to_be_bytes())?;
    }
    for &x in &ds.inputs {
        iw.write_all(&[(x.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8])?;
    }
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(labels_path)?);
    lw.write_all(&[0, 0, 0x08, 1])?;
    lw.write_all(&(ds.len() as u32).to_be_bytes())?;
    for &l in &ds.labels {
        lw.write_all(&[l as u8])?;
    }
    lw.flush()?;
    Ok(())
}

/// Per-channel mean and population std over every pixel of the train split.
/// Channels come from a rank-3 input shape; flat inputs count as one channel.
/// Std is floored at 1e-8 so constant channels normalize to zero.
pub fn normalize_stats<F: Scalar>(train: &Dataset<F>) -> Result<(Vec<F>, Vec<F>)> {
    if train.is_empty() {
        return Err(Error::Contract("normalization over an empty dataset".into()));
    }
    let channels = if train.input_shape.len() == 3 {
        train.input_shape[0]
    } else {
        1
    };
    let per_channel = train.input_dim() / channels;
    let count = F::from_f64((train.len() * per_channel) as f64);
    let mut mean = vec![F::zero(); channels];
    let mut var = vec![F::zero(); channels];
    for i in 0..train.len() {
        let ex = train.example(i);
        for c in 0..channels {
            for &x in &ex[c * per_channel..(c + 1) * per_channel] {
                mean[c] += x;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for i in 0..train.len() {
        let ex = train.example(i);
        for c in 0..channels {
            for &x in &ex[c * per_channel..(c + 1) * per_channel] {
                var[c] += (x - mean[c]) * (x - mean[c]);
            }
        }
    }
    let floor = F::from_f64(1e-8);
    let std = var
        .iter()
        .map(|&v| (v / count).sqrt().max(floor))
        .collect();
    Ok((mean, std))
}

/// Uniform per-class subsample without replacement, deterministic by seed.
/// Selected indices keep their original order within each class.
pub fn balanced_subset<F: Scalar>(
    ds: &Dataset<F>,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(ds.num_classes * n_per_class);
    for c in 0..ds.num_classes {
        let mut pool: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if pool.len() < n_per_class {
            return Err(Error::Data(format!(
                "class {} has {} examples, need {}",
                c,
                pool.len(),
                n_per_class
            )));
        }
        pool.shuffle(&mut rng);
        let mut take: Vec<usize> = pool.into_iter().take(n_per_class).collect();
        take.sort_unstable();
        chosen.extend(take);
    }
    let d = ds.input_dim();
    let mut inputs = Vec::with_capacity(chosen.len() * d);
    let mut labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        inputs.extend_from_slice(ds.example(i));
        labels.push(ds.labels[i]);
    }
    Ok(Dataset {
        input_shape: ds.input_shape.clone(),
        inputs,
        labels,
        num_classes: ds.num_classes,
        metadata: ds.metadata.clone(),
    })
}

/// Split class-by-class: the first `n_first` examples of every class go to
/// the first dataset, the rest to the second. Train/test splits of one
/// generated mixture share centers and squash this way.
pub fn split_balanced<F: Scalar>(ds: &Dataset<F>, n_first: usize) -> Result<(Dataset<F>, Dataset<F>)> {
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n < n_first) {
        return Err(Error::Data(format!(
            "class {} has {} examples, need {} for the first split",
            c, counts[c], n_first
        )));
    }
    let d = ds.input_dim();
    let mut taken = vec![0usize; ds.num_classes];
    let (mut a_in, mut a_lab) = (Vec::new(), Vec::new());
    let (mut b_in, mut b_lab) = (Vec::new(), Vec::new());
    for i in 0..ds.len() {
        let l = ds.labels[i];
        let (inp, lab) = if taken[l] < n_first {
            taken[l] += 1;
            (&mut a_in, &mut a_lab)
        } else {
            (&mut b_in, &mut b_lab)
        };
        inp.extend_from_slice(&ds.inputs[i * d..(i + 1) * d]);
        lab.push(l);
    }
    let make = |inputs, labels| Dataset {
        input_shape: ds.input_shape.clone(),
        inputs,
        labels,
        num_classes: ds.num_classes,
        metadata: ds.metadata.clone(),
    };
    Ok((make(a_in, a_lab), make(b_in, b_lab)))
}

/// Human-readable `key = value` sidecar with counts, normalization stats,
/// and generator provenance.
pub fn save_metadata<F: Scalar>(ds: &Dataset<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "examples = {}", ds.len())?;
    writeln!(w, "classes = {}", ds.num_classes)?;
    let counts: Vec<String> = ds.class_counts().iter().map(|c| c.to_string()).collect();
    writeln!(w, "class_counts = {}", counts.join(","))?;
    let shape: Vec<String> = ds.input_shape.iter().map(|d| d.to_string()).collect();
    writeln!(w, "input_shape = {}", shape.join("x"))?;
    if !ds.is_empty() {
        let (mean, std) = normalize_stats(ds)?;
        let ms: Vec<String> = mean.iter().map(|&m| format!("{:e}", m.to_f64())).collect();
        let ss: Vec<String> = std.iter().map(|&s| format!("{:e}", s.to_f64())).collect();
        writeln!(w, "channel_mean = {}", ms.join(","))?;
        writeln!(w, "channel_std = {}", ss.join(","))?;
    }
    for (k, v) in &ds.metadata {
        writeln!(w, "{} = {}", k, v)?;
    }
    w.flush()?;
    Ok(())
}
