//! FeatureSet import/export: a binary container (header with class count,
//! dimension, per-class counts; packed 64-bit floats) and a plain-text
//! tabular alternative (one row per vector: class label then the values).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nc::stats::FeatureSet;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"NCLABFS\x01";

pub fn save_binary<F: Scalar>(fs: &FeatureSet<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(fs.num_classes() as u32).to_le_bytes())?;
    w.write_all(&(fs.dim() as u32).to_le_bytes())?;
    for n in fs.counts() {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    for c in 0..fs.num_classes() {
        for v in fs.class(c) {
            for &x in v {
                w.write_all(&x.to_f64().to_bits().to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_binary<F: Scalar>(path: &Path) -> Result<FeatureSet<F>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad feature-set magic",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let c = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4)?;
    let p = u32::from_le_bytes(buf4) as usize;
    let mut counts = Vec::with_capacity(c);
    for _ in 0..c {
        r.read_exact(&mut buf4)?;
        counts.push(u32::from_le_bytes(buf4) as usize);
    }
    let mut fs = FeatureSet::new(c, p);
    let mut buf8 = [0u8; 8];
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let mut v = Vec::with_capacity(p);
            for _ in 0..p {
                r.read_exact(&mut buf8)?;
                v.push(F::from_f64(f64::from_bits(u64::from_le_bytes(buf8))));
            }
            fs.push(class, v)?;
        }
    }
    Ok(fs)
}

pub fn save_text<F: Scalar>(fs: &FeatureSet<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (label, v) in fs.iter_all() {
        write!(w, "{}", label)?;
        for &x in v {
            write!(w, " {:e}", x.to_f64())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_text<F: Scalar>(path: &Path, num_classes: usize, dim: usize) -> Result<FeatureSet<F>> {
    let r = BufReader::new(File::open(path)?);
    let mut fs = FeatureSet::new(num_classes, dim);
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label: usize = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::Format(format!("{}:{}: bad label ({e})", path.display(), lineno + 1)))?;
        let values: Vec<F> = parts
            .map(|s| {
                s.parse::<f64>()
                    .map(F::from_f64)
                    .map_err(|e| Error::Format(format!("{}:{}: bad value ({e})", path.display(), lineno + 1)))
            })
            .collect::<Result<_>>()?;
        fs.push(label, values)?;
    }
    Ok(fs)
}
