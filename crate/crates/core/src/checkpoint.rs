//! Versioned binary model checkpoints. Values are stored as little-endian
//! IEEE-754 bit patterns so that a save/load round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Layer, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NCLABCK\x01";

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_all(&(v as u32).to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn write_f64s<W: Write, F: Scalar>(w: &mut W, values: &[F]) -> Result<()> {
    write_u32(w, values.len())?;
    for &v in values {
        w.write_all(&v.to_f64().to_bits().to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read, F: Scalar>(r: &mut R) -> Result<Vec<F>> {
    let n = read_u32(r)?;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(F::from_f64(f64::from_bits(u64::from_le_bytes(buf))));
    }
    Ok(out)
}

fn write_tensor<W: Write, F: Scalar>(w: &mut W, t: &Tensor<F>) -> Result<()> {
    let shape = t.shape();
    write_u32(w, shape.len())?;
    for &d in &shape {
        write_u32(w, d)?;
    }
    write_f64s(w, &t.to_vec())
}

fn read_tensor<R: Read, F: Scalar>(r: &mut R) -> Result<Tensor<F>> {
    let ndim = read_u32(r)?;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(r)?);
    }
    let data = read_f64s(r)?;
    let t = Tensor::leaf(&shape, data)?;
    Ok(t)
}

pub fn save<F: Scalar>(net: &Network<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_to(net, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Serialize into any writer; `save` and the in-memory snapshot share this.
pub fn save_to<F: Scalar, W: Write>(net: &Network<F>, mut w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, net.input_shape.len())?;
    for &d in &net.input_shape {
        write_u32(&mut w, d)?;
    }
    write_u32(&mut w, net.num_classes)?;
    write_u32(&mut w, net.layers.len())?;
    for layer in &net.layers {
        match layer {
            Layer::Normalize { mean, std } => {
                w.write_all(&[0])?;
                write_f64s(&mut w, mean)?;
                write_f64s(&mut w, std)?;
            }
            Layer::Dense { weight, bias } => {
                w.write_all(&[1])?;
                write_tensor(&mut w, weight)?;
                write_tensor(&mut w, bias)?;
            }
            Layer::Conv { weight, bias, stride, padding } => {
                w.write_all(&[2])?;
                write_u32(&mut w, *stride)?;
                write_u32(&mut w, *padding)?;
                write_tensor(&mut w, weight)?;
                write_tensor(&mut w, bias)?;
            }
            Layer::Relu => w.write_all(&[3])?,
            Layer::AvgPool { k } => {
                w.write_all(&[4])?;
                write_u32(&mut w, *k)?;
            }
            Layer::Flatten => w.write_all(&[5])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<Network<F>> {
    let mut r = BufReader::new(File::open(path)?);
    load_from(&mut r, &path.display().to_string())
}

/// Deserialize from any reader; `origin` names the source in errors.
pub fn load_from<F: Scalar, R: Read>(mut r: &mut R, origin: &str) -> Result<Network<F>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad checkpoint magic {:02x?}",
            origin, magic
        )));
    }
    let ndim = read_u32(&mut r)?;
    let mut input_shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        input_shape.push(read_u32(&mut r)?);
    }
    let num_classes = read_u32(&mut r)?;
    let n_layers = read_u32(&mut r)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let layer = match tag[0] {
            0 => Layer::Normalize {
                mean: read_f64s(&mut r)?,
                std: read_f64s(&mut r)?,
            },
            1 => Layer::Dense {
                weight: read_tensor(&mut r)?,
                bias: read_tensor(&mut r)?,
            },
            2 => {
                let stride = read_u32(&mut r)?;
                let padding = read_u32(&mut r)?;
                Layer::Conv {
                    weight: read_tensor(&mut r)?,
                    bias: read_tensor(&mut r)?,
                    stride,
                    padding,
                }
            }
            3 => Layer::Relu,
            4 => Layer::AvgPool { k: read_u32(&mut r)? },
            5 => Layer::Flatten,
            t => {
                return Err(Error::Format(format!(
                    "{}: unknown layer tag {}",
                    origin, t
                )))
            }
        };
        layers.push(layer);
    }
    Ok(Network {
        layers,
        input_shape,
        num_classes,
    })
}

/// In-memory snapshot of a network: plain bytes, so it can cross threads
/// and be restored onto a fresh tape.
pub fn snapshot<F: Scalar>(net: &Network<F>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save_to(net, &mut buf)?;
    Ok(buf)
}

pub fn restore<F: Scalar>(bytes: &[u8]) -> Result<Network<F>> {
    load_from(&mut std::io::Cursor::new(bytes), "snapshot")
}
