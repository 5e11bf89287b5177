//! Small classifier architectures: dense/conv stacks with representation
//! taps and access to the final linear classifier.
//!
//! Input normalization lives inside the forward pass as a `Normalize` layer,
//! so attack radii stay in raw input units.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

pub enum Layer<F: Scalar> {
    Normalize { mean: Vec<F>, std: Vec<F> },
    Dense { weight: Tensor<F>, bias: Tensor<F> },
    Conv { weight: Tensor<F>, bias: Tensor<F>, stride: usize, padding: usize },
    Relu,
    AvgPool { k: usize },
    Flatten,
}

pub struct Network<F: Scalar> {
    pub layers: Vec<Layer<F>>,
    /// Per-example input shape, without the batch dimension.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

fn uniform_init<F: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| F::from_f64(rng.gen_range(-limit..limit)))
        .collect()
}

/// Dense→relu stack ending in a dense `num_classes`-way classifier.
/// Empty `hidden_widths` yields plain logistic regression.
pub fn build_mlp<F: Scalar>(
    input_dim: usize,
    hidden_widths: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<Network<F>> {
    if hidden_widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("hidden widths must be >= 1".into()));
    }
    if input_dim == 0 || num_classes < 2 {
        return Err(Error::Config(format!(
            "invalid mlp dims: input {}, classes {}",
            input_dim, num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut prev = input_dim;
    for &width in hidden_widths {
        layers.push(dense_layer(&mut rng, prev, width)?);
        layers.push(Layer::Relu);
        prev = width;
    }
    layers.push(dense_layer(&mut rng, prev, num_classes)?);
    Ok(Network {
        layers,
        input_shape: vec![input_dim],
        num_classes,
    })
}

fn dense_layer<F: Scalar>(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Result<Layer<F>> {
    let weight = Tensor::leaf(&[out, inp], uniform_init(rng, out * inp, inp, out))?;
    let bias = Tensor::leaf(&[out], vec![F::zero(); out])?;
    Ok(Layer::Dense { weight, bias })
}

/// Repeated conv(3×3, pad 1)→relu→avgpool(2) blocks, then flatten and a
/// dense classifier. Spatial size must be divisible by 2^blocks.
pub fn build_small_convnet<F: Scalar>(
    channels: &[usize],
    input: (usize, usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<Network<F>> {
    let (cin, h, w) = input;
    if channels.is_empty() {
        return Err(Error::Config("convnet needs at least one conv block".into()));
    }
    let div = 1usize << channels.len();
    if h % div != 0 || w % div != 0 {
        return Err(Error::Config(format!(
            "spatial size {}x{} not divisible by 2^{} pooling stages",
            h,
            w,
            channels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut prev_c = cin;
    let (mut ch, mut cw) = (h, w);
    for &c in channels {
        let fan_in = prev_c * 9;
        let fan_out = c * 9;
        let weight = Tensor::leaf(&[c, prev_c, 3, 3], uniform_init(&mut rng, c * prev_c * 9, fan_in, fan_out))?;
        let bias = Tensor::leaf(&[c], vec![F::zero(); c])?;
        layers.push(Layer::Conv { weight, bias, stride: 1, padding: 1 });
        layers.push(Layer::Relu);
        layers.push(Layer::AvgPool { k: 2 });
        prev_c = c;
        ch /= 2;
        cw /= 2;
    }
    layers.push(Layer::Flatten);
    let penultimate = prev_c * ch * cw;
    layers.push(dense_layer(&mut rng, penultimate, num_classes)?);
    Ok(Network {
        layers,
        input_shape: vec![cin, h, w],
        num_classes,
    })
}

impl<F: Scalar> Network<F> {
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward_with_taps(x)?.0)
    }

    /// Forward pass returning the input activation of every conv and dense
    /// layer, ordered by depth. The last tap is the penultimate
    /// representation (classifier input).
    pub fn forward_with_taps(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let batch = x.shape().first().copied().unwrap_or(0);
        let expected: Vec<usize> =
            std::iter::once(batch).chain(self.input_shape.iter().copied()).collect();
        if x.shape() != expected {
            return Err(Error::Dimension(format!(
                "network expects input {:?}, got {:?}",
                expected,
                x.shape()
            )));
        }
        let mut cur = x.clone();
        let mut taps = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Normalize { mean, std } => {
                    cur = ops::normalize_channels(&cur, mean, std)?;
                }
                Layer::Dense { weight, bias } => {
                    if cur.shape().len() != 2 {
                        cur = ops::flatten(&cur)?;
                    }
                    taps.push(cur.clone());
                    cur = ops::linear(&cur, weight, bias)?;
                }
                Layer::Conv { weight, bias, stride, padding } => {
                    taps.push(cur.clone());
                    cur = ops::conv2d(&cur, weight, *stride, *padding)?;
                    cur = ops::add_channel_bias(&cur, bias)?;
                }
                Layer::Relu => cur = ops::relu(&cur)?,
                Layer::AvgPool { k } => cur = ops::avgpool2d(&cur, *k)?,
                Layer::Flatten => cur = ops::flatten(&cur)?,
            }
        }
        Ok((cur, taps))
    }

    /// Live handles to the final dense layer's `(W [C×p], b [C])`.
    pub fn classifier_params(&self) -> (Tensor<F>, Tensor<F>) {
        for layer in self.layers.iter().rev() {
            if let Layer::Dense { weight, bias } = layer {
                return (weight.clone(), bias.clone());
            }
        }
        unreachable!("network has no dense classifier layer");
    }

    /// All trainable parameter tensors, in depth order.
    pub fn params(&self) -> Vec<Tensor<F>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv { weight, bias, .. } => {
                    out.push(weight.clone());
                    out.push(bias.clone());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }

    pub fn freeze(&self) {
        for p in self.params() {
            p.set_requires_grad(false);
        }
    }

    pub fn unfreeze(&self) {
        for p in self.params() {
            p.set_requires_grad(true);
        }
    }

    pub fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Install per-channel input normalization at the front of the stack,
    /// replacing any existing one.
    pub fn set_normalization(&mut self, mean: Vec<F>, std: Vec<F>) {
        if let Some(Layer::Normalize { mean: m, std: s }) = self.layers.first_mut() {
            *m = mean;
            *s = std;
            return;
        }
        self.layers.insert(0, Layer::Normalize { mean, std });
    }

    pub fn tap_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Dense { .. } | Layer::Conv { .. }))
            .count()
    }
}
