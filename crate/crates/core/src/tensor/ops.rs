//! Differentiable operations. Each op computes its forward value eagerly and
//! registers a backward closure over saved inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

fn dim_err<T>(msg: String) -> Result<T> {
    Err(Error::Dimension(msg))
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return dim_err(format!("add: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let data: Vec<F> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    Tensor::from_op(
        a.shape(),
        data,
        "add",
        vec![a.clone(), b.clone()],
        Box::new(|g| vec![g.to_vec(), g.to_vec()]),
    )
}

pub fn sub<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return dim_err(format!("sub: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let data: Vec<F> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x - y).collect();
    Tensor::from_op(
        a.shape(),
        data,
        "sub",
        vec![a.clone(), b.clone()],
        Box::new(|g| {
            let neg: Vec<F> = g.iter().map(|&v| -v).collect();
            vec![g.to_vec(), neg]
        }),
    )
}

pub fn mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return dim_err(format!("mul: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (av, bv) = (a.to_vec(), b.to_vec());
    let data: Vec<F> = av.iter().zip(&bv).map(|(&x, &y)| x * y).collect();
    Tensor::from_op(
        a.shape(),
        data,
        "mul",
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga: Vec<F> = g.iter().zip(&bv).map(|(&gi, &y)| gi * y).collect();
            let gb: Vec<F> = g.iter().zip(&av).map(|(&gi, &x)| gi * x).collect();
            vec![ga, gb]
        }),
    )
}

pub fn scale<F: Scalar>(a: &Tensor<F>, factor: F) -> Result<Tensor<F>> {
    let data: Vec<F> = a.data().iter().map(|&x| x * factor).collect();
    Tensor::from_op(
        a.shape(),
        data,
        "scale",
        vec![a.clone()],
        Box::new(move |g| vec![g.iter().map(|&gi| gi * factor).collect()]),
    )
}

pub fn sum<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let total = a.data().iter().fold(F::zero(), |acc, &x| acc + x);
    let n = a.numel();
    Tensor::from_op(
        vec![],
        vec![total],
        "sum",
        vec![a.clone()],
        Box::new(move |g| vec![vec![g[0]; n]]),
    )
}

pub fn mean<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let n = a.numel();
    if n == 0 {
        return Err(Error::Contract("mean of empty tensor".into()));
    }
    let inv = F::one() / F::from_f64(n as f64);
    scale(&sum(a)?, inv)
}

pub fn relu<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let av = a.to_vec();
    let data: Vec<F> = av.iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect();
    Tensor::from_op(
        a.shape(),
        data,
        "relu",
        vec![a.clone()],
        Box::new(move |g| {
            // subgradient at exactly 0 is 0
            vec![g
                .iter()
                .zip(&av)
                .map(|(&gi, &x)| if x > F::zero() { gi } else { F::zero() })
                .collect()]
        }),
    )
}

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return dim_err(format!("matmul: {:?} x {:?}", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (av, bv) = (a.to_vec(), b.to_vec());
    let mut data = vec![F::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let x = av[i * k + l];
            for j in 0..n {
                data[i * n + j] += x * bv[l * n + j];
            }
        }
    }
    Tensor::from_op(
        vec![m, n],
        data,
        "matmul",
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            // a.grad += g · bᵀ ; b.grad += aᵀ · g
            let mut ga = vec![F::zero(); m * k];
            let mut gb = vec![F::zero(); k * n];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    for l in 0..k {
                        ga[i * k + l] += gij * bv[l * n + j];
                        gb[l * n + j] += av[i * k + l] * gij;
                    }
                }
            }
            vec![ga, gb]
        }),
    )
}

/// Fully-connected layer: `x [m×in] · wᵀ [in×out] + b [out]`.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (sx, sw, sb) = (x.shape(), w.shape(), b.shape());
    if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != vec![sw[0]] {
        return dim_err(format!("linear: x {:?}, w {:?}, b {:?}", sx, sw, sb));
    }
    let (m, d, out) = (sx[0], sx[1], sw[0]);
    let (xv, wv, bv) = (x.to_vec(), w.to_vec(), b.to_vec());
    let mut data = vec![F::zero(); m * out];
    for i in 0..m {
        for j in 0..out {
            let mut acc = bv[j];
            for l in 0..d {
                acc += xv[i * d + l] * wv[j * d + l];
            }
            data[i * out + j] = acc;
        }
    }
    Tensor::from_op(
        vec![m, out],
        data,
        "linear",
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g| {
            let mut gx = vec![F::zero(); m * d];
            let mut gw = vec![F::zero(); out * d];
            let mut gb = vec![F::zero(); out];
            for i in 0..m {
                for j in 0..out {
                    let gij = g[i * out + j];
                    gb[j] += gij;
                    for l in 0..d {
                        gx[i * d + l] += gij * wv[j * d + l];
                        gw[j * d + l] += gij * xv[i * d + l];
                    }
                }
            }
            vec![gx, gw, gb]
        }),
    )
}

fn conv_out_size(inp: usize, k: usize, stride: usize, pad: usize) -> usize {
    (inp + 2 * pad - k) / stride + 1
}

/// Cross-correlation with zero padding.
pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let (si, sk) = (input.shape(), kernel.shape());
    if si.len() != 4 || sk.len() != 4 {
        return dim_err(format!("conv2d: input {:?}, kernel {:?}", si, sk));
    }
    let (batch, cin, h, w) = (si[0], si[1], si[2], si[3]);
    let (cout, kcin, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
    if cin != kcin {
        return dim_err(format!(
            "conv2d: input has {} channels, kernel expects {}",
            cin, kcin
        ));
    }
    if stride < 1 || kh > h + 2 * padding || kw > w + 2 * padding {
        return dim_err(format!(
            "conv2d: kernel {}x{} does not fit input {}x{} with padding {}",
            kh, kw, h, w, padding
        ));
    }
    let oh = conv_out_size(h, kh, stride, padding);
    let ow = conv_out_size(w, kw, stride, padding);
    let (iv, kv) = (input.to_vec(), kernel.to_vec());
    let mut data = vec![F::zero(); batch * cout * oh * ow];
    for b in 0..batch {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky).wrapping_sub(padding);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx).wrapping_sub(padding);
                                if ix >= w {
                                    continue;
                                }
                                acc += iv[((b * cin + ci) * h + iy) * w + ix]
                                    * kv[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    data[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_op(
        vec![batch, cout, oh, ow],
        data,
        "conv2d",
        vec![input.clone(), kernel.clone()],
        Box::new(move |g| {
            let mut gi = vec![F::zero(); batch * cin * h * w];
            let mut gk = vec![F::zero(); cout * cin * kh * kw];
            for b in 0..batch {
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = g[((b * cout + co) * oh + oy) * ow + ox];
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky).wrapping_sub(padding);
                                    if iy >= h {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx).wrapping_sub(padding);
                                        if ix >= w {
                                            continue;
                                        }
                                        let ii = ((b * cin + ci) * h + iy) * w + ix;
                                        let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                        gi[ii] += go * kv[ki];
                                        gk[ki] += go * iv[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gi, gk]
        }),
    )
}

/// Per-channel bias for conv outputs: `x [b×c×h×w] + bias [c]`.
pub fn add_channel_bias<F: Scalar>(x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (sx, sb) = (x.shape(), bias.shape());
    if sx.len() != 4 || sb != vec![sx[1]] {
        return dim_err(format!("add_channel_bias: x {:?}, bias {:?}", sx, sb));
    }
    let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
    let plane = h * w;
    let bv = bias.to_vec();
    let mut data = x.to_vec();
    for b in 0..batch {
        for ci in 0..c {
            let base = (b * c + ci) * plane;
            for i in 0..plane {
                data[base + i] += bv[ci];
            }
        }
    }
    Tensor::from_op(
        sx,
        data,
        "add_channel_bias",
        vec![x.clone(), bias.clone()],
        Box::new(move |g| {
            let mut gb = vec![F::zero(); c];
            for b in 0..batch {
                for ci in 0..c {
                    let base = (b * c + ci) * plane;
                    for i in 0..plane {
                        gb[ci] += g[base + i];
                    }
                }
            }
            vec![g.to_vec(), gb]
        }),
    )
}

/// Non-overlapping average pooling with window `k`.
pub fn avgpool2d<F: Scalar>(x: &Tensor<F>, k: usize) -> Result<Tensor<F>> {
    let sx = x.shape();
    if sx.len() != 4 {
        return dim_err(format!("avgpool2d: expected 4-d input, got {:?}", sx));
    }
    let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return dim_err(format!("avgpool2d: {}x{} not divisible by window {}", h, w, k));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = F::one() / F::from_f64((k * k) as f64);
    let xv = x.to_vec();
    let mut data = vec![F::zero(); batch * c * oh * ow];
    for b in 0..batch {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += xv[((b * c + ci) * h + oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    data[((b * c + ci) * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
    }
    Tensor::from_op(
        vec![batch, c, oh, ow],
        data,
        "avgpool2d",
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = vec![F::zero(); batch * c * h * w];
            for b in 0..batch {
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = g[((b * c + ci) * oh + oy) * ow + ox] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    gx[((b * c + ci) * h + oy * k + dy) * w + ox * k + dx] += go;
                                }
                            }
                        }
                    }
                }
            }
            vec![gx]
        }),
    )
}

/// Collapse all trailing dimensions into one: `[b, ...] -> [b, rest]`.
pub fn flatten<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let sx = x.shape();
    if sx.is_empty() {
        return dim_err("flatten: scalar input".into());
    }
    let rest = numel(&sx[1..]);
    Tensor::from_op(
        vec![sx[0], rest],
        x.to_vec(),
        "flatten",
        vec![x.clone()],
        Box::new(|g| vec![g.to_vec()]),
    )
}

/// Per-channel input normalization `(x - mean) / std`, differentiable in x.
pub fn normalize_channels<F: Scalar>(x: &Tensor<F>, mean: &[F], std: &[F]) -> Result<Tensor<F>> {
    let sx = x.shape();
    let channels = if sx.len() == 4 { sx[1] } else { 1 };
    if mean.len() != channels || std.len() != channels {
        return dim_err(format!(
            "normalize_channels: {} channels, stats of length {}/{}",
            channels,
            mean.len(),
            std.len()
        ));
    }
    let plane = if sx.len() == 4 { sx[2] * sx[3] } else { numel(&sx[1..]) };
    let channel_of = move |i: usize| (i / plane) % channels;
    let data: Vec<F> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - mean[channel_of(i)]) / std[channel_of(i)])
        .collect();
    let std_saved = std.to_vec();
    Tensor::from_op(
        sx,
        data,
        "normalize_channels",
        vec![x.clone()],
        Box::new(move |g| {
            vec![g
                .iter()
                .enumerate()
                .map(|(i, &gi)| gi / std_saved[channel_of(i)])
                .collect()]
        }),
    )
}

fn log_softmax_row<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let log_z = row
        .iter()
        .fold(F::zero(), |acc, &v| acc + (v - max).exp())
        .ln()
        + max;
    row.iter().map(|&v| v - log_z).collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return dim_err(format!(
            "softmax_cross_entropy: logits {:?} with {} labels",
            s,
            labels.len()
        ));
    }
    let (m, c) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index(format!("label {} out of range [0,{})", bad, c)));
    }
    let lv = logits.to_vec();
    let mut probs = vec![F::zero(); m * c];
    let mut loss = F::zero();
    for i in 0..m {
        let ls = log_softmax_row(&lv[i * c..(i + 1) * c]);
        loss -= ls[labels[i]];
        for j in 0..c {
            probs[i * c + j] = ls[j].exp();
        }
    }
    let inv_m = F::one() / F::from_f64(m as f64);
    loss *= inv_m;
    let labels = labels.to_vec();
    Tensor::from_op(
        vec![],
        vec![loss],
        "softmax_cross_entropy",
        vec![logits.clone()],
        Box::new(move |g| {
            let scale = g[0] * inv_m;
            let mut gl = vec![F::zero(); m * c];
            for i in 0..m {
                for j in 0..c {
                    let indicator = if labels[i] == j { F::one() } else { F::zero() };
                    gl[i * c + j] = (probs[i * c + j] - indicator) * scale;
                }
            }
            vec![gl]
        }),
    )
}

/// Mean over the batch of `KL(softmax(p_logits) ‖ softmax(q_logits))`.
/// Differentiable w.r.t. both arguments.
pub fn kl_divergence<F: Scalar>(p_logits: &Tensor<F>, q_logits: &Tensor<F>) -> Result<Tensor<F>> {
    let s = p_logits.shape();
    if s != q_logits.shape() || s.len() != 2 {
        return dim_err(format!(
            "kl_divergence: {:?} vs {:?}",
            s,
            q_logits.shape()
        ));
    }
    let (m, c) = (s[0], s[1]);
    let (pv, qv) = (p_logits.to_vec(), q_logits.to_vec());
    let mut p = vec![F::zero(); m * c];
    let mut q = vec![F::zero(); m * c];
    let mut log_ratio = vec![F::zero(); m * c];
    let mut row_kl = vec![F::zero(); m];
    let mut total = F::zero();
    for i in 0..m {
        let lp = log_softmax_row(&pv[i * c..(i + 1) * c]);
        let lq = log_softmax_row(&qv[i * c..(i + 1) * c]);
        for j in 0..c {
            p[i * c + j] = lp[j].exp();
            q[i * c + j] = lq[j].exp();
            log_ratio[i * c + j] = lp[j] - lq[j];
            row_kl[i] += p[i * c + j] * log_ratio[i * c + j];
        }
        total += row_kl[i];
    }
    let inv_m = F::one() / F::from_f64(m as f64);
    total *= inv_m;
    Tensor::from_op(
        vec![],
        vec![total],
        "kl_divergence",
        vec![p_logits.clone(), q_logits.clone()],
        Box::new(move |g| {
            let scale = g[0] * inv_m;
            let mut gp = vec![F::zero(); m * c];
            let mut gq = vec![F::zero(); m * c];
            for i in 0..m {
                for j in 0..c {
                    let idx = i * c + j;
                    gp[idx] = p[idx] * (log_ratio[idx] - row_kl[i]) * scale;
                    gq[idx] = (q[idx] - p[idx]) * scale;
                }
            }
            vec![gp, gq]
        }),
    )
}
