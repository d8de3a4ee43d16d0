use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{MacCounter, MacSink, Result, Scalar, Tensor, TensorError};

fn linear_impl<T: Scalar, S: MacSink>(input: &Tensor<T>, weight: &Tensor<T>, sink: &mut S) -> Result<Tensor<T>> {
    let [batch, in_size] = input.dims2("linear")?;
    let [out_size, w_in] = weight.dims2("linear")?;
    if w_in != in_size {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            expected: vec![out_size, in_size],
            got: weight.shape().to_vec(),
        });
    }
    let w = weight.data();
    let mut out = vec![T::zero(); batch * out_size];
    for (row, x) in out.chunks_mut(out_size).zip(input.data().chunks(in_size)) {
        for (o, dst) in row.iter_mut().enumerate() {
            *dst = w[o * in_size..(o + 1) * in_size]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a * b)
                .sum();
            sink.add(in_size as u64);
        }
    }
    Tensor::new(vec![batch, out_size], out)
}

/// `input · weightᵀ` for `[B,in]` and `[out,in]`; there is no bias.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    linear_impl(input, weight, &mut ())
}

pub fn linear_counted<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, counter: &mut MacCounter) -> Result<Tensor<T>> {
    linear_impl(input, weight, counter)
}

/// Returns `(grad_input, grad_weight)`.
pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [batch, in_size] = input.dims2("linear_backward")?;
    let [out_size, _] = weight.dims2("linear_backward")?;
    weight.ensure_shape("linear_backward", &[out_size, in_size])?;
    grad_out.ensure_shape("linear_backward", &[batch, out_size])?;
    let w = weight.data();
    let mut grad_in = vec![T::zero(); batch * in_size];
    let mut grad_w = vec![T::zero(); out_size * in_size];
    for ((gi, x), go) in grad_in
        .chunks_mut(in_size)
        .zip(input.data().chunks(in_size))
        .zip(grad_out.data().chunks(out_size))
    {
        for (o, &g) in go.iter().enumerate() {
            let wrow = &w[o * in_size..(o + 1) * in_size];
            let gwrow = &mut grad_w[o * in_size..(o + 1) * in_size];
            for i in 0..in_size {
                gi[i] += g * wrow[i];
                gwrow[i] += g * x[i];
            }
        }
    }
    Ok((
        Tensor::new(vec![batch, in_size], grad_in)?,
        Tensor::new(vec![out_size, in_size], grad_w)?,
    ))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_shape("relu_backward", input.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn pool_dims<T: Scalar>(input: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    let [b, c, h, w] = input.dims4(op)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddPoolExtent { height: h, width: w });
    }
    Ok([b, c, h, w])
}

/// 2×2 stride-2 average pooling.
pub fn avgpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = pool_dims(input, "avgpool2x2")?;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from(0.25).unwrap();
    let x = input.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, xx) = (2 * oy, 2 * ox);
                let s = src[y * w + xx] + src[y * w + xx + 1] + src[(y + 1) * w + xx] + src[(y + 1) * w + xx + 1];
                out[(plane * oh + oy) * ow + ox] = s * quarter;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn avgpool2x2_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(input_shape)?;
    let [b, c, h, w] = pool_dims(&probe, "avgpool2x2_backward")?;
    let (oh, ow) = (h / 2, w / 2);
    grad_out.ensure_shape("avgpool2x2_backward", &[b, c, oh, ow])?;
    let quarter = T::from(0.25).unwrap();
    let mut out = probe.into_data();
    for plane in 0..b * c {
        for y in 0..h {
            for x in 0..w {
                out[(plane * h + y) * w + x] = grad_out.data()[(plane * oh + y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Position of the first maximum of each 2×2 block in row-major order.
fn block_argmax<T: Scalar>(src: &[T], w: usize, oy: usize, ox: usize) -> usize {
    let (y, x) = (2 * oy, 2 * ox);
    let candidates = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
    let mut best = candidates[0];
    for &i in &candidates[1..] {
        if src[i] > src[best] {
            best = i;
        }
    }
    best
}

/// 2×2 stride-2 max pooling.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = pool_dims(input, "maxpool2x2")?;
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                out[(plane * oh + oy) * ow + ox] = src[block_argmax(src, w, oy, ox)];
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

/// Routes each pooled gradient to the first maximal element of its block.
pub fn maxpool2x2_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = pool_dims(input, "maxpool2x2_backward")?;
    let (oh, ow) = (h / 2, w / 2);
    grad_out.ensure_shape("maxpool2x2_backward", &[b, c, oh, ow])?;
    let x = input.data();
    let mut out = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = block_argmax(src, w, oy, ox);
                out[plane * h * w + i] += grad_out.data()[(plane * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

/// Identifies one dropout layer's random stream.
///
/// The keep decision for element `e` of sample `s` depends only on
/// `(seed, layer, s, e)`, never on batch composition or thread schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
}

impl DropoutKey {
    fn stream(&self, sample_id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.layer.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(sample_id);
        rng
    }
}

/// Training-mode inverted dropout. Returns the output and the per-element
/// scale mask (0 or `1/(1-rate)`) needed by [`dropout_backward`].
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    key: DropoutKey,
    sample_ids: &[u64],
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    if sample_ids.len() != input.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "dropout",
            expected: vec![input.shape()[0]],
            got: vec![sample_ids.len()],
        });
    }
    let per = input.sample_len();
    let keep_scale = T::from(1.0 / (1.0 - rate)).unwrap();
    let mut mask = vec![T::zero(); input.len()];
    mask.par_chunks_mut(per)
        .zip(sample_ids.par_iter())
        .for_each(|(m, &sid)| {
            let mut rng = key.stream(sid);
            for v in m.iter_mut() {
                let u: f64 = rng.random();
                *v = if u >= rate { keep_scale } else { T::zero() };
            }
        });
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        Tensor::new(input.shape().to_vec(), mask)?,
    ))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_shape("dropout_backward", mask.shape())?;
    let data = grad_out.data().iter().zip(mask.data()).map(|(&g, &m)| g * m).collect();
    Tensor::new(mask.shape().to_vec(), data)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [batch, classes] = logits.dims2("softmax_xent")?;
    if labels.len() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_xent",
            expected: vec![batch],
            got: vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    let inv_batch = T::one() / T::from(batch).unwrap();
    let mut grad = vec![T::zero(); batch * classes];
    let mut loss = T::zero();
    for ((row, g), &label) in logits.data().chunks(classes).zip(grad.chunks_mut(classes)).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            denom += *gi;
        }
        loss += denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_batch;
        }
        g[label] = g[label] - inv_batch;
    }
    Ok((loss * inv_batch, Tensor::new(vec![batch, classes], grad)?))
}
