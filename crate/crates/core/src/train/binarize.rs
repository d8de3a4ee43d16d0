use crate::tensor::{Tensor, TensorError};

/// Sign bits of a weight tensor packed one bit per weight, plus one scale per
/// output filter (row for linear layers).
///
/// Bit value 1 encodes `+1` and 0 encodes `-1`; `sign(0)` is `+1`. Each row
/// starts on a fresh `u64` word and the unused high bits of its last word are
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedWeights {
    signs: Vec<u64>,
    alpha: Vec<f32>,
    source_shape: Vec<usize>,
    row_len: usize,
    words_per_row: usize,
}

/// One packed filter.
#[derive(Debug, Clone, Copy)]
pub struct BinaryRow<'a> {
    pub words: &'a [u64],
    pub alpha: f32,
    pub len: usize,
}

impl BinaryRow<'_> {
    pub fn is_positive(&self, k: usize) -> bool {
        self.words[k / 64] >> (k % 64) & 1 == 1
    }
}

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Splits a weight tensor into `(rows, row_len)` along its leading dimension.
fn filter_layout(w: &Tensor) -> (usize, usize) {
    if w.ndim() == 1 {
        (1, w.len())
    } else {
        (w.shape()[0], w.sample_len())
    }
}

/// `alpha_f = mean(|W_f|)` per output filter, accumulated in double precision.
fn filter_alphas(w: &Tensor) -> Vec<f32> {
    let (_, row_len) = filter_layout(w);
    w.data()
        .chunks(row_len)
        .map(|row| (row.iter().map(|&v| (v as f64).abs()).sum::<f64>() / row_len as f64) as f32)
        .collect()
}

/// Packs `sign(W)` and computes the per-filter L1-mean scale.
pub fn binarize_weights(w: &Tensor) -> BinarizedWeights {
    let (rows, row_len) = filter_layout(w);
    let words_per_row = words_for(row_len);
    let mut signs = vec![0u64; rows * words_per_row];
    for (r, row) in w.data().chunks(row_len).enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if v >= 0.0 {
                signs[r * words_per_row + k / 64] |= 1 << (k % 64);
            }
        }
    }
    BinarizedWeights {
        signs,
        alpha: filter_alphas(w),
        source_shape: w.shape().to_vec(),
        row_len,
        words_per_row,
    }
}

/// `alpha_f · sign(W_f)` without going through the packed form.
pub fn effective_weights(w: &Tensor) -> Tensor {
    let (_, row_len) = filter_layout(w);
    let alphas = filter_alphas(w);
    let data = w
        .data()
        .chunks(row_len)
        .zip(&alphas)
        .flat_map(|(row, &a)| row.iter().map(move |&v| if v >= 0.0 { a } else { -a }))
        .collect();
    Tensor::new(w.shape().to_vec(), data).expect("same shape")
}

impl BinarizedWeights {
    pub fn rows(&self) -> usize {
        self.alpha.len()
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn signs(&self) -> &[u64] {
        &self.signs
    }

    pub fn source_shape(&self) -> &[usize] {
        &self.source_shape
    }

    pub fn row(&self, r: usize) -> BinaryRow<'_> {
        BinaryRow {
            words: &self.signs[r * self.words_per_row..(r + 1) * self.words_per_row],
            alpha: self.alpha[r],
            len: self.row_len,
        }
    }

    /// Unpacks to the dense tensor `alpha · sign(W)`.
    pub fn effective(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.rows() * self.row_len);
        for r in 0..self.rows() {
            let row = self.row(r);
            data.extend((0..self.row_len).map(|k| if row.is_positive(k) { row.alpha } else { -row.alpha }));
        }
        Tensor::new(self.source_shape.clone(), data).expect("packed shape")
    }
}

/// Straight-through estimator for weight binarization: the gradient w.r.t.
/// the effective weight passes to the proxy where `|w| <= 1` and is zero
/// elsewhere. The scale is treated as a constant.
pub fn ste_weight_grad(grad_eff: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    grad_eff.ensure_shape("ste_weight_grad", w.shape())?;
    let data = grad_eff
        .data()
        .iter()
        .zip(w.data())
        .map(|(&g, &v)| if v.abs() <= 1.0 { g } else { 0.0 })
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}

/// Elementwise `sign` with `sign(0) = +1`, used for XNOR-style activations.
pub fn binarize_activations_sign(x: &Tensor) -> Tensor {
    x.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// Straight-through gradient of [`binarize_activations_sign`], clipped to `|x| <= 1`.
pub fn sign_activation_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor, TensorError> {
    ste_weight_grad(grad_out, x)
}
