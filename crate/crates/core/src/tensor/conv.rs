use rayon::prelude::*;

use super::{MacCounter, MacSink, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output extent of a strided, padded window; errors unless the division is exact.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::InvalidShape {
            shape: vec![extent, kernel],
            reason: "stride must be at least 1".into(),
        });
    }
    let padded = extent + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(TensorError::InvalidShape {
            shape: vec![extent, kernel],
            reason: format!("kernel {kernel} does not fit padded extent {padded}"),
        });
    }
    if (padded - kernel) % stride != 0 {
        return Err(TensorError::NonExactExtent {
            extent,
            kernel,
            pad,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [batch, cin, h, w] = input.dims4("conv2d")?;
    let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
    if wcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![cout, cin, kh, kw],
            got: weight.shape().to_vec(),
        });
    }
    let oh = conv_output_extent(h, kh, stride, pad)?;
    let ow = conv_output_extent(w, kw, stride, pad)?;
    Ok(ConvGeom {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    })
}

/// Unrolls one sample into a `[taps, positions]` matrix; padding taps hold zero.
fn im2col<T: Scalar>(g: &ConvGeom, sample: &[T], col: &mut [T]) {
    let positions = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * positions;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        col[row + oy * g.ow + ox] = if iy >= 0
                            && (iy as usize) < g.h
                            && ix >= 0
                            && (ix as usize) < g.w
                        {
                            sample[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], sample: &mut [T]) {
    let positions = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * positions;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        sample[(ci * g.h + iy as usize) * g.w + ix as usize] += col[row + oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

fn forward_sample<T: Scalar, S: MacSink>(g: &ConvGeom, weight: &[T], sample: &[T], out: &mut [T], sink: &mut S) {
    let taps = g.taps();
    let positions = g.positions();
    let mut col = vec![T::zero(); taps * positions];
    im2col(g, sample, &mut col);
    for co in 0..g.cout {
        let acc = &mut out[co * positions..(co + 1) * positions];
        for k in 0..taps {
            let wv = weight[co * taps + k];
            let src = &col[k * positions..(k + 1) * positions];
            for (a, &x) in acc.iter_mut().zip(src) {
                *a += wv * x;
            }
            sink.add(positions as u64);
        }
    }
}

fn forward_impl<T: Scalar, S: MacSink + Default + Send>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<S>)> {
    let g = geometry(input, weight, stride, pad)?;
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * g.positions();
    let mut out = vec![T::zero(); g.batch * out_per];
    let sinks: Vec<S> = out
        .par_chunks_mut(out_per)
        .zip(input.data().par_chunks(in_per))
        .map(|(dst, src)| {
            let mut sink = S::default();
            forward_sample(&g, weight.data(), src, dst, &mut sink);
            sink
        })
        .collect();
    Ok((Tensor::new(vec![g.batch, g.cout, g.oh, g.ow], out)?, sinks))
}

/// Bias-less 2-d cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,kH,kW]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    forward_impl::<T, ()>(input, weight, stride, pad).map(|(t, _)| t)
}

/// [`conv2d`] that also adds the multiply-accumulates it executed to `counter`.
pub fn conv2d_counted<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor<T>> {
    let (out, sinks) = forward_impl::<T, MacCounter>(input, weight, stride, pad)?;
    for s in sinks {
        counter.add(s.0);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and weight.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = geometry(input, weight, stride, pad)?;
    grad_out.ensure_shape("conv2d_backward", &[g.batch, g.cout, g.oh, g.ow])?;
    let taps = g.taps();
    let positions = g.positions();
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * positions;
    let w = weight.data();

    let mut grad_input = vec![T::zero(); g.batch * in_per];
    let per_sample_gw: Vec<Vec<T>> = grad_input
        .par_chunks_mut(in_per)
        .zip(input.data().par_chunks(in_per))
        .zip(grad_out.data().par_chunks(out_per))
        .map(|((gin, src), gout)| {
            let mut col = vec![T::zero(); taps * positions];
            im2col(&g, src, &mut col);
            let mut gw = vec![T::zero(); g.cout * taps];
            let mut gcol = vec![T::zero(); taps * positions];
            for co in 0..g.cout {
                let go = &gout[co * positions..(co + 1) * positions];
                for k in 0..taps {
                    let c = &col[k * positions..(k + 1) * positions];
                    gw[co * taps + k] = go.iter().zip(c).map(|(&a, &b)| a * b).sum();
                    let wv = w[co * taps + k];
                    for (d, &a) in gcol[k * positions..(k + 1) * positions].iter_mut().zip(go) {
                        *d += wv * a;
                    }
                }
            }
            col2im(&g, &gcol, gin);
            gw
        })
        .collect();

    // Fixed sample order keeps the weight gradient independent of scheduling.
    let mut grad_weight = vec![T::zero(); g.cout * taps];
    for gw in &per_sample_gw {
        for (acc, &v) in grad_weight.iter_mut().zip(gw) {
            *acc += v;
        }
    }
    Ok((
        Tensor::new(vec![g.batch, g.cin, g.h, g.w], grad_input)?,
        Tensor::new(weight.shape().to_vec(), grad_weight)?,
    ))
}
