//! Central finite-difference gradient checks shared by the gradient tests
//! and the acceptance suite.

use bsnn::graph::{build_network, ArchOption, DepthConfig, ParamKey};
use bsnn::tensor::{
    avgpool2x2, avgpool2x2_backward, conv2d, conv2d_backward, dropout, dropout_backward, linear, linear_backward,
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, softmax_xent, DropoutKey, Scalar, Tensor,
};
use bsnn::train::{backward, forward_train, ste_weight_grad, TrainContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;

pub fn random<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from(rng.random_range(-1.0..1.0)).unwrap()).unwrap()
}

/// Values spread at least `gap` apart from each other and from zero, so
/// ReLU and max-pool kinks stay outside the finite-difference stencil.
pub fn separated<T: Scalar>(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * gap * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), levels.into_iter().map(|v| T::from(v).unwrap()).collect()).unwrap()
}

pub fn weighted_sum<T: Scalar>(y: &Tensor<T>, r: &Tensor<T>) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a.to_f64().unwrap() * b.to_f64().unwrap()).sum()
}

/// Norm-wise relative error between analytic and numeric gradients.
pub fn rel_error<T: Scalar>(analytic: &Tensor<T>, numeric: &[f64]) -> f64 {
    let a: Vec<f64> = analytic.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let diff = a.iter().zip(numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn numeric_grad<T: Scalar>(x: &Tensor<T>, eps: f64, f: impl Fn(&Tensor<T>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.data_mut()[i] = plus.data()[i] + T::from(eps).unwrap();
            minus.data_mut()[i] = minus.data()[i] - T::from(eps).unwrap();
            (f(&plus) - f(&minus)) / (2.0 * eps)
        })
        .collect()
}

pub struct Precision {
    pub eps: f64,
    pub tol: f64,
}

pub const SINGLE: Precision = Precision { eps: 1e-2, tol: TOL_F32 };
pub const DOUBLE: Precision = Precision { eps: 1e-5, tol: TOL_F64 };

/// Worst relative error of the conv input and weight gradients.
pub fn conv_error<T: Scalar>(p: &Precision, stride: usize, pad: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11 + stride as u64 * 7 + pad as u64);
    let x: Tensor<T> = random(&[2, 3, 7, 5], &mut rng);
    let w: Tensor<T> = random(&[4, 3, 3, 3], &mut rng);
    let y = conv2d(&x, &w, stride, pad).unwrap();
    let r: Tensor<T> = random(y.shape(), &mut rng);
    let (gx, gw) = conv2d_backward(&r, &x, &w, stride, pad).unwrap();
    let nx = numeric_grad(&x, p.eps, |x| weighted_sum(&conv2d(x, &w, stride, pad).unwrap(), &r));
    let nw = numeric_grad(&w, p.eps, |w| weighted_sum(&conv2d(&x, w, stride, pad).unwrap(), &r));
    rel_error(&gx, &nx).max(rel_error(&gw, &nw))
}

pub fn linear_error<T: Scalar>(p: &Precision) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Tensor<T> = random(&[3, 17], &mut rng);
    let w: Tensor<T> = random(&[5, 17], &mut rng);
    let r: Tensor<T> = random(&[3, 5], &mut rng);
    let (gx, gw) = linear_backward(&r, &x, &w).unwrap();
    let nx = numeric_grad(&x, p.eps, |x| weighted_sum(&linear(x, &w).unwrap(), &r));
    let nw = numeric_grad(&w, p.eps, |w| weighted_sum(&linear(&x, w).unwrap(), &r));
    rel_error(&gx, &nx).max(rel_error(&gw, &nw))
}

pub fn relu_error<T: Scalar>(p: &Precision) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Tensor<T> = separated(&[2, 3, 4, 4], 0.05, &mut rng);
    let r: Tensor<T> = random(x.shape(), &mut rng);
    let g = relu_backward(&r, &x).unwrap();
    let n = numeric_grad(&x, p.eps, |x| weighted_sum(&relu(x), &r));
    rel_error(&g, &n)
}

/// `(avgpool, maxpool)` relative errors.
pub fn pool_errors<T: Scalar>(p: &Precision) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x: Tensor<T> = separated(&[2, 2, 6, 4], 0.05, &mut rng);
    let r: Tensor<T> = random(&[2, 2, 3, 2], &mut rng);
    let ga = avgpool2x2_backward(&r, x.shape()).unwrap();
    let na = numeric_grad(&x, p.eps, |x| weighted_sum(&avgpool2x2(x).unwrap(), &r));
    let gm = maxpool2x2_backward(&r, &x).unwrap();
    let nm = numeric_grad(&x, p.eps, |x| weighted_sum(&maxpool2x2(x).unwrap(), &r));
    (rel_error(&ga, &na), rel_error(&gm, &nm))
}

pub fn dropout_error<T: Scalar>(p: &Precision) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x: Tensor<T> = random(&[3, 40], &mut rng);
    let r: Tensor<T> = random(x.shape(), &mut rng);
    let key = DropoutKey { seed: 5, layer: 2 };
    let ids = [4, 9, 1];
    let (_, mask) = dropout(&x, 0.3, key, &ids).unwrap();
    let g = dropout_backward(&r, &mask).unwrap();
    let n = numeric_grad(&x, p.eps, |x| weighted_sum(&dropout(x, 0.3, key, &ids).unwrap().0, &r));
    rel_error(&g, &n)
}

pub fn softmax_xent_error<T: Scalar>(p: &Precision) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let logits: Tensor<T> = random(&[4, 6], &mut rng);
    let labels = [0, 5, 2, 2];
    let (_, g) = softmax_xent(&logits, &labels).unwrap();
    let n = numeric_grad(&logits, p.eps, |z| softmax_xent(z, &labels).unwrap().0.to_f64().unwrap());
    rel_error(&g, &n)
}

/// The straight-through estimator is the exact derivative of the clipped
/// identity proxy, `L(w) = Σ g · clamp(w, -1, 1)`.
pub fn ste_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let w = Tensor::from_fn(&[6, 9], |_| {
        let v: f32 = rng.random_range(0.05..1.6);
        let v = if (v - 1.0).abs() < 0.05 { v + 0.1 } else { v };
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
    .unwrap();
    let g: Tensor = random(w.shape(), &mut rng);
    let analytic = ste_weight_grad(&g, &w).unwrap();
    let proxy = |w: &Tensor| weighted_sum(&w.map(|v| v.clamp(-1.0, 1.0)), &g);
    let numeric = numeric_grad(&w, 1e-2, proxy);
    rel_error(&analytic, &numeric)
}

/// Whole-network backward pass against finite differences of the loss with
/// respect to every weight, dropout masks held fixed by seed and sample id.
/// Worst per-layer relative error over two architectures.
pub fn network_error() -> f64 {
    let mut worst = 0.0f64;
    let cfg = DepthConfig {
        input_shape: vec![1, 8, 8],
        stages: vec![vec![3], vec![4]],
        hidden: vec![6],
        classes: 3,
        dropout: 0.2,
        init_seed: 4,
    };
    for arch in [ArchOption::AvgBefore, ArchOption::MaxAfter] {
        let graph = build_network(arch, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let x: Tensor = random(&[3, 1, 8, 8], &mut rng);
        let labels = [0usize, 2, 1];
        let ctx = TrainContext {
            dropout_seed: 9,
            sample_ids: vec![0, 1, 2],
        };
        let loss_of = |g: &bsnn::graph::ModelGraph| -> f64 {
            let (logits, _) = forward_train(g, &x, &ctx).unwrap();
            softmax_xent(&logits.cast::<f64>(), &labels).unwrap().0
        };
        let (logits, tape) = forward_train(&graph, &x, &ctx).unwrap();
        let (_, dlogits) = softmax_xent(&logits, &labels).unwrap();
        let grads = backward(&graph, &tape, &dlogits).unwrap();
        for layer in graph.weight_layers() {
            let w = graph.weight(layer).unwrap().as_ref().clone();
            let numeric = numeric_grad(&w, 1e-3, |w| {
                let mut g = graph.clone();
                g.params.insert(ParamKey::weight(layer), std::sync::Arc::new(w.clone()));
                loss_of(&g)
            });
            worst = worst.max(rel_error(&grads[&layer], &numeric));
        }
    }
    worst
}
