//! Shared test helpers: an independent quadruple-loop convolution oracle
//! and a central finite-difference gradient checker.

#![allow(dead_code)]

use pfm_core::autodiff::{backward, Var};
use pfm_core::rng::Rng;
use pfm_core::tensor::Tensor;

/// Single-channel 2D cross-correlation written with explicit bounds checks
/// instead of the padded-buffer scheme the library uses. Serves as the
/// independent oracle for `conv2d`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d_single(
    input: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    assert_eq!(input.len(), h * w);
    assert_eq!(kernel.len(), kh * kw);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow];
    for m in 0..oh {
        for l in 0..ow {
            let mut acc = 0.0;
            for i in 0..kh {
                for j in 0..kw {
                    let y = (m * stride + i) as isize - padding as isize;
                    let x = (l * stride + j) as isize - padding as isize;
                    if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                        acc += kernel[i * kw + j] * input[y as usize * w + x as usize];
                    }
                }
            }
            out[m * ow + l] = acc;
        }
    }
    out
}

/// Uniform [-1, 1] tensor from a seeded stream.
pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..numel).map(|_| rng.uniform_signed()).collect(),
    )
}

/// Uniform tensor whose entries keep at least `margin` distance from zero,
/// for checking gradients of kinked functions like ReLU away from the kink.
pub fn random_tensor_with_margin(shape: &[usize], rng: &mut Rng, margin: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..numel)
            .map(|_| {
                let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
                sign * rng.uniform(margin, 1.0)
            })
            .collect(),
    )
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Result of one gradient comparison sweep.
pub struct GradCheck {
    /// Largest relative error between analytic and numeric gradients.
    pub worst_rel_err: f64,
    /// Largest analytic gradient magnitude seen; guards against checks
    /// passing vacuously on all-zero gradients.
    pub max_analytic: f64,
}

/// Compares analytic gradients against central finite differences over
/// every element of every input tensor.
///
/// `build` must construct a scalar loss from leaf variables created from
/// the given tensors; it is re-invoked for every probe, so it has to be a
/// pure function of those values.
pub fn gradient_check(tensors: &[Tensor], build: &dyn Fn(&[Var]) -> Var) -> GradCheck {
    // Analytic gradients.
    let vars: Vec<Var> = tensors.iter().map(|t| Var::param(t.clone())).collect();
    let loss = build(&vars);
    assert_eq!(loss.numel(), 1, "gradient checks need a scalar loss");
    backward(&loss).expect("backward on scalar loss");
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|v| {
            v.grad()
                .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()))
        })
        .collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let vars: Vec<Var> = probe.iter().map(|t| Var::leaf(t.clone())).collect();
        build(&vars).value().item()
    };

    let mut worst = 0.0f64;
    let mut max_analytic = 0.0f64;
    for pi in 0..tensors.len() {
        for ei in 0..tensors[pi].numel() {
            let mut plus = tensors.to_vec();
            plus[pi].data_mut()[ei] += FD_STEP;
            let up = eval(&plus);
            let mut minus = tensors.to_vec();
            minus[pi].data_mut()[ei] -= FD_STEP;
            let down = eval(&minus);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads[pi].data()[ei];
            max_analytic = max_analytic.max(analytic.abs());
            let diff = (analytic - numeric).abs();
            // Tiny absolute differences are rounding noise, not mismatches.
            let rel = if diff <= 1e-8 {
                0.0
            } else {
                diff / analytic.abs().max(numeric.abs())
            };
            worst = worst.max(rel);
        }
    }
    GradCheck {
        worst_rel_err: worst,
        max_analytic,
    }
}
