//! Numeric verification of the mathematical claims behind the module
//! design: linear independence of rectified sign-pair responses,
//! representability of arbitrary kernels by full-rank banks, and the
//! piecewise switch behavior of sign-pair modules.

use crate::autodiff::{Mode, Var};
use crate::error::{Error, Result};
use crate::filters::{FilterBank, Kernel3x3};
use crate::linalg;
use crate::pfm::{sign_pair_bank, switch_eval, PfmConfig, PfmLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

/// Relative singular-value cutoff for rank decisions on response matrices.
pub const SV_TOLERANCE: f64 = 1e-9;

/// Outcome of a rectified-response independence test.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependenceReport {
    pub a: f64,
    pub sample_count: usize,
    pub numeric_rank: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Dependent,
    Independent,
}

/// Samples the two functions `x -> ReLU(w1 (x) x)[m,n]` and
/// `x -> ReLU(a*w1 (x) x)[m,n]` at the center of random 5x5 patches with
/// uniform [-1, 1] pixels, and reports the numeric rank of the resulting
/// `samples x 2` response matrix.
///
/// Rank 2 means the functions are linearly independent over the sampled
/// inputs (expected for `a < 0`); rank 1 means dependent (expected for
/// `a >= 0`).
pub fn relu_independence_check(
    w1: &Kernel3x3,
    a: f64,
    samples: usize,
    seed: u64,
) -> Result<IndependenceReport> {
    if samples < 2 {
        return Err(Error::Invalid(format!(
            "independence check needs at least 2 samples, got {samples}"
        )));
    }
    if w1.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Invalid("w1 must be nonzero".into()));
    }
    let mut rng = Rng::new(seed);
    let k = w1.values();
    let mut pairs = Vec::with_capacity(samples);
    for _ in 0..samples {
        // Center response of a 5x5 patch: a plain dot product with the
        // patch interior.
        let mut patch = [0.0; 25];
        for v in patch.iter_mut() {
            *v = rng.uniform_signed();
        }
        let mut y = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                y += k[i * 3 + j] * patch[(i + 1) * 5 + (j + 1)];
            }
        }
        pairs.push((y.max(0.0), (a * y).max(0.0)));
    }
    if pairs.iter().all(|p| p.0 == 0.0) || pairs.iter().all(|p| p.1 == 0.0) {
        return Err(Error::Inconclusive(
            "a response column is identically zero over all samples".into(),
        ));
    }
    let sv = linalg::singular_values_2col(&pairs);
    let numeric_rank = sv.iter().filter(|&&s| s > SV_TOLERANCE * sv[0]).count();
    Ok(IndependenceReport {
        a,
        sample_count: samples,
        numeric_rank,
        verdict: if numeric_rank == 2 {
            Verdict::Independent
        } else {
            Verdict::Dependent
        },
    })
}

/// Least-squares expansion of `target` over the bank kernels. Returns the
/// maximum absolute elementwise error of the reconstruction together with
/// the solved weights (one per bank kernel).
pub fn representability_check(bank: &FilterBank, target: &Kernel3x3) -> Result<(f64, Vec<f64>)> {
    if bank.len() < 9 {
        return Err(Error::Invalid(format!(
            "representability check expects a bank of at least 9 kernels, got {}",
            bank.len()
        )));
    }
    // Rows are the 9 kernel elements, columns the bank kernels.
    let cols = bank.len();
    let mut a = alloc::vec![0.0; 9 * cols];
    for (j, k) in bank.kernels().iter().enumerate() {
        for i in 0..9 {
            a[i * cols + j] = k.values()[i];
        }
    }
    let weights = linalg::lstsq_min_norm(&a, 9, cols, target.values(), 1e-12);
    let mut residual = 0.0f64;
    for i in 0..9 {
        let mut recon = 0.0;
        for (j, w) in weights.iter().enumerate() {
            recon += a[i * cols + j] * w;
        }
        residual = residual.max((recon - target.values()[i]).abs());
    }
    Ok((residual, weights))
}

/// Compares a sign-pair PFM (bank `{w1, a*w1}`, mixing weights
/// `(q11, q12)`, batch norm bypassed) against the piecewise switch formula
/// on random inputs; returns the maximum absolute deviation observed.
pub fn switch_property_check(
    w1: &Kernel3x3,
    a: f64,
    q11: f64,
    q12: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if a >= 0.0 {
        return Err(Error::Invalid(format!(
            "switch property needs a < 0, got {a}"
        )));
    }
    let bank = Rc::new(sign_pair_bank(w1, a)?);
    let mut cfg = PfmConfig::new(1, 1, bank);
    cfg.use_relu = true;
    cfg.bn_bypass = true;
    let mut layer = PfmLayer::new(cfg)?;
    layer.set_mix_weight(0, 0, 0, q11);
    layer.set_mix_weight(0, 0, 1, q12);

    let mut rng = Rng::new(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let h = 6;
        let w = 6;
        let input = Tensor::new(
            [1, 1, h, w],
            (0..h * w).map(|_| rng.uniform_signed()).collect(),
        );
        let module_out = layer.forward(&Var::leaf(input.clone()), Mode::Eval)?;
        let formula_out = switch_eval(w1, a, q11, q12, &input)?;
        max_dev = max_dev.max(module_out.value().max_abs_diff(&formula_out));
    }
    Ok(max_dev)
}

/// For a sign pair `(h, -h)`, the two rectified response channels are
/// complementary: at every pixel at most one is nonzero. Returns the number
/// of pixels violating that over random inputs (expected 0).
pub fn complementary_response_violations(
    w1: &Kernel3x3,
    trials: usize,
    seed: u64,
) -> Result<usize> {
    let bank = sign_pair_bank(w1, -1.0)?;
    let filters = {
        let mut t = Tensor::zeros([2, 3, 3]);
        t.data_mut().copy_from_slice(&bank.as_matrix());
        Var::leaf(t)
    };
    let mut rng = Rng::new(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let h = 6;
        let w = 6;
        let input = Tensor::new(
            [1, 1, h, w],
            (0..h * w).map(|_| rng.uniform_signed()).collect(),
        );
        let responses = crate::autodiff::depthwise_conv2d(&Var::leaf(input), &filters, 1, 1)?;
        let rv = responses.value();
        let hw = h * w;
        for i in 0..hw {
            let pos = rv.data()[i].max(0.0);
            let neg = rv.data()[hw + i].max(0.0);
            if pos > 0.0 && neg > 0.0 {
                violations += 1;
            }
        }
    }
    Ok(violations)
}
