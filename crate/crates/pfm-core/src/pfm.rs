//! The pre-defined filter module and the smoothed strided skip projection.
//!
//! A PFM replaces a trainable `3x3` convolution with a fixed-filter pipeline:
//! depthwise convolution with the bank kernels (padding 1), batch
//! normalization over the `F*C` expanded channels, an optional ReLU, and a
//! trainable `1x1` convolution that mixes the filter responses. With `F`
//! filters the mixing layer holds exactly `F * in_channels * out_channels`
//! weights, so a nine-filter PFM has the same trainable weight count as the
//! `3x3` convolution it replaces.

use crate::autodiff::{conv2d, depthwise_conv2d, BatchNorm2d, Mode, Var};
use crate::error::{Error, Result};
use crate::filters::{FilterBank, Kernel3x3};
use crate::tensor::Tensor;
use alloc::format;
use alloc::rc::Rc;

/// Configuration for one PFM instance.
#[derive(Clone)]
pub struct PfmConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub bank: Rc<FilterBank>,
    pub stride: usize,
    /// Apply the intermediate ReLU (the full module) or skip it
    /// (the linear, spanning-only variant).
    pub use_relu: bool,
    /// Let gradients flow into the depthwise filters. They are still
    /// initialized from the bank.
    pub filters_trainable: bool,
    /// Replace the internal batch normalization with the identity, making
    /// the module match its defining equations exactly.
    pub bn_bypass: bool,
}

impl PfmConfig {
    pub fn new(in_channels: usize, out_channels: usize, bank: Rc<FilterBank>) -> Self {
        Self {
            in_channels,
            out_channels,
            bank,
            stride: 1,
            use_relu: true,
            filters_trainable: false,
            bn_bypass: false,
        }
    }

    pub fn filter_count(&self) -> usize {
        self.bank.len()
    }

    /// Trainable weight count of the mixing layer.
    pub fn mix_weight_count(&self) -> usize {
        self.filter_count() * self.in_channels * self.out_channels
    }
}

/// One instantiated PFM with its parameters.
pub struct PfmLayer {
    cfg: PfmConfig,
    filters: Var,
    bn: BatchNorm2d,
    mix: Var,
}

impl PfmLayer {
    pub fn new(cfg: PfmConfig) -> Result<Self> {
        if cfg.stride != 1 && cfg.stride != 2 {
            return Err(Error::Invalid(format!(
                "pfm stride must be 1 or 2, got {}",
                cfg.stride
            )));
        }
        if cfg.bank.is_empty() {
            return Err(Error::Invalid("pfm needs a non-empty filter bank".into()));
        }
        let f = cfg.filter_count();
        let mut filter_tensor = Tensor::zeros([f, 3, 3]);
        filter_tensor
            .data_mut()
            .copy_from_slice(&cfg.bank.as_matrix());
        let filters = if cfg.filters_trainable {
            Var::param(filter_tensor)
        } else {
            Var::leaf(filter_tensor)
        };
        let expanded = f * cfg.in_channels;
        let bn = if cfg.bn_bypass {
            BatchNorm2d::bypassed(expanded)
        } else {
            BatchNorm2d::new(expanded)
        };
        let mix = Var::param(Tensor::zeros([cfg.out_channels, expanded, 1, 1]));
        Ok(Self {
            cfg,
            filters,
            bn,
            mix,
        })
    }

    pub fn config(&self) -> &PfmConfig {
        &self.cfg
    }

    /// The depthwise filter tensor `[F, 3, 3]`.
    pub fn filters(&self) -> &Var {
        &self.filters
    }

    /// The `1x1` mixing weights `[out, F*in, 1, 1]`.
    pub fn mix(&self) -> &Var {
        &self.mix
    }

    pub fn bn(&mut self) -> &mut BatchNorm2d {
        &mut self.bn
    }

    pub fn bn_ref(&self) -> &BatchNorm2d {
        &self.bn
    }

    /// Sets the mixing weight applied to (input channel `c`, filter `l`)
    /// for output channel `k`. Filter order within a channel follows the
    /// depthwise layout: expanded channel `c*F + l`.
    pub fn set_mix_weight(&self, out: usize, in_ch: usize, filter: usize, value: f64) {
        let f = self.cfg.filter_count();
        let expanded = f * self.cfg.in_channels;
        self.mix.update_value(|t| {
            t.data_mut()[out * expanded + in_ch * f + filter] = value;
        });
    }

    /// Runs the module: depthwise (pad 1) -> BN -> optional ReLU -> 1x1 mix.
    pub fn forward(&mut self, input: &Var, mode: Mode) -> Result<Var> {
        let expanded = depthwise_conv2d(input, &self.filters, self.cfg.stride, 1)?;
        let normalized = self.bn.forward(&expanded, mode)?;
        let activated = if self.cfg.use_relu {
            normalized.relu()
        } else {
            normalized
        };
        conv2d(&activated, &self.mix, 1, 0)
    }
}

/// The fixed 3x3 binomial blur used in front of strided skip projections.
/// Its elements sum to one.
pub fn gaussian_blur_kernel() -> [f64; 9] {
    let mut k = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0];
    for v in k.iter_mut() {
        *v /= 16.0;
    }
    k
}

/// Anti-aliased strided skip connection: a fixed depthwise Gaussian blur
/// (padding 1) followed by a trainable `1x1` projection with stride 2.
pub struct SmoothedSkip {
    blur: Var,
    proj: Var,
    in_channels: usize,
    out_channels: usize,
}

impl SmoothedSkip {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        let mut blur_tensor = Tensor::zeros([1, 3, 3]);
        blur_tensor
            .data_mut()
            .copy_from_slice(&gaussian_blur_kernel());
        Self {
            blur: Var::leaf(blur_tensor),
            proj: Var::param(Tensor::zeros([out_channels, in_channels, 1, 1])),
            in_channels,
            out_channels,
        }
    }

    pub fn proj(&self) -> &Var {
        &self.proj
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, input: &Var) -> Result<Var> {
        let blurred = depthwise_conv2d(input, &self.blur, 1, 1)?;
        conv2d(&blurred, &self.proj, 2, 0)
    }
}

/// Evaluates the switch form of a sign-pair module directly: with the bank
/// `{w1, a*w1}` (`a < 0`) and mixing weights `(q11, q12)`, each output pixel
/// is `q11*y` when `y = (w1 (x) x)[m,n] >= 0` and `a*q12*y` otherwise.
///
/// This is computed with plain loops, independent of the autodiff path, so
/// it can serve as the oracle for the module itself.
pub fn switch_eval(w1: &Kernel3x3, a: f64, q11: f64, q12: f64, input: &Tensor) -> Result<Tensor> {
    if a >= 0.0 {
        return Err(Error::Invalid(format!(
            "switch form needs a negative factor, got a = {a}"
        )));
    }
    let s = input.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Shape(format!(
            "switch_eval expects a [N,1,H,W] input, got {s:?}"
        )));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let mut out = Tensor::zeros([n, 1, h, w]);
    let id = input.data();
    let od = out.data_mut();
    let k = w1.values();
    for ni in 0..n {
        for m in 0..h {
            for l in 0..w {
                // Cross-correlation with zero padding 1 at (m, l).
                let mut y = 0.0;
                for i in 0..3 {
                    let yy = (m + i).wrapping_sub(1);
                    if yy >= h {
                        continue;
                    }
                    for j in 0..3 {
                        let xx = (l + j).wrapping_sub(1);
                        if xx >= w {
                            continue;
                        }
                        y += k[i * 3 + j] * id[(ni * h + yy) * w + xx];
                    }
                }
                od[(ni * h + m) * w + l] = if y >= 0.0 { q11 * y } else { a * q12 * y };
            }
        }
    }
    Ok(out)
}

/// Builds the two-kernel sign-pair bank `{w1, a*w1}`.
pub fn sign_pair_bank(w1: &Kernel3x3, a: f64) -> Result<FilterBank> {
    if a >= 0.0 {
        return Err(Error::Invalid(format!(
            "sign pair needs a negative factor, got a = {a}"
        )));
    }
    let mut scaled = *w1.values();
    for v in scaled.iter_mut() {
        *v *= a;
    }
    Ok(FilterBank::custom(alloc::vec![
        Kernel3x3::new(*w1.values(), crate::filters::KernelTag::Derived, 1)?,
        Kernel3x3::new(scaled, crate::filters::KernelTag::Derived, 2)?,
    ]))
}
