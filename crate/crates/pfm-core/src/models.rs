//! Model builders: the three toy architectures, a desk-scale residual
//! network built from PFMs, and full-size ResNet18/PFNet18 graphs used for
//! parameter counting.
//!
//! A [`ModelSpec`] is a purely structural description: it can count
//! trainable parameters and infer shapes without allocating any tensors,
//! which is what the full-size counting graphs are for. Small specs can be
//! instantiated into a runnable [`Model`] whose parameters live in a
//! registry (each trainable tensor appears there exactly once, in
//! construction order).

use crate::autodiff::{
    self, conv2d, global_avg_pool, linear, maxpool2d, spatial_sum, BatchNorm2d, Mode, Var,
};
use crate::error::{Error, Result};
use crate::filters::{self, FilterBank};
use crate::pfm::{PfmConfig, PfmLayer, SmoothedSkip};
use crate::tensor::Tensor;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// One structural layer of a model.
#[derive(Clone, Debug)]
pub enum LayerSpec {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Pfm {
        name: String,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bank_size: usize,
        use_relu: bool,
        filters_trainable: bool,
        bn_bypass: bool,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    SpatialSum,
    /// Maps a scalar score `s` per sample to the fixed logit pair `(-s, s)`;
    /// carries no trainable parameters.
    BipolarHead,
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    Residual {
        name: String,
        body: Vec<LayerSpec>,
        skip: SkipSpec,
    },
}

/// Shortcut branch of a residual block.
#[derive(Clone, Debug)]
pub enum SkipSpec {
    Identity,
    /// `1x1` stride-2 projection, optionally preceded by the fixed Gaussian
    /// blur and followed by batch normalization.
    Projection {
        name: String,
        in_channels: usize,
        out_channels: usize,
        smoothed: bool,
        batch_norm: bool,
    },
}

/// One named group of parameters for reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub position: String,
    pub kind: &'static str,
    pub count: usize,
}

/// Structural description of a model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub head_classes: usize,
    pub in_channels: usize,
    /// Filter bank shared by every PFM layer; `None` for counting-only
    /// graphs.
    pub bank: Option<Rc<FilterBank>>,
    pub layers: Vec<LayerSpec>,
}

fn conv_out_len(len: usize, pad: usize, k: usize, stride: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

impl LayerSpec {
    fn collect_params(&self, groups: &mut Vec<ParamGroup>) {
        match self {
            LayerSpec::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let kind = match kernel {
                    1 => "conv1x1",
                    3 => "conv3x3",
                    7 => "conv7x7",
                    _ => "conv",
                };
                groups.push(ParamGroup {
                    position: name.clone(),
                    kind,
                    count: out_channels * in_channels * kernel * kernel,
                });
                if *bias {
                    groups.push(ParamGroup {
                        position: name.clone(),
                        kind: "bias",
                        count: *out_channels,
                    });
                }
            }
            LayerSpec::Pfm {
                name,
                in_channels,
                out_channels,
                bank_size,
                filters_trainable,
                bn_bypass,
                ..
            } => {
                groups.push(ParamGroup {
                    position: name.clone(),
                    kind: "pfm_mix",
                    count: bank_size * in_channels * out_channels,
                });
                if !bn_bypass {
                    groups.push(ParamGroup {
                        position: name.clone(),
                        kind: "bn",
                        count: 2 * bank_size * in_channels,
                    });
                }
                if *filters_trainable {
                    groups.push(ParamGroup {
                        position: name.clone(),
                        kind: "pfm_filters",
                        count: bank_size * 9,
                    });
                }
            }
            LayerSpec::BatchNorm { name, channels } => {
                groups.push(ParamGroup {
                    position: name.clone(),
                    kind: "bn",
                    count: 2 * channels,
                });
            }
            LayerSpec::Linear {
                name,
                in_features,
                out_features,
                bias,
            } => {
                groups.push(ParamGroup {
                    position: name.clone(),
                    kind: "linear",
                    count: in_features * out_features,
                });
                if *bias {
                    groups.push(ParamGroup {
                        position: name.clone(),
                        kind: "bias",
                        count: *out_features,
                    });
                }
            }
            LayerSpec::Residual { body, skip, .. } => {
                for layer in body {
                    layer.collect_params(groups);
                }
                if let SkipSpec::Projection {
                    name,
                    in_channels,
                    out_channels,
                    batch_norm,
                    ..
                } = skip
                {
                    groups.push(ParamGroup {
                        position: name.clone(),
                        kind: "conv1x1",
                        count: in_channels * out_channels,
                    });
                    if *batch_norm {
                        groups.push(ParamGroup {
                            position: name.clone(),
                            kind: "bn",
                            count: 2 * out_channels,
                        });
                    }
                }
            }
            LayerSpec::Relu
            | LayerSpec::MaxPool { .. }
            | LayerSpec::GlobalAvgPool
            | LayerSpec::SpatialSum
            | LayerSpec::BipolarHead => {}
        }
    }
}

/// Shape tracked through spec-level inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ShapeState {
    Spatial { c: usize, h: usize, w: usize },
    Flat { features: usize },
}

fn infer_layer(layer: &LayerSpec, state: ShapeState) -> Result<ShapeState> {
    use ShapeState::*;
    let spatial = |state: ShapeState, what: &str| match state {
        Spatial { c, h, w } => Ok((c, h, w)),
        Flat { .. } => Err(Error::Shape(format!("{what} needs a spatial input"))),
    };
    match layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (c, h, w) = spatial(state, "conv2d")?;
            if c != *in_channels {
                return Err(Error::Shape(format!(
                    "conv2d expects {in_channels} channels, got {c}"
                )));
            }
            Ok(Spatial {
                c: *out_channels,
                h: conv_out_len(h, *padding, *kernel, *stride),
                w: conv_out_len(w, *padding, *kernel, *stride),
            })
        }
        LayerSpec::Pfm {
            in_channels,
            out_channels,
            stride,
            ..
        } => {
            let (c, h, w) = spatial(state, "pfm")?;
            if c != *in_channels {
                return Err(Error::Shape(format!(
                    "pfm expects {in_channels} channels, got {c}"
                )));
            }
            Ok(Spatial {
                c: *out_channels,
                h: conv_out_len(h, 1, 3, *stride),
                w: conv_out_len(w, 1, 3, *stride),
            })
        }
        LayerSpec::BatchNorm { channels, .. } => {
            let (c, h, w) = spatial(state, "batchnorm")?;
            if c != *channels {
                return Err(Error::Shape(format!(
                    "batchnorm expects {channels} channels, got {c}"
                )));
            }
            Ok(Spatial { c, h, w })
        }
        LayerSpec::Relu => Ok(state),
        LayerSpec::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            let (c, h, w) = spatial(state, "maxpool")?;
            Ok(Spatial {
                c,
                h: conv_out_len(h, *padding, *kernel, *stride),
                w: conv_out_len(w, *padding, *kernel, *stride),
            })
        }
        LayerSpec::GlobalAvgPool | LayerSpec::SpatialSum => {
            let (c, _, _) = spatial(state, "pooling")?;
            Ok(Flat { features: c })
        }
        LayerSpec::BipolarHead => match state {
            Flat { features: 1 } => Ok(Flat { features: 2 }),
            other => Err(Error::Shape(format!(
                "bipolar head needs one scalar feature, got {other:?}"
            ))),
        },
        LayerSpec::Linear {
            in_features,
            out_features,
            ..
        } => match state {
            Flat { features } if features == *in_features => Ok(Flat {
                features: *out_features,
            }),
            other => Err(Error::Shape(format!(
                "linear expects {in_features} flat features, got {other:?}"
            ))),
        },
        LayerSpec::Residual { body, skip, .. } => {
            let mut body_state = state;
            for layer in body {
                body_state = infer_layer(layer, body_state)?;
            }
            let skip_state = match skip {
                SkipSpec::Identity => state,
                SkipSpec::Projection {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let (c, h, w) = spatial(state, "skip projection")?;
                    if c != *in_channels {
                        return Err(Error::Shape(format!(
                            "skip expects {in_channels} channels, got {c}"
                        )));
                    }
                    Spatial {
                        c: *out_channels,
                        h: conv_out_len(h, 0, 1, 2),
                        w: conv_out_len(w, 0, 1, 2),
                    }
                }
            };
            if body_state != skip_state {
                return Err(Error::Shape(format!(
                    "residual branches disagree: {body_state:?} vs {skip_state:?}"
                )));
            }
            Ok(body_state)
        }
    }
}

impl ModelSpec {
    /// Total trainable parameter elements.
    pub fn trainable_count(&self) -> usize {
        self.param_breakdown().iter().map(|g| g.count).sum()
    }

    /// Per-position parameter groups in layer order.
    pub fn param_breakdown(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        for layer in &self.layers {
            layer.collect_params(&mut groups);
        }
        groups
    }

    /// Infers the output shape for a `[N, C, H, W]` input without building
    /// any tensors.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<Vec<usize>> {
        if input[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "model {} expects {} input channels, got {}",
                self.name, self.in_channels, input[1]
            )));
        }
        let mut state = ShapeState::Spatial {
            c: input[1],
            h: input[2],
            w: input[3],
        };
        for layer in &self.layers {
            state = infer_layer(layer, state)?;
        }
        Ok(match state {
            ShapeState::Spatial { c, h, w } => vec![input[0], c, h, w],
            ShapeState::Flat { features } => vec![input[0], features],
        })
    }
}

/// How a parameter should be (re)initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or linear weight with the given fan-in.
    Weight {
        fan_in: usize,
    },
    Bias,
    BnGamma,
    BnBeta,
    /// Depthwise filters that start from the bank values.
    DepthwiseFilters,
}

/// A registry entry: one trainable tensor and how to initialize it.
pub struct NamedParam {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

enum SkipLayer {
    Identity,
    Plain {
        weight: Var,
        bn: Option<BatchNorm2d>,
    },
    Smoothed {
        skip: SmoothedSkip,
        bn: Option<BatchNorm2d>,
    },
}

enum Layer {
    Conv2d {
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Pfm(PfmLayer),
    BatchNorm(BatchNorm2d),
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    SpatialSum,
    BipolarHead {
        weight: Var,
    },
    Linear {
        weight: Var,
        bias: Option<Var>,
    },
    Residual {
        body: Vec<Layer>,
        skip: SkipLayer,
    },
}

/// An instantiated, runnable model.
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<NamedParam>,
}

fn build_layer(
    spec: &LayerSpec,
    bank: Option<&Rc<FilterBank>>,
    params: &mut Vec<NamedParam>,
) -> Result<Layer> {
    Ok(match spec {
        LayerSpec::Conv2d {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        } => {
            let weight = Var::param(Tensor::zeros([
                *out_channels,
                *in_channels,
                *kernel,
                *kernel,
            ]));
            params.push(NamedParam {
                name: format!("{name}.weight"),
                var: weight.clone(),
                kind: ParamKind::Weight {
                    fan_in: in_channels * kernel * kernel,
                },
            });
            let bias_var = if *bias {
                let b = Var::param(Tensor::zeros([*out_channels]));
                params.push(NamedParam {
                    name: format!("{name}.bias"),
                    var: b.clone(),
                    kind: ParamKind::Bias,
                });
                Some(b)
            } else {
                None
            };
            Layer::Conv2d {
                weight,
                bias: bias_var,
                stride: *stride,
                padding: *padding,
            }
        }
        LayerSpec::Pfm {
            name,
            in_channels,
            out_channels,
            stride,
            bank_size,
            use_relu,
            filters_trainable,
            bn_bypass,
        } => {
            let bank =
                bank.ok_or_else(|| Error::Invalid(format!("layer {name} needs a filter bank")))?;
            if bank.len() != *bank_size {
                return Err(Error::Invalid(format!(
                    "layer {name} expects a bank of {bank_size} kernels, got {}",
                    bank.len()
                )));
            }
            let mut cfg = PfmConfig::new(*in_channels, *out_channels, Rc::clone(bank));
            cfg.stride = *stride;
            cfg.use_relu = *use_relu;
            cfg.filters_trainable = *filters_trainable;
            cfg.bn_bypass = *bn_bypass;
            let layer = PfmLayer::new(cfg)?;
            params.push(NamedParam {
                name: format!("{name}.mix"),
                var: layer.mix().clone(),
                kind: ParamKind::Weight {
                    fan_in: bank_size * in_channels,
                },
            });
            if !bn_bypass {
                params.push(NamedParam {
                    name: format!("{name}.bn.gamma"),
                    var: layer.bn_ref().gamma().clone(),
                    kind: ParamKind::BnGamma,
                });
                params.push(NamedParam {
                    name: format!("{name}.bn.beta"),
                    var: layer.bn_ref().beta().clone(),
                    kind: ParamKind::BnBeta,
                });
            }
            if *filters_trainable {
                params.push(NamedParam {
                    name: format!("{name}.filters"),
                    var: layer.filters().clone(),
                    kind: ParamKind::DepthwiseFilters,
                });
            }
            Layer::Pfm(layer)
        }
        LayerSpec::BatchNorm { name, channels } => {
            let bn = BatchNorm2d::new(*channels);
            params.push(NamedParam {
                name: format!("{name}.gamma"),
                var: bn.gamma().clone(),
                kind: ParamKind::BnGamma,
            });
            params.push(NamedParam {
                name: format!("{name}.beta"),
                var: bn.beta().clone(),
                kind: ParamKind::BnBeta,
            });
            Layer::BatchNorm(bn)
        }
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::MaxPool {
            kernel,
            stride,
            padding,
        } => Layer::MaxPool {
            kernel: *kernel,
            stride: *stride,
            padding: *padding,
        },
        LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
        LayerSpec::SpatialSum => Layer::SpatialSum,
        LayerSpec::BipolarHead => {
            // Fixed (-1, +1) projection of the scalar score to two logits.
            let weight = Var::leaf(Tensor::new([2, 1], vec![-1.0, 1.0]));
            Layer::BipolarHead { weight }
        }
        LayerSpec::Linear {
            name,
            in_features,
            out_features,
            bias,
        } => {
            let weight = Var::param(Tensor::zeros([*out_features, *in_features]));
            params.push(NamedParam {
                name: format!("{name}.weight"),
                var: weight.clone(),
                kind: ParamKind::Weight {
                    fan_in: *in_features,
                },
            });
            let bias_var = if *bias {
                let b = Var::param(Tensor::zeros([*out_features]));
                params.push(NamedParam {
                    name: format!("{name}.bias"),
                    var: b.clone(),
                    kind: ParamKind::Bias,
                });
                Some(b)
            } else {
                None
            };
            Layer::Linear {
                weight,
                bias: bias_var,
            }
        }
        LayerSpec::Residual { body, skip, .. } => {
            let mut built = Vec::with_capacity(body.len());
            for layer in body {
                built.push(build_layer(layer, bank, params)?);
            }
            let skip = match skip {
                SkipSpec::Identity => SkipLayer::Identity,
                SkipSpec::Projection {
                    name,
                    in_channels,
                    out_channels,
                    smoothed,
                    batch_norm,
                } => {
                    let bn = if *batch_norm {
                        let bn = BatchNorm2d::new(*out_channels);
                        params.push(NamedParam {
                            name: format!("{name}.bn.gamma"),
                            var: bn.gamma().clone(),
                            kind: ParamKind::BnGamma,
                        });
                        params.push(NamedParam {
                            name: format!("{name}.bn.beta"),
                            var: bn.beta().clone(),
                            kind: ParamKind::BnBeta,
                        });
                        Some(bn)
                    } else {
                        None
                    };
                    if *smoothed {
                        let skip = SmoothedSkip::new(*in_channels, *out_channels);
                        params.push(NamedParam {
                            name: format!("{name}.proj"),
                            var: skip.proj().clone(),
                            kind: ParamKind::Weight {
                                fan_in: *in_channels,
                            },
                        });
                        SkipLayer::Smoothed { skip, bn }
                    } else {
                        let weight = Var::param(Tensor::zeros([*out_channels, *in_channels, 1, 1]));
                        params.push(NamedParam {
                            name: format!("{name}.proj"),
                            var: weight.clone(),
                            kind: ParamKind::Weight {
                                fan_in: *in_channels,
                            },
                        });
                        SkipLayer::Plain { weight, bn }
                    }
                }
            };
            Layer::Residual { body: built, skip }
        }
    })
}

fn forward_layer(layer: &mut Layer, input: &Var, mode: Mode) -> Result<Var> {
    Ok(match layer {
        Layer::Conv2d {
            weight,
            bias,
            stride,
            padding,
        } => {
            let mut out = conv2d(input, weight, *stride, *padding)?;
            if let Some(b) = bias {
                // Broadcast the bias over N, H, W.
                let s = out.shape().to_vec();
                let mut bias_map = Tensor::zeros(s.clone());
                {
                    let bd = b.value();
                    let bd = bd.data();
                    let md = bias_map.data_mut();
                    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                    for ni in 0..n {
                        for (ci, &bias_value) in bd.iter().enumerate().take(c) {
                            let base = (ni * c + ci) * hw;
                            for v in &mut md[base..base + hw] {
                                *v = bias_value;
                            }
                        }
                    }
                }
                out = autodiff::add(&out, &Var::leaf(bias_map));
            }
            out
        }
        Layer::Pfm(pfm) => pfm.forward(input, mode)?,
        Layer::BatchNorm(bn) => bn.forward(input, mode)?,
        Layer::Relu => input.relu(),
        Layer::MaxPool {
            kernel,
            stride,
            padding,
        } => maxpool2d(input, *kernel, *stride, *padding),
        Layer::GlobalAvgPool => global_avg_pool(input),
        Layer::SpatialSum => spatial_sum(input),
        Layer::BipolarHead { weight } => linear(input, weight, None)?,
        Layer::Linear { weight, bias } => linear(input, weight, bias.as_ref())?,
        Layer::Residual { body, skip } => {
            let mut out = input.clone();
            for layer in body.iter_mut() {
                out = forward_layer(layer, &out, mode)?;
            }
            let shortcut = match skip {
                SkipLayer::Identity => input.clone(),
                SkipLayer::Plain { weight, bn } => {
                    let mut s = conv2d(input, weight, 2, 0)?;
                    if let Some(bn) = bn {
                        s = bn.forward(&s, mode)?;
                    }
                    s
                }
                SkipLayer::Smoothed { skip, bn } => {
                    let mut s = skip.forward(input)?;
                    if let Some(bn) = bn {
                        s = bn.forward(&s, mode)?;
                    }
                    s
                }
            };
            autodiff::add(&out, &shortcut).relu()
        }
    })
}

impl Model {
    /// Allocates parameters for a spec. Intended for the small models;
    /// counting graphs are consumed symbolically instead.
    pub fn instantiate(spec: &ModelSpec) -> Result<Self> {
        let mut params = Vec::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer_spec in &spec.layers {
            layers.push(build_layer(layer_spec, spec.bank.as_ref(), &mut params)?);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// The parameter registry in construction order.
    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&NamedParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Trainable parameter elements actually allocated.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(|p| p.var.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.var.zero_grad();
        }
    }

    pub fn forward(&mut self, input: &Var, mode: Mode) -> Result<Var> {
        let mut out = input.clone();
        for layer in self.layers.iter_mut() {
            out = forward_layer(layer, &out, mode)?;
        }
        Ok(out)
    }
}

/// The three implementations of the toy classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyVariant {
    /// One PFM over the bank {H, V} with the intermediate ReLU: 2 weights.
    Pfm,
    /// Two plain 3x3 convolution layers joined by a ReLU: 36 weights.
    Cnn,
    /// Two stacked ReLU-free PFMs sharing the bank {H, V, identity}:
    /// 12 weights.
    PfmNoRelu,
}

impl core::str::FromStr for ToyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfm" => Ok(ToyVariant::Pfm),
            "cnn" => Ok(ToyVariant::Cnn),
            "pfm_norelu" => Ok(ToyVariant::PfmNoRelu),
            other => Err(Error::Invalid(format!("unknown toy variant '{other}'"))),
        }
    }
}

/// Builds one of the toy architectures. All of them end in a spatial sum
/// and the fixed bipolar head, so they emit two logits for training.
pub fn build_toy(variant: ToyVariant) -> ModelSpec {
    match variant {
        ToyVariant::Pfm => {
            let bank = Rc::new(filters::make_toy_hv_bank());
            ModelSpec {
                name: "toy-pfm".into(),
                head_classes: 2,
                in_channels: 1,
                bank: Some(bank),
                layers: vec![
                    LayerSpec::Pfm {
                        name: "pfm".into(),
                        in_channels: 1,
                        out_channels: 1,
                        stride: 1,
                        bank_size: 2,
                        use_relu: true,
                        filters_trainable: false,
                        bn_bypass: true,
                    },
                    LayerSpec::SpatialSum,
                    LayerSpec::BipolarHead,
                ],
            }
        }
        ToyVariant::Cnn => ModelSpec {
            name: "toy-cnn".into(),
            head_classes: 2,
            in_channels: 1,
            bank: None,
            layers: vec![
                LayerSpec::Conv2d {
                    name: "conv1".into(),
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: false,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    name: "conv2".into(),
                    in_channels: 2,
                    out_channels: 1,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: false,
                },
                LayerSpec::SpatialSum,
                LayerSpec::BipolarHead,
            ],
        },
        ToyVariant::PfmNoRelu => {
            let bank = Rc::new(filters::make_toy_hvi_bank());
            let pfm = |name: &str, in_ch: usize, out_ch: usize| LayerSpec::Pfm {
                name: name.into(),
                in_channels: in_ch,
                out_channels: out_ch,
                stride: 1,
                bank_size: 3,
                use_relu: false,
                filters_trainable: false,
                bn_bypass: true,
            };
            ModelSpec {
                name: "toy-pfm-norelu".into(),
                head_classes: 2,
                in_channels: 1,
                bank: Some(bank),
                layers: vec![
                    pfm("pfm1", 1, 2),
                    pfm("pfm2", 2, 1),
                    LayerSpec::SpatialSum,
                    LayerSpec::BipolarHead,
                ],
            }
        }
    }
}

fn basic_block(
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    conv_maker: &dyn Fn(&str, usize, usize, usize) -> LayerSpec,
    smoothed_skip: bool,
) -> LayerSpec {
    let body = vec![
        conv_maker(&format!("{prefix}.conv1"), in_ch, out_ch, stride),
        LayerSpec::BatchNorm {
            name: format!("{prefix}.bn1"),
            channels: out_ch,
        },
        LayerSpec::Relu,
        conv_maker(&format!("{prefix}.conv2"), out_ch, out_ch, 1),
        LayerSpec::BatchNorm {
            name: format!("{prefix}.bn2"),
            channels: out_ch,
        },
    ];
    let skip = if stride == 1 && in_ch == out_ch {
        SkipSpec::Identity
    } else {
        SkipSpec::Projection {
            name: format!("{prefix}.downsample"),
            in_channels: in_ch,
            out_channels: out_ch,
            smoothed: smoothed_skip,
            batch_norm: true,
        }
    };
    LayerSpec::Residual {
        name: prefix.into(),
        body,
        skip,
    }
}

/// Configuration of the desk-scale residual network.
pub struct MiniNetConfig {
    pub bank: Rc<FilterBank>,
    pub classes: usize,
    pub width: usize,
    pub use_relu: bool,
    pub filters_trainable: bool,
}

/// A small residual PFM network for 48x48 grayscale inputs: a stride-1 PFM
/// stem, two stages of two residual blocks (the second stage downsamples
/// through a smoothed skip), global average pooling, and a linear head.
pub fn build_mini_pfnet(cfg: &MiniNetConfig) -> Result<ModelSpec> {
    if cfg.width < 2 {
        return Err(Error::Invalid(format!(
            "mini net width must be at least 2, got {}",
            cfg.width
        )));
    }
    let bank_size = cfg.bank.len();
    let use_relu = cfg.use_relu;
    let filters_trainable = cfg.filters_trainable;
    let pfm = move |name: &str, in_ch: usize, out_ch: usize, stride: usize| LayerSpec::Pfm {
        name: name.into(),
        in_channels: in_ch,
        out_channels: out_ch,
        stride,
        bank_size,
        use_relu,
        filters_trainable,
        bn_bypass: false,
    };
    let w = cfg.width;
    let mut layers = vec![
        pfm("stem", 1, w, 1),
        LayerSpec::BatchNorm {
            name: "bn1".into(),
            channels: w,
        },
        LayerSpec::Relu,
    ];
    layers.push(basic_block("stage1.0", w, w, 1, &pfm, true));
    layers.push(basic_block("stage1.1", w, w, 1, &pfm, true));
    layers.push(basic_block("stage2.0", w, 2 * w, 2, &pfm, true));
    layers.push(basic_block("stage2.1", 2 * w, 2 * w, 1, &pfm, true));
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear {
        name: "fc".into(),
        in_features: 2 * w,
        out_features: cfg.classes,
        bias: true,
    });
    Ok(ModelSpec {
        name: "mini-pfnet".into(),
        head_classes: cfg.classes,
        in_channels: 1,
        bank: Some(Rc::clone(&cfg.bank)),
        layers,
    })
}

/// The plain-convolution twin of [`build_mini_pfnet`], for parameter parity
/// comparisons and baseline runs.
pub fn build_mini_baseline(classes: usize, width: usize) -> Result<ModelSpec> {
    if width < 2 {
        return Err(Error::Invalid(format!(
            "mini net width must be at least 2, got {width}"
        )));
    }
    let conv = |name: &str, in_ch: usize, out_ch: usize, stride: usize| LayerSpec::Conv2d {
        name: name.into(),
        in_channels: in_ch,
        out_channels: out_ch,
        kernel: 3,
        stride,
        padding: 1,
        bias: false,
    };
    let w = width;
    let mut layers = vec![
        conv("stem", 1, w, 1),
        LayerSpec::BatchNorm {
            name: "bn1".into(),
            channels: w,
        },
        LayerSpec::Relu,
    ];
    layers.push(basic_block("stage1.0", w, w, 1, &conv, false));
    layers.push(basic_block("stage1.1", w, w, 1, &conv, false));
    layers.push(basic_block("stage2.0", w, 2 * w, 2, &conv, false));
    layers.push(basic_block("stage2.1", 2 * w, 2 * w, 1, &conv, false));
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear {
        name: "fc".into(),
        in_features: 2 * w,
        out_features: classes,
        bias: true,
    });
    Ok(ModelSpec {
        name: "mini-baseline".into(),
        head_classes: classes,
        in_channels: 1,
        bank: None,
        layers,
    })
}

/// Full-size architectures used for parameter counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountArch {
    ResNet18,
    PfNet18,
}

impl core::str::FromStr for CountArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" => Ok(CountArch::ResNet18),
            "pfnet18" => Ok(CountArch::PfNet18),
            other => Err(Error::Invalid(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Builds the full ResNet18 topology, or its PFNet18 counterpart where
/// every convolution position (including the stem) is a PFM with
/// `bank_size` filters and the strided skips are smoothed. The spec is
/// meant for counting and shape checks only; it allocates nothing.
pub fn build_counting_graph(
    arch: CountArch,
    bank_size: usize,
    classes: usize,
) -> Result<ModelSpec> {
    match arch {
        CountArch::ResNet18 => {
            if bank_size != 0 {
                return Err(Error::Invalid("baseline resnet18 takes bank size 0".into()));
            }
        }
        CountArch::PfNet18 => {
            if bank_size == 0 {
                return Err(Error::Invalid("pfnet18 needs at least one filter".into()));
            }
        }
    }
    let pfm = arch == CountArch::PfNet18;
    let conv = move |name: &str, in_ch: usize, out_ch: usize, stride: usize| {
        if pfm {
            LayerSpec::Pfm {
                name: name.into(),
                in_channels: in_ch,
                out_channels: out_ch,
                stride,
                bank_size,
                use_relu: true,
                filters_trainable: false,
                bn_bypass: false,
            }
        } else {
            LayerSpec::Conv2d {
                name: name.into(),
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: 3,
                stride,
                padding: 1,
                bias: false,
            }
        }
    };

    let mut layers = Vec::new();
    // Stem: 7x7/64 stride 2 for the baseline; a single stride-2 PFM for
    // PFNet18.
    if pfm {
        layers.push(LayerSpec::Pfm {
            name: "conv1".into(),
            in_channels: 3,
            out_channels: 64,
            stride: 2,
            bank_size,
            use_relu: true,
            filters_trainable: false,
            bn_bypass: false,
        });
    } else {
        layers.push(LayerSpec::Conv2d {
            name: "conv1".into(),
            in_channels: 3,
            out_channels: 64,
            kernel: 7,
            stride: 2,
            padding: 3,
            bias: false,
        });
    }
    layers.push(LayerSpec::BatchNorm {
        name: "bn1".into(),
        channels: 64,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::MaxPool {
        kernel: 3,
        stride: 2,
        padding: 1,
    });

    let widths = [64usize, 128, 256, 512];
    let mut in_ch = 64;
    for (i, &out_ch) in widths.iter().enumerate() {
        let stage = i + 1;
        let stride = if i == 0 { 1 } else { 2 };
        layers.push(basic_block(
            &format!("layer{stage}.0"),
            in_ch,
            out_ch,
            stride,
            &conv,
            pfm,
        ));
        layers.push(basic_block(
            &format!("layer{stage}.1"),
            out_ch,
            out_ch,
            1,
            &conv,
            pfm,
        ));
        in_ch = out_ch;
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear {
        name: "fc".into(),
        in_features: 512,
        out_features: classes,
        bias: true,
    });

    Ok(ModelSpec {
        name: match arch {
            CountArch::ResNet18 => format!("resnet18-{classes}"),
            CountArch::PfNet18 => format!("pfnet18-{bank_size}f-{classes}"),
        },
        head_classes: classes,
        in_channels: 3,
        bank: None,
        layers,
    })
}
