//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Var`] wraps a value tensor plus the bookkeeping needed to run
//! backpropagation: a lazily allocated gradient, and one edge per
//! differentiable input holding the closure that maps the node's gradient to
//! that input's gradient contribution. Graphs are built define-by-run and are
//! acyclic by construction; [`backward`] walks them once in reverse
//! topological order, accumulating gradients across all uses of a node.
//!
//! Two contracts callers must keep:
//! - a graph instance is single-threaded (`Var` is `Rc`-based on purpose);
//! - leaf values must not be mutated between the forward pass and
//!   `backward`, or gradients will be computed against the new values.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{idx4, Tensor};
use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};
use core::sync::atomic::{AtomicUsize, Ordering};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn = Box<dyn Fn(&Tensor) -> Tensor>;

struct Edge {
    parent: Var,
    backward: BackwardFn,
}

struct NodeInner {
    id: usize,
    shape: Vec<usize>,
    value: RefCell<Tensor>,
    grad: RefCell<Option<Tensor>>,
    edges: Vec<Edge>,
    requires_grad: bool,
}

/// A node in the computation graph. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Var(Rc<NodeInner>);

impl Var {
    /// A graph input that does not ask for a gradient of its own.
    pub fn leaf(value: Tensor) -> Self {
        Self::make(value, Vec::new(), false)
    }

    /// A trainable leaf: gradients will be accumulated here.
    pub fn param(value: Tensor) -> Self {
        Self::make(value, Vec::new(), true)
    }

    fn make(value: Tensor, edges: Vec<Edge>, is_param: bool) -> Self {
        let shape = value.shape().to_vec();
        let requires_grad = is_param || !edges.is_empty();
        Var(Rc::new(NodeInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            value: RefCell::new(value),
            grad: RefCell::new(None),
            edges,
            requires_grad,
        }))
    }

    /// Creates an interior node, keeping only edges to parents that can
    /// use a gradient.
    fn from_op(value: Tensor, edges: Vec<Edge>) -> Self {
        let kept: Vec<Edge> = edges
            .into_iter()
            .filter(|e| e.parent.0.requires_grad)
            .collect();
        Self::make(value, kept, false)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn value(&self) -> Ref<'_, Tensor> {
        self.0.value.borrow()
    }

    /// Replaces the value in place; the shape must not change.
    pub fn set_value(&self, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.shape(),
            "set_value must preserve the shape"
        );
        *self.0.value.borrow_mut() = value;
    }

    /// Applies `f` to the stored value (used by optimizers).
    pub fn update_value(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.value.borrow_mut());
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, contribution: Tensor) {
        assert_eq!(
            contribution.shape(),
            self.shape(),
            "gradient shape must equal value shape"
        );
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g.add_assign(&contribution),
            None => *slot = Some(contribution),
        }
    }

    /// Elementwise max(0, x).
    pub fn relu(&self) -> Var {
        let input = self.value();
        let out = input.map(|v| if v > 0.0 { v } else { 0.0 });
        // Subgradient at exactly 0 is 0: the mask is strict.
        let mask: Rc<Vec<bool>> = Rc::new(input.data().iter().map(|&v| v > 0.0).collect());
        drop(input);
        Var::from_op(
            out,
            vec![Edge {
                parent: self.clone(),
                backward: Box::new(move |up: &Tensor| {
                    let mut g = up.clone();
                    for (v, &m) in g.data_mut().iter_mut().zip(mask.iter()) {
                        if !m {
                            *v = 0.0;
                        }
                    }
                    g
                }),
            }],
        )
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&self, c: f64) -> Var {
        let out = self.value().scaled(c);
        Var::from_op(
            out,
            vec![Edge {
                parent: self.clone(),
                backward: Box::new(move |up: &Tensor| up.scaled(c)),
            }],
        )
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Var, b: &Var) -> Var {
    assert_eq!(a.shape(), b.shape(), "add expects matching shapes");
    let mut out = a.value().clone();
    out.add_assign(&b.value());
    Var::from_op(
        out,
        vec![
            Edge {
                parent: a.clone(),
                backward: Box::new(|up: &Tensor| up.clone()),
            },
            Edge {
                parent: b.clone(),
                backward: Box::new(|up: &Tensor| up.clone()),
            },
        ],
    )
}

impl core::ops::Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        add(self, rhs)
    }
}

/// Elementwise (Hadamard) product of two same-shape tensors.
pub fn mul(a: &Var, b: &Var) -> Var {
    assert_eq!(a.shape(), b.shape(), "mul expects matching shapes");
    let out = {
        let av = a.value();
        let bv = b.value();
        Tensor::new(
            a.shape(),
            av.data()
                .iter()
                .zip(bv.data().iter())
                .map(|(x, y)| x * y)
                .collect(),
        )
    };
    let a_for_b = a.clone();
    let b_for_a = b.clone();
    Var::from_op(
        out,
        vec![
            Edge {
                parent: a.clone(),
                backward: Box::new(move |up: &Tensor| {
                    let bv = b_for_a.value();
                    Tensor::new(
                        up.shape(),
                        up.data()
                            .iter()
                            .zip(bv.data().iter())
                            .map(|(g, y)| g * y)
                            .collect(),
                    )
                }),
            },
            Edge {
                parent: b.clone(),
                backward: Box::new(move |up: &Tensor| {
                    let av = a_for_b.value();
                    Tensor::new(
                        up.shape(),
                        up.data()
                            .iter()
                            .zip(av.data().iter())
                            .map(|(g, x)| g * x)
                            .collect(),
                    )
                }),
            },
        ],
    )
}

fn conv_out_len(len: usize, pad: usize, k: usize, stride: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

fn pad_nchw(input: &Tensor, pad: usize) -> Tensor {
    if pad == 0 {
        return input.clone();
    }
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros([n, c, ph, pw]);
    let src = input.data();
    let dst = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src_row = ((ni * c + ci) * h + y) * w;
                let dst_row = ((ni * c + ci) * ph + y + pad) * pw + pad;
                dst[dst_row..dst_row + w].copy_from_slice(&src[src_row..src_row + w]);
            }
        }
    }
    out
}

fn crop_nchw(padded: &Tensor, pad: usize, h: usize, w: usize) -> Tensor {
    if pad == 0 {
        return padded.clone();
    }
    let s = padded.shape();
    let (n, c, ph, pw) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = padded.data();
    let dst = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let src_row = ((ni * c + ci) * ph + y + pad) * pw + pad;
                let dst_row = ((ni * c + ci) * h + y) * w;
                dst[dst_row..dst_row + w].copy_from_slice(&src[src_row..src_row + w]);
            }
        }
    }
    out
}

/// 2D cross-correlation of `input [N,C,H,W]` with `kernels [K,C,kh,kw]`.
///
/// This is the deep-learning convention: kernels are not flipped. Output
/// spatial size is `floor((H + 2*padding - kh)/stride) + 1`.
pub fn conv2d(input: &Var, kernels: &Var, stride: usize, padding: usize) -> Result<Var> {
    assert!(stride >= 1, "stride must be positive");
    let in_shape = input.shape().to_vec();
    let k_shape = kernels.shape().to_vec();
    if in_shape.len() != 4 || k_shape.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects 4-d input and kernels, got {in_shape:?} and {k_shape:?}"
        )));
    }
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (k, ck, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    if ck != c {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {c} channels, kernels expect {ck}"
        )));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let oh = conv_out_len(h, padding, kh, stride);
    let ow = conv_out_len(w, padding, kw, stride);

    let padded = Rc::new(pad_nchw(&input.value(), padding));
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);

    let mut out = Tensor::zeros([n, k, oh, ow]);
    {
        let kd = kernels.value();
        let kd = kd.data();
        let pd = padded.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ki in 0..k {
                for m in 0..oh {
                    for l in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            let kbase = ((ki * c + ci) * kh) * kw;
                            let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                            for i in 0..kh {
                                let krow = kbase + i * kw;
                                let prow = pbase + i * pw;
                                for j in 0..kw {
                                    acc += kd[krow + j] * pd[prow + j];
                                }
                            }
                        }
                        od[((ni * k + ki) * oh + m) * ow + l] = acc;
                    }
                }
            }
        }
    }

    let kernels_for_input = kernels.clone();
    let padded_for_kernels = Rc::clone(&padded);
    let k_shape_b = k_shape.clone();
    let edges = vec![
        Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| {
                let kd = kernels_for_input.value();
                let kd = kd.data();
                let ud = up.data();
                let mut dpad = Tensor::zeros([n, c, ph, pw]);
                let dp = dpad.data_mut();
                for ni in 0..n {
                    for ki in 0..k {
                        for m in 0..oh {
                            for l in 0..ow {
                                let g = ud[((ni * k + ki) * oh + m) * ow + l];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..c {
                                    let kbase = ((ki * c + ci) * kh) * kw;
                                    let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                                    for i in 0..kh {
                                        let krow = kbase + i * kw;
                                        let prow = pbase + i * pw;
                                        for j in 0..kw {
                                            dp[prow + j] += g * kd[krow + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                crop_nchw(&dpad, padding, h, w)
            }),
        },
        Edge {
            parent: kernels.clone(),
            backward: Box::new(move |up: &Tensor| {
                let pd = padded_for_kernels.data();
                let ud = up.data();
                let mut dker = Tensor::zeros(k_shape_b.clone());
                let dk = dker.data_mut();
                for ni in 0..n {
                    for ki in 0..k {
                        for m in 0..oh {
                            for l in 0..ow {
                                let g = ud[((ni * k + ki) * oh + m) * ow + l];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..c {
                                    let kbase = ((ki * c + ci) * kh) * kw;
                                    let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                                    for i in 0..kh {
                                        let krow = kbase + i * kw;
                                        let prow = pbase + i * pw;
                                        for j in 0..kw {
                                            dk[krow + j] += g * pd[prow + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dker
            }),
        },
    ];
    Ok(Var::from_op(out, edges))
}

/// Depthwise convolution: every input channel is convolved with every filter.
///
/// `filters` has shape `[F, kh, kw]`; the output has `F*C` channels and
/// output channel `c*F + l` holds filter `l` applied to input channel `c`
/// (input channel major, filter index minor).
pub fn depthwise_conv2d(input: &Var, filters: &Var, stride: usize, padding: usize) -> Result<Var> {
    assert!(stride >= 1, "stride must be positive");
    let in_shape = input.shape().to_vec();
    let f_shape = filters.shape().to_vec();
    if in_shape.len() != 4 || f_shape.len() != 3 {
        return Err(Error::Shape(format!(
            "depthwise_conv2d expects 4-d input and [F,kh,kw] filters, got {in_shape:?} and {f_shape:?}"
        )));
    }
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (f, kh, kw) = (f_shape[0], f_shape[1], f_shape[2]);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "depthwise_conv2d filter {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let oh = conv_out_len(h, padding, kh, stride);
    let ow = conv_out_len(w, padding, kw, stride);
    let oc = f * c;

    let padded = Rc::new(pad_nchw(&input.value(), padding));
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);

    let mut out = Tensor::zeros([n, oc, oh, ow]);
    {
        let fd = filters.value();
        let fd = fd.data();
        let pd = padded.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                for fi in 0..f {
                    let out_ch = ci * f + fi;
                    for m in 0..oh {
                        for l in 0..ow {
                            let mut acc = 0.0;
                            let fbase = fi * kh * kw;
                            let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                            for i in 0..kh {
                                let frow = fbase + i * kw;
                                let prow = pbase + i * pw;
                                for j in 0..kw {
                                    acc += fd[frow + j] * pd[prow + j];
                                }
                            }
                            od[((ni * oc + out_ch) * oh + m) * ow + l] = acc;
                        }
                    }
                }
            }
        }
    }

    let filters_for_input = filters.clone();
    let padded_for_filters = Rc::clone(&padded);
    let f_shape_b = f_shape.clone();
    let edges = vec![
        Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| {
                let fd = filters_for_input.value();
                let fd = fd.data();
                let ud = up.data();
                let mut dpad = Tensor::zeros([n, c, ph, pw]);
                let dp = dpad.data_mut();
                for ni in 0..n {
                    for ci in 0..c {
                        for fi in 0..f {
                            let out_ch = ci * f + fi;
                            for m in 0..oh {
                                for l in 0..ow {
                                    let g = ud[((ni * oc + out_ch) * oh + m) * ow + l];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    let fbase = fi * kh * kw;
                                    let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                                    for i in 0..kh {
                                        let frow = fbase + i * kw;
                                        let prow = pbase + i * pw;
                                        for j in 0..kw {
                                            dp[prow + j] += g * fd[frow + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                crop_nchw(&dpad, padding, h, w)
            }),
        },
        Edge {
            parent: filters.clone(),
            backward: Box::new(move |up: &Tensor| {
                let pd = padded_for_filters.data();
                let ud = up.data();
                let mut dflt = Tensor::zeros(f_shape_b.clone());
                let df = dflt.data_mut();
                for ni in 0..n {
                    for ci in 0..c {
                        for fi in 0..f {
                            let out_ch = ci * f + fi;
                            for m in 0..oh {
                                for l in 0..ow {
                                    let g = ud[((ni * oc + out_ch) * oh + m) * ow + l];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    let fbase = fi * kh * kw;
                                    let pbase = ((ni * c + ci) * ph + m * stride) * pw + l * stride;
                                    for i in 0..kh {
                                        let frow = fbase + i * kw;
                                        let prow = pbase + i * pw;
                                        for j in 0..kw {
                                            df[frow + j] += g * pd[prow + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dflt
            }),
        },
    ];
    Ok(Var::from_op(out, edges))
}

/// Max pooling over `k x k` windows. Padding is implicit negative infinity,
/// so zero-padded borders never win ties against negative interiors.
pub fn maxpool2d(input: &Var, k: usize, stride: usize, padding: usize) -> Var {
    let s = input.shape().to_vec();
    assert_eq!(s.len(), 4, "maxpool2d expects NCHW");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert!(
        h + 2 * padding >= k && w + 2 * padding >= k,
        "maxpool2d window {k} larger than padded input {}x{}",
        h + 2 * padding,
        w + 2 * padding
    );
    assert!(
        padding < k,
        "maxpool2d padding must stay below the window size"
    );
    let oh = conv_out_len(h, padding, k, stride);
    let ow = conv_out_len(w, padding, k, stride);

    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax: Vec<usize> = vec![0; n * c * oh * ow];
    {
        let id = input.value();
        let id = id.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                for m in 0..oh {
                    for l in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for i in 0..k {
                            let y = (m * stride + i).wrapping_sub(padding);
                            if y >= h {
                                continue;
                            }
                            for j in 0..k {
                                let x = (l * stride + j).wrapping_sub(padding);
                                if x >= w {
                                    continue;
                                }
                                let v = id[idx4(&s, ni, ci, y, x)];
                                if v > best {
                                    best = v;
                                    best_idx = idx4(&s, ni, ci, y, x);
                                }
                            }
                        }
                        let o = ((ni * c + ci) * oh + m) * ow + l;
                        od[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
    }
    let argmax = Rc::new(argmax);
    let in_numel = n * c * h * w;
    Var::from_op(
        out,
        vec![Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| {
                let mut g = Tensor::zeros(s.clone());
                let gd = g.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    if src < in_numel {
                        gd[src] += up.data()[o];
                    }
                }
                g
            }),
        }],
    )
}

fn spatial_reduce(input: &Var, scale: f64) -> Var {
    let s = input.shape().to_vec();
    assert_eq!(s.len(), 4, "spatial reduction expects NCHW");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros([n, c]);
    {
        let id = input.value();
        let id = id.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                let mut acc = 0.0;
                for v in &id[base..base + h * w] {
                    acc += v;
                }
                od[ni * c + ci] = acc * scale;
            }
        }
    }
    Var::from_op(
        out,
        vec![Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| {
                let mut g = Tensor::zeros(s.clone());
                let gd = g.data_mut();
                for ni in 0..n {
                    for ci in 0..c {
                        let gv = up.data()[ni * c + ci] * scale;
                        let base = (ni * c + ci) * h * w;
                        for v in &mut gd[base..base + h * w] {
                            *v = gv;
                        }
                    }
                }
                g
            }),
        }],
    )
}

/// Mean over the spatial dimensions: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool(input: &Var) -> Var {
    let s = input.shape();
    let inv = 1.0 / (s[2] * s[3]) as f64;
    spatial_reduce(input, inv)
}

/// Sum over the spatial dimensions: `[N,C,H,W] -> [N,C]`.
pub fn spatial_sum(input: &Var) -> Var {
    spatial_reduce(input, 1.0)
}

/// Sum of every element, producing a scalar.
pub fn sum_all(input: &Var) -> Var {
    let total: f64 = input.value().data().iter().sum();
    let s = input.shape().to_vec();
    Var::from_op(
        Tensor::scalar(total),
        vec![Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| Tensor::full(s.clone(), up.item())),
        }],
    )
}

/// Fully connected layer: `x [N,I] . w^T [I,O] (+ b [O]) -> [N,O]`.
pub fn linear(input: &Var, weight: &Var, bias: Option<&Var>) -> Result<Var> {
    let xs = input.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::Shape(format!(
            "linear expects x [N,I] and w [O,I]; got {xs:?} and {ws:?}"
        )));
    }
    let (n, i, o) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::Shape(format!(
                "linear bias must be [{o}], got {:?}",
                b.shape()
            )));
        }
    }

    let mut out = Tensor::zeros([n, o]);
    {
        let xd = input.value();
        let xd = xd.data();
        let wd = weight.value();
        let wd = wd.data();
        let od = out.data_mut();
        for ni in 0..n {
            for oi in 0..o {
                let mut acc = 0.0;
                for ii in 0..i {
                    acc += xd[ni * i + ii] * wd[oi * i + ii];
                }
                od[ni * o + oi] = acc;
            }
        }
        if let Some(b) = bias {
            let bd = b.value();
            let bd = bd.data();
            for ni in 0..n {
                for oi in 0..o {
                    od[ni * o + oi] += bd[oi];
                }
            }
        }
    }

    let w_for_x = weight.clone();
    let x_for_w = input.clone();
    let mut edges = vec![
        Edge {
            parent: input.clone(),
            backward: Box::new(move |up: &Tensor| {
                let wd = w_for_x.value();
                let wd = wd.data();
                let ud = up.data();
                let mut g = Tensor::zeros([n, i]);
                let gd = g.data_mut();
                for ni in 0..n {
                    for oi in 0..o {
                        let gv = ud[ni * o + oi];
                        for ii in 0..i {
                            gd[ni * i + ii] += gv * wd[oi * i + ii];
                        }
                    }
                }
                g
            }),
        },
        Edge {
            parent: weight.clone(),
            backward: Box::new(move |up: &Tensor| {
                let xd = x_for_w.value();
                let xd = xd.data();
                let ud = up.data();
                let mut g = Tensor::zeros([o, i]);
                let gd = g.data_mut();
                for ni in 0..n {
                    for oi in 0..o {
                        let gv = ud[ni * o + oi];
                        for ii in 0..i {
                            gd[oi * i + ii] += gv * xd[ni * i + ii];
                        }
                    }
                }
                g
            }),
        },
    ];
    if let Some(b) = bias {
        edges.push(Edge {
            parent: b.clone(),
            backward: Box::new(move |up: &Tensor| {
                let ud = up.data();
                let mut g = Tensor::zeros([o]);
                let gd = g.data_mut();
                for ni in 0..n {
                    for oi in 0..o {
                        gd[oi] += ud[ni * o + oi];
                    }
                }
                g
            }),
        });
    }
    Ok(Var::from_op(out, edges))
}

/// Mean softmax cross-entropy over the batch. `logits` is `[N,K]`, one label
/// per row.
pub fn softmax_cross_entropy(logits: &Var, labels: &[usize]) -> Result<Var> {
    let s = logits.shape().to_vec();
    if s.len() != 2 {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy expects [N,K] logits, got {s:?}"
        )));
    }
    let (n, k) = (s[0], s[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "expected {n} labels, got {}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }

    let mut probs = Tensor::zeros([n, k]);
    let mut loss = 0.0;
    {
        let ld = logits.value();
        let ld = ld.data();
        let pd = probs.data_mut();
        for (ni, &y) in labels.iter().enumerate() {
            let row = &ld[ni * k..(ni + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for (ki, &v) in row.iter().enumerate() {
                let e = math::exp(v - max);
                pd[ni * k + ki] = e;
                denom += e;
            }
            for ki in 0..k {
                pd[ni * k + ki] /= denom;
            }
            loss += max + math::ln(denom) - row[y];
        }
    }
    loss /= n as f64;

    let probs = Rc::new(probs);
    let labels: Rc<Vec<usize>> = Rc::new(labels.to_vec());
    Ok(Var::from_op(
        Tensor::scalar(loss),
        vec![Edge {
            parent: logits.clone(),
            backward: Box::new(move |up: &Tensor| {
                let scale = up.item() / n as f64;
                let mut g = Tensor::zeros([n, k]);
                let gd = g.data_mut();
                let pd = probs.data();
                for (ni, &y) in labels.iter().enumerate() {
                    for ki in 0..k {
                        let indicator = if ki == y { 1.0 } else { 0.0 };
                        gd[ni * k + ki] = scale * (pd[ni * k + ki] - indicator);
                    }
                }
                g
            }),
        }],
    ))
}

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `(N, H, W)` with trainable affine
/// parameters and running statistics for eval mode.
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Tensor,
    running_var: Tensor,
    channels: usize,
    eps: f64,
    momentum: f64,
    /// When set, `forward` is the identity; used to test the module
    /// equations in isolation.
    pub bypass: bool,
}

impl BatchNorm2d {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Var::param(Tensor::ones([channels])),
            beta: Var::param(Tensor::zeros([channels])),
            // Before any train step, eval mode normalizes with mean 0, var 1.
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
            channels,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            bypass: false,
        }
    }

    pub fn bypassed(channels: usize) -> Self {
        let mut bn = Self::new(channels);
        bn.bypass = true;
        bn
    }

    pub fn gamma(&self) -> &Var {
        &self.gamma
    }

    pub fn beta(&self) -> &Var {
        &self.beta
    }

    pub fn running_stats(&self) -> (&Tensor, &Tensor) {
        (&self.running_mean, &self.running_var)
    }

    pub fn forward(&mut self, input: &Var, mode: Mode) -> Result<Var> {
        if self.bypass {
            return Ok(input.clone());
        }
        if input.shape().len() != 4 || input.shape()[1] != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm over {} channels got input {:?}",
                self.channels,
                input.shape()
            )));
        }
        match mode {
            Mode::Train => {
                let (out, mean, var) = batchnorm2d_train(input, &self.gamma, &self.beta, self.eps)?;
                // Running stats follow the usual convention: momentum blends
                // the batch statistic in, and the running variance is the
                // unbiased estimate.
                let s = input.shape();
                let m = s[0] * s[2] * s[3];
                let unbias = m as f64 / (m as f64 - 1.0);
                for ci in 0..self.channels {
                    let rm = &mut self.running_mean.data_mut()[ci];
                    *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[ci];
                    let rv = &mut self.running_var.data_mut()[ci];
                    *rv = (1.0 - self.momentum) * *rv + self.momentum * var[ci] * unbias;
                }
                Ok(out)
            }
            Mode::Eval => batchnorm2d_eval(
                input,
                &self.gamma,
                &self.beta,
                &self.running_mean,
                &self.running_var,
                self.eps,
            ),
        }
    }
}

fn bn_check_shapes(input: &Var, gamma: &Var, beta: &Var) -> Result<(usize, usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "batchnorm expects an NCHW input, got {s:?}"
        )));
    }
    let c = s[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "batchnorm affine parameters must be [{c}], got {:?} and {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((s[0], c, s[2], s[3]))
}

/// `y = gamma * normalized + beta` with edges for all three inputs. The
/// gradient of `x` is supplied by the caller as an edge, since it differs
/// between train and eval mode.
fn bn_affine_output(
    normalized: &Rc<Tensor>,
    gamma: &Var,
    beta: &Var,
    input_edge: Edge,
    n: usize,
    c: usize,
    hw: usize,
) -> Var {
    let s = normalized.shape().to_vec();
    let mut out = Tensor::zeros(s);
    {
        let gd = gamma.value();
        let gd = gd.data();
        let bd = beta.value();
        let bd = bd.data();
        let nd = normalized.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for idx in base..base + hw {
                    od[idx] = gd[ci] * nd[idx] + bd[ci];
                }
            }
        }
    }
    let norm_for_gamma = Rc::clone(normalized);
    let edges = vec![
        input_edge,
        Edge {
            parent: gamma.clone(),
            backward: Box::new(move |up: &Tensor| {
                let ud = up.data();
                let nd = norm_for_gamma.data();
                let mut g = Tensor::zeros([c]);
                let gd = g.data_mut();
                for ni in 0..n {
                    for (ci, slot) in gd.iter_mut().enumerate() {
                        let base = (ni * c + ci) * hw;
                        for idx in base..base + hw {
                            *slot += ud[idx] * nd[idx];
                        }
                    }
                }
                g
            }),
        },
        Edge {
            parent: beta.clone(),
            backward: Box::new(move |up: &Tensor| {
                let ud = up.data();
                let mut g = Tensor::zeros([c]);
                let gd = g.data_mut();
                for ni in 0..n {
                    for (ci, slot) in gd.iter_mut().enumerate() {
                        let base = (ni * c + ci) * hw;
                        for &u in &ud[base..base + hw] {
                            *slot += u;
                        }
                    }
                }
                g
            }),
        },
    ];
    Var::from_op(out, edges)
}

/// Train-mode batch normalization as a pure graph operation. Also returns
/// the per-channel batch mean and biased variance so layer wrappers can
/// maintain running statistics.
pub fn batchnorm2d_train(
    input: &Var,
    gamma: &Var,
    beta: &Var,
    eps: f64,
) -> Result<(Var, Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = bn_check_shapes(input, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::Invalid(format!(
            "batchnorm train mode needs N*H*W >= 2, got {m}"
        )));
    }
    let s = input.shape().to_vec();
    let hw = h * w;

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    {
        let id = input.value();
        let id = id.data();
        for ci in 0..c {
            let mut acc = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for v in &id[base..base + hw] {
                    acc += v;
                }
            }
            mean[ci] = acc / m as f64;
            let mut acc2 = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for v in &id[base..base + hw] {
                    let d = v - mean[ci];
                    acc2 += d * d;
                }
            }
            var[ci] = acc2 / m as f64;
        }
    }

    let inv: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
    let mut normalized = Tensor::zeros(s.clone());
    {
        let id = input.value();
        let id = id.data();
        let nd = normalized.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for idx in base..base + hw {
                    nd[idx] = (id[idx] - mean[ci]) * inv[ci];
                }
            }
        }
    }
    let normalized = Rc::new(normalized);

    let gamma_for_x = gamma.clone();
    let norm_for_x = Rc::clone(&normalized);
    let inv_for_x = Rc::new(inv);
    let s_x = s.clone();
    let input_edge = Edge {
        parent: input.clone(),
        backward: Box::new(move |up: &Tensor| {
            // dx = gamma*inv/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
            let gd = gamma_for_x.value();
            let gd = gd.data();
            let ud = up.data();
            let nd = norm_for_x.data();
            let mut g = Tensor::zeros(s_x.clone());
            let out = g.data_mut();
            for ci in 0..c {
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for idx in base..base + hw {
                        sum_dy += ud[idx];
                        sum_dy_xhat += ud[idx] * nd[idx];
                    }
                }
                let coef = gd[ci] * inv_for_x[ci] / m as f64;
                for ni in 0..n {
                    let base = (ni * c + ci) * hw;
                    for idx in base..base + hw {
                        out[idx] = coef * (m as f64 * ud[idx] - sum_dy - nd[idx] * sum_dy_xhat);
                    }
                }
            }
            g
        }),
    };
    let out = bn_affine_output(&normalized, gamma, beta, input_edge, n, c, hw);
    Ok((out, mean, var))
}

/// Eval-mode batch normalization: an affine map using the given running
/// statistics.
pub fn batchnorm2d_eval(
    input: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Var> {
    let (n, c, h, w) = bn_check_shapes(input, gamma, beta)?;
    if running_mean.numel() != c || running_var.numel() != c {
        return Err(Error::Shape(format!(
            "running statistics must hold {c} channels"
        )));
    }
    let s = input.shape().to_vec();
    let hw = h * w;
    let inv: Vec<f64> = running_var
        .data()
        .iter()
        .map(|&v| 1.0 / math::sqrt(v + eps))
        .collect();
    let mut normalized = Tensor::zeros(s.clone());
    {
        let id = input.value();
        let id = id.data();
        let rm = running_mean.data();
        let nd = normalized.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for idx in base..base + hw {
                    nd[idx] = (id[idx] - rm[ci]) * inv[ci];
                }
            }
        }
    }
    let normalized = Rc::new(normalized);
    let gamma_for_x = gamma.clone();
    let inv_for_x = Rc::new(inv);
    let s_x = s.clone();
    let input_edge = Edge {
        parent: input.clone(),
        backward: Box::new(move |up: &Tensor| {
            let gd = gamma_for_x.value();
            let gd = gd.data();
            let ud = up.data();
            let mut g = Tensor::zeros(s_x.clone());
            let out = g.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * hw;
                    let coef = gd[ci] * inv_for_x[ci];
                    for idx in base..base + hw {
                        out[idx] = ud[idx] * coef;
                    }
                }
            }
            g
        }),
    };
    Ok(bn_affine_output(
        &normalized,
        gamma,
        beta,
        input_edge,
        n,
        c,
        hw,
    ))
}

/// Runs reverse-mode differentiation from a scalar loss. Every node with
/// `requires_grad` reachable from `loss` ends up holding `d loss / d node`;
/// repeated calls keep accumulating.
pub fn backward(loss: &Var) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss {
            numel: loss.numel(),
        });
    }
    if !loss.requires_grad() {
        return Ok(());
    }
    let order = topo_order(loss);
    loss.accumulate_grad(Tensor::ones(loss.shape().to_vec()));
    for node in order.iter().rev() {
        let grad = node.0.grad.borrow().clone();
        let Some(grad) = grad else { continue };
        for edge in &node.0.edges {
            let contribution = (edge.backward)(&grad);
            edge.parent.accumulate_grad(contribution);
        }
    }
    Ok(())
}

/// Post-order over the DAG: every node appears after all of its parents.
fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = BTreeSet::new();
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for edge in &node.0.edges {
            stack.push((edge.parent.clone(), false));
        }
    }
    order
}
