//! Pre-defined 3x3 filter banks: edge/line detectors, random filters, and
//! translating (delta) filters, plus the subset selections used by the
//! experiments.
//!
//! The edge/line bank layout is:
//!   1-4   first-derivative (edge) kernels at 0deg/45deg/90deg/135deg,
//!         Sobel family divided by its L1 norm (8);
//!   5-8   second-derivative (line) kernels at the same orientations,
//!         divided by their L1 norm (12) -- kernel 5 is the horizontal-line
//!         kernel H and kernel 7 the vertical-line kernel V;
//!   9     the uniform low-pass kernel (every element 1/9);
//!   10-18 the elementwise negatives of 1-9 (only in the 18-kernel bank).
//!
//! Kernels 1-8 and their negatives are mean-free with absolute elements
//! summing to one. Kernel 9 is deliberately not mean-free: nine mean-free
//! kernels could never span all nine dimensions.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

/// Pivot tolerance for numeric rank decisions on kernel matrices.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// What a kernel is, structurally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelTag {
    Edge,
    Line,
    Lowpass,
    Random,
    Translating,
    Derived,
}

impl fmt::Display for KernelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelTag::Edge => "edge",
            KernelTag::Line => "line",
            KernelTag::Lowpass => "lowpass",
            KernelTag::Random => "random",
            KernelTag::Translating => "translating",
            KernelTag::Derived => "derived",
        };
        f.write_str(s)
    }
}

/// One pre-defined 3x3 filter with its bank position (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel3x3 {
    values: [f64; 9],
    tag: KernelTag,
    index: usize,
}

impl Kernel3x3 {
    /// Builds a kernel, enforcing the structural invariants of its tag:
    /// edge/line kernels must be mean-free with unit absolute sum,
    /// translating kernels must be a single one among zeros.
    pub fn new(values: [f64; 9], tag: KernelTag, index: usize) -> Result<Self> {
        match tag {
            KernelTag::Edge | KernelTag::Line => {
                let sum: f64 = values.iter().sum();
                let abs_sum: f64 = values.iter().map(|v| v.abs()).sum();
                if sum.abs() > 1e-12 {
                    return Err(Error::Invalid(format!(
                        "{tag} kernel {index} is not mean-free (sum {sum:e})"
                    )));
                }
                if (abs_sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Invalid(format!(
                        "{tag} kernel {index} absolute sum is {abs_sum}, expected 1"
                    )));
                }
            }
            KernelTag::Translating => {
                let ones = values.iter().filter(|&&v| v == 1.0).count();
                let zeros = values.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || zeros != 8 {
                    return Err(Error::Invalid(format!(
                        "translating kernel {index} must have exactly one 1 and eight 0s"
                    )));
                }
            }
            KernelTag::Lowpass | KernelTag::Random | KernelTag::Derived => {}
        }
        Ok(Self { values, tag, index })
    }

    pub fn values(&self) -> &[f64; 9] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * 3 + col]
    }

    pub fn tag(&self) -> KernelTag {
        self.tag
    }

    /// 1-based position in the bank that defined this kernel.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn negated(&self, index: usize) -> Self {
        let mut values = self.values;
        for v in values.iter_mut() {
            *v = -*v;
        }
        Self {
            values,
            tag: self.tag,
            index,
        }
    }
}

/// Which construction produced a bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BankKind {
    EdgeLine,
    Random,
    Translating,
    Custom,
}

/// An ordered, immutable list of 3x3 kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kernels: Vec<Kernel3x3>,
    kind: BankKind,
}

impl FilterBank {
    fn new_unchecked(kernels: Vec<Kernel3x3>, kind: BankKind) -> Self {
        Self { kernels, kind }
    }

    /// Builds a custom bank from arbitrary kernels.
    pub fn custom(kernels: Vec<Kernel3x3>) -> Self {
        Self::new_unchecked(kernels, BankKind::Custom)
    }

    pub fn kernels(&self) -> &[Kernel3x3] {
        &self.kernels
    }

    /// 1-based access by position.
    pub fn kernel(&self, position: usize) -> &Kernel3x3 {
        &self.kernels[position - 1]
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    /// Kernels flattened into a row-major `len x 9` matrix.
    pub fn as_matrix(&self) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.len() * 9);
        for k in &self.kernels {
            m.extend_from_slice(k.values());
        }
        m
    }
}

fn scaled(values: [i32; 9], divisor: f64, tag: KernelTag, index: usize) -> Kernel3x3 {
    let mut v = [0.0; 9];
    for (slot, &raw) in v.iter_mut().zip(values.iter()) {
        *slot = raw as f64 / divisor;
    }
    Kernel3x3::new(v, tag, index).expect("built-in kernel must satisfy its tag invariants")
}

/// The nine positive edge/line kernels in bank order.
fn positive_edge_line_kernels() -> Vec<Kernel3x3> {
    alloc::vec![
        // Edges (first derivative), Sobel / 8.
        scaled([-1, 0, 1, -2, 0, 2, -1, 0, 1], 8.0, KernelTag::Edge, 1),
        scaled([0, 1, 2, -1, 0, 1, -2, -1, 0], 8.0, KernelTag::Edge, 2),
        scaled([-1, -2, -1, 0, 0, 0, 1, 2, 1], 8.0, KernelTag::Edge, 3),
        scaled([-2, -1, 0, -1, 0, 1, 0, 1, 2], 8.0, KernelTag::Edge, 4),
        // Lines (second derivative) / 12; kernel 5 is H, kernel 7 is V.
        scaled([-1, -1, -1, 2, 2, 2, -1, -1, -1], 12.0, KernelTag::Line, 5),
        scaled([-1, -1, 2, -1, 2, -1, 2, -1, -1], 12.0, KernelTag::Line, 6),
        scaled([-1, 2, -1, -1, 2, -1, -1, 2, -1], 12.0, KernelTag::Line, 7),
        scaled([2, -1, -1, -1, 2, -1, -1, -1, 2], 12.0, KernelTag::Line, 8),
        // Uniform low-pass.
        scaled([1, 1, 1, 1, 1, 1, 1, 1, 1], 9.0, KernelTag::Lowpass, 9),
    ]
}

/// The edge/line bank with 9 or 18 kernels, laid out as described in the
/// module docs.
pub fn make_edge_line_bank(count: usize) -> Result<FilterBank> {
    if count != 9 && count != 18 {
        return Err(Error::Invalid(format!(
            "edge/line bank supports 9 or 18 kernels, not {count}"
        )));
    }
    let mut kernels = positive_edge_line_kernels();
    if count == 18 {
        for i in 0..9 {
            let neg = kernels[i].negated(10 + i);
            kernels.push(neg);
        }
    }
    Ok(FilterBank::new_unchecked(kernels, BankKind::EdgeLine))
}

/// A bank of kernels with elements drawn i.i.d. uniform from [-1, 1].
///
/// Networks that share filters should construct one bank and share it; the
/// same seed always reproduces the same bank bit for bit.
pub fn make_random_bank(count: usize, seed: u64) -> FilterBank {
    assert!(count >= 1, "random bank needs at least one kernel");
    let mut rng = Rng::new(seed);
    let mut kernels = Vec::with_capacity(count);
    for index in 1..=count {
        let mut values = [0.0; 9];
        for v in values.iter_mut() {
            *v = rng.uniform_signed();
        }
        kernels.push(
            Kernel3x3::new(values, KernelTag::Random, index)
                .expect("random kernels have no invariants"),
        );
    }
    FilterBank::new_unchecked(kernels, BankKind::Random)
}

/// The nine delta kernels; kernel `l` has its 1 at row `(l-1)/3`,
/// column `(l-1)%3`, so depthwise convolution with padding 1 shifts the
/// image by one of the nine offsets.
pub fn make_translating_bank() -> FilterBank {
    let mut kernels = Vec::with_capacity(9);
    for index in 1..=9 {
        let mut values = [0.0; 9];
        values[index - 1] = 1.0;
        kernels.push(
            Kernel3x3::new(values, KernelTag::Translating, index)
                .expect("delta kernel satisfies the translating invariant"),
        );
    }
    FilterBank::new_unchecked(kernels, BankKind::Translating)
}

/// Named kernel subsets of the 18-kernel edge/line bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsetSpec {
    Even2,
    Even4,
    Even8,
    Uneven2,
    Uneven4,
    Uneven8,
    Eu9,
    Eu13,
    Eu18,
    Rank4,
}

impl SubsetSpec {
    pub const ALL: [SubsetSpec; 10] = [
        SubsetSpec::Even2,
        SubsetSpec::Even4,
        SubsetSpec::Even8,
        SubsetSpec::Uneven2,
        SubsetSpec::Uneven4,
        SubsetSpec::Uneven8,
        SubsetSpec::Eu9,
        SubsetSpec::Eu13,
        SubsetSpec::Eu18,
        SubsetSpec::Rank4,
    ];

    /// 1-based positions selected from the parent bank.
    pub fn positions(&self) -> Vec<usize> {
        match self {
            SubsetSpec::Even2 => alloc::vec![5, 7],
            SubsetSpec::Even4 => alloc::vec![5, 7, 14, 16],
            SubsetSpec::Even8 => alloc::vec![5, 6, 7, 8, 14, 15, 16, 17],
            SubsetSpec::Uneven2 => alloc::vec![1, 3],
            SubsetSpec::Uneven4 => alloc::vec![1, 3, 10, 12],
            SubsetSpec::Uneven8 => alloc::vec![1, 2, 3, 4, 10, 11, 12, 13],
            SubsetSpec::Eu9 => (1..=9).collect(),
            SubsetSpec::Eu13 => {
                let mut v: Vec<usize> = (1..=9).collect();
                v.extend_from_slice(&[11, 13, 15, 17]);
                v
            }
            SubsetSpec::Eu18 => (1..=18).collect(),
            SubsetSpec::Rank4 => alloc::vec![1, 3, 5, 7, 10, 12, 14, 16],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SubsetSpec::Even2 => "even2",
            SubsetSpec::Even4 => "even4",
            SubsetSpec::Even8 => "even8",
            SubsetSpec::Uneven2 => "uneven2",
            SubsetSpec::Uneven4 => "uneven4",
            SubsetSpec::Uneven8 => "uneven8",
            SubsetSpec::Eu9 => "eu9",
            SubsetSpec::Eu13 => "eu13",
            SubsetSpec::Eu18 => "eu18",
            SubsetSpec::Rank4 => "rank4",
        }
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for SubsetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubsetSpec::ALL
            .iter()
            .find(|spec| spec.name() == s)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown filter subset '{s}'")))
    }
}

/// Picks the named subset out of `bank`. All selected kernels are the parent
/// entries themselves; only the `rank4` subset appends one derived kernel,
/// the sum of kernels 14 and 16.
pub fn select_subset(bank: &FilterBank, spec: SubsetSpec) -> Result<FilterBank> {
    let positions = spec.positions();
    let max = positions.iter().copied().max().unwrap_or(0);
    if max > bank.len() {
        return Err(Error::Invalid(format!(
            "subset {spec} needs kernel {max}, bank has only {}",
            bank.len()
        )));
    }
    let mut kernels: Vec<Kernel3x3> = positions.iter().map(|&p| bank.kernel(p).clone()).collect();
    let kind = match spec {
        SubsetSpec::Rank4 => {
            let a = bank.kernel(14).values();
            let b = bank.kernel(16).values();
            let mut values = [0.0; 9];
            for i in 0..9 {
                values[i] = a[i] + b[i];
            }
            kernels.push(Kernel3x3::new(values, KernelTag::Derived, bank.len() + 1)?);
            BankKind::Custom
        }
        _ => bank.kind(),
    };
    Ok(FilterBank::new_unchecked(kernels, kind))
}

/// How many of the nine possible dimensions the bank spans: the numeric
/// rank of the kernels viewed as 9-vectors.
pub fn spanned_dimensions(bank: &FilterBank) -> usize {
    let matrix = bank.as_matrix();
    linalg::matrix_rank(&matrix, bank.len(), 9, RANK_TOLERANCE)
}

/// The unnormalized horizontal-line kernel of the toy problem:
/// a center row of 2s between rows of -1s.
pub fn toy_h() -> [f64; 9] {
    [-1.0, -1.0, -1.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0]
}

/// The unnormalized vertical-line kernel: the transpose of [`toy_h`].
pub fn toy_v() -> [f64; 9] {
    [-1.0, 2.0, -1.0, -1.0, 2.0, -1.0, -1.0, 2.0, -1.0]
}

/// Bank {H, V} for the two-parameter toy module.
pub fn make_toy_hv_bank() -> FilterBank {
    FilterBank::custom(alloc::vec![
        Kernel3x3::new(toy_h(), KernelTag::Derived, 1).unwrap(),
        Kernel3x3::new(toy_v(), KernelTag::Derived, 2).unwrap(),
    ])
}

/// Bank {H, V, identity} shared by the two stacked no-ReLU toy modules.
pub fn make_toy_hvi_bank() -> FilterBank {
    let mut identity = [0.0; 9];
    identity[4] = 1.0;
    FilterBank::custom(alloc::vec![
        Kernel3x3::new(toy_h(), KernelTag::Derived, 1).unwrap(),
        Kernel3x3::new(toy_v(), KernelTag::Derived, 2).unwrap(),
        Kernel3x3::new(identity, KernelTag::Translating, 3).unwrap(),
    ])
}

/// Parses a bank selector as used by the CLI: `edge_line9`, `edge_line18`,
/// `random:<seed>`, `translating`, or `subset:<name>`.
pub fn parse_bank_selector(s: &str) -> Result<FilterBank> {
    match s {
        "edge_line9" => make_edge_line_bank(9),
        "edge_line18" => make_edge_line_bank(18),
        "translating" => Ok(make_translating_bank()),
        _ => {
            if let Some(seed) = s.strip_prefix("random:") {
                let seed: u64 = seed
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad random bank seed '{seed}'")))?;
                Ok(make_random_bank(9, seed))
            } else if let Some(name) = s.strip_prefix("subset:") {
                let spec: SubsetSpec = name.parse()?;
                let parent = make_edge_line_bank(18)?;
                select_subset(&parent, spec)
            } else {
                Err(Error::Invalid(format!("unknown bank selector '{s}'")))
            }
        }
    }
}
