//! The oriented-dashes toy dataset: 48x48 binary images containing
//! horizontal and vertical dashes (one pixel thick, five pixels long),
//! labeled by whichever orientation is more frequent, plus the closed-form
//! classifier that solves the task exactly.
//!
//! Dashes are placed so that their bounding boxes, dilated by one pixel, are
//! pairwise disjoint and keep one pixel of clearance to the border. That is
//! stricter than anything the task demands, but it makes the classifier
//! response of each dash land on disjoint pixels, so the image score is
//! exactly `24 * (n_horizontal - n_vertical)` and the oracle accuracy is
//! exactly one.

use crate::error::{Error, Result};
use crate::filters::{toy_h, toy_v};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const IMAGE_SIZE: usize = 48;
pub const DASH_LENGTH: usize = 5;
pub const DEFAULT_COUNT: usize = 1024;

/// Per-dash score contribution of the closed-form classifier.
pub const SCORE_PER_DASH: f64 = 24.0;

const MIN_DASHES: u64 = 2;
const MAX_DASHES: u64 = 12;
const PLACEMENT_ATTEMPTS: usize = 1000;

/// Binary class of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Vertical,
    Horizontal,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Vertical => 0,
            Label::Horizontal => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Label::Vertical),
            1 => Ok(Label::Horizontal),
            other => Err(Error::Invalid(format!("bad label index {other}"))),
        }
    }
}

/// One 48x48 binary image with its dash counts and label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DashImage {
    pixels: Vec<u8>,
    n_horizontal: u8,
    n_vertical: u8,
    label: Label,
}

impl DashImage {
    /// Reassembles an image (e.g. from a file), checking the invariants:
    /// binary pixels, unequal dash counts, label matching the majority
    /// orientation.
    pub fn from_parts(
        pixels: Vec<u8>,
        n_horizontal: u8,
        n_vertical: u8,
        label: Label,
    ) -> Result<Self> {
        if pixels.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(Error::Shape(format!(
                "dash image needs {} pixels, got {}",
                IMAGE_SIZE * IMAGE_SIZE,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::Invalid("dash image pixels must be 0 or 1".into()));
        }
        if n_horizontal == n_vertical {
            return Err(Error::Invalid(
                "equal horizontal and vertical dash counts do not occur".into(),
            ));
        }
        let expected = if n_horizontal > n_vertical {
            Label::Horizontal
        } else {
            Label::Vertical
        };
        if label != expected {
            return Err(Error::Invalid(format!(
                "label {label:?} inconsistent with counts {n_horizontal}h/{n_vertical}v"
            )));
        }
        Ok(Self {
            pixels,
            n_horizontal,
            n_vertical,
            label,
        })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn n_horizontal(&self) -> u8 {
        self.n_horizontal
    }

    pub fn n_vertical(&self) -> u8 {
        self.n_vertical
    }

    pub fn label(&self) -> Label {
        self.label
    }

    /// The image as a `[1, 48, 48]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, IMAGE_SIZE, IMAGE_SIZE],
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
    }
}

/// A labeled set of dash images, reproducible from its seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DashDataset {
    images: Vec<DashImage>,
    seed: u64,
}

/// Inclusive pixel rectangle used for overlap checks.
#[derive(Clone, Copy)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn intersects(&self, other: &Rect) -> bool {
        self.r0 <= other.r1 && other.r0 <= self.r1 && self.c0 <= other.c1 && other.c0 <= self.c1
    }
}

impl DashDataset {
    /// Generates `count` images deterministically from `seed`.
    ///
    /// Each image draws from its own sub-stream (`seed ^ image_index`), so
    /// the result does not depend on generation order. Target labels
    /// alternate across the dataset, keeping the classes balanced.
    pub fn generate(seed: u64, count: usize) -> Self {
        assert!(count >= 1, "dataset needs at least one image");
        let mut images = Vec::with_capacity(count);
        for i in 0..count {
            let target = if i % 2 == 0 {
                Label::Horizontal
            } else {
                Label::Vertical
            };
            let mut rng = Rng::substream(seed, i as u64);
            images.push(generate_image(&mut rng, target));
        }
        Self { images, seed }
    }

    pub fn from_images(images: Vec<DashImage>, seed: u64) -> Self {
        Self { images, seed }
    }

    pub fn images(&self) -> &[DashImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Assembles the selected images into a `[N, 1, 48, 48]` batch tensor
    /// and a class-index vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = indices.len();
        let hw = IMAGE_SIZE * IMAGE_SIZE;
        let mut data = Vec::with_capacity(n * hw);
        let mut labels = Vec::with_capacity(n);
        for &i in indices {
            let img = &self.images[i];
            data.extend(img.pixels().iter().map(|&p| p as f64));
            labels.push(img.label().class_index());
        }
        (Tensor::new([n, 1, IMAGE_SIZE, IMAGE_SIZE], data), labels)
    }
}

fn generate_image(rng: &mut Rng, target: Label) -> DashImage {
    let size = IMAGE_SIZE;
    let mut restarts = 0usize;
    'image: loop {
        let total = rng.range_inclusive(MIN_DASHES, MAX_DASHES);
        // Split the total uniformly over orientations, redrawing until the
        // counts differ and the majority matches the target label.
        let n_horizontal = loop {
            let nh = rng.range_inclusive(0, total);
            let nv = total - nh;
            if nh == nv {
                continue;
            }
            let majority = if nh > nv {
                Label::Horizontal
            } else {
                Label::Vertical
            };
            if majority == target {
                break nh;
            }
        };
        let n_vertical = total - n_horizontal;

        let mut pixels = vec![0u8; size * size];
        let mut taken: Vec<Rect> = Vec::with_capacity(total as usize);
        for d in 0..total {
            let horizontal = d < n_horizontal;
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                // Anchor ranges keep the dash plus a one-pixel margin inside
                // the image.
                let (r, c, dilated) = if horizontal {
                    let r = rng.range_inclusive(1, (size - 2) as u64) as usize;
                    let c = rng.range_inclusive(1, (size - 1 - DASH_LENGTH) as u64) as usize;
                    (
                        r,
                        c,
                        Rect {
                            r0: r - 1,
                            c0: c - 1,
                            r1: r + 1,
                            c1: c + DASH_LENGTH,
                        },
                    )
                } else {
                    let r = rng.range_inclusive(1, (size - 1 - DASH_LENGTH) as u64) as usize;
                    let c = rng.range_inclusive(1, (size - 2) as u64) as usize;
                    (
                        r,
                        c,
                        Rect {
                            r0: r - 1,
                            c0: c - 1,
                            r1: r + DASH_LENGTH,
                            c1: c + 1,
                        },
                    )
                };
                if taken.iter().any(|t| t.intersects(&dilated)) {
                    continue;
                }
                if horizontal {
                    for j in 0..DASH_LENGTH {
                        pixels[r * size + c + j] = 1;
                    }
                } else {
                    for j in 0..DASH_LENGTH {
                        pixels[(r + j) * size + c] = 1;
                    }
                }
                taken.push(dilated);
                placed = true;
                break;
            }
            if !placed {
                restarts += 1;
                assert!(
                    restarts < 10_000,
                    "dash placement should not fail persistently"
                );
                continue 'image;
            }
        }

        let label = if n_horizontal > n_vertical {
            Label::Horizontal
        } else {
            Label::Vertical
        };
        return DashImage {
            pixels,
            n_horizontal: n_horizontal as u8,
            n_vertical: n_vertical as u8,
            label,
        };
    }
}

/// Brute-force evaluation of the closed-form classifier score
/// `sum(ReLU(H (x) x) - ReLU(V (x) x))` with zero padding 1, written with
/// plain loops so it stays independent of the autodiff stack.
pub fn oracle_score(pixels: &[u8]) -> f64 {
    let size = IMAGE_SIZE;
    assert_eq!(pixels.len(), size * size);
    let h = toy_h();
    let v = toy_v();
    let mut score = 0.0;
    for m in 0..size {
        for l in 0..size {
            let mut h_resp = 0.0;
            let mut v_resp = 0.0;
            for i in 0..3 {
                let y = (m + i).wrapping_sub(1);
                if y >= size {
                    continue;
                }
                for j in 0..3 {
                    let x = (l + j).wrapping_sub(1);
                    if x >= size {
                        continue;
                    }
                    let p = pixels[y * size + x] as f64;
                    h_resp += h[i * 3 + j] * p;
                    v_resp += v[i * 3 + j] * p;
                }
            }
            score += h_resp.max(0.0) - v_resp.max(0.0);
        }
    }
    score
}

/// Applies the closed-form classifier: non-negative score means horizontal.
pub fn oracle_classify(image: &DashImage) -> (Label, f64) {
    let score = oracle_score(image.pixels());
    let label = if score >= 0.0 {
        Label::Horizontal
    } else {
        Label::Vertical
    };
    (label, score)
}

/// Fraction of images whose stored label the classifier reproduces.
pub fn oracle_accuracy(dataset: &DashDataset) -> f64 {
    if dataset.is_empty() {
        return 1.0;
    }
    let correct = dataset
        .images()
        .iter()
        .filter(|img| oracle_classify(img).0 == img.label())
        .count();
    correct as f64 / dataset.len() as f64
}
