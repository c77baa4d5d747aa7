//! The ODCD binary dataset format.
//!
//! Layout (all integers little-endian):
//!   magic  4 bytes  "ODCD"
//!   u32    version, currently 1
//!   u32    image count
//!   u32    height (48)
//!   u32    width  (48)
//! then per image:
//!   u8     label: 0 = vertical, 1 = horizontal
//!   u8     n_horizontal
//!   u8     n_vertical
//!   2304   bytes of u8 pixels, row-major
//!
//! A sidecar text manifest at `<path>.manifest` records the seed and the
//! generator version.

use pfm_core::dashes::{DashDataset, DashImage, Label, IMAGE_SIZE};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"ODCD";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum OdcdError {
    Io(io::Error),
    Format(String),
}

impl std::fmt::Display for OdcdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OdcdError::Io(e) => write!(f, "i/o error: {e}"),
            OdcdError::Format(msg) => write!(f, "bad dataset file: {msg}"),
        }
    }
}

impl std::error::Error for OdcdError {}

impl From<io::Error> for OdcdError {
    fn from(e: io::Error) -> Self {
        OdcdError::Io(e)
    }
}

impl From<pfm_core::Error> for OdcdError {
    fn from(e: pfm_core::Error) -> Self {
        OdcdError::Format(e.to_string())
    }
}

pub fn manifest_path(dataset_path: &Path) -> PathBuf {
    let mut name = dataset_path.as_os_str().to_os_string();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Serializes a dataset to its exact byte layout.
pub fn encode(dataset: &DashDataset) -> Vec<u8> {
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let mut out = Vec::with_capacity(20 + dataset.len() * (3 + hw));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    for img in dataset.images() {
        out.push(img.label().class_index() as u8);
        out.push(img.n_horizontal());
        out.push(img.n_vertical());
        out.extend_from_slice(img.pixels());
    }
    out
}

/// Parses a dataset, validating the header and every image invariant.
pub fn decode(bytes: &[u8], seed: u64) -> Result<DashDataset, OdcdError> {
    let mut cursor = io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cursor.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(OdcdError::Format("wrong magic bytes".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |cursor: &mut io::Cursor<&[u8]>| -> Result<u32, OdcdError> {
        cursor.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut cursor)?;
    if version != VERSION {
        return Err(OdcdError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut cursor)? as usize;
    let height = read_u32(&mut cursor)? as usize;
    let width = read_u32(&mut cursor)? as usize;
    if height != IMAGE_SIZE || width != IMAGE_SIZE {
        return Err(OdcdError::Format(format!(
            "expected {IMAGE_SIZE}x{IMAGE_SIZE} images, file says {height}x{width}"
        )));
    }
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    // Validate the declared count against the byte length before trusting
    // it for allocation.
    let expected_len = count
        .checked_mul(3 + hw)
        .and_then(|v| v.checked_add(20))
        .ok_or_else(|| OdcdError::Format(format!("image count {count} overflows")))?;
    if bytes.len() != expected_len {
        return Err(OdcdError::Format(format!(
            "file is {} bytes, {count} images imply {expected_len}",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let mut head = [0u8; 3];
        cursor
            .read_exact(&mut head)
            .map_err(|_| OdcdError::Format(format!("truncated at image {i}")))?;
        let label = Label::from_class_index(head[0] as usize)
            .map_err(|e| OdcdError::Format(format!("image {i}: {e}")))?;
        let mut pixels = vec![0u8; hw];
        cursor
            .read_exact(&mut pixels)
            .map_err(|_| OdcdError::Format(format!("truncated pixels at image {i}")))?;
        images.push(
            DashImage::from_parts(pixels, head[1], head[2], label)
                .map_err(|e| OdcdError::Format(format!("image {i}: {e}")))?,
        );
    }
    let mut rest = Vec::new();
    cursor.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(OdcdError::Format(format!(
            "{} trailing bytes after the last image",
            rest.len()
        )));
    }
    Ok(DashDataset::from_images(images, seed))
}

/// Writes the dataset plus its sidecar manifest.
pub fn write_files(dataset: &DashDataset, path: &Path) -> Result<(), OdcdError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(dataset))?;
    let manifest = format!(
        "seed={}\ncount={}\ngenerator=pfm-lab {}\n",
        dataset.seed(),
        dataset.len(),
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Reads a dataset file; the seed is recovered from the manifest when
/// present (purely informational).
pub fn read_file(path: &Path) -> Result<DashDataset, OdcdError> {
    let bytes = fs::read(path)?;
    let seed = fs::read_to_string(manifest_path(path))
        .ok()
        .and_then(|text| {
            text.lines()
                .find_map(|line| line.strip_prefix("seed=").and_then(|v| v.parse().ok()))
        })
        .unwrap_or(0);
    decode(&bytes, seed)
}
