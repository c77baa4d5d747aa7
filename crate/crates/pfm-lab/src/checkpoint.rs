//! Model checkpoints: a text header naming every parameter and its shape,
//! then the raw values concatenated as little-endian f64 in header order.
//!
//! ```text
//! PFMCKPT 1
//! param pfm.mix 1x2x1x1
//! param fc.weight 2x16
//! end
//! <binary f64 data>
//! ```

use pfm_core::models::Model;
use pfm_core::tensor::Tensor;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    Format(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "i/o error: {e}"),
            CheckpointError::Format(msg) => write!(f, "bad checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut header = String::from("PFMCKPT 1\n");
    let mut blob: Vec<u8> = Vec::new();
    for p in model.params() {
        let dims: Vec<String> = p.var.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("param {} {}\n", p.name, dims.join("x")));
        for &v in p.var.value().data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&blob);
    out
}

/// Loads parameter values into a model with a matching registry. Every
/// header entry must match the model's parameter of the same name in shape;
/// parameters missing from the file are an error, as are extras.
pub fn decode_into(bytes: &[u8], model: &Model) -> Result<(), CheckpointError> {
    let header_end = find_header_end(bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| CheckpointError::Format("header is not utf-8".into()))?;
    let mut lines = header.lines();
    match lines.next() {
        Some("PFMCKPT 1") => {}
        other => {
            return Err(CheckpointError::Format(format!(
                "unexpected first line {other:?}"
            )))
        }
    }

    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    for line in lines {
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("param ")
            .ok_or_else(|| CheckpointError::Format(format!("unexpected line '{line}'")))?;
        let (name, dims) = rest
            .rsplit_once(' ')
            .ok_or_else(|| CheckpointError::Format(format!("malformed entry '{line}'")))?;
        let shape: Result<Vec<usize>, _> = dims.split('x').map(str::parse).collect();
        let shape = shape.map_err(|_| CheckpointError::Format(format!("bad shape in '{line}'")))?;
        if entries.iter().any(|(n, _)| n == name) {
            return Err(CheckpointError::Format(format!(
                "parameter '{name}' listed twice"
            )));
        }
        entries.push((name.to_string(), shape));
    }

    if entries.len() != model.params().len() {
        return Err(CheckpointError::Format(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            model.params().len()
        )));
    }

    let mut offset = header_end;
    for (name, shape) in &entries {
        let param = model
            .param(name)
            .ok_or_else(|| CheckpointError::Format(format!("model has no parameter '{name}'")))?;
        if param.var.shape() != shape.as_slice() {
            return Err(CheckpointError::Format(format!(
                "parameter '{name}' has shape {:?} in the model but {shape:?} in the file",
                param.var.shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let bytes_needed = numel * 8;
        if offset + bytes_needed > bytes.len() {
            return Err(CheckpointError::Format("binary section truncated".into()));
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let start = offset + i * 8;
            data.push(f64::from_le_bytes(
                bytes[start..start + 8].try_into().unwrap(),
            ));
        }
        offset += bytes_needed;
        param.var.set_value(Tensor::new(shape.clone(), data));
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes",
            bytes.len() - offset
        )));
    }
    Ok(())
}

fn find_header_end(bytes: &[u8]) -> Result<usize, CheckpointError> {
    // The header ends after the "end\n" line.
    let needle = b"\nend\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|pos| pos + needle.len())
        .ok_or_else(|| CheckpointError::Format("missing end marker".into()))
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(model))?;
    Ok(())
}

pub fn load(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let bytes = fs::read(path)?;
    decode_into(&bytes, model)
}
