//! IDX image/label files (MNIST layout).
//!
//! Images: magic `0x00000803`, count, rows, cols, then `u8` pixels.
//! Labels: magic `0x00000801`, count, then `u8` labels. All headers are
//! big-endian. Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::fedsim::Sample;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("file truncated: header says {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Returns `(rows, cols, pixels per image scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>), IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(IdxError::Truncated {
            expected: count * size,
            found: payload.len(),
        });
    }
    let images = payload[..count * size]
        .chunks_exact(size.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(IdxError::Truncated {
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload[..count].to_vec())
}

pub fn load(images: &Path, labels: &Path) -> Result<Vec<Sample>, IdxError> {
    let (_, _, pixels) = parse_images(&fs::read(images)?)?;
    let labels = parse_labels(&fs::read(labels)?)?;
    if pixels.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: pixels.len(),
            labels: labels.len(),
        });
    }
    Ok(pixels
        .into_iter()
        .zip(labels)
        .map(|(features, label)| Sample {
            features,
            label: label as usize,
        })
        .collect())
}
