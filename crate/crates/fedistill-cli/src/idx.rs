//! IDX image/label file format (big-endian), the distribution format of
//! the classic handwritten-digit corpora.
//!
//! Images: magic `0x00000803`, then u32 count, u32 rows, u32 cols, then
//! one unsigned byte per pixel, row-major. Labels: magic `0x00000801`,
//! then u32 count, then one unsigned byte per label. Pixels are scaled
//! to `[0,1]` at load time (configurable).

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use fedistill_core::data::Dataset;
use fedistill_core::Tensor;

use crate::error::{CliError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed image payload.
#[derive(Debug)]
pub struct IdxImages {
    pub rows: u32,
    pub cols: u32,
    pub pixels: Vec<u8>,
}

fn truncated(what: &str, offset: usize) -> CliError {
    CliError::data(format!("{what}: file truncated at byte offset {offset}"))
}

/// Parses an IDX image payload from raw bytes.
pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx images", 0))?;
    if magic != IMAGES_MAGIC {
        return Err(CliError::data(format!(
            "idx images: bad magic {magic:#010x} at byte offset 0, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx images", 4))?;
    let rows = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx images", 8))?;
    let cols = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx images", 12))?;
    let expected = count as usize * rows as usize * cols as usize;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() < expected {
        return Err(truncated("idx images", 16 + payload.len()));
    }
    if payload.len() > expected {
        return Err(CliError::data(format!(
            "idx images: {} trailing bytes after byte offset {}",
            payload.len() - expected,
            16 + expected
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

/// Parses an IDX label payload from raw bytes.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx labels", 0))?;
    if magic != LABELS_MAGIC {
        return Err(CliError::data(format!(
            "idx labels: bad magic {magic:#010x} at byte offset 0, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("idx labels", 4))? as usize;
    let payload = &bytes[8.min(bytes.len())..];
    if payload.len() < count {
        return Err(truncated("idx labels", 8 + payload.len()));
    }
    if payload.len() > count {
        return Err(CliError::data(format!(
            "idx labels: {} trailing bytes after byte offset {}",
            payload.len() - count,
            8 + count
        )));
    }
    Ok(payload.to_vec())
}

/// Loads an IDX image/label pair into a [`Dataset`]. Pixel bytes are
/// scaled by 1/255 when `normalize` is set; `num_classes` defaults to
/// `max(label) + 1`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    num_classes: Option<usize>,
    normalize: bool,
) -> Result<Dataset> {
    let image_bytes =
        fs::read(images_path).map_err(|e| CliError::io(images_path.display().to_string(), e))?;
    let label_bytes =
        fs::read(labels_path).map_err(|e| CliError::io(labels_path.display().to_string(), e))?;
    let images = parse_images(&image_bytes)?;
    let labels = parse_labels(&label_bytes)?;

    let d = images.rows as usize * images.cols as usize;
    let n = images.pixels.len().checked_div(d).unwrap_or(0);
    if n != labels.len() {
        return Err(CliError::data(format!(
            "idx pair mismatch: {n} images in {} but {} labels in {}",
            images_path.display(),
            labels.len(),
            labels_path.display()
        )));
    }

    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let features: Vec<f64> = images.pixels.iter().map(|&b| b as f64 * scale).collect();
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
    Ok(Dataset::new(
        Tensor::matrix(n, d, features)?,
        labels,
        classes,
    )?)
}

/// Writes an IDX image file.
pub fn write_idx_images(path: &Path, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    let per_image = rows as usize * cols as usize;
    assert!(
        per_image > 0 && pixels.len().is_multiple_of(per_image),
        "ragged image payload"
    );
    out.write_u32::<BigEndian>(IMAGES_MAGIC).expect("vec write");
    out.write_u32::<BigEndian>((pixels.len() / per_image) as u32)
        .expect("vec write");
    out.write_u32::<BigEndian>(rows).expect("vec write");
    out.write_u32::<BigEndian>(cols).expect("vec write");
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Writes an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABELS_MAGIC).expect("vec write");
    out.write_u32::<BigEndian>(labels.len() as u32)
        .expect("vec write");
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| CliError::io(path.display().to_string(), e))
}
