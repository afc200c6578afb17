//! IDX container (big-endian magic and dimensions, then raw bytes).

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                needed: (n - available) as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found == expected {
            Ok(())
        } else {
            Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            })
        }
    }
}

/// Parse an image file body: returns `(count, rows, cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Array2<f64>)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    c.magic(IMAGE_MAGIC)?;
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let pixels = c.take(count * rows * cols)?;
    let images = Array2::from_shape_fn((count, rows * cols), |(s, p)| {
        f64::from(pixels[s * rows * cols + p]) / 255.0
    });
    Ok((count, rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    c.magic(LABEL_MAGIC)?;
    let count = c.u32()? as usize;
    Ok(c.take(count)?.to_vec())
}

/// Load an image/label IDX pair. The class list is the sorted set of labels
/// present.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let (count, rows, cols, images) = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let mut classes = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    Dataset::new(images, labels, classes, rows, cols)
}
