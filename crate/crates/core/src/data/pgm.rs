//! Binary PGM (P5) image dumps.

use std::path::Path;

use ndarray::ArrayView1;

use crate::error::{check_len, Error, Result};

/// Encode one `[0, 1]` image as P5 with maxval 255.
pub fn encode_pgm(pixels: ArrayView1<'_, f64>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    check_len("image pixels", rows * cols, pixels.len())?;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Write a grid of images (`tiles_per_row` across) as one PGM file.
pub fn write_pgm_grid<'a>(
    path: impl AsRef<Path>,
    images: impl IntoIterator<Item = ArrayView1<'a, f64>>,
    rows: usize,
    cols: usize,
    tiles_per_row: usize,
) -> Result<()> {
    let images: Vec<_> = images.into_iter().collect();
    if images.is_empty() || tiles_per_row == 0 {
        return Err(Error::invalid("nothing to write"));
    }
    let across = tiles_per_row.min(images.len());
    let down = images.len().div_ceil(across);
    let (height, width) = (down * rows, across * cols);
    let mut canvas = ndarray::Array1::<f64>::zeros(height * width);
    for (t, img) in images.iter().enumerate() {
        check_len("image pixels", rows * cols, img.len())?;
        let (ty, tx) = (t / across, t % across);
        for r in 0..rows {
            for c in 0..cols {
                canvas[(ty * rows + r) * width + tx * cols + c] = img[r * cols + c];
            }
        }
    }
    let bytes = encode_pgm(canvas.view(), height, width)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
