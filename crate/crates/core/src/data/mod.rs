//! Datasets: MNIST IDX ingestion, class subsets, dithering, batching,
//! model files and PGM dumps.

mod idx;
pub mod persist;
pub mod pgm;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{check_len, Error, Result};

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};

/// Images in `[0, 1]` (one row per sample) with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    classes: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl Dataset {
    /// Validated constructor; `classes` is the ordered label list and every
    /// label must appear in it.
    pub fn new(
        images: Array2<f64>,
        labels: Vec<u8>,
        classes: Vec<u8>,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        check_len("labels", images.nrows(), labels.len())?;
        check_len("pixels per image", rows * cols, images.ncols())?;
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixels must lie in [0, 1]"));
        }
        if let Some(l) = labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::invalid(format!("label {l} not among the classes")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    /// Position of each label within `classes`.
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| self.classes.iter().position(|c| c == l).expect("validated"))
            .collect()
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// The first `per_class` samples of each class, in file order, after skipping
/// the first `skip` samples of that class. Output is grouped by class in the
/// order given. `classes` must be non-empty and free of duplicates.
pub fn subset(ds: &Dataset, classes: &[u8], per_class: usize, skip: usize) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(Error::invalid(format!("class {c} listed twice")));
        }
    }
    let mut indices = Vec::with_capacity(per_class * classes.len());
    for &c in classes {
        let found: Vec<usize> = ds
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .skip(skip)
            .take(per_class)
            .collect();
        if found.len() < per_class {
            return Err(Error::invalid(format!(
                "class {c}: only {} samples available after skipping {skip}, need {per_class}",
                found.len()
            )));
        }
        indices.extend(found);
    }
    let mut out = ds.select(&indices);
    out.classes = classes.to_vec();
    Ok(out)
}

/// Push every pixel towards the interior by an exponential amount:
/// `v - e` above one half, `v + e` otherwise, clamped to `[0, 1]`.
pub fn dither<R: Rng + ?Sized>(ds: &Dataset, rate_mean: f64, rng: &mut R) -> Result<Dataset> {
    if !(rate_mean >= 0.0 && rate_mean.is_finite()) {
        return Err(Error::invalid(format!(
            "dither mean must be non-negative, got {rate_mean}"
        )));
    }
    let mut out = ds.clone();
    if rate_mean == 0.0 {
        return Ok(out);
    }
    let exp = Exp::new(1.0 / rate_mean).expect("positive rate");
    out.images.mapv_inplace(|v| {
        let e = exp.sample(rng);
        let moved = if v > 0.5 { v - e } else { v + e };
        moved.clamp(0.0, 1.0)
    });
    Ok(out)
}

/// Shuffled index blocks of at most `size` samples; the last block may be
/// short. Deterministic given `seed`.
pub fn batches(len: usize, size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches_with(len, size, &mut rng)
}

/// As [`batches`], drawing the permutation from `rng`.
pub fn batches_with<R: Rng + ?Sized>(
    len: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        let images = Array2::from_shape_fn((9, 4), |(i, j)| ((i * 4 + j) % 11) as f64 / 10.0);
        Dataset::new(images, vec![3, 8, 9, 3, 8, 9, 3, 9, 3], vec![3, 8, 9], 2, 2).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Dataset::new(array![[1.5, 0.0]], vec![1], vec![1], 1, 2).is_err());
        assert!(Dataset::new(array![[0.5, 0.0]], vec![2], vec![1], 1, 2).is_err());
        assert!(Dataset::new(array![[0.5, 0.0]], vec![1, 1], vec![1], 1, 2).is_err());
        assert!(Dataset::new(array![[0.5, 0.0]], vec![1], vec![1], 2, 2).is_err());
    }

    #[test]
    fn subset_is_file_order_and_grouped() {
        let ds = toy();
        let s = subset(&ds, &[3, 9], 2, 0).unwrap();
        assert_eq!(s.labels(), &[3, 3, 9, 9]);
        assert_eq!(s.images().row(0), ds.images().row(0));
        assert_eq!(s.images().row(1), ds.images().row(3));
        assert_eq!(s.images().row(2), ds.images().row(2));
        assert_eq!(s.images().row(3), ds.images().row(5));
        assert_eq!(s.classes(), &[3, 9]);
        assert_eq!(s, subset(&ds, &[3, 9], 2, 0).unwrap());

        let held = subset(&ds, &[3], 2, 2).unwrap();
        assert_eq!(held.images().row(0), ds.images().row(6));
        assert_eq!(held.images().row(1), ds.images().row(8));

        assert!(subset(&ds, &[8], 3, 0).is_err());
        assert!(subset(&ds, &[3, 3], 1, 0).is_err());
        assert_eq!(subset(&ds, &[3, 8], 0, 0).unwrap().len(), 0);
        assert_eq!(
            subset(&ds, &[9, 3], 1, 0).unwrap().class_indices(),
            vec![0, 1]
        );
    }

    #[test]
    fn dither_statistics() {
        let images =
            Array2::from_shape_fn((1000, 100), |(i, _)| if i % 2 == 0 { 0.3 } else { 0.7 });
        let labels = vec![0u8; 1000];
        let ds = Dataset::new(images, labels, vec![0], 10, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = dither(&ds, 0.05, &mut rng).unwrap();
        assert!(d.images().iter().all(|v| (0.0..=1.0).contains(v)));
        // interior pixels: P(e > 0.3) is about e^-6, so clamping is rare
        let n = d.images().len() as f64;
        let deltas: Vec<f64> = d
            .images()
            .iter()
            .zip(ds.images())
            .map(|(a, b)| (a - b).abs())
            .collect();
        let mean = deltas.iter().sum::<f64>() / n;
        // Exp(mean m) has sd m
        assert!((mean - 0.05).abs() < 3.0 * 0.05 / n.sqrt(), "{mean}");
        // direction: towards the interior
        for (row, orig) in d.images().rows().into_iter().zip(ds.images().rows()) {
            for (a, b) in row.iter().zip(orig) {
                if *b > 0.5 {
                    assert!(a <= b);
                } else {
                    assert!(a >= b);
                }
            }
        }
    }

    #[test]
    fn dither_moves_saturated_pixels() {
        let ds = Dataset::new(array![[1.0, 0.0, 1.0, 0.0]], vec![0], vec![0], 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let d = dither(&ds, 0.05, &mut rng).unwrap();
            assert!(d.images()[[0, 0]] < 1.0 && d.images()[[0, 1]] > 0.0);
        }
        assert_eq!(dither(&ds, 0.0, &mut rng).unwrap(), ds);
        assert!(dither(&ds, -1.0, &mut rng).is_err());
    }

    #[test]
    fn batch_contracts() {
        let b = batches(1234, 100, 7).unwrap();
        assert_eq!(b.len(), 13);
        assert_eq!(b.last().unwrap().len(), 34);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1234).collect::<Vec<_>>());
        assert_eq!(b, batches(1234, 100, 7).unwrap());
        assert_ne!(b, batches(1234, 100, 8).unwrap());
        assert!(batches(10, 0, 1).is_err());
        assert!(batches(0, 5, 1).unwrap().is_empty());
    }
}
