//! Shared domain types: images, latent codes, masks, embeddings.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel image in `[0,1]` with an identity label and, for synthetic
/// samples, the ground-truth latent codes it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// H x W x C pixel grid, values in `[0,1]`.
    pub pixels: Array3<f32>,
    /// Integer class label.
    pub identity: u32,
    /// Generating factors; `None` for ingested external images.
    pub latents: Option<LatentPair>,
}

impl LabeledImage {
    pub fn new(pixels: Array3<f32>, identity: u32) -> Self {
        Self {
            pixels,
            identity,
            latents: None,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.pixels.shape();
        (s[0], s[1], s[2])
    }

    /// Checks the `[0,1]` pixel range invariant.
    pub fn pixels_in_range(&self) -> bool {
        self.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))
    }

    /// Same pixels with a different label attached.
    pub fn relabeled(&self, identity: u32) -> Self {
        Self {
            pixels: self.pixels.clone(),
            identity,
            latents: self.latents.clone(),
        }
    }
}

/// Partitioned latent factors: class carries identity, content carries
/// pose/expression/background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub class_code: Vec<f32>,
    pub content_code: Vec<f32>,
}

impl LatentPair {
    pub fn new(class_code: Vec<f32>, content_code: Vec<f32>) -> Self {
        Self {
            class_code,
            content_code,
        }
    }
}

/// Binary pixel-selection grid restricting where a perturbation may act.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    grid: Array2<u8>,
}

impl Mask {
    /// Builds a mask from a binary grid. Entries must be 0 or 1.
    pub fn new(grid: Array2<u8>) -> Result<Self> {
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::MaskGeometry("mask entries must be 0 or 1".into()));
        }
        Ok(Self { grid })
    }

    /// All-zeros mask.
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            grid: Array2::zeros((h, w)),
        }
    }

    /// All-ones mask (unrestricted perturbation support).
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            grid: Array2::ones((h, w)),
        }
    }

    /// Axis-aligned rectangle `[row0, row0+rh) x [col0, col0+rw)`.
    pub fn rect(h: usize, w: usize, row0: usize, col0: usize, rh: usize, rw: usize) -> Result<Self> {
        if row0 + rh > h || col0 + rw > w {
            return Err(Error::MaskGeometry(format!(
                "rectangle {rh}x{rw} at ({row0},{col0}) exceeds {h}x{w} image"
            )));
        }
        let mut grid = Array2::zeros((h, w));
        grid.slice_mut(ndarray::s![row0..row0 + rh, col0..col0 + rw])
            .fill(1u8);
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Array2<u8> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.nrows(), self.grid.ncols())
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.grid[(row, col)] == 1
    }

    pub fn num_set(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of pixels selected; exactly `num_set / (H*W)`.
    pub fn area_fraction(&self) -> f64 {
        self.num_set() as f64 / (self.grid.len() as f64)
    }

    /// Indices of selected pixels in row-major order.
    pub fn set_indices(&self) -> Vec<(usize, usize)> {
        self.grid
            .indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|((r, c), _)| (r, c))
            .collect()
    }

    /// Pastes `patch` pixels into `base` at selected positions only.
    pub fn splice(&self, base: &Array3<f32>, patch: &Array3<f32>) -> Array3<f32> {
        let mut out = base.clone();
        let c = base.shape()[2];
        for ((r, col), &v) in self.grid.indexed_iter() {
            if v == 1 {
                for ch in 0..c {
                    out[(r, col, ch)] = patch[(r, col, ch)];
                }
            }
        }
        out
    }
}

/// A feature-space vector produced by the embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Array1<f32>,
}

impl Embedding {
    pub fn new(vector: Array1<f32>) -> Self {
        Self { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|v| v.is_finite())
    }
}

/// Euclidean distance between two embeddings. Accumulates in f64 so that
/// independent recomputations agree to 1e-12.
pub fn feature_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    Ok(squared_feature_distance(a, b).sqrt())
}

/// Squared Euclidean distance; the quantity the contrastive loss operates on.
pub fn squared_feature_distance(a: &Embedding, b: &Embedding) -> f64 {
    a.vector
        .iter()
        .zip(b.vector.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;

    #[test]
    fn distance_of_identical_vectors_is_zero() {
        let v = Embedding::new(arr1(&[0.3, -1.2, 4.0]));
        assert_eq!(feature_distance(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn distance_three_four_five() {
        let a = Embedding::new(arr1(&[0.0, 0.0]));
        let b = Embedding::new(arr1(&[3.0, 4.0]));
        assert_eq!(feature_distance(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Embedding::new(arr1(&[1.0]));
        let b = Embedding::new(arr1(&[1.0, 2.0]));
        assert!(feature_distance(&a, &b).is_err());
    }

    #[test]
    fn distance_matches_sum_of_squares_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::rng_for(11, &[0]);
        for _ in 0..50 {
            let a: Vec<f32> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f32> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            // Independent recomputation in f64.
            let oracle = a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            let got = feature_distance(
                &Embedding::new(Array1::from(a)),
                &Embedding::new(Array1::from(b)),
            )
            .unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0) + 1e-12);
        }
    }

    #[test]
    fn mask_rejects_non_binary_entries() {
        let mut g = Array2::<u8>::zeros((4, 4));
        g[(1, 1)] = 2;
        assert!(Mask::new(g).is_err());
    }

    #[test]
    fn rect_mask_area_fraction_is_exact() {
        let m = Mask::rect(8, 8, 2, 3, 4, 2).unwrap();
        assert_eq!(m.num_set(), 8);
        assert_eq!(m.area_fraction(), 8.0 / 64.0);
    }

    #[test]
    fn rect_mask_out_of_bounds_is_an_error() {
        assert!(Mask::rect(8, 8, 6, 6, 4, 4).is_err());
    }

    #[test]
    fn splice_changes_only_selected_pixels() {
        let base = Array3::<f32>::zeros((4, 4, 2));
        let patch = Array3::<f32>::ones((4, 4, 2));
        let m = Mask::rect(4, 4, 1, 1, 2, 2).unwrap();
        let out = m.splice(&base, &patch);
        for ((r, c, ch), &v) in out.indexed_iter() {
            let expect = if m.is_set(r, c) { 1.0 } else { 0.0 };
            assert_eq!(v, expect, "pixel ({r},{c},{ch})");
        }
    }

    proptest! {
        // Symmetry and triangle inequality on random triples.
        #[test]
        fn distance_symmetry_and_triangle(
            a in proptest::collection::vec(-5.0f32..5.0, 8),
            b in proptest::collection::vec(-5.0f32..5.0, 8),
            c in proptest::collection::vec(-5.0f32..5.0, 8),
        ) {
            let ea = Embedding::new(Array1::from(a));
            let eb = Embedding::new(Array1::from(b));
            let ec = Embedding::new(Array1::from(c));
            let dab = feature_distance(&ea, &eb).unwrap();
            let dba = feature_distance(&eb, &ea).unwrap();
            let dac = feature_distance(&ea, &ec).unwrap();
            let dcb = feature_distance(&ec, &eb).unwrap();
            prop_assert!((dab - dba).abs() <= 1e-9);
            prop_assert!(dab <= dac + dcb + 1e-9);
        }
    }
}
