//! Random-noise baselines: mask-filling pattern search and global uniform
//! pixel noise.

use ndarray::Array3;
use rayon::prelude::*;

use super::AttackResult;
use crate::error::{Error, Result};
use crate::nn::EmbeddingModel;
use crate::rng::rng_for;
use crate::types::{squared_feature_distance, Embedding, LabeledImage, Mask};

/// Gradient-free baseline: fills the mask with `n_patterns` random patterns
/// and keeps the one minimizing the feature distance to the target.
pub fn random_noise_attack(
    model: &EmbeddingModel,
    start: &LabeledImage,
    mask: &Mask,
    target: &Embedding,
    n_patterns: usize,
    seed: u64,
) -> Result<AttackResult> {
    if n_patterns == 0 {
        return Err(Error::Config("need at least one noise pattern".into()));
    }
    let (h, w, c) = start.shape();
    let masked = mask.set_indices();

    let evaluated: Vec<(f64, Array3<f32>)> = (0..n_patterns)
        .into_par_iter()
        .map(|i| {
            use rand::Rng;
            let mut rng = rng_for(seed, &[0xa0, i as u64]);
            let mut px = start.pixels.clone();
            for &(r, col) in &masked {
                for ch in 0..c {
                    px[(r, col, ch)] = rng.random_range(0.0..1.0);
                }
            }
            let e = model.forward(&px)?;
            let sq = squared_feature_distance(&Embedding::new(e), target);
            Ok((sq, px))
        })
        .collect::<Result<Vec<_>>>()?;

    // Running-min trace in pattern order; the argmin pattern wins.
    let mut trace = Vec::with_capacity(n_patterns);
    let mut best: Option<&(f64, Array3<f32>)> = None;
    for entry in &evaluated {
        let better = best.map(|b| entry.0 < b.0).unwrap_or(true);
        if better {
            best = Some(entry);
        }
        trace.push(best.unwrap().0);
    }
    let (best_sq, best_px) = best.unwrap();
    debug_assert_eq!(best_px.shape(), [h, w, c]);
    Ok(AttackResult {
        perturbation: best_px - &start.pixels,
        adversarial_image: LabeledImage::new(best_px.clone(), start.identity),
        objective_trace: trace,
        best_mask: Some(mask.clone()),
        final_distance: best_sq.sqrt(),
    })
}

/// Adds i.i.d. uniform noise in `[-magnitude, magnitude]` to every pixel and
/// clips to `[0,1]`.
pub fn global_uniform_noise(
    image: &LabeledImage,
    magnitude: f32,
    rng: &mut impl rand::Rng,
) -> LabeledImage {
    let mut px = image.pixels.clone();
    if magnitude > 0.0 {
        px.mapv_inplace(|v| (v + rng.random_range(-magnitude..magnitude)).clamp(0.0, 1.0));
    }
    LabeledImage::new(px, image.identity)
}
