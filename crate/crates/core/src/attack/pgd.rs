//! Sign-gradient patch solver used as the inner adversary during training.

use ndarray::{Array1, Array3};

use super::{AttackConfig, AttackResult, Parameterization};
use crate::error::{Error, Result};
use crate::losses::Direction;
use crate::nn::EmbeddingModel;
use crate::types::{squared_feature_distance, Embedding, LabeledImage, Mask};

/// Iterates sign-gradient steps on the masked pixels of `image`, ascending or
/// descending the squared feature distance to `reference`. Each step projects
/// onto `[0,1]` and onto the eps-ball around the start image. Pixels outside
/// the mask never change.
pub fn pgd_patch_attack(
    model: &EmbeddingModel,
    image: &LabeledImage,
    mask: &Mask,
    reference: &Embedding,
    direction: Direction,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.parameterization != Parameterization::PgdClip {
        return Err(Error::Config("pgd_patch_attack requires pgd_clip".into()));
    }
    let (h, w, c) = image.shape();
    let masked: Vec<(usize, usize)> = mask.set_indices();
    let mut current = image.pixels.clone();
    let mut trace = Vec::with_capacity(cfg.steps + 1);

    let objective = |px: &Array3<f32>| -> Result<f64> {
        let e = model.forward(px)?;
        Ok(squared_feature_distance(
            &Embedding::new(e),
            reference,
        ))
    };
    trace.push(objective(&current)?);

    if !masked.is_empty() {
        for _ in 0..cfg.steps {
            let (e, tape) = model.forward_cached(&current)?;
            let d_e: Array1<f32> = (&e - &reference.vector) * 2.0f32;
            let (pix, _) = model.backward(&tape, &d_e, true, false);
            let g = pix.expect("pixel gradients requested");
            let sign = match direction {
                Direction::Ascend => 1.0f32,
                Direction::Descend => -1.0f32,
            };
            for &(r, col) in &masked {
                for ch in 0..c {
                    let step = sign * cfg.step_size * g[(r, col, ch)].signum();
                    let orig = image.pixels[(r, col, ch)];
                    let v = (current[(r, col, ch)] + step)
                        .clamp(orig - cfg.epsilon, orig + cfg.epsilon)
                        .clamp(0.0, 1.0);
                    current[(r, col, ch)] = v;
                }
            }
            trace.push(objective(&current)?);
        }
    }

    let final_sq = *trace.last().unwrap();
    let perturbation = &current - &image.pixels;
    debug_assert_eq!(current.shape(), [h, w, c]);
    Ok(AttackResult {
        perturbation,
        adversarial_image: LabeledImage::new(current, image.identity),
        objective_trace: trace,
        best_mask: None,
        final_distance: final_sq.sqrt(),
    })
}
