//! Universal patch: one shared adversarial pattern with a fixed mask trained
//! against a target over a set of intruder images.

use ndarray::{Array1, Array3};
use rayon::prelude::*;

use super::feature::{from_w, to_w, MaskedAdam};
use super::{AttackConfig, AttackMode, AttackResult, Parameterization};
use crate::error::{Error, Result};
use crate::nn::EmbeddingModel;
use crate::rng::rng_for;
use crate::types::{squared_feature_distance, Embedding, LabeledImage, Mask};

/// Pastes patch pixels onto an intruder at the mask support.
pub fn apply_patch(intruder: &LabeledImage, patch: &Array3<f32>, mask: &Mask) -> LabeledImage {
    LabeledImage::new(mask.splice(&intruder.pixels, patch), intruder.identity)
}

/// Trains a single patch (parameterized in arctanh space, so its pixels are
/// identical wherever it is pasted) minimizing the mean squared feature
/// distance to the target over the intruder set.
///
/// The result's `perturbation` holds the patch pixels (zero outside the
/// mask) and `adversarial_image` shows the patch on the first intruder.
pub fn universal_eye_patch(
    model: &EmbeddingModel,
    intruders: &[LabeledImage],
    target: &Embedding,
    mask: &Mask,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    if intruders.is_empty() {
        return Err(Error::Config("intruder set must be nonempty".into()));
    }
    if cfg.parameterization != Parameterization::Tanh {
        return Err(Error::Config("universal patch requires tanh".into()));
    }
    if cfg.mode != AttackMode::Impersonate {
        return Err(Error::Config("universal patch is an impersonation attack".into()));
    }
    let (h, w_dim, c) = intruders[0].shape();
    let masked = mask.set_indices();

    // Patch in arctanh space, initialized from uniform noise.
    let mut w = Array3::zeros((h, w_dim, c));
    {
        use rand::Rng;
        let mut rng = rng_for(seed, &[0x0e]);
        for &(r, col) in &masked {
            for ch in 0..c {
                w[(r, col, ch)] = to_w(rng.random_range(0.0..1.0));
            }
        }
    }
    let patch_pixels = |w: &Array3<f32>| -> Array3<f32> {
        let mut px = Array3::zeros((h, w_dim, c));
        for &(r, col) in &masked {
            for ch in 0..c {
                px[(r, col, ch)] = from_w(w[(r, col, ch)]);
            }
        }
        px
    };

    // Mean objective and mean pixel gradient over intruders.
    let eval = |w: &Array3<f32>, want_grad: bool| -> Result<(f64, Option<Array3<f32>>)> {
        let patch = patch_pixels(w);
        let per: Vec<(f64, Option<Array3<f32>>)> = intruders
            .par_iter()
            .map(|intruder| {
                let px = mask.splice(&intruder.pixels, &patch);
                if want_grad {
                    let (e, tape) = model.forward_cached(&px)?;
                    let sq = squared_feature_distance(&Embedding::new(e.clone()), target);
                    let d_e: Array1<f32> = (&e - &target.vector) * 2.0f32;
                    let (pix, _) = model.backward(&tape, &d_e, true, false);
                    Ok((sq, pix))
                } else {
                    let e = model.forward(&px)?;
                    Ok((squared_feature_distance(&Embedding::new(e), target), None))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per.len() as f64;
        let mean_obj = per.iter().map(|(o, _)| o).sum::<f64>() / n;
        let mean_grad = if want_grad {
            let mut g = Array3::<f32>::zeros((h, w_dim, c));
            for (_, gi) in &per {
                g += gi.as_ref().unwrap();
            }
            g.mapv_inplace(|v| v / n as f32);
            Some(g)
        } else {
            None
        };
        Ok((mean_obj, mean_grad))
    };

    let mut adam = MaskedAdam::new((h, w_dim, c), cfg.learning_rate);
    let mut best_w = w.clone();
    let (mut best_obj, _) = eval(&w, false)?;
    let mut trace = vec![best_obj];

    for _ in 0..cfg.steps {
        let (obj, grad) = eval(&w, true)?;
        if obj < best_obj {
            best_obj = obj;
            best_w.assign(&w);
        }
        let mut g = grad.unwrap();
        for &(r, col) in &masked {
            for ch in 0..c {
                let t = w[(r, col, ch)].tanh();
                g[(r, col, ch)] *= 0.5 * (1.0 - t * t);
            }
        }
        adam.step(&mut w, &g, &masked, c);
        let (obj_now, _) = eval(&w, false)?;
        if obj_now < best_obj {
            best_obj = obj_now;
            best_w.assign(&w);
        }
        trace.push(best_obj);
    }

    let patch = patch_pixels(&best_w);
    let adv = apply_patch(&intruders[0], &patch, mask);
    let mean_dist = intruders
        .iter()
        .map(|i| -> Result<f64> {
            let e = model.forward(&apply_patch(i, &patch, mask).pixels)?;
            Ok(squared_feature_distance(&Embedding::new(e), target).sqrt())
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / intruders.len() as f64;

    Ok(AttackResult {
        perturbation: patch,
        adversarial_image: adv,
        objective_trace: trace,
        best_mask: Some(mask.clone()),
        final_distance: mean_dist,
    })
}
