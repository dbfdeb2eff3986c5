//! Tanh-parameterized feature adversary.
//!
//! The perturbation lives in arctanh space: masked pixels are mapped through
//! an affine pre-squash into (0,1), inverted, perturbed, and squashed back,
//! so every iterate satisfies the pixel box by construction. Optimization is
//! adaptive-moment descent on the squared feature distance to the target
//! (negated for evasion); restarts re-initialize the masked region from
//! uniform noise and the best restart by final objective is returned.

use ndarray::{Array1, Array3};

use super::{AttackConfig, AttackMode, AttackResult, Parameterization};
use crate::error::{Error, Result};
use crate::nn::EmbeddingModel;
use crate::rng::rng_for;
use crate::types::{squared_feature_distance, Embedding, LabeledImage, Mask};

/// Pre-squash margin keeping arctanh finite at saturated pixels.
pub(crate) const SQUASH_ALPHA: f32 = 1e-6;

pub(crate) fn to_w(x: f32) -> f32 {
    let v = SQUASH_ALPHA + (1.0 - 2.0 * SQUASH_ALPHA) * x;
    // atanh(2v - 1)
    0.5 * (v / (1.0 - v)).ln()
}

pub(crate) fn from_w(w: f32) -> f32 {
    (w.tanh() + 1.0) * 0.5
}

/// Masked Adam state over a pixel grid.
pub(crate) struct MaskedAdam {
    m: Array3<f32>,
    v: Array3<f32>,
    t: u64,
    lr: f32,
}

impl MaskedAdam {
    pub(crate) fn new(shape: (usize, usize, usize), lr: f32) -> Self {
        Self {
            m: Array3::zeros(shape),
            v: Array3::zeros(shape),
            t: 0,
            lr,
        }
    }

    pub(crate) fn step(&mut self, w: &mut Array3<f32>, grad: &Array3<f32>, masked: &[(usize, usize)], c: usize) {
        self.t += 1;
        let b1 = 0.9f32;
        let b2 = 0.999f32;
        let eps = 1e-8f32;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for &(r, col) in masked {
            for ch in 0..c {
                let g = grad[(r, col, ch)];
                let m = b1 * self.m[(r, col, ch)] + (1.0 - b1) * g;
                let v = b2 * self.v[(r, col, ch)] + (1.0 - b2) * g * g;
                self.m[(r, col, ch)] = m;
                self.v[(r, col, ch)] = v;
                w[(r, col, ch)] -= self.lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
    }
}

struct RestartOutcome {
    image: Array3<f32>,
    best_objective: f64,
    trace: Vec<f64>,
}

fn run_restart(
    model: &EmbeddingModel,
    start: &LabeledImage,
    mask: &Mask,
    target: &Embedding,
    cfg: &AttackConfig,
    restart: usize,
    seed: u64,
) -> Result<RestartOutcome> {
    let (h, w_dim, c) = start.shape();
    let masked = mask.set_indices();
    let sign = match cfg.mode {
        AttackMode::Impersonate => 1.0f32,
        AttackMode::Evade => -1.0f32,
    };

    // w holds arctanh-space values for masked pixels.
    let mut w = Array3::zeros((h, w_dim, c));
    if restart == 0 {
        for &(r, col) in &masked {
            for ch in 0..c {
                w[(r, col, ch)] = to_w(start.pixels[(r, col, ch)]);
            }
        }
    } else {
        let mut rng = rng_for(seed, &[0xfa, restart as u64]);
        use rand::Rng;
        for &(r, col) in &masked {
            for ch in 0..c {
                w[(r, col, ch)] = to_w(rng.random_range(0.0..1.0));
            }
        }
    }

    let compose = |w: &Array3<f32>| -> Array3<f32> {
        let mut px = start.pixels.clone();
        for &(r, col) in &masked {
            for ch in 0..c {
                px[(r, col, ch)] = from_w(w[(r, col, ch)]);
            }
        }
        px
    };

    let objective = |px: &Array3<f32>| -> Result<(f64, Array1<f32>, crate::nn::Tape<f32>)> {
        let (e, tape) = model.forward_cached(px)?;
        let sq = squared_feature_distance(&Embedding::new(e.clone()), target);
        Ok((sign as f64 * sq, e, tape))
    };

    let mut adam = MaskedAdam::new((h, w_dim, c), cfg.learning_rate);
    let mut best_w = w.clone();
    let (mut best_obj, _, _) = objective(&compose(&w))?;
    let mut trace = vec![best_obj];

    for _ in 0..cfg.steps {
        let px = compose(&w);
        let (obj, e, tape) = objective(&px)?;
        if obj < best_obj {
            best_obj = obj;
            best_w.assign(&w);
        }
        let d_e: Array1<f32> = (&e - &target.vector) * (2.0 * sign);
        let (pix, _) = model.backward(&tape, &d_e, true, false);
        let mut g = pix.expect("pixel gradients requested");
        // Chain rule through the squash: d px / d w = (1 - tanh^2(w)) / 2.
        for &(r, col) in &masked {
            for ch in 0..c {
                let t = w[(r, col, ch)].tanh();
                g[(r, col, ch)] *= 0.5 * (1.0 - t * t);
            }
        }
        adam.step(&mut w, &g, &masked, c);
        let (obj_now, _, _) = objective(&compose(&w))?;
        if obj_now < best_obj {
            best_obj = obj_now;
            best_w.assign(&w);
        }
        trace.push(best_obj);
    }

    Ok(RestartOutcome {
        image: compose(&best_w),
        best_objective: best_obj,
        trace,
    })
}

/// Masked feature-copy attack in arctanh space. Returns the best restart by
/// final objective; the trace is the per-iteration running best.
pub fn feature_adversary(
    model: &EmbeddingModel,
    start: &LabeledImage,
    mask: &Mask,
    target: &Embedding,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    if cfg.parameterization != Parameterization::Tanh {
        return Err(Error::Config("feature_adversary requires tanh".into()));
    }
    cfg.validate()?;
    let mut best: Option<RestartOutcome> = None;
    for restart in 0..cfg.restarts {
        let outcome = run_restart(model, start, mask, target, cfg, restart, seed)?;
        let better = best
            .as_ref()
            .map(|b| outcome.best_objective < b.best_objective)
            .unwrap_or(true);
        if better {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one restart");
    let adv = LabeledImage::new(best.image, start.identity);
    let e = model.forward(&adv.pixels)?;
    let final_distance = squared_feature_distance(&Embedding::new(e), target).sqrt();
    Ok(AttackResult {
        perturbation: &adv.pixels - &start.pixels,
        adversarial_image: adv,
        objective_trace: best.trace,
        best_mask: Some(mask.clone()),
        final_distance,
    })
}

/// Unrestricted feature copy from a pure-noise start: an all-ones mask over a
/// uniform random image. Probes for gradient masking.
pub fn distal_attack(
    model: &EmbeddingModel,
    target: &Embedding,
    shape: (usize, usize, usize),
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    use rand::Rng;
    let (h, w, c) = shape;
    let mut rng = rng_for(seed, &[0xd1]);
    let noise = Array3::from_shape_fn((h, w, c), |_| rng.random_range(0.0..1.0f32));
    let start = LabeledImage::new(noise, u32::MAX);
    feature_adversary(model, &start, &Mask::full(h, w), target, cfg, seed)
}
