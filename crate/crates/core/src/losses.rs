//! Two-pair contrastive loss and its robust-objective decomposition.
//!
//! The loss is `||F(x)-F(y)||^2 + max{m - ||F(t)-F(u)||^2, 0}`. The margin
//! hinge acts on squared distances. When `stop_gradient_on_generated` is set,
//! the embeddings of the generated samples `y` and `u` are treated as
//! constants: no gradient reaches the model parameters through those
//! branches, nor the pixels (and hence the generator) behind them.
//!
//! The inner adversarial problems optimize the unhinged pair terms; the
//! margin stays in the outer loss. Loss values accumulate in f64 so that
//! independent recomputations agree to 1e-9.

use ndarray::{Array1, Array3};

use crate::error::Result;
use crate::nn::{EmbeddingModel, GradStore};
use crate::types::{Embedding, LabeledImage, Mask};

/// Margin and stop-gradient policy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub stop_gradient_on_generated: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            stop_gradient_on_generated: true,
        }
    }
}

fn sq_dist_f64(a: &Array1<f32>, b: &Array1<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Loss value plus its two components.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub total: f64,
    /// `||F(x)-F(y)||^2`
    pub positive_sq: f64,
    /// `||F(t)-F(u)||^2`
    pub negative_sq: f64,
}

impl LossValue {
    fn compose(positive_sq: f64, negative_sq: f64, margin: f64) -> Self {
        Self {
            total: positive_sq + (margin - negative_sq).max(0.0),
            positive_sq,
            negative_sq,
        }
    }
}

/// Two-pair contrastive loss value.
pub fn two_pair_loss(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    u: &LabeledImage,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(two_pair_loss_detailed(model, x, y, t, u, cfg)?.total)
}

/// Loss value with per-term breakdown.
pub fn two_pair_loss_detailed(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    u: &LabeledImage,
    cfg: &LossConfig,
) -> Result<LossValue> {
    let ex = model.forward(&x.pixels)?;
    let ey = model.forward(&y.pixels)?;
    let et = model.forward(&t.pixels)?;
    let eu = model.forward(&u.pixels)?;
    Ok(LossValue::compose(
        sq_dist_f64(&ex, &ey),
        sq_dist_f64(&et, &eu),
        cfg.margin,
    ))
}

/// Weak-AT loss: the two-pair loss with the generated `u` replaced by the
/// real positive `y`.
pub fn weak_at_loss(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    cfg: &LossConfig,
) -> Result<f64> {
    two_pair_loss(model, x, y, t, y, cfg)
}

/// Parameter gradients of the two-pair loss, plus stop-gradient diagnostics.
pub struct LossGradients {
    pub value: LossValue,
    pub params: GradStore<f32>,
    /// Max |d loss / d pixel| over y's pixels; identically zero under
    /// stop-gradient.
    pub y_pixel_grad_max: f32,
    /// Same for u.
    pub u_pixel_grad_max: f32,
}

/// Backward pass of the two-pair loss through all four branches, honoring
/// the stop-gradient policy.
pub fn two_pair_loss_backward(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    u: &LabeledImage,
    cfg: &LossConfig,
) -> Result<LossGradients> {
    let (ex, tape_x) = model.forward_cached(&x.pixels)?;
    let (ey, tape_y) = model.forward_cached(&y.pixels)?;
    let (et, tape_t) = model.forward_cached(&t.pixels)?;
    let (eu, tape_u) = model.forward_cached(&u.pixels)?;

    let positive_sq = sq_dist_f64(&ex, &ey);
    let negative_sq = sq_dist_f64(&et, &eu);
    let value = LossValue::compose(positive_sq, negative_sq, cfg.margin);
    let hinge_active = negative_sq < cfg.margin;

    let d_ex: Array1<f32> = (&ex - &ey) * 2.0f32;
    let mut params = GradStore::zeros_like(model);
    let (_, gx) = model.backward(&tape_x, &d_ex, false, true);
    params.add_assign(&gx.unwrap());

    if hinge_active {
        let d_et: Array1<f32> = (&et - &eu) * -2.0f32;
        let (_, gt) = model.backward(&tape_t, &d_et, false, true);
        params.add_assign(&gt.unwrap());
    }

    let mut y_pixel_grad_max = 0.0f32;
    let mut u_pixel_grad_max = 0.0f32;
    if !cfg.stop_gradient_on_generated {
        let d_ey: Array1<f32> = (&ey - &ex) * 2.0f32;
        let (py, gy) = model.backward(&tape_y, &d_ey, true, true);
        params.add_assign(&gy.unwrap());
        y_pixel_grad_max = py
            .unwrap()
            .iter()
            .fold(0.0f32, |m, &v| m.max(v.abs()));
        if hinge_active {
            let d_eu: Array1<f32> = (&eu - &et) * -2.0f32;
            let (pu, gu) = model.backward(&tape_u, &d_eu, true, true);
            params.add_assign(&gu.unwrap());
            u_pixel_grad_max = pu
                .unwrap()
                .iter()
                .fold(0.0f32, |m, &v| m.max(v.abs()));
        }
    }

    Ok(LossGradients {
        value,
        params,
        y_pixel_grad_max,
        u_pixel_grad_max,
    })
}

/// Backward pass of the weak-AT loss. `y` is real: both pair terms
/// contribute gradients through it (no stop-gradient).
pub fn weak_at_loss_backward(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    cfg: &LossConfig,
) -> Result<(LossValue, GradStore<f32>)> {
    let (ex, tape_x) = model.forward_cached(&x.pixels)?;
    let (ey, tape_y) = model.forward_cached(&y.pixels)?;
    let (et, tape_t) = model.forward_cached(&t.pixels)?;

    let positive_sq = sq_dist_f64(&ex, &ey);
    let negative_sq = sq_dist_f64(&et, &ey);
    let value = LossValue::compose(positive_sq, negative_sq, cfg.margin);
    let hinge_active = negative_sq < cfg.margin;

    let mut params = GradStore::zeros_like(model);
    let d_ex: Array1<f32> = (&ex - &ey) * 2.0f32;
    let (_, gx) = model.backward(&tape_x, &d_ex, false, true);
    params.add_assign(&gx.unwrap());

    // y receives gradient from the positive term and (when the hinge is
    // active) from the negative term where it stands in for u.
    let mut d_ey: Array1<f32> = (&ey - &ex) * 2.0f32;
    if hinge_active {
        d_ey = d_ey + (&ey - &et) * -2.0f32;
        let d_et: Array1<f32> = (&et - &ey) * -2.0f32;
        let (_, gt) = model.backward(&tape_t, &d_et, false, true);
        params.add_assign(&gt.unwrap());
    }
    let (_, gy) = model.backward(&tape_y, &d_ey, false, true);
    params.add_assign(&gy.unwrap());

    Ok((value, params))
}

/// Which way an inner adversary moves a pair term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Maximize the distance to the reference (untargeted).
    Ascend,
    /// Minimize the distance to the reference (targeted).
    Descend,
}

/// One inner term of the decomposed robust objective:
/// `||F(image + mask * delta) - reference||^2` with a constant reference.
#[derive(Debug, Clone)]
pub struct InnerTerm {
    pub image: LabeledImage,
    pub mask: Mask,
    /// Stop-gradiented reference embedding (a constant).
    pub reference: Embedding,
    pub direction: Direction,
}

impl InnerTerm {
    /// Term value at a given perturbation.
    pub fn value_at(&self, model: &EmbeddingModel, delta: &Array3<f32>) -> Result<f64> {
        let e = model.forward(&self.perturbed(delta))?;
        Ok(sq_dist_f64(&e, &self.reference.vector))
    }

    /// Term value and gradient with respect to the perturbation (zero outside
    /// the mask support).
    pub fn grad_at(
        &self,
        model: &EmbeddingModel,
        delta: &Array3<f32>,
    ) -> Result<(f64, Array3<f32>)> {
        let px = self.perturbed(delta);
        let (e, tape) = model.forward_cached(&px)?;
        let value = sq_dist_f64(&e, &self.reference.vector);
        let d_e: Array1<f32> = (&e - &self.reference.vector) * 2.0f32;
        let (pix, _) = model.backward(&tape, &d_e, true, false);
        let mut g = pix.unwrap();
        let (h, w, c) = crate::nn::dims3(&g);
        for r in 0..h {
            for col in 0..w {
                if !self.mask.is_set(r, col) {
                    for ch in 0..c {
                        g[(r, col, ch)] = 0.0;
                    }
                }
            }
        }
        Ok((value, g))
    }

    /// `image + mask * delta`, clamped to `[0,1]`.
    pub fn perturbed(&self, delta: &Array3<f32>) -> Array3<f32> {
        let mut px = self.image.pixels.clone();
        let (h, w, c) = crate::nn::dims3(&px);
        for r in 0..h {
            for col in 0..w {
                if self.mask.is_set(r, col) {
                    for ch in 0..c {
                        px[(r, col, ch)] =
                            (px[(r, col, ch)] + delta[(r, col, ch)]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        px
    }
}

/// Splits the robust objective into its two inner problems: a term over
/// `x`'s patch to maximize against `sg(F(y))`, and a term over `t`'s patch to
/// minimize against `sg(F(u))`. At zero perturbation the hinge-combined terms
/// reproduce the two-pair loss.
pub fn decomposed_inner_objectives(
    model: &EmbeddingModel,
    x: &LabeledImage,
    y: &LabeledImage,
    t: &LabeledImage,
    u: &LabeledImage,
    mask_x: &Mask,
    mask_t: &Mask,
) -> Result<(InnerTerm, InnerTerm)> {
    let ey = model.forward(&y.pixels)?;
    let eu = model.forward(&u.pixels)?;
    Ok((
        InnerTerm {
            image: x.clone(),
            mask: mask_x.clone(),
            reference: Embedding::new(ey),
            direction: Direction::Ascend,
        },
        InnerTerm {
            image: t.clone(),
            mask: mask_t.clone(),
            reference: Embedding::new(eu),
            direction: Direction::Descend,
        },
    ))
}
