//! Training regimes: generative-augmented adversarial training on
//! quadruplets, weak patch adversarial training on real pairs, and
//! gradient-guided location-search adversarial training; plus semi-hard
//! mining, batch assembly, validation, early stopping, and checkpointing.
//!
//! Every stochastic choice draws from an RNG stream derived from
//! `(seed, step, unit, role)`, and per-unit gradients are reduced in unit
//! order, so runs are bitwise reproducible regardless of thread count.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_patch_attack, AttackConfig, MaskGeometry, SquarePatchGeometry};
use crate::augment::{cutout, mirror, random_shift, sample_mask, CutoutSpec, MaskSampler};
use crate::checkpoint::save_model;
use crate::error::{Error, Result};
use crate::eval::auroc_aupr;
use crate::generator::{autoencode, transfer, DisentangledGenerator, Quadruplet};
use crate::losses::{
    two_pair_loss_backward, weak_at_loss_backward, Direction, LossConfig,
};
use crate::nn::{embed, Adam, ArchDescriptor, EmbeddingModel, GradStore, Network};
use crate::rng::rng_for;
use crate::synth::{Dataset, Subset};
use crate::types::{feature_distance, squared_feature_distance, Embedding, LabeledImage, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Quadruplet loss with generated positives/negatives, cutout-coupled
    /// patch attacks, stop-gradient on the generated branches.
    Proposed,
    /// Real triples, every sample attacked at a random mask.
    WeakAt,
    /// Real triples, every sample attacked at a gradient-searched square.
    Doa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    ValLoss,
    ValAuroc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    /// When false, the inner adversarial steps are skipped (ablation).
    pub adversarial: bool,
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub loss: LossConfig,
    pub attack: AttackConfig,
    /// Semi-hard mining pool size.
    pub mining_n: usize,
    /// Top-candidate budget for the location search regime.
    pub doa_c: usize,
    pub cutout: CutoutSpec,
    /// Random mask sampler for weak adversarial training.
    pub mask_sampler: MaskSampler,
    /// Attack at an independently sampled mask instead of the cutout region.
    pub independent_adv_mask: bool,
    pub shift_max: usize,
    pub validation_interval: usize,
    pub early_stop_metric: EarlyStopMetric,
    /// Number of genuine and impostor validation pairs.
    pub val_pairs: usize,
    /// Divergence marker: validation loss above this multiple of its running
    /// minimum flags the record.
    pub divergence_factor: f64,
    pub arch: ArchDescriptor,
    pub seed: u64,
}

impl TrainConfig {
    /// Published defaults: batch 128, 20000 steps, Adam(0.001, 0.9, 0.999),
    /// margin 10, 10-step PGD at 16/255, mining pool 2.
    pub fn paper_defaults(arch: ArchDescriptor, seed: u64) -> Self {
        Self {
            regime: Regime::Proposed,
            adversarial: true,
            batch_size: 128,
            total_steps: 20000,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            loss: LossConfig::default(),
            attack: AttackConfig::pgd_training(),
            mining_n: 2,
            doa_c: 10,
            cutout: CutoutSpec::default(),
            mask_sampler: MaskSampler::default(),
            independent_adv_mask: false,
            shift_max: 5,
            validation_interval: 200,
            early_stop_metric: EarlyStopMetric::ValAuroc,
            val_pairs: 200,
            divergence_factor: 1.2,
            arch,
            seed,
        }
    }

    /// CPU-scale configuration for pilot runs and tests.
    pub fn toy(arch: ArchDescriptor, seed: u64) -> Self {
        Self {
            batch_size: 16,
            total_steps: 400,
            validation_interval: 20,
            val_pairs: 64,
            ..Self::paper_defaults(arch, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.mining_n < 1 {
            return Err(Error::Config("mining_n must be at least 1".into()));
        }
        if self.validation_interval < 1 {
            return Err(Error::Config("validation_interval must be at least 1".into()));
        }
        if self.loss.margin <= 0.0 {
            return Err(Error::Config("margin must be positive".into()));
        }
        self.attack.validate()?;
        self.arch.validate()
    }
}

/// One validation-interval record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    /// Mean train loss over the interval window.
    pub train_loss: f64,
    /// Loss on real validation pairs.
    pub val_loss: f64,
    pub val_auroc: f64,
    pub wall_time_s: f64,
    /// Divergence marker: val_loss exceeded the configured multiple of its
    /// running minimum.
    pub diverged: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0u64;
        for r in &self.records {
            if r.step < prev {
                return Err(Error::Config("run log steps must be monotone".into()));
            }
            prev = r.step;
            if !(r.train_loss.is_finite() && r.val_loss.is_finite() && r.val_auroc.is_finite()) {
                return Err(Error::Config("run log values must be finite".into()));
            }
        }
        Ok(())
    }

    /// Deterministic CSV (wall time excluded; it is not reproducible).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_loss,val_auroc,diverged\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.train_loss, r.val_loss, r.val_auroc, r.diverged
            ));
        }
        out
    }

    /// Parses the CSV written by [`RunLog::to_csv`] (wall time is not
    /// persisted and reads back as zero).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "step,train_loss,val_loss,val_auroc,diverged" {
                    return Err(Error::Config(format!("unexpected run-log header: {line}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(Error::Config(format!("bad run-log row: {line}")));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::Config(format!("bad number '{s}': {e}")))
            };
            records.push(RunRecord {
                step: parts[0]
                    .parse()
                    .map_err(|e| Error::Config(format!("bad step '{}': {e}", parts[0])))?,
                train_loss: parse_f(parts[1])?,
                val_loss: parse_f(parts[2])?,
                val_auroc: parse_f(parts[3])?,
                wall_time_s: 0.0,
                diverged: parts[4] == "true",
            });
        }
        Ok(Self { records })
    }

    /// The deterministic fields, bit-exact, for reproducibility checks.
    pub fn fingerprint(&self) -> Vec<(u64, u64, u64, u64, bool)> {
        self.records
            .iter()
            .map(|r| {
                (
                    r.step,
                    r.train_loss.to_bits(),
                    r.val_loss.to_bits(),
                    r.val_auroc.to_bits(),
                    r.diverged,
                )
            })
            .collect()
    }
}

/// In-memory checkpoint taken at a validation interval.
#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub step: u64,
    pub val_loss: f64,
    pub val_auroc: f64,
    pub model: EmbeddingModel,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Model at the end of the budget.
    pub model: EmbeddingModel,
    pub log: RunLog,
    pub checkpoints: Vec<CheckpointEntry>,
}

/// Records the largest gradient magnitude reaching generated-sample pixels
/// (and hence the generator) at each step of a proposed-regime run.
#[derive(Debug, Default)]
pub struct StopGradAudit {
    pub per_step_max: Vec<f32>,
}

/// Returns the checkpoint with the best early-stop metric (lowest validation
/// loss or highest validation AU-ROC; earliest wins ties).
pub fn early_stop_select<'a>(
    checkpoints: &'a [CheckpointEntry],
    metric: EarlyStopMetric,
) -> Result<&'a CheckpointEntry> {
    if checkpoints.is_empty() {
        return Err(Error::TrainingAborted("no checkpoints recorded".into()));
    }
    let best = match metric {
        EarlyStopMetric::ValLoss => checkpoints
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss)),
        EarlyStopMetric::ValAuroc => checkpoints
            .iter()
            .max_by(|a, b| a.val_auroc.total_cmp(&b.val_auroc).then(b.step.cmp(&a.step))),
    };
    Ok(best.unwrap())
}

/// A candidate negative: the raw sample (latents intact) and its augmented
/// version (what the loss will see).
#[derive(Debug, Clone)]
pub struct MiningCandidate {
    pub clean: LabeledImage,
    pub augmented: LabeledImage,
}

/// What mining compares the candidates against.
pub enum MiningContext<'a> {
    /// Reconstruct each candidate's transfer counterpart and compare t_i to
    /// u_i; needs the raw target sample for the class code.
    Proposed {
        generator: &'a dyn DisentangledGenerator,
        x: &'a LabeledImage,
    },
    /// Compare candidates against the target embedding directly.
    RealPair { x_embedding: &'a Embedding },
}

/// Picks the candidate with the lowest relevant feature distance. Returns its
/// index and, for the proposed regime, the transfer sample it was scored
/// against.
pub fn mine_negative(
    model: &EmbeddingModel,
    ctx: &MiningContext,
    candidates: &[MiningCandidate],
    rng: &mut dyn rand::RngCore,
) -> Result<(usize, Option<LabeledImage>)> {
    if candidates.is_empty() {
        return Err(Error::Dataset("mining needs at least one candidate".into()));
    }
    let mut best: Option<(usize, f64, Option<LabeledImage>)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let et = embed(model, &cand.augmented)?;
        let (d, u) = match ctx {
            MiningContext::Proposed { generator, x } => {
                let u = transfer(*generator, x, &cand.clean, rng)?;
                let eu = embed(model, &u)?;
                (feature_distance(&et, &eu)?, Some(u))
            }
            MiningContext::RealPair { x_embedding } => {
                (feature_distance(&et, x_embedding)?, None)
            }
        };
        let better = best.as_ref().map(|(_, bd, _)| d < *bd).unwrap_or(true);
        if better {
            best = Some((i, d, u));
        }
    }
    let (idx, _, u) = best.unwrap();
    Ok((idx, u))
}

/// One assembled training unit, attacks already applied.
#[derive(Debug, Clone)]
pub enum TrainingUnit {
    Proposed {
        clean: Quadruplet,
        augmented: Quadruplet,
        x_attacked: bool,
        t_attacked: bool,
    },
    RealTriple {
        x: LabeledImage,
        y: LabeledImage,
        t: LabeledImage,
        mask_x: Mask,
        mask_t: Mask,
    },
}

fn maybe_mirror(img: &LabeledImage, rng: &mut impl Rng) -> LabeledImage {
    if rng.random_range(0.0..1.0f32) < 0.5 {
        mirror(img)
    } else {
        img.clone()
    }
}

fn fill_mask_noise(img: &LabeledImage, mask: &Mask, rng: &mut impl Rng) -> LabeledImage {
    let mut out = img.clone();
    let c = img.shape().2;
    for (r, col) in mask.set_indices() {
        for ch in 0..c {
            out.pixels[(r, col, ch)] = rng.random_range(0.0..1.0);
        }
    }
    out
}

fn assemble_proposed_unit(
    model: &EmbeddingModel,
    dataset: &Dataset,
    generator: &dyn DisentangledGenerator,
    cfg: &TrainConfig,
    step: u64,
    idx: u64,
) -> Result<TrainingUnit> {
    let (h, w, _) = cfg.arch.input;
    let mut srng = rng_for(cfg.seed, &[0x51, step, idx]);
    let ids = dataset.identities(Subset::Train);
    if ids.len() < 2 {
        return Err(Error::Dataset("need at least 2 training identities".into()));
    }
    let cx = ids[srng.random_range(0..ids.len())];
    let x = dataset.sample_image_of(cx, &mut srng)?.clone();

    let mut grng = rng_for(cfg.seed, &[0x52, step, idx]);
    let y = autoencode(generator, &x, &mut grng)?;

    // Static augmentations on the real positive.
    let mut arng = rng_for(cfg.seed, &[0x53, step, idx, 0]);
    let mut x_aug = maybe_mirror(&x, &mut arng);
    x_aug = random_shift(&x_aug, &mut arng, cfg.shift_max);
    let (x_aug, x_cut, x_region) = cutout(&x_aug, &cfg.cutout, &mut arng)?;

    // Candidate negatives, each with its own augmentation stream.
    let mut candidates = Vec::with_capacity(cfg.mining_n);
    let mut regions = Vec::with_capacity(cfg.mining_n);
    for k in 0..cfg.mining_n {
        let mut ct = cx;
        while ct == cx {
            ct = ids[srng.random_range(0..ids.len())];
        }
        let t = dataset.sample_image_of(ct, &mut srng)?.clone();
        let mut trng = rng_for(cfg.seed, &[0x53, step, idx, 1 + k as u64]);
        let mut t_aug = maybe_mirror(&t, &mut trng);
        t_aug = random_shift(&t_aug, &mut trng, cfg.shift_max);
        let (t_aug, t_cut, t_region) = cutout(&t_aug, &cfg.cutout, &mut trng)?;
        candidates.push(MiningCandidate {
            clean: t,
            augmented: t_aug,
        });
        regions.push((t_cut, t_region));
    }

    // Semi-hard mining after static augmentations, before attacks.
    let mut mrng = rng_for(cfg.seed, &[0x54, step, idx]);
    let (chosen, u) = mine_negative(
        model,
        &MiningContext::Proposed {
            generator,
            x: &x,
        },
        &candidates,
        &mut mrng,
    )?;
    let u = u.expect("proposed mining returns the transfer sample");
    let t_clean = candidates[chosen].clean.clone();
    let t_aug = candidates[chosen].augmented.clone();
    let (t_cut, t_region) = regions[chosen].clone();

    // Patch adversary at the cutout region (its random fill doubles as the
    // PGD initialization), on the real images only.
    let mut x_adv = x_aug;
    let mut t_adv = t_aug;
    let (mut x_attacked, mut t_attacked) = (false, false);
    if cfg.adversarial {
        if x_cut {
            let mask = if cfg.independent_adv_mask {
                let mut mrng2 = rng_for(cfg.seed, &[0x55, step, idx, 0]);
                sample_mask(&cfg.mask_sampler, h, w, &mut mrng2)?
            } else {
                x_region
            };
            let e_y = embed(model, &y)?;
            x_adv = pgd_patch_attack(model, &x_adv, &mask, &e_y, Direction::Ascend, &cfg.attack)?
                .adversarial_image;
            x_attacked = true;
        }
        if t_cut {
            let mask = if cfg.independent_adv_mask {
                let mut mrng2 = rng_for(cfg.seed, &[0x55, step, idx, 1]);
                sample_mask(&cfg.mask_sampler, h, w, &mut mrng2)?
            } else {
                t_region
            };
            let e_u = embed(model, &u)?;
            t_adv = pgd_patch_attack(model, &t_adv, &mask, &e_u, Direction::Descend, &cfg.attack)?
                .adversarial_image;
            t_attacked = true;
        }
    }

    let clean = Quadruplet {
        x,
        y: y.clone(),
        t: t_clean,
        u: u.clone(),
    };
    clean.validate()?;
    let augmented = Quadruplet {
        x: x_adv,
        y,
        t: t_adv,
        u,
    };
    Ok(TrainingUnit::Proposed {
        clean,
        augmented,
        x_attacked,
        t_attacked,
    })
}

fn assemble_real_unit(
    model: &EmbeddingModel,
    dataset: &Dataset,
    eligible: &[u32],
    cfg: &TrainConfig,
    step: u64,
    idx: u64,
    doa_geometry: Option<&SquarePatchGeometry>,
) -> Result<TrainingUnit> {
    let (h, w, _) = cfg.arch.input;
    let mut srng = rng_for(cfg.seed, &[0x61, step, idx]);
    let cx = eligible[srng.random_range(0..eligible.len())];
    let of_x = dataset.images_of(cx);
    let xi = srng.random_range(0..of_x.len());
    let mut yi = xi;
    while yi == xi {
        yi = srng.random_range(0..of_x.len());
    }
    let x = of_x[xi].clone();
    let y = of_x[yi].clone();

    let ids = dataset.identities(Subset::Train);
    let mut arng = rng_for(cfg.seed, &[0x62, step, idx]);
    let mut x_aug = maybe_mirror(&x, &mut arng);
    x_aug = random_shift(&x_aug, &mut arng, cfg.shift_max);
    let mut y_aug = maybe_mirror(&y, &mut arng);
    y_aug = random_shift(&y_aug, &mut arng, cfg.shift_max);

    let mut candidates = Vec::with_capacity(cfg.mining_n);
    for k in 0..cfg.mining_n {
        let mut ct = cx;
        while ct == cx {
            ct = ids[srng.random_range(0..ids.len())];
        }
        let t = dataset.sample_image_of(ct, &mut srng)?.clone();
        let mut trng = rng_for(cfg.seed, &[0x63, step, idx, k as u64]);
        let mut t_aug = maybe_mirror(&t, &mut trng);
        t_aug = random_shift(&t_aug, &mut trng, cfg.shift_max);
        candidates.push(MiningCandidate {
            clean: t,
            augmented: t_aug,
        });
    }
    let ex = embed(model, &x_aug)?;
    let mut mrng = rng_for(cfg.seed, &[0x64, step, idx]);
    let (chosen, _) = mine_negative(
        model,
        &MiningContext::RealPair { x_embedding: &ex },
        &candidates,
        &mut mrng,
    )?;
    let t_aug = candidates[chosen].augmented.clone();

    // Mask selection: random rectangles for weak AT, gradient-searched
    // squares for the location-search regime.
    let e_y = embed(model, &y_aug)?;
    let mut krng = rng_for(cfg.seed, &[0x65, step, idx]);
    let (mask_x, mask_t) = match doa_geometry {
        None => (
            sample_mask(&cfg.mask_sampler, h, w, &mut krng)?,
            sample_mask(&cfg.mask_sampler, h, w, &mut krng)?,
        ),
        Some(geom) => (
            crate::attack::doa_location_search(
                model,
                &x_aug,
                &e_y,
                Direction::Ascend,
                geom,
                cfg.doa_c,
                &mut krng,
            )?,
            crate::attack::doa_location_search(
                model,
                &t_aug,
                &e_y,
                Direction::Descend,
                geom,
                cfg.doa_c,
                &mut krng,
            )?,
        ),
    };

    let (x_final, t_final) = if cfg.adversarial {
        let mut frng = rng_for(cfg.seed, &[0x66, step, idx]);
        let x_start = fill_mask_noise(&x_aug, &mask_x, &mut frng);
        let t_start = fill_mask_noise(&t_aug, &mask_t, &mut frng);
        let x_adv =
            pgd_patch_attack(model, &x_start, &mask_x, &e_y, Direction::Ascend, &cfg.attack)?
                .adversarial_image;
        let t_adv =
            pgd_patch_attack(model, &t_start, &mask_t, &e_y, Direction::Descend, &cfg.attack)?
                .adversarial_image;
        (x_adv, t_adv)
    } else {
        (x_aug, t_aug)
    };

    Ok(TrainingUnit::RealTriple {
        x: x_final,
        y: y_aug,
        t: t_final,
        mask_x,
        mask_t,
    })
}

/// Identities usable by the real-pair regimes (at least two samples).
pub fn eligible_identities(dataset: &Dataset) -> Vec<u32> {
    dataset
        .identities(Subset::Train)
        .iter()
        .copied()
        .filter(|&id| dataset.images_of(id).len() >= 2)
        .collect()
}

/// Assembles one training unit for the given batch slot.
pub fn assemble_unit(
    model: &EmbeddingModel,
    dataset: &Dataset,
    generator: Option<&dyn DisentangledGenerator>,
    eligible: &[u32],
    cfg: &TrainConfig,
    step: u64,
    idx: u64,
) -> Result<TrainingUnit> {
    match cfg.regime {
        Regime::Proposed => {
            let generator = generator.ok_or_else(|| {
                Error::Config("the proposed regime requires a generator".into())
            })?;
            assemble_proposed_unit(model, dataset, generator, cfg, step, idx)
        }
        Regime::WeakAt => assemble_real_unit(model, dataset, eligible, cfg, step, idx, None),
        Regime::Doa => {
            let (h, w, _) = cfg.arch.input;
            let geom = MaskGeometry::doa_square(h, w);
            assemble_real_unit(model, dataset, eligible, cfg, step, idx, Some(&geom))
        }
    }
}

/// Assembles a whole batch (parallel over units, deterministic order).
pub fn assemble_batch(
    model: &EmbeddingModel,
    dataset: &Dataset,
    generator: Option<&dyn DisentangledGenerator>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<Vec<TrainingUnit>> {
    let eligible = eligible_identities(dataset);
    if matches!(cfg.regime, Regime::WeakAt | Regime::Doa) && eligible.len() < 2 {
        return Err(Error::Dataset(
            "real-pair regimes need at least 2 identities with 2+ samples".into(),
        ));
    }
    (0..cfg.batch_size as u64)
        .into_par_iter()
        .map(|idx| assemble_unit(model, dataset, generator, &eligible, cfg, step, idx))
        .collect()
}

struct UnitGrads {
    grads: GradStore<f32>,
    loss: f64,
    stop_grad_leak: f32,
}

fn unit_gradients(model: &EmbeddingModel, unit: &TrainingUnit, cfg: &TrainConfig) -> Result<UnitGrads> {
    match unit {
        TrainingUnit::Proposed {
            clean, augmented, ..
        } => {
            let sg_cfg = LossConfig {
                margin: cfg.loss.margin,
                stop_gradient_on_generated: cfg.loss.stop_gradient_on_generated,
            };
            let a = two_pair_loss_backward(model, &clean.x, &clean.y, &clean.t, &clean.u, &sg_cfg)?;
            let b = two_pair_loss_backward(
                model,
                &augmented.x,
                &augmented.y,
                &augmented.t,
                &augmented.u,
                &sg_cfg,
            )?;
            let mut grads = a.params;
            grads.add_assign(&b.params);
            Ok(UnitGrads {
                grads,
                loss: a.value.total + b.value.total,
                stop_grad_leak: a
                    .y_pixel_grad_max
                    .max(a.u_pixel_grad_max)
                    .max(b.y_pixel_grad_max)
                    .max(b.u_pixel_grad_max),
            })
        }
        TrainingUnit::RealTriple { x, y, t, .. } => {
            let cfg_real = LossConfig {
                margin: cfg.loss.margin,
                stop_gradient_on_generated: false,
            };
            let (value, grads) = weak_at_loss_backward(model, x, y, t, &cfg_real)?;
            Ok(UnitGrads {
                grads,
                loss: value.total,
                stop_grad_leak: 0.0,
            })
        }
    }
}

/// Fixed validation material: real triples for the loss and labeled pairs
/// for AU-ROC.
struct ValidationSet {
    triples: Vec<(LabeledImage, LabeledImage, LabeledImage)>,
}

fn build_validation_set(dataset: &Dataset, cfg: &TrainConfig) -> Result<ValidationSet> {
    let ids: Vec<u32> = dataset
        .identities(Subset::Validation)
        .iter()
        .copied()
        .filter(|&id| dataset.images_of(id).len() >= 2)
        .collect();
    if ids.len() < 2 {
        return Err(Error::Dataset(
            "validation needs at least 2 identities with 2+ samples".into(),
        ));
    }
    let mut rng = rng_for(cfg.seed, &[0x77]);
    let mut triples = Vec::with_capacity(cfg.val_pairs);
    for _ in 0..cfg.val_pairs {
        let cx = ids[rng.random_range(0..ids.len())];
        let of_x = dataset.images_of(cx);
        let xi = rng.random_range(0..of_x.len());
        let mut yi = xi;
        while yi == xi {
            yi = rng.random_range(0..of_x.len());
        }
        let mut ct = cx;
        while ct == cx {
            ct = ids[rng.random_range(0..ids.len())];
        }
        let t = dataset.sample_image_of(ct, &mut rng)?.clone();
        triples.push((of_x[xi].clone(), of_x[yi].clone(), t));
    }
    Ok(ValidationSet { triples })
}

fn validate_model(
    model: &EmbeddingModel,
    val: &ValidationSet,
    margin: f64,
) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64, f64)> = val
        .triples
        .par_iter()
        .map(|(x, y, t)| {
            let ex = embed(model, x)?;
            let ey = embed(model, y)?;
            let et = embed(model, t)?;
            let pos = squared_feature_distance(&ex, &ey);
            let neg = squared_feature_distance(&et, &ey);
            let loss = pos + (margin - neg).max(0.0);
            Ok((loss, pos.sqrt(), neg.sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    let val_loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let mut scores = Vec::with_capacity(2 * per.len());
    let mut labels = Vec::with_capacity(2 * per.len());
    for &(_, genuine_d, impostor_d) in &per {
        scores.push(genuine_d);
        labels.push(false);
        scores.push(impostor_d);
        labels.push(true);
    }
    let (auroc, _) = auroc_aupr(&scores, &labels)?;
    Ok((val_loss, auroc))
}

/// Runs the configured regime for the full budget. Validation runs on real
/// pairs at every interval, checkpoints are kept in memory (and the best and
/// final models written under `run_dir` when given), and a non-finite loss
/// aborts with a diagnostic checkpoint.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    generator: Option<&dyn DisentangledGenerator>,
    run_dir: Option<&Path>,
    mut audit: Option<&mut StopGradAudit>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut model = Network::init(cfg.arch.clone(), &mut rng_for(cfg.seed, &[0x10]))?;
    let mut opt = Adam::new(&model, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut log = RunLog::default();
    let mut checkpoints: Vec<CheckpointEntry> = Vec::new();

    if cfg.total_steps == 0 {
        return Ok(TrainOutput {
            model,
            log,
            checkpoints,
        });
    }

    let val = build_validation_set(dataset, cfg)?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("train_config.json"),
            serde_json::to_string_pretty(cfg)?,
        )?;
        std::fs::write(
            dir.join("seeds.json"),
            serde_json::to_string_pretty(&serde_json::json!({ "master_seed": cfg.seed }))?,
        )?;
    }

    let start = Instant::now();
    let mut window_loss = 0.0f64;
    let mut window_count = 0usize;
    let mut min_val_loss = f64::INFINITY;

    for step in 0..cfg.total_steps as u64 {
        let units = assemble_batch(&model, dataset, generator, cfg, step)?;
        let per_unit: Vec<UnitGrads> = units
            .par_iter()
            .map(|u| unit_gradients(&model, u, cfg))
            .collect::<Result<Vec<_>>>()?;

        let mut total = GradStore::zeros_like(&model);
        let mut loss_sum = 0.0f64;
        let mut leak = 0.0f32;
        for ug in &per_unit {
            total.add_assign(&ug.grads);
            loss_sum += ug.loss;
            leak = leak.max(ug.stop_grad_leak);
        }
        total.scale(1.0 / cfg.batch_size as f32);
        let step_loss = loss_sum / cfg.batch_size as f64;
        if let Some(a) = audit.as_deref_mut() {
            a.per_step_max.push(leak);
        }

        if !step_loss.is_finite() {
            if let Some(dir) = run_dir {
                let _ = save_model(&dir.join("checkpoints/diagnostic.json"), &model, step, None);
            }
            return Err(Error::TrainingAborted(format!(
                "non-finite loss {step_loss} at step {step}"
            )));
        }

        opt.step(&mut model, &total);
        model.renormalize_embedding_rows();

        window_loss += step_loss;
        window_count += 1;

        let is_interval = (step + 1) % cfg.validation_interval as u64 == 0
            || step + 1 == cfg.total_steps as u64;
        if is_interval {
            let (val_loss, val_auroc) = validate_model(&model, &val, cfg.loss.margin)?;
            min_val_loss = min_val_loss.min(val_loss);
            let diverged = val_loss > cfg.divergence_factor * min_val_loss;
            log.records.push(RunRecord {
                step: step + 1,
                train_loss: window_loss / window_count.max(1) as f64,
                val_loss,
                val_auroc,
                wall_time_s: start.elapsed().as_secs_f64(),
                diverged,
            });
            window_loss = 0.0;
            window_count = 0;
            checkpoints.push(CheckpointEntry {
                step: step + 1,
                val_loss,
                val_auroc,
                model: model.clone(),
            });
        }
    }

    if let Some(dir) = run_dir {
        std::fs::write(dir.join("runlog.csv"), log.to_csv())?;
        let best = early_stop_select(&checkpoints, cfg.early_stop_metric)?;
        save_model(&dir.join("checkpoints/best.json"), &best.model, best.step, None)?;
        save_model(
            &dir.join("checkpoints/final.json"),
            &model,
            cfg.total_steps as u64,
            None,
        )?;
    }

    log.validate()?;
    Ok(TrainOutput {
        model,
        log,
        checkpoints,
    })
}
