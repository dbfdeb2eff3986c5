//! White-box attack procedures: the PGD patch solver used inside training,
//! the tanh-parameterized feature adversary and its variants (searched square
//! patch, universal eye patch, evasion, distal), gradient-guided patch
//! location search, and random-noise baselines.
//!
//! Invariants shared by every attack: pixels outside the mask support are
//! bit-exactly unchanged, and emitted images lie in `[0,1]` (by tanh range or
//! by projection).

mod feature;
mod geometry;
mod noise;
mod pgd;
mod search;
mod universal;

pub use feature::{distal_attack, feature_adversary};
pub use geometry::{grid_positions, MaskGeometry, SquarePatchGeometry};
pub use noise::{global_uniform_noise, random_noise_attack};
pub use pgd::pgd_patch_attack;
pub use search::{doa_location_search, square_patch_search, window_sums_bruteforce};
pub use universal::{apply_patch, universal_eye_patch};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabeledImage, Mask};

/// Impersonation minimizes the feature distance to the target; evasion
/// maximizes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Impersonate,
    Evade,
}

/// How perturbations are parameterized and kept inside the pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Sign-gradient steps with projection onto `[0,1]` and an eps-ball.
    PgdClip,
    /// Adaptive-moment descent in arctanh space; box satisfied by range.
    Tanh,
}

/// Attack hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    /// Sign-step size for PGD.
    pub step_size: f32,
    /// Adam learning rate for tanh attacks.
    pub learning_rate: f32,
    pub restarts: usize,
    /// PGD box radius around the start image.
    pub epsilon: f32,
    pub mode: AttackMode,
    pub parameterization: Parameterization,
}

impl AttackConfig {
    /// Inner solver used by adversarial training: 10 sign steps of 16/255
    /// inside an eps = 1 box.
    pub fn pgd_training() -> Self {
        Self {
            steps: 10,
            step_size: 16.0 / 255.0,
            learning_rate: 0.0,
            restarts: 1,
            epsilon: 1.0,
            mode: AttackMode::Impersonate,
            parameterization: Parameterization::PgdClip,
        }
    }

    /// Full-strength feature adversary: 1000 Adam iterations at lr 0.01 with
    /// 5 restarts.
    pub fn feature_adversary() -> Self {
        Self {
            steps: 1000,
            step_size: 0.0,
            learning_rate: 0.01,
            restarts: 5,
            epsilon: 1.0,
            mode: AttackMode::Impersonate,
            parameterization: Parameterization::Tanh,
        }
    }

    /// Location probe for the square-patch search: 20 iterations at lr 0.1.
    pub fn square_probe() -> Self {
        Self {
            steps: 20,
            learning_rate: 0.1,
            restarts: 1,
            ..Self::feature_adversary()
        }
    }

    /// Universal eye patch: 5000 iterations at lr 0.005.
    pub fn universal_patch() -> Self {
        Self {
            steps: 5000,
            learning_rate: 0.005,
            restarts: 1,
            ..Self::feature_adversary()
        }
    }

    /// Distal feature copy from pure noise: 2000 iterations at lr 0.01.
    pub fn distal() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.01,
            restarts: 1,
            ..Self::feature_adversary()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.restarts < 1 {
            return Err(Error::Config(
                "attack needs at least one step and one restart".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn evading(mut self) -> Self {
        self.mode = AttackMode::Evade;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

/// Outcome of an attack run.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// `adversarial_image - original` (for the universal patch: the patch
    /// pixels themselves, zero outside the mask).
    pub perturbation: Array3<f32>,
    pub adversarial_image: LabeledImage,
    /// Running-best inner objective per iteration (squared distance, negated
    /// for evasion); non-increasing by construction.
    pub objective_trace: Vec<f64>,
    /// The searched or supplied mask, when the attack selects one.
    pub best_mask: Option<Mask>,
    /// Unsquared feature distance of the returned image to the target.
    pub final_distance: f64,
}

impl AttackResult {
    /// Checks locality and box invariants against the original image.
    pub fn check_invariants(&self, original: &LabeledImage, mask: &Mask) -> Result<()> {
        let (h, w, c) = original.shape();
        for r in 0..h {
            for col in 0..w {
                if !mask.is_set(r, col) {
                    for ch in 0..c {
                        if self.adversarial_image.pixels[(r, col, ch)].to_bits()
                            != original.pixels[(r, col, ch)].to_bits()
                        {
                            return Err(Error::Config(format!(
                                "pixel ({r},{col},{ch}) changed outside the mask"
                            )));
                        }
                    }
                }
            }
        }
        if !self.adversarial_image.pixels_in_range() {
            return Err(Error::Config("adversarial image leaves [0,1]".into()));
        }
        Ok(())
    }
}

/// Compact serialized record of one attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_type: String,
    pub mask_descriptor: String,
    pub seed: u64,
    pub steps: usize,
    pub final_distance: f64,
    /// Decision at a detector threshold, when one was supplied: true means
    /// the attacked image is accepted as the target.
    pub success_at_threshold: Option<bool>,
    pub trace_summary: TraceSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub initial: f64,
    pub final_value: f64,
    pub min: f64,
    pub len: usize,
}

impl AttackReport {
    pub fn from_result(
        attack_type: &str,
        mask_descriptor: String,
        seed: u64,
        steps: usize,
        result: &AttackResult,
        threshold: Option<f64>,
    ) -> Self {
        let trace = &result.objective_trace;
        let initial = trace.first().copied().unwrap_or(f64::NAN);
        let final_value = trace.last().copied().unwrap_or(f64::NAN);
        let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            attack_type: attack_type.to_string(),
            mask_descriptor,
            seed,
            steps,
            final_distance: result.final_distance,
            success_at_threshold: threshold.map(|t| result.final_distance < t),
            trace_summary: TraceSummary {
                initial,
                final_value,
                min,
                len: trace.len(),
            },
        }
    }
}

/// Human-readable mask descriptor: bounding box plus pixel count.
pub fn mask_descriptor(mask: &Mask) -> String {
    let set = mask.set_indices();
    if set.is_empty() {
        return "empty".into();
    }
    let r0 = set.iter().map(|p| p.0).min().unwrap();
    let r1 = set.iter().map(|p| p.0).max().unwrap();
    let c0 = set.iter().map(|p| p.1).min().unwrap();
    let c1 = set.iter().map(|p| p.1).max().unwrap();
    format!(
        "{}x{}@({},{}) {}px",
        r1 - r0 + 1,
        c1 - c0 + 1,
        r0,
        c0,
        set.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_presets_match_published_budgets() {
        let f = AttackConfig::feature_adversary();
        assert_eq!((f.steps, f.restarts), (1000, 5));
        assert_eq!(f.learning_rate, 0.01);
        let p = AttackConfig::pgd_training();
        assert_eq!(p.steps, 10);
        assert_eq!(p.step_size, 16.0 / 255.0);
        assert_eq!(p.epsilon, 1.0);
        assert_eq!(AttackConfig::universal_patch().steps, 5000);
        assert_eq!(AttackConfig::distal().steps, 2000);
        assert_eq!(AttackConfig::square_probe().learning_rate, 0.1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = AttackConfig::pgd_training();
        c.steps = 0;
        assert!(c.validate().is_err());
        let mut c = AttackConfig::feature_adversary();
        c.restarts = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mask_descriptor_reports_bounding_box() {
        let m = Mask::rect(16, 16, 3, 5, 4, 6).unwrap();
        assert_eq!(mask_descriptor(&m), "4x6@(3,5) 24px");
    }
}
