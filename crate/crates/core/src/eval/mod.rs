//! Detector evaluation: threshold calibration, ranking metrics, test-time
//! augmentations, the attack-sweep suite, and plot emission.

mod metrics;
mod plots;
mod suite;

pub use metrics::{auroc_aupr, calibrate_threshold, pr_curve, roc_curve};
pub use plots::{
    plot_image_grid, plot_location_heatmap, plot_metric_report, plot_roc_pr, plot_training_curves,
};
pub use suite::{
    attack_reports, evaluate_suite, AttackKind, MetricEntry, MetricReport, ScoreSet, SuiteConfig,
    SuiteOutput, VerificationTrial,
};

use crate::error::Result;
use crate::nn::{embed, EmbeddingModel};
use crate::types::{feature_distance, Embedding, LabeledImage};

/// Test-time augmentations applied when scoring a candidate against a target
/// set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tta {
    None,
    /// Average the distances of the candidate and its mirrored version.
    Mirror,
    /// Enroll the medoid of the target set instead of its first image.
    Select,
    Both,
}

impl Tta {
    pub const ALL: [Tta; 4] = [Tta::None, Tta::Mirror, Tta::Select, Tta::Both];

    pub fn label(&self) -> &'static str {
        match self {
            Tta::None => "none",
            Tta::Mirror => "mirror",
            Tta::Select => "select",
            Tta::Both => "both",
        }
    }

    pub fn uses_mirror(&self) -> bool {
        matches!(self, Tta::Mirror | Tta::Both)
    }

    pub fn uses_select(&self) -> bool {
        matches!(self, Tta::Select | Tta::Both)
    }
}

/// Index of the medoid: the image minimizing the average (unsquared) feature
/// distance to all others.
pub fn select_target_medoid(model: &EmbeddingModel, target_set: &[LabeledImage]) -> Result<usize> {
    assert!(!target_set.is_empty());
    let embeddings: Vec<Embedding> = target_set
        .iter()
        .map(|t| embed(model, t))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..embeddings.len() {
        let mut total = 0.0;
        for j in 0..embeddings.len() {
            if i != j {
                total += feature_distance(&embeddings[i], &embeddings[j])?;
            }
        }
        let mean = if embeddings.len() > 1 {
            total / (embeddings.len() - 1) as f64
        } else {
            0.0
        };
        if mean < best.1 {
            best = (i, mean);
        }
    }
    Ok(best.0)
}

/// The enrolled target embedding under a TTA policy: the medoid when
/// selection is active, otherwise the first image of the set.
pub fn enroll_target(
    model: &EmbeddingModel,
    target_set: &[LabeledImage],
    tta: Tta,
) -> Result<Embedding> {
    let idx = if tta.uses_select() {
        select_target_medoid(model, target_set)?
    } else {
        0
    };
    embed(model, &target_set[idx])
}

/// Verification score of a candidate against a stored target embedding:
/// the feature distance, mirror-averaged when the TTA asks for it. Higher
/// means "more likely a different identity".
pub fn score_against(
    model: &EmbeddingModel,
    candidate: &LabeledImage,
    target: &Embedding,
    tta: Tta,
) -> Result<f64> {
    let d = feature_distance(&embed(model, candidate)?, target)?;
    if tta.uses_mirror() {
        let mirrored = crate::augment::mirror(candidate);
        let dm = feature_distance(&embed(model, &mirrored)?, target)?;
        Ok(0.5 * (d + dm))
    } else {
        Ok(d)
    }
}

/// Scores a candidate against a target image set under a TTA policy.
pub fn score(
    model: &EmbeddingModel,
    candidate: &LabeledImage,
    target_set: &[LabeledImage],
    tta: Tta,
) -> Result<f64> {
    let target = enroll_target(model, target_set, tta)?;
    score_against(model, candidate, &target, tta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchDescriptor, Network};
    use crate::rng::rng_for;
    use crate::synth::{Dataset, SyntheticFactorSpec};

    fn setup() -> (EmbeddingModel, Dataset) {
        let m = Network::init(ArchDescriptor::tiny((16, 16, 3)), &mut rng_for(101, &[0])).unwrap();
        let ds = Dataset::synthetic(SyntheticFactorSpec::default_at(16), 4, 0, 0, 4, 103).unwrap();
        (m, ds)
    }

    #[test]
    fn candidate_equal_to_chosen_target_scores_zero() {
        let (m, ds) = setup();
        let set: Vec<_> = ds.images_of(0).into_iter().cloned().collect();
        let s = score(&m, &set[0], &set, Tta::None).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn mirror_symmetric_candidate_gets_the_plain_score() {
        let (m, ds) = setup();
        let set: Vec<_> = ds.images_of(1).into_iter().cloned().collect();
        // Build a left-right symmetric candidate.
        let base = &set[1];
        let mirrored = crate::augment::mirror(base);
        let mut sym = base.clone();
        sym.pixels = (&base.pixels + &mirrored.pixels) * 0.5;
        let plain = score(&m, &sym, &set, Tta::None).unwrap();
        let with_mirror = score(&m, &sym, &set, Tta::Mirror).unwrap();
        assert!((plain - with_mirror).abs() <= 1e-9);
    }

    #[test]
    fn medoid_prefers_the_duplicated_image() {
        let (m, ds) = setup();
        let v = ds.images_of(2)[0].clone();
        let w = ds.images_of(3)[0].clone().relabeled(2);
        let set = vec![v.clone(), v.clone(), w];
        let idx = select_target_medoid(&m, &set).unwrap();
        // Brute-force pairwise check: one of the duplicated images wins.
        assert!(idx == 0 || idx == 1);
        let s = score(&m, &v, &set, Tta::Select).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn medoid_is_invariant_to_target_set_order() {
        let (m, ds) = setup();
        let set: Vec<_> = ds.images_of(0).into_iter().cloned().collect();
        let candidate = ds.images_of(1)[0].clone();
        let a = score(&m, &candidate, &set, Tta::Select).unwrap();
        let mut reversed = set.clone();
        reversed.reverse();
        let b = score(&m, &candidate, &reversed, Tta::Select).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}
