//! The verification detector: thresholded feature distance to an enrolled
//! target.

use crate::error::Result;
use crate::nn::{embed, EmbeddingModel};
use crate::types::{feature_distance, Embedding, LabeledImage};

/// Decides "same identity" vs "different identity" by comparing the feature
/// distance between candidate and enrolled target against a threshold.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: EmbeddingModel,
    /// Detection threshold; distances at or above it are rejected.
    pub threshold: f64,
    /// Stored embeddings of the enrolled target (one or more samples).
    pub target_embeddings: Vec<Embedding>,
}

impl Detector {
    /// Enrolls a target from a set of images, storing one embedding per image.
    pub fn enroll(model: EmbeddingModel, threshold: f64, targets: &[LabeledImage]) -> Result<Self> {
        assert!(threshold >= 0.0, "detection threshold must be nonnegative");
        let target_embeddings = targets
            .iter()
            .map(|t| embed(&model, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            threshold,
            target_embeddings,
        })
    }

    /// Distance from a candidate to the first stored target embedding.
    pub fn candidate_distance(&self, candidate: &LabeledImage) -> Result<f64> {
        let e = embed(&self.model, candidate)?;
        feature_distance(&e, &self.target_embeddings[0])
    }

    /// 1 = "different identity / reject", 0 = "same identity / accept".
    pub fn decide(&self, candidate: &LabeledImage) -> Result<u8> {
        Ok(if self.candidate_distance(candidate)? >= self.threshold {
            1
        } else {
            0
        })
    }
}

/// Detector decision for a (candidate, target) pair: embeds the target on the
/// fly rather than using the enrolled set.
pub fn detect(detector: &Detector, candidate: &LabeledImage, target: &LabeledImage) -> Result<u8> {
    let ec = embed(&detector.model, candidate)?;
    let et = embed(&detector.model, target)?;
    let d = feature_distance(&ec, &et)?;
    Ok(if d >= detector.threshold { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchDescriptor, Network};
    use crate::rng::rng_for;
    use ndarray::Array3;
    use rand::Rng;

    fn model() -> EmbeddingModel {
        let arch = ArchDescriptor {
            input: (8, 8, 1),
            conv_channels: vec![4],
            kernel: 3,
            embedding_dim: 4,
        };
        Network::init(arch, &mut rng_for(21, &[0])).unwrap()
    }

    fn image(seed: u64) -> LabeledImage {
        let mut rng = rng_for(seed, &[7]);
        LabeledImage::new(
            Array3::from_shape_fn((8, 8, 1), |_| rng.random_range(0.0..1.0)),
            0,
        )
    }

    #[test]
    fn identical_candidate_and_target_accepted_for_positive_threshold() {
        let det = Detector::enroll(model(), 0.5, &[image(1)]).unwrap();
        assert_eq!(detect(&det, &image(1), &image(1)).unwrap(), 0);
    }

    #[test]
    fn zero_threshold_always_rejects() {
        let det = Detector::enroll(model(), 0.0, &[image(1)]).unwrap();
        assert_eq!(detect(&det, &image(1), &image(1)).unwrap(), 1);
        assert_eq!(detect(&det, &image(2), &image(1)).unwrap(), 1);
    }

    #[test]
    fn raising_threshold_never_flips_accept_to_reject() {
        let m = model();
        let candidate = image(3);
        let target = image(4);
        let mut last = 1u8;
        let mut flips = 0;
        for i in 0..50 {
            let det = Detector::enroll(m.clone(), i as f64 * 0.2, &[target.clone()]).unwrap();
            let d = detect(&det, &candidate, &target).unwrap();
            assert!(d <= last, "decision rose from {last} to {d} as threshold grew");
            if d != last {
                flips += 1;
            }
            last = d;
        }
        assert!(flips <= 1, "decision must step from 1 to 0 at most once");
    }
}
