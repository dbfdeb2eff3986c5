//! Self-describing, versioned model checkpoints.
//!
//! A checkpoint holds the architecture descriptor, all parameter tensors,
//! the training step counter, and optionally the trainer RNG state, as a
//! single JSON document with a version header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ArchDescriptor, EmbeddingModel, Network};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ArchDescriptor,
    pub step: u64,
    /// Serialized trainer RNG, when the run wants to be resumable.
    pub rng_state: Option<rand_chacha::ChaCha8Rng>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &EmbeddingModel,
        step: u64,
        rng_state: Option<rand_chacha::ChaCha8Rng>,
    ) -> Self {
        let tensors = model
            .export_tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name, shape, data })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            arch: model.arch().clone(),
            step,
            rng_state,
            tensors,
        }
    }

    pub fn into_model(self) -> Result<(EmbeddingModel, u64, Option<rand_chacha::ChaCha8Rng>)> {
        if self.version > CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is newer than supported {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        let tensors: Vec<(String, Vec<usize>, Vec<f32>)> = self
            .tensors
            .into_iter()
            .map(|t| (t.name, t.shape, t.data))
            .collect();
        let model = Network::from_tensors(self.arch, &tensors)?;
        Ok((model, self.step, self.rng_state))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Writes a model checkpoint.
pub fn save_model(
    path: &Path,
    model: &EmbeddingModel,
    step: u64,
    rng_state: Option<rand_chacha::ChaCha8Rng>,
) -> Result<()> {
    Checkpoint::from_model(model, step, rng_state).save(path)
}

/// Loads a model checkpoint.
pub fn load_model(path: &Path) -> Result<(EmbeddingModel, u64, Option<rand_chacha::ChaCha8Rng>)> {
    Checkpoint::load(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchDescriptor;
    use crate::rng::rng_for;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn roundtrip_preserves_model_step_and_rng() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let model =
            Network::init(ArchDescriptor::tiny((16, 16, 3)), &mut rng_for(1, &[0])).unwrap();
        let rng = rng_for(9, &[7]);
        save_model(&path, &model, 1234, Some(rng.clone())).unwrap();
        let (restored, step, restored_rng) = load_model(&path).unwrap();
        assert_eq!(step, 1234);
        let mut a = restored_rng.unwrap();
        let mut b = rng;
        assert_eq!(a.random::<u64>(), b.random::<u64>());

        let mut probe_rng = rng_for(2, &[0]);
        let img = Array3::from_shape_fn((16, 16, 3), |_| probe_rng.random_range(0.0..1.0f32));
        let ea = model.forward(&img).unwrap();
        let eb = restored.forward(&img).unwrap();
        assert_eq!(
            ea.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            eb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn future_versions_are_rejected() {
        let model =
            Network::init(ArchDescriptor::tiny((16, 16, 3)), &mut rng_for(3, &[0])).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, 0, None);
        ckpt.version = CHECKPOINT_VERSION + 1;
        assert!(ckpt.into_model().is_err());
    }

    #[test]
    fn corrupt_tensor_shapes_are_rejected() {
        let model =
            Network::init(ArchDescriptor::tiny((16, 16, 3)), &mut rng_for(4, &[0])).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, 0, None);
        ckpt.tensors[0].shape = vec![1, 1];
        assert!(ckpt.into_model().is_err());
    }
}
