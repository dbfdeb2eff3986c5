//! Patch-robust face verification at desk scale.
//!
//! The crate trains small verification embeddings with three adversarial
//! training regimes (generative-augmented quadruplets, weak patch AT on real
//! pairs, and gradient-guided patch-location search), and evaluates them
//! against a suite of white-box physical patch attacks (eyeglass frames,
//! searched square patches, universal eye patches, evasion, indirect anchor
//! and distal feature-copy attacks).
//!
//! Data is a procedurally rendered, exactly disentangled face-like dataset
//! with ground-truth class/content factors, so the generative augmentation
//! pipeline can be checked against exact oracles.

pub mod attack;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;
pub mod types;

pub use detector::{detect, Detector};
pub use error::{Error, Result};
pub use generator::{DisentangledGenerator, Quadruplet, ToyGenerator};
pub use nn::{embed, feature_distance, ArchDescriptor, EmbeddingModel};
pub use synth::{Dataset, DatasetSplit, SyntheticFactorSpec};
pub use types::{Embedding, LabeledImage, LatentPair, Mask};
