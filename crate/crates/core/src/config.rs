//! Experiment configuration: one strict-schema TOML file describes a full
//! run (dataset, generator, training, attacks, evaluation). Unknown keys are
//! rejected and referenced paths must exist at load time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackMode, Parameterization};
use crate::augment::{CutoutSpec, MaskSampler};
use crate::error::{Error, Result};
use crate::eval::{AttackKind, SuiteConfig, Tta};
use crate::generator::{DisentangledGenerator, ToyGenerator};
use crate::losses::LossConfig;
use crate::nn::ArchDescriptor;
use crate::synth::{Dataset, SyntheticFactorSpec};
use crate::train::{EarlyStopMetric, Regime, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DatasetSection {
    /// "synthetic" or "folder".
    pub kind: String,
    pub image_size: usize,
    pub train_identities: usize,
    pub validation_identities: usize,
    pub test_identities: usize,
    pub samples_per_identity: usize,
    /// Root of per-identity subfolders; folder kind only.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct GeneratorSection {
    /// Registered generator name; "toy" ships with the crate.
    pub kind: String,
    pub sigma_bg: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct TrainSection {
    pub regime: Regime,
    #[serde(default = "default_true")]
    pub adversarial: bool,
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f32,
    #[serde(default = "default_beta1")]
    pub beta1: f32,
    #[serde(default = "default_beta2")]
    pub beta2: f32,
    pub margin: f64,
    #[serde(default = "default_true")]
    pub stop_gradient_on_generated: bool,
    pub attack_steps: usize,
    pub attack_step_size: f32,
    #[serde(default = "default_epsilon")]
    pub attack_epsilon: f32,
    pub mining_n: usize,
    #[serde(default = "default_doa_c")]
    pub doa_c: usize,
    #[serde(default)]
    pub independent_adv_mask: bool,
    #[serde(default = "default_shift")]
    pub shift_max: usize,
    pub validation_interval: usize,
    pub early_stop_metric: EarlyStopMetric,
    #[serde(default = "default_val_pairs")]
    pub val_pairs: usize,
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
}

fn default_true() -> bool {
    true
}
fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_epsilon() -> f32 {
    1.0
}
fn default_doa_c() -> usize {
    10
}
fn default_shift() -> usize {
    5
}
fn default_val_pairs() -> usize {
    200
}
fn default_divergence() -> f64 {
    1.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct AttackSection {
    pub kind: AttackKind,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f32>,
    #[serde(default)]
    pub restarts: Option<usize>,
    /// Random-noise pattern budget.
    #[serde(default)]
    pub patterns: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct EvalSection {
    pub ttas: Vec<Tta>,
    pub fpr: f64,
    pub n_targets: usize,
    pub intruders_per_target: usize,
    pub genuine_per_target: usize,
    #[serde(default = "default_noise_patterns")]
    pub noise_patterns: usize,
}

fn default_noise_patterns() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub generator: GeneratorSection,
    pub train: TrainSection,
    #[serde(default)]
    pub attacks: Vec<AttackSection>,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    /// The published experiment profile: 64x64 synthetic data at desk-scale
    /// split sizes, the four-block embedding net, proposed regime, full
    /// attack sweep at published budgets.
    pub fn paper_defaults() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("runs/paper_defaults"),
            dataset: DatasetSection {
                kind: "synthetic".into(),
                image_size: 64,
                train_identities: 60,
                validation_identities: 20,
                test_identities: 20,
                samples_per_identity: 12,
                path: None,
            },
            generator: GeneratorSection {
                kind: "toy".into(),
                sigma_bg: 0.05,
            },
            train: TrainSection {
                regime: Regime::Proposed,
                adversarial: true,
                batch_size: 128,
                total_steps: 20000,
                learning_rate: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                margin: 10.0,
                stop_gradient_on_generated: true,
                attack_steps: 10,
                attack_step_size: 16.0 / 255.0,
                attack_epsilon: 1.0,
                mining_n: 2,
                doa_c: 10,
                independent_adv_mask: false,
                shift_max: 5,
                validation_interval: 200,
                early_stop_metric: EarlyStopMetric::ValAuroc,
                val_pairs: 200,
                divergence_factor: 1.2,
                conv_channels: vec![16, 32, 64, 64],
                embedding_dim: 64,
            },
            attacks: vec![
                AttackSection {
                    kind: AttackKind::Eyeglasses,
                    steps: None,
                    learning_rate: None,
                    restarts: None,
                    patterns: None,
                },
                AttackSection {
                    kind: AttackKind::SquarePatch,
                    steps: None,
                    learning_rate: None,
                    restarts: None,
                    patterns: None,
                },
                AttackSection {
                    kind: AttackKind::EyePatch,
                    steps: None,
                    learning_rate: None,
                    restarts: None,
                    patterns: None,
                },
                AttackSection {
                    kind: AttackKind::Evasion,
                    steps: None,
                    learning_rate: None,
                    restarts: None,
                    patterns: None,
                },
            ],
            eval: EvalSection {
                ttas: vec![Tta::None, Tta::Mirror, Tta::Select, Tta::Both],
                fpr: 0.05,
                n_targets: 20,
                intruders_per_target: 10,
                genuine_per_target: 8,
                noise_patterns: 1000,
            },
        }
    }

    /// CPU-friendly profile: 32x32 images, small net, short budgets.
    pub fn toy() -> Self {
        let mut cfg = Self::paper_defaults();
        cfg.output_dir = PathBuf::from("runs/toy");
        cfg.dataset.image_size = 32;
        cfg.dataset.train_identities = 24;
        cfg.dataset.validation_identities = 8;
        cfg.dataset.test_identities = 8;
        cfg.dataset.samples_per_identity = 8;
        cfg.train.batch_size = 16;
        cfg.train.total_steps = 600;
        cfg.train.validation_interval = 30;
        cfg.train.val_pairs = 64;
        cfg.train.conv_channels = vec![8, 16, 32];
        cfg.train.embedding_dim = 32;
        cfg.train.doa_c = 4;
        cfg.eval.n_targets = 6;
        cfg.eval.intruders_per_target = 6;
        cfg.eval.genuine_per_target = 4;
        cfg.eval.noise_patterns = 200;
        for a in &mut cfg.attacks {
            a.steps = Some(match a.kind {
                AttackKind::EyePatch => 400,
                AttackKind::Distal => 400,
                _ => 150,
            });
            a.restarts = Some(1);
        }
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.kind.as_str() {
            "synthetic" => {}
            "folder" => {
                let path = self.dataset.path.as_ref().ok_or_else(|| {
                    Error::Config("dataset.kind = \"folder\" requires dataset.path".into())
                })?;
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "dataset path {} does not exist",
                        path.display()
                    )));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset kind '{other}' (expected synthetic or folder)"
                )))
            }
        }
        if self.generator.sigma_bg < 0.0 {
            return Err(Error::Config("sigma_bg must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.eval.fpr) || self.eval.fpr <= 0.0 {
            return Err(Error::Config("eval.fpr must lie in (0,1)".into()));
        }
        self.train_config().validate()
    }

    pub fn factor_spec(&self) -> SyntheticFactorSpec {
        SyntheticFactorSpec::default_at(self.dataset.image_size)
    }

    pub fn arch(&self) -> ArchDescriptor {
        ArchDescriptor {
            input: (self.dataset.image_size, self.dataset.image_size, 3),
            conv_channels: self.train.conv_channels.clone(),
            kernel: 3,
            embedding_dim: self.train.embedding_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            regime: t.regime,
            adversarial: t.adversarial,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            loss: LossConfig {
                margin: t.margin,
                stop_gradient_on_generated: t.stop_gradient_on_generated,
            },
            attack: AttackConfig {
                steps: t.attack_steps,
                step_size: t.attack_step_size,
                learning_rate: 0.0,
                restarts: 1,
                epsilon: t.attack_epsilon,
                mode: AttackMode::Impersonate,
                parameterization: Parameterization::PgdClip,
            },
            mining_n: t.mining_n,
            doa_c: t.doa_c,
            cutout: CutoutSpec::default(),
            mask_sampler: MaskSampler::default(),
            independent_adv_mask: t.independent_adv_mask,
            shift_max: t.shift_max,
            validation_interval: t.validation_interval,
            early_stop_metric: t.early_stop_metric,
            val_pairs: t.val_pairs,
            divergence_factor: t.divergence_factor,
            arch: self.arch(),
            seed: self.seed,
        }
    }

    /// Attack-sweep configuration assembled from the attack list and eval
    /// section; per-attack overrides apply to the matching budget.
    pub fn suite_config(&self) -> SuiteConfig {
        let mut suite = SuiteConfig {
            attacks: self.attacks.iter().map(|a| a.kind).collect(),
            ttas: self.eval.ttas.clone(),
            fpr: self.eval.fpr,
            n_targets: self.eval.n_targets,
            intruders_per_target: self.eval.intruders_per_target,
            genuine_per_target: self.eval.genuine_per_target,
            noise_patterns: self.eval.noise_patterns,
            seed: self.seed,
            ..SuiteConfig::default()
        };
        for a in &self.attacks {
            let cfg = match a.kind {
                AttackKind::EyePatch => &mut suite.universal_cfg,
                AttackKind::Distal => &mut suite.distal_cfg,
                _ => &mut suite.attack_cfg,
            };
            if let Some(steps) = a.steps {
                cfg.steps = steps;
            }
            if let Some(lr) = a.learning_rate {
                cfg.learning_rate = lr;
            }
            if let Some(r) = a.restarts {
                cfg.restarts = r;
            }
            if let Some(p) = a.patterns {
                suite.noise_patterns = p;
            }
        }
        suite
    }

    /// Builds the dataset described by the dataset section.
    pub fn build_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        match d.kind.as_str() {
            "synthetic" => Dataset::synthetic(
                self.factor_spec(),
                d.train_identities,
                d.validation_identities,
                d.test_identities,
                d.samples_per_identity,
                self.seed,
            ),
            "folder" => {
                let mut ds = Dataset::ingest_folder(
                    d.path.as_ref().unwrap(),
                    (d.image_size, d.image_size, 3),
                )?;
                ds.reassign_splits(
                    d.train_identities,
                    d.validation_identities,
                    d.test_identities,
                )?;
                Ok(ds)
            }
            _ => unreachable!("validated"),
        }
    }
}

/// Factory signature for pluggable generators.
pub type GeneratorFactory = Box<
    dyn Fn(&GeneratorSection, &SyntheticFactorSpec) -> Result<Box<dyn DisentangledGenerator>>
        + Send
        + Sync,
>;

/// Registration hook for generator implementations; "toy" is built in.
pub struct GeneratorRegistry {
    factories: BTreeMap<String, GeneratorFactory>,
}

impl GeneratorRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register(
            "toy",
            Box::new(|section, spec| {
                Ok(Box::new(ToyGenerator::new(spec.clone(), section.sigma_bg)))
            }),
        );
        reg
    }

    pub fn register(&mut self, name: &str, factory: GeneratorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn build(
        &self,
        section: &GeneratorSection,
        spec: &SyntheticFactorSpec,
    ) -> Result<Box<dyn DisentangledGenerator>> {
        let factory = self.factories.get(&section.kind).ok_or_else(|| {
            Error::Config(format!(
                "no generator registered under '{}' (available: {})",
                section.kind,
                self.factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        factory(section, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_roundtrip_through_toml() {
        for cfg in [ExperimentConfig::paper_defaults(), ExperimentConfig::toy()] {
            let text = cfg.to_toml().unwrap();
            let back: ExperimentConfig = toml::from_str(&text).unwrap();
            back.validate().unwrap();
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::toy().to_toml().unwrap();
        text.push_str("\n[dataset.extra]\nfoo = 1\n");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        let text2 = ExperimentConfig::toy().to_toml().unwrap() + "\nunknown_top_level = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(&text2).is_err());
    }

    #[test]
    fn missing_folder_path_fails_validation() {
        let mut cfg = ExperimentConfig::toy();
        cfg.dataset.kind = "folder".into();
        cfg.dataset.path = Some(PathBuf::from("/nonexistent/veriface-data"));
        assert!(cfg.validate().is_err());
        cfg.dataset.path = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paper_defaults_carry_published_hyperparameters() {
        let cfg = ExperimentConfig::paper_defaults();
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.total_steps, 20000);
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.margin, 10.0);
        assert_eq!(cfg.train.attack_steps, 10);
        assert_eq!(cfg.train.attack_step_size, 16.0 / 255.0);
        assert_eq!(cfg.train.mining_n, 2);
        assert_eq!(cfg.eval.fpr, 0.05);
        let tc = cfg.train_config();
        tc.validate().unwrap();
        assert_eq!(tc.attack.epsilon, 1.0);
    }

    #[test]
    fn generator_registry_builds_the_toy_and_rejects_unknowns() {
        let reg = GeneratorRegistry::with_builtins();
        let cfg = ExperimentConfig::toy();
        let spec = cfg.factor_spec();
        let gen = reg.build(&cfg.generator, &spec).unwrap();
        assert_eq!(gen.class_dim(), crate::synth::CLASS_DIM);
        let bad = GeneratorSection {
            kind: "learned".into(),
            sigma_bg: 0.0,
        };
        assert!(reg.build(&bad, &spec).is_err());
    }

    #[test]
    fn suite_config_applies_attack_overrides() {
        let mut cfg = ExperimentConfig::toy();
        cfg.attacks = vec![AttackSection {
            kind: AttackKind::Eyeglasses,
            steps: Some(77),
            learning_rate: Some(0.5),
            restarts: Some(2),
            patterns: None,
        }];
        let suite = cfg.suite_config();
        assert_eq!(suite.attack_cfg.steps, 77);
        assert_eq!(suite.attack_cfg.learning_rate, 0.5);
        assert_eq!(suite.attack_cfg.restarts, 2);
    }
}
