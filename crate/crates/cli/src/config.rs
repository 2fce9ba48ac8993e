use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use typeone::attack::{AttackConfig, LatentAttackConfig};
use typeone::data::{load_mnist_idx, LabeledImageSet, SyntheticConfig};
use typeone::sphere::SphereConfig;
use typeone::svae::SvaeTrainConfig;

use crate::CliError;

/// Full experiment configuration. Accepted as TOML or JSON; unknown keys are
/// rejected, command-line flags override file values, and every run writes
/// the fully resolved copy beside its outputs.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Optional subcommand pin; a mismatch with the invoked subcommand is a
    /// config error.
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub svae: SvaeSection,
    pub classifier: ClassifierSection,
    pub attack: AttackSection,
    pub latent_attack: LatentAttackSection,
    pub sphere: SphereConfig,
    pub detect: DetectSection,
    pub strengthen: StrengthenSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    /// Deterministic generated digit corpus.
    Synthetic,
    /// IDX files (train-images-idx3-ubyte, train-labels-idx1-ubyte,
    /// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) under `dir`.
    Idx,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub dir: Option<PathBuf>,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: None,
            train_count: 60_000,
            test_count: 10_000,
        }
    }
}

impl DataConfig {
    pub fn load(&self, seed: u64) -> Result<(LabeledImageSet<f32>, LabeledImageSet<f32>), CliError> {
        match self.source {
            DataSource::Synthetic => {
                let cfg = SyntheticConfig {
                    train_count: self.train_count,
                    test_count: self.test_count,
                    ..SyntheticConfig::default()
                };
                Ok(typeone::data::generate_corpus(seed, &cfg))
            }
            DataSource::Idx => {
                let dir = self.dir.as_ref().ok_or_else(|| {
                    CliError::Config("data.source = \"idx\" requires data.dir".into())
                })?;
                let train = load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvaeSection {
    pub latent: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub classifier_hidden: usize,
    pub discriminator_hidden: usize,
    /// 50k/10k train/validation division of the train split.
    pub validation_count: usize,
    pub train: SvaeTrainConfig,
}

impl Default for SvaeSection {
    fn default() -> Self {
        SvaeSection {
            latent: 8,
            conv1_channels: 8,
            conv2_channels: 16,
            classifier_hidden: 64,
            discriminator_hidden: 64,
            validation_count: 10_000,
            train: SvaeTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    /// "mlp", "lenet" or "embedding".
    pub arch: String,
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            arch: "mlp".into(),
            hidden: 128,
            embed_dim: 32,
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub config: AttackConfig,
    /// Attack the first `count` correctly classified test digits.
    pub count: usize,
    pub start: usize,
    /// Target label rule y′ = (y + target_offset) mod classes.
    pub target_offset: usize,
    /// Emit trajectory strips for the first n attacks.
    pub strips: usize,
    pub bundle: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            config: AttackConfig::default(),
            count: 100,
            start: 0,
            target_offset: 1,
            strips: 0,
            bundle: None,
            classifier: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentAttackSection {
    pub config: LatentAttackConfig,
    pub count: usize,
    pub bundle: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

impl Default for LatentAttackSection {
    fn default() -> Self {
        LatentAttackSection {
            config: LatentAttackConfig::default(),
            count: 100,
            bundle: None,
            classifier: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    /// Thresholds for the detection-rate table.
    pub zetas: Vec<f64>,
    /// Also report at a threshold calibrated to this clean rejection cap.
    pub calibrate_clean_rejection: f64,
    pub clean_count: usize,
    pub fgsm_epsilon: f64,
    pub type1_archive: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    /// Optional recognition-task table: median kernel sizes to sweep.
    pub kernel_sweep: Vec<usize>,
    pub embedding: Option<PathBuf>,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            zetas: typeone::defense::REFERENCE_ZETAS.to_vec(),
            calibrate_clean_rejection: 0.15,
            clean_count: 500,
            fgsm_epsilon: 0.3,
            type1_archive: None,
            classifier: None,
            kernel_sweep: vec![3, 5],
            embedding: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrengthenSection {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub fgsm_epsilon: f64,
    pub fgsm_count: usize,
    pub type1_archive: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

impl Default for StrengthenSection {
    fn default() -> Self {
        StrengthenSection {
            lambda: 1.0,
            epochs: 3,
            batch_size: 128,
            lr: 5e-4,
            fgsm_epsilon: 0.3,
            fgsm_count: 600,
            type1_archive: None,
            classifier: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let parsed: Result<Self, String> = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn check_command(&self, invoked: &str) -> Result<(), CliError> {
        if let Some(pinned) = &self.command {
            if pinned != invoked {
                return Err(CliError::Config(format!(
                    "config pins command `{pinned}` but `{invoked}` was invoked"
                )));
            }
        }
        Ok(())
    }

    /// Output directory: explicit value, else $TYPEONE_OUT/<command>-seed<seed>,
    /// else ./runs/<command>-seed<seed>.
    pub fn resolve_output_dir(&self, command: &str, seed: u64) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let root = std::env::var_os("TYPEONE_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{command}-seed{seed}"))
    }

    /// Write the fully resolved config next to the run's outputs.
    pub fn write_resolved(&self, dir: &Path, command: &str, seed: u64) -> Result<(), CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let mut resolved = self.clone();
        resolved.command = Some(command.to_string());
        resolved.seed = Some(seed);
        resolved.output_dir = Some(dir.to_path_buf());
        let path = dir.join("config.resolved.json");
        let text = serde_json::to_string_pretty(&resolved)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}
