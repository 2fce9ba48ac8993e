pub mod attack_cmd;
pub mod detect_cmd;
pub mod gradcheck_cmd;
pub mod latent_attack_cmd;
pub mod make_data;
pub mod sphere_cmd;
pub mod strengthen_cmd;
pub mod train_classifier;
pub mod train_svae;

use std::path::{Path, PathBuf};

use typeone::models::{AnyClassifier, SvaeBundle};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Resolve the run directory and drop the resolved config into it.
pub fn prepare_run(
    cfg: &ExperimentConfig,
    command: &str,
    seed: u64,
) -> Result<PathBuf, CliError> {
    let dir = cfg.resolve_output_dir(command, seed);
    cfg.write_resolved(&dir, command, seed)?;
    Ok(dir)
}

pub fn load_bundle(path: Option<&PathBuf>, what: &str) -> Result<SvaeBundle<f32>, CliError> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!("{what} requires an SVAE bundle checkpoint path"))
    })?;
    SvaeBundle::load(path).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn load_classifier(
    path: Option<&PathBuf>,
    what: &str,
) -> Result<AnyClassifier<f32>, CliError> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!("{what} requires a classifier checkpoint path"))
    })?;
    typeone::models::load_classifier(path).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
