use typeone::data::save_idx;

use super::prepare_run;
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "make-data", seed)?;
    let (train, test) = cfg.data.load(seed)?;
    save_idx(
        &train,
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    save_idx(
        &test,
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok(serde_json::json!({
        "command": "make-data",
        "seed": seed,
        "train_count": train.count(),
        "test_count": test.count(),
        "dir": dir,
    }))
}
