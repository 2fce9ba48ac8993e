use typeone::models::SvaeBundle;
use typeone::svae::{train_stage1, train_stage2};

use super::{prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "train-svae", seed)?;
    let (full_train, test) = cfg.data.load(seed)?;
    let s = &cfg.svae;
    // standard division: hold validation out of the train split
    let train_count = full_train.count().saturating_sub(s.validation_count);
    let (train, validation) = full_train.split_at(train_count, seed);

    let bundle = SvaeBundle::<f32>::with_widths(
        train.rows,
        s.latent,
        10,
        s.conv1_channels,
        s.conv2_channels,
        s.classifier_hidden,
        s.discriminator_hidden,
        seed,
    );
    let mut train_cfg = s.train.clone();
    train_cfg.seed = seed;
    let (stage1, mut history) = train_stage1(&train, Some(&validation), &bundle, &train_cfg)?;
    let (trained, stage2_history) = train_stage2(&train, &stage1, &train_cfg)?;
    history.extend(stage2_history);

    let mut csv = Vec::new();
    typeone::svae::train::write_history_csv(&history, &mut csv)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir, "history.csv", &csv)?;

    let prefix = dir.join("svae");
    trained.save(&prefix)?;
    let f2_validation = trained.latent_classifier_accuracy(&validation);
    let f2_test = trained.latent_classifier_accuracy(&test);
    Ok(serde_json::json!({
        "command": "train-svae",
        "seed": seed,
        "arch": trained.arch(),
        "stage1_epochs": train_cfg.stage1_epochs,
        "stage2_epochs": train_cfg.stage2_epochs,
        "f2_validation_accuracy": f2_validation,
        "f2_test_accuracy": f2_test,
        "checkpoint": prefix,
    }))
}
