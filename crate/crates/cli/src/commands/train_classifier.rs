use typeone::models::{
    accuracy, save_classifier, train_classifier, AnyClassifier, ClassifierTrainConfig,
    EmbeddingNet, LeNet, MlpClassifier,
};

use super::prepare_run;
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "train-classifier", seed)?;
    let (train, test) = cfg.data.load(seed)?;
    let c = &cfg.classifier;
    let net: AnyClassifier<f32> = match c.arch.as_str() {
        "mlp" => AnyClassifier::Mlp(MlpClassifier::new(train.rows, c.hidden, 10, seed)),
        "lenet" => AnyClassifier::LeNet(LeNet::new(train.rows, 10, seed)),
        "embedding" => {
            AnyClassifier::Embedding(EmbeddingNet::new(train.rows, c.embed_dim, 10, seed))
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown classifier arch `{other}` (expected mlp, lenet or embedding)"
            )))
        }
    };
    let tc = ClassifierTrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr: c.lr,
        seed,
    };
    let trained = train_classifier(&net, &train, &tc)?;
    let test_accuracy = accuracy(&trained, &test);
    let prefix = dir.join(&c.arch);
    save_classifier(&prefix, &trained)?;
    Ok(serde_json::json!({
        "command": "train-classifier",
        "seed": seed,
        "arch": c.arch,
        "epochs": c.epochs,
        "test_accuracy": test_accuracy,
        "test_error": 1.0 - test_accuracy,
        "checkpoint": prefix,
    }))
}
