use std::io::Write;

use rayon::prelude::*;
use typeone::attack::{latent_space_attack, ClassificationTarget};
use typeone::backbone::Rng;
use typeone::models::predict;

use super::{load_bundle, load_classifier, prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "latent-attack", seed)?;
    let section = &cfg.latent_attack;
    section.config.validate()?;
    let bundle = load_bundle(section.bundle.as_ref(), "latent-attack")?;
    let f1 = load_classifier(section.classifier.as_ref(), "latent-attack")?;

    let latents: Vec<Vec<f32>> = (0..section.count)
        .map(|i| {
            let mut rng = Rng::derive(seed, "latent-attack-prior", i as u64);
            rng.normal_vec(bundle.latent)
        })
        .collect();

    let results: Vec<_> = latents
        .par_iter()
        .map(|z| {
            let g_z = bundle.decode(z, 1).data;
            let y = predict(&f1, &g_z, 1)[0];
            let target = ClassificationTarget::new(&f1, y);
            latent_space_attack(z, &target, &bundle, &section.config)
                .expect("latent attack preconditions validated")
        })
        .collect();

    let mut jsonl = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let record = serde_json::json!({
            "index": i,
            "success": r.success,
            "displacement_sq": r.displacement_sq,
            "f1_criterion_held": r.f1_criterion_held,
            "iterations": r.iterations,
        });
        writeln!(jsonl, "{record}").expect("in-memory write");
    }
    write_file(&dir, "latent-attacks.jsonl", &jsonl)?;

    let successes = results.iter().filter(|r| r.success).count();
    Ok(serde_json::json!({
        "command": "latent-attack",
        "seed": seed,
        "count": results.len(),
        "k": section.config.k,
        "epsilon": section.config.epsilon,
        "success_rate": successes as f64 / results.len().max(1) as f64,
        "mean_displacement_sq":
            results.iter().map(|r| r.displacement_sq).sum::<f64>() / results.len().max(1) as f64,
    }))
}
