use std::io::Write;

use rayon::prelude::*;
use typeone::attack::{type1_attack, AttackResult, ClassificationTarget};
use typeone::data::{archive::config_digest, AdversarialArchive};
use typeone::models::{predict, ImageClassifier};

use super::{load_bundle, load_classifier, prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::strip::{emit_image_strip, StripFrame};
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "attack", seed)?;
    let a = &cfg.attack;
    a.config.validate()?;
    let bundle = load_bundle(a.bundle.as_ref(), "attack")?;
    let f1 = load_classifier(a.classifier.as_ref(), "attack")?;
    let (_, test) = cfg.data.load(seed)?;

    // first `count` correctly classified test digits from `start`
    let preds = predict(&f1, &test.images, test.count());
    let mut picked = Vec::with_capacity(a.count);
    for i in a.start..test.count() {
        if preds[i] == test.labels[i] as usize {
            picked.push(i);
            if picked.len() == a.count {
                break;
            }
        }
    }
    if picked.len() < a.count {
        return Err(CliError::Runtime(format!(
            "only {} correctly classified digits available",
            picked.len()
        )));
    }

    let mut attack_cfg = a.config.clone();
    if a.strips > 0 && attack_cfg.snapshot_every.is_none() {
        attack_cfg.snapshot_every = Some(25);
    }
    let classes = f1.class_count();
    let results: Vec<(usize, AttackResult<f32>)> = picked
        .par_iter()
        .map(|&idx| {
            let x = test.image(idx);
            let y = test.labels[idx] as usize;
            let y_target = (y + a.target_offset) % classes;
            let target = ClassificationTarget::new(&f1, y);
            let out = type1_attack(x, y, y_target, &target, &bundle, &attack_cfg)
                .expect("attack preconditions validated");
            (idx, out)
        })
        .collect();

    // JSONL record per example
    let mut jsonl = Vec::new();
    for (idx, r) in &results {
        let y = test.labels[*idx] as usize;
        let record = serde_json::json!({
            "index": idx,
            "label": y,
            "target": (y + a.target_offset) % classes,
            "success": r.success,
            "f2_reached_target": r.f2_reached_target,
            "f1_criterion_held": r.f1_criterion_held,
            "iterations": r.iterations,
            "diverged": r.diverged,
            "final_j1": r.trace.last().map(|s| s.j1),
            "final_j2": r.trace.last().map(|s| s.j2),
            "final_f_dis": r.trace.last().map(|s| s.f_dis),
            "final_k": r.trace.last().map(|s| s.k),
            "final_f1_confidence": r.trace.last().map(|s| s.f1_confidence),
        });
        writeln!(jsonl, "{record}").expect("in-memory write");
    }
    write_file(&dir, "attacks.jsonl", &jsonl)?;

    // archive of originals and adversarials
    let digest = config_digest(&attack_cfg);
    let mut archive = AdversarialArchive::<f32>::new("svae-type1", digest, test.rows, test.cols);
    for (idx, r) in &results {
        let y = test.labels[*idx];
        let t = ((y as usize + a.target_offset) % classes) as u8;
        archive.push(test.image(*idx), &r.final_image, y, t, r.success);
    }
    let archive_prefix = dir.join("type1-archive");
    archive.save(&archive_prefix)?;

    // trajectory strips for the first few attacks
    for (strip_idx, (idx, r)) in results.iter().take(a.strips).enumerate() {
        if r.snapshots.is_empty() {
            continue;
        }
        let mut frames: Vec<StripFrame> = vec![StripFrame {
            image: test.image(*idx).to_vec(),
            confidence: 1.0,
        }];
        for (iter, img) in &r.snapshots {
            let conf = r
                .trace
                .get(*iter)
                .map(|s| s.f1_confidence)
                .unwrap_or(f64::NAN);
            frames.push(StripFrame {
                image: img.clone(),
                confidence: conf,
            });
        }
        frames.push(StripFrame {
            image: r.final_image.clone(),
            confidence: r.trace.last().map(|s| s.f1_confidence).unwrap_or(f64::NAN),
        });
        emit_image_strip(
            &frames,
            test.rows,
            test.cols,
            &dir.join(format!("strip-{strip_idx:03}.png")),
        )?;
    }

    let successes = results.iter().filter(|(_, r)| r.success).count();
    let mean_iterations =
        results.iter().map(|(_, r)| r.iterations).sum::<usize>() as f64 / results.len() as f64;
    Ok(serde_json::json!({
        "command": "attack",
        "seed": seed,
        "count": results.len(),
        "success_rate": successes as f64 / results.len() as f64,
        "mean_iterations": mean_iterations,
        "archive": archive_prefix,
        "jsonl": dir.join("attacks.jsonl"),
    }))
}
