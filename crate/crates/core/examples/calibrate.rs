//! Scratch calibration runs for training schedules and corpus difficulty.
//! Usage: cargo run --release -p typeone --example calibrate -- <stage> [args]

use std::time::Instant;

use typeone::data::{generate_corpus, SyntheticConfig};
use typeone::models::{
    accuracy, train_classifier, ClassifierTrainConfig, LeNet, MlpClassifier,
};
use typeone::svae::{train_stage1, train_stage2, SvaeTrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stage = args.get(1).map(String::as_str).unwrap_or("mlp");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);

    let strength: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let t0 = Instant::now();
    let base = SyntheticConfig::default();
    let corpus_cfg = SyntheticConfig {
        max_rotation_deg: base.max_rotation_deg * strength,
        scale_range: (
            1.0 - (1.0 - base.scale_range.0) * strength,
            1.0 + (base.scale_range.1 - 1.0) * strength,
        ),
        max_shear: base.max_shear * strength,
        max_translate_px: base.max_translate_px * strength,
        elastic_amplitude_px: base.elastic_amplitude_px * strength,
        max_noise_sd: base.max_noise_sd * strength,
        ..base
    };
    let (train, test) = generate_corpus::<f32>(seed, &corpus_cfg);
    println!(
        "corpus: {} train / {} test in {:.1?}",
        train.count(),
        test.count(),
        t0.elapsed()
    );

    match stage {
        "mlp" => {
            let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
            let t = Instant::now();
            let net = MlpClassifier::<f32>::new(28, 128, 10, seed);
            let cfg = ClassifierTrainConfig {
                epochs,
                batch_size: 128,
                lr: 1e-3,
                seed,
            };
            let trained = train_classifier(&net, &train, &cfg).unwrap();
            let err = 1.0 - accuracy(&trained, &test);
            println!(
                "mlp: {epochs} epochs in {:.1?}, test error {:.4}",
                t.elapsed(),
                err
            );
        }
        "lenet" => {
            let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
            let t = Instant::now();
            let net = LeNet::<f32>::new(28, 10, seed);
            let cfg = ClassifierTrainConfig {
                epochs,
                batch_size: 128,
                lr: 1e-3,
                seed,
            };
            let trained = train_classifier(&net, &train, &cfg).unwrap();
            let err = 1.0 - accuracy(&trained, &test);
            println!(
                "lenet: {epochs} epochs in {:.1?}, test error {:.4}",
                t.elapsed(),
                err
            );
        }
        "svae" => {
            let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
            let c1: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
            let c2: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(16);
            let hidden: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
            let batch: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(128);
            let latent: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(8);
            let t = Instant::now();
            let bundle = typeone::models::SvaeBundle::<f32>::with_widths(
                28, latent, 10, c1, c2, hidden, 64, seed,
            );
            let cfg = SvaeTrainConfig {
                stage1_epochs: epochs,
                stage2_epochs: 5,
                batch_size: batch,
                seed,
                ..SvaeTrainConfig::default()
            };
            let (b1, hist) = train_stage1(&train, Some(&test), &bundle, &cfg).unwrap();
            for r in &hist {
                println!(
                    "  epoch {}: j_kl {:.3} j2 {:.4} j_dec {:.1} f2_acc {:.4}",
                    r.epoch, r.j_kl, r.j2, r.j_dec, r.f2_accuracy
                );
            }
            println!("stage1 in {:.1?}", t.elapsed());
            let t = Instant::now();
            let (b2, hist2) = train_stage2(&train, &b1, &cfg).unwrap();
            for r in &hist2 {
                println!("  epoch {}: j_dis {:.4}", r.epoch, r.j_dis);
            }
            println!(
                "stage2 in {:.1?}; final f2 acc {:.4}",
                t.elapsed(),
                b2.latent_classifier_accuracy(&test)
            );
            b2.save(std::path::Path::new("/tmp/calib-svae")).unwrap();
        }
        other => eprintln!("unknown stage `{other}`"),
    }
}
