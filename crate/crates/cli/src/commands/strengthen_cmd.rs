use typeone::attack::fgsm;
use typeone::data::AdversarialArchive;
use typeone::defense::strengthen::{accuracy_on_examples, half_split};
use typeone::defense::{adversarial_train, logit_pairing_train, LogitPairs};
use typeone::models::ClassifierTrainConfig;

use super::{load_classifier, prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "strengthen", seed)?;
    let s = &cfg.strengthen;
    let f1 = load_classifier(s.classifier.as_ref(), "strengthen")?;
    let (train, test) = cfg.data.load(seed)?;
    let pixels = train.pixels();

    let archive_path = s.type1_archive.as_ref().ok_or_else(|| {
        CliError::Config("strengthen requires a Type I archive (strengthen.type1_archive)".into())
    })?;
    let type1 = AdversarialArchive::<f32>::load(archive_path)?;
    let type1_idx = type1.successful_indices();
    if type1_idx.is_empty() {
        return Err(CliError::Runtime(
            "the Type I archive holds no successful attacks".into(),
        ));
    }

    // Type II examples: FGSM on the first fgsm_count test digits
    let fgsm_count = s.fgsm_count.min(test.count());
    let mut fgsm_images = Vec::with_capacity(fgsm_count * pixels);
    for i in 0..fgsm_count {
        fgsm_images.extend(fgsm(
            test.image(i),
            test.labels[i] as usize,
            &f1,
            s.fgsm_epsilon,
        ));
    }
    let fgsm_labels: Vec<u8> = test.labels[..fgsm_count].to_vec();

    // half for strengthening, half held out
    let (fgsm_fit, fgsm_eval) = half_split(fgsm_count, seed);
    let (t1_fit, t1_eval) = half_split(type1_idx.len(), seed.wrapping_add(1));

    let gather = |src: &[f32], idx: &[usize]| -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * pixels);
        for &i in idx {
            out.extend_from_slice(&src[i * pixels..(i + 1) * pixels]);
        }
        out
    };
    let fgsm_fit_imgs = gather(&fgsm_images, &fgsm_fit);
    let fgsm_fit_labels: Vec<u8> = fgsm_fit.iter().map(|&i| fgsm_labels[i]).collect();
    let fgsm_eval_imgs = gather(&fgsm_images, &fgsm_eval);
    let fgsm_eval_labels: Vec<u8> = fgsm_eval.iter().map(|&i| fgsm_labels[i]).collect();

    // Type I examples carry the transformed (oracle) label
    let t1_images: Vec<f32> = type1_idx
        .iter()
        .flat_map(|&i| type1.adversarial(i).to_vec())
        .collect();
    let t1_labels: Vec<u8> = type1_idx.iter().map(|&i| type1.target_labels[i]).collect();
    let t1_clean: Vec<f32> = type1_idx
        .iter()
        .flat_map(|&i| type1.original(i).to_vec())
        .collect();
    let t1_fit_imgs = gather(&t1_images, &t1_fit);
    let t1_fit_labels: Vec<u8> = t1_fit.iter().map(|&i| t1_labels[i]).collect();
    let t1_eval_imgs = gather(&t1_images, &t1_eval);
    let t1_eval_labels: Vec<u8> = t1_eval.iter().map(|&i| t1_labels[i]).collect();

    let tc = ClassifierTrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        lr: s.lr,
        seed,
    };

    // logit pairing on (clean, FGSM) pairs generated against the original net
    let pairs = LogitPairs {
        clean: gather(&test.images, &fgsm_fit),
        adversarial: fgsm_fit_imgs.clone(),
        labels: fgsm_fit_labels.clone(),
        pixels,
    };
    let paired = logit_pairing_train(&train, &pairs, s.lambda, &f1, &tc)?;
    let lp_fgsm = accuracy_on_examples(&paired, &fgsm_eval_imgs, &fgsm_eval_labels);
    let lp_type1 = accuracy_on_examples(&paired, &t1_eval_imgs, &t1_eval_labels);
    let lp_clean = typeone::models::accuracy(&paired, &test);

    // vanilla adversarial-training transfer matrix
    let by_fgsm = adversarial_train(&train, &fgsm_fit_imgs, &fgsm_fit_labels, &f1, &tc)?;
    let by_type1 = adversarial_train(&train, &t1_fit_imgs, &t1_fit_labels, &f1, &tc)?;
    let matrix = serde_json::json!({
        "by_fgsm": {
            "clean": typeone::models::accuracy(&by_fgsm, &test),
            "type2_fgsm": accuracy_on_examples(&by_fgsm, &fgsm_eval_imgs, &fgsm_eval_labels),
            "type1_svae": accuracy_on_examples(&by_fgsm, &t1_eval_imgs, &t1_eval_labels),
        },
        "by_svae": {
            "clean": typeone::models::accuracy(&by_type1, &test),
            "type2_fgsm": accuracy_on_examples(&by_type1, &fgsm_eval_imgs, &fgsm_eval_labels),
            "type1_svae": accuracy_on_examples(&by_type1, &t1_eval_imgs, &t1_eval_labels),
        },
    });

    let mut csv = Vec::new();
    {
        use std::io::Write;
        writeln!(csv, "strengthened_by,clean,type1_svae,type2_fgsm").unwrap();
        for key in ["by_svae", "by_fgsm"] {
            writeln!(
                csv,
                "{key},{},{},{}",
                matrix[key]["clean"], matrix[key]["type1_svae"], matrix[key]["type2_fgsm"]
            )
            .unwrap();
        }
        writeln!(
            csv,
            "logit_pairing,{lp_clean},{lp_type1},{lp_fgsm}"
        )
        .unwrap();
    }
    write_file(&dir, "strengthen-table3.csv", &csv)?;

    let _ = t1_clean; // clean counterparts kept for completeness of the archive
    Ok(serde_json::json!({
        "command": "strengthen",
        "seed": seed,
        "lambda": s.lambda,
        "logit_pairing": {
            "clean": lp_clean,
            "fgsm_heldout": lp_fgsm,
            "type1_heldout": lp_type1,
        },
        "transfer_matrix": matrix,
        "table": dir.join("strengthen-table3.csv"),
    }))
}
