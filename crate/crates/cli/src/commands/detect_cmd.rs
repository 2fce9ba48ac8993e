use typeone::attack::fgsm;
use typeone::data::AdversarialArchive;
use typeone::defense::{
    calibrate_threshold, detection_rate, write_detection_table, SoftmaxPredictor, SqueezeConfig,
};

use super::{load_classifier, prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "detect", seed)?;
    let d = &cfg.detect;
    let f1 = load_classifier(d.classifier.as_ref(), "detect")?;
    let predictor = SoftmaxPredictor::new(&f1);
    let (_, test) = cfg.data.load(seed)?;

    let clean_count = d.clean_count.min(test.count());
    let pixels = test.pixels();
    let clean = &test.images[..clean_count * pixels];

    // Type II set: FGSM against each clean example's true label
    let mut fgsm_images = Vec::with_capacity(clean_count * pixels);
    for i in 0..clean_count {
        fgsm_images.extend(fgsm(
            test.image(i),
            test.labels[i] as usize,
            &f1,
            d.fgsm_epsilon,
        ));
    }

    // Type I set: successful attack outputs from the archive
    let type1 = match &d.type1_archive {
        Some(path) => {
            let archive = AdversarialArchive::<f32>::load(path)?;
            let idx = archive.successful_indices();
            let mut imgs = Vec::with_capacity(idx.len() * pixels);
            for i in &idx {
                imgs.extend_from_slice(archive.adversarial(*i));
            }
            Some((imgs, idx.len()))
        }
        None => None,
    };

    let squeezers = SqueezeConfig::joint(1.0).squeezers;
    let calibrated = calibrate_threshold(
        clean,
        clean_count,
        &predictor,
        &squeezers,
        d.calibrate_clean_rejection,
    );
    let mut zetas = d.zetas.clone();
    zetas.push(calibrated);

    let rate_at = |images: &[f32], count: usize, zeta: f64| {
        detection_rate(
            images,
            count,
            &predictor,
            &SqueezeConfig {
                squeezers: squeezers.clone(),
                threshold: zeta,
            },
        )
        .rate
    };

    let clean_rates: Vec<f64> = zetas.iter().map(|&z| rate_at(clean, clean_count, z)).collect();
    let fgsm_rates: Vec<f64> = zetas
        .iter()
        .map(|&z| rate_at(&fgsm_images, clean_count, z))
        .collect();
    let mut rows = vec![
        ("clean", clean_rates.clone()),
        ("type2_fgsm", fgsm_rates.clone()),
    ];
    let type1_rates = type1.as_ref().map(|(imgs, n)| {
        zetas
            .iter()
            .map(|&z| rate_at(imgs, *n, z))
            .collect::<Vec<f64>>()
    });
    if let Some(rates) = &type1_rates {
        rows.push(("type1_svae", rates.clone()));
    }

    let mut csv = Vec::new();
    write_detection_table(&mut csv, &zetas, &rows).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir, "detection-table1.csv", &csv)?;

    let at_calibrated = zetas.len() - 1;
    Ok(serde_json::json!({
        "command": "detect",
        "seed": seed,
        "calibrated_zeta": calibrated,
        "clean_count": clean_count,
        "type1_count": type1.as_ref().map(|(_, n)| *n),
        "clean_rate": clean_rates[at_calibrated],
        "fgsm_rate": fgsm_rates[at_calibrated],
        "type1_rate": type1_rates.as_ref().map(|r| r[at_calibrated]),
        "table": dir.join("detection-table1.csv"),
    }))
}
