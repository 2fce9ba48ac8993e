use std::io::Write;

use super::{discriminator_objective_into, svae_loss_into, LossWeights};
use crate::backbone::gradcheck::bind_params;
use crate::backbone::{adam_step, AdamState, ParamSet, Rng, Scalar, Tape, Tensor};
use crate::data::{one_hot, LabeledImageSet};
use crate::error::{Error, Result};
use crate::models::SvaeBundle;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvaeTrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate for both stages.
    pub lr: f64,
    pub seed: u64,
    pub kl_weight: f64,
    pub classifier_weight: f64,
    pub reconstruction_weight: f64,
    /// Train the discriminator on guarded log-likelihoods instead of the raw
    /// probability objective.
    pub discriminator_log_loss: bool,
}

impl Default for SvaeTrainConfig {
    fn default() -> Self {
        SvaeTrainConfig {
            stage1_epochs: 20,
            stage2_epochs: 5,
            batch_size: 128,
            lr: 2e-4,
            seed: 0,
            kl_weight: 1.0,
            classifier_weight: 1.0,
            reconstruction_weight: 1.0,
            discriminator_log_loss: false,
        }
    }
}

impl SvaeTrainConfig {
    fn weights(&self) -> LossWeights {
        LossWeights {
            kl: self.kl_weight,
            classifier: self.classifier_weight,
            reconstruction: self.reconstruction_weight,
        }
    }
}

/// Per-epoch loss history row; stage-2 rows carry J_dis, stage-1 rows the
/// ELBO terms. `f2_accuracy` is measured on the validation set when given.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub j_kl: f64,
    pub j2: f64,
    pub j_dec: f64,
    pub j_dis: f64,
    pub f2_accuracy: f64,
}

pub fn write_history_csv(records: &[EpochRecord], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "stage,epoch,j_kl,j2,j_dec,j_dis,f2_accuracy")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.stage, r.epoch, r.j_kl, r.j2, r.j_dec, r.j_dis, r.f2_accuracy
        )?;
    }
    Ok(())
}

/// Stage 1 of the two-stage procedure: jointly train encoder, decoder and
/// latent classifier by Adam on the negated supervised ELBO. The
/// discriminator parameters are not touched.
pub fn train_stage1<F: Scalar>(
    data: &LabeledImageSet<F>,
    validation: Option<&LabeledImageSet<F>>,
    bundle: &SvaeBundle<F>,
    cfg: &SvaeTrainConfig,
) -> Result<(SvaeBundle<F>, Vec<EpochRecord>)> {
    let mut current = ParamSet::merged_with_prefix(&[
        ("enc.", &bundle.encoder),
        ("dec.", &bundle.decoder),
        ("cls.", &bundle.classifier),
    ]);
    let mut adam = AdamState::new(&current, cfg.lr);
    let mut history = Vec::with_capacity(cfg.stage1_epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.stage1_epochs {
        let mut rng = Rng::derive(cfg.seed, "svae-stage1-epoch", epoch as u64);
        let perm = rng.permutation(data.count());
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut batches = 0usize;
        for batch_idx in perm.chunks(cfg.batch_size) {
            let batch = data.subset(batch_idx);
            let snapshot = SvaeBundle {
                encoder: current.split_prefix("enc."),
                decoder: current.split_prefix("dec."),
                classifier: current.split_prefix("cls."),
                ..bundle.clone()
            };
            let mut noise_rng = Rng::derive(cfg.seed, "svae-stage1-noise", step);
            let noise: Vec<F> = noise_rng.normal_vec(batch_idx.len() * bundle.latent);

            let mut tape = Tape::new();
            let enc = bind_params(&mut tape, &snapshot.encoder, true);
            let dec = bind_params(&mut tape, &snapshot.decoder, true);
            let cls = bind_params(&mut tape, &snapshot.classifier, true);
            let x = tape.constant(Tensor::new(
                batch.images.clone(),
                vec![batch_idx.len(), bundle.pixels()],
            ));
            let y = tape.constant(one_hot(&batch.labels, bundle.classes));
            let n = tape.constant(Tensor::new(noise, vec![batch_idx.len(), bundle.latent]));
            let nodes = svae_loss_into(
                &mut tape,
                &snapshot,
                &enc,
                &dec,
                &cls,
                x,
                y,
                n,
                cfg.weights(),
            );
            let total = tape.value(nodes.total).item();
            if !total.is_finite() {
                return Err(Error::Diverged {
                    step: step as usize,
                    what: "stage-1 objective is non-finite".to_string(),
                });
            }
            sums.0 += tape.value(nodes.j_kl).item().to_f64();
            sums.1 += tape.value(nodes.j2).item().to_f64();
            sums.2 += tape.value(nodes.j_dec).item().to_f64();
            batches += 1;

            let grads = tape.backward(nodes.total);
            let mut gset = ParamSet::new();
            for (name, t) in current.iter() {
                let bound = if let Some(rest) = name.strip_prefix("enc.") {
                    enc.id(rest)
                } else if let Some(rest) = name.strip_prefix("dec.") {
                    dec.id(rest)
                } else {
                    cls.id(name.strip_prefix("cls.").expect("stage-1 prefix"))
                };
                gset.insert(name.clone(), grads.of(bound, &t.shape));
            }
            let (next, next_adam) = adam_step(&current, &gset, &adam)?;
            current = next;
            adam = next_adam;
            step += 1;
        }

        let trained = SvaeBundle {
            encoder: current.split_prefix("enc."),
            decoder: current.split_prefix("dec."),
            classifier: current.split_prefix("cls."),
            ..bundle.clone()
        };
        let f2_accuracy = validation
            .map(|v| trained.latent_classifier_accuracy(v))
            .unwrap_or(f64::NAN);
        history.push(EpochRecord {
            stage: 1,
            epoch,
            j_kl: sums.0 / batches as f64,
            j2: sums.1 / batches as f64,
            j_dec: sums.2 / batches as f64,
            j_dis: f64::NAN,
            f2_accuracy,
        });
    }

    let trained = SvaeBundle {
        encoder: current.split_prefix("enc."),
        decoder: current.split_prefix("dec."),
        classifier: current.split_prefix("cls."),
        ..bundle.clone()
    };
    Ok((trained, history))
}

/// Stage 2: with the encoder frozen, train only the discriminator to
/// maximize E[f_dis(z_true)] + E[1 − f_dis(z_fake)], positives drawn from
/// q(z|x) by reparameterization and negatives from the standard normal.
pub fn train_stage2<F: Scalar>(
    data: &LabeledImageSet<F>,
    bundle: &SvaeBundle<F>,
    cfg: &SvaeTrainConfig,
) -> Result<(SvaeBundle<F>, Vec<EpochRecord>)> {
    let mut current = bundle.discriminator.clone();
    let mut adam = AdamState::new(&current, cfg.lr);
    let mut history = Vec::with_capacity(cfg.stage2_epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.stage2_epochs {
        let mut rng = Rng::derive(cfg.seed, "svae-stage2-epoch", epoch as u64);
        let perm = rng.permutation(data.count());
        let mut j_dis_sum = 0.0f64;
        let mut batches = 0usize;
        for batch_idx in perm.chunks(cfg.batch_size) {
            let batch = data.subset(batch_idx);
            let b = batch_idx.len();
            // positives from the frozen encoder's posterior
            let (mu, sigma) = bundle.encode_gaussian(&batch.images, b);
            let mut noise_rng = Rng::derive(cfg.seed, "svae-stage2-noise", step);
            let mut z_true = Vec::with_capacity(b * bundle.latent);
            for i in 0..b * bundle.latent {
                z_true.push(mu.data[i] + sigma.data[i] * noise_rng.normal());
            }
            let mut prior_rng = Rng::derive(cfg.seed, "svae-stage2-prior", step);
            let z_fake: Vec<F> = prior_rng.normal_vec(b * bundle.latent);

            let snapshot = SvaeBundle {
                discriminator: current.clone(),
                ..bundle.clone()
            };
            let mut tape = Tape::new();
            let dis = bind_params(&mut tape, &snapshot.discriminator, true);
            let zt = tape.constant(Tensor::new(z_true, vec![b, bundle.latent]));
            let zf = tape.constant(Tensor::new(z_fake, vec![b, bundle.latent]));
            let objective = discriminator_objective_into(
                &mut tape,
                &snapshot,
                &dis,
                zt,
                zf,
                cfg.discriminator_log_loss,
            );
            // maximize the objective: descend its negation
            let loss = tape.neg(objective);
            let value = tape.value(objective).item().to_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: step as usize,
                    what: "stage-2 objective is non-finite".to_string(),
                });
            }
            j_dis_sum += value;
            batches += 1;

            let grads = tape.backward(loss);
            let mut gset = ParamSet::new();
            for (name, t) in current.iter() {
                gset.insert(name.clone(), grads.of(dis.id(name), &t.shape));
            }
            let (next, next_adam) = adam_step(&current, &gset, &adam)?;
            current = next;
            adam = next_adam;
            step += 1;
        }
        history.push(EpochRecord {
            stage: 2,
            epoch,
            j_kl: f64::NAN,
            j2: f64::NAN,
            j_dec: f64::NAN,
            j_dis: j_dis_sum / batches.max(1) as f64,
            f2_accuracy: f64::NAN,
        });
    }

    let trained = SvaeBundle {
        discriminator: current,
        ..bundle.clone()
    };
    Ok((trained, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, SyntheticConfig};
    use crate::svae::discrimination_accuracy;

    fn tiny_corpus() -> (LabeledImageSet<f32>, LabeledImageSet<f32>) {
        let cfg = SyntheticConfig {
            train_count: 512,
            test_count: 128,
            ..SyntheticConfig::default()
        };
        generate_corpus::<f32>(20, &cfg)
    }

    fn tiny_cfg() -> SvaeTrainConfig {
        SvaeTrainConfig {
            stage1_epochs: 1,
            stage2_epochs: 1,
            batch_size: 64,
            lr: 2e-4,
            seed: 2,
            ..SvaeTrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (train, _) = tiny_corpus();
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 1);
        let cfg = SvaeTrainConfig {
            lr: 0.0,
            ..tiny_cfg()
        };
        let (out, _) = train_stage1(&train.subset(&[0, 1, 2, 3]), None, &bundle, &cfg).unwrap();
        assert_eq!(out.encoder.digest(), bundle.encoder.digest());
        assert_eq!(out.decoder.digest(), bundle.decoder.digest());
        assert_eq!(out.classifier.digest(), bundle.classifier.digest());
    }

    #[test]
    fn stage1_never_writes_the_discriminator() {
        let (train, _) = tiny_corpus();
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 2);
        let before = bundle.discriminator.digest();
        let (out, history) = train_stage1(&train, None, &bundle, &tiny_cfg()).unwrap();
        assert_eq!(out.discriminator.digest(), before);
        assert_ne!(out.encoder.digest(), bundle.encoder.digest());
        assert_eq!(history.len(), 1);
        assert!(history[0].j_dec.is_finite());
    }

    #[test]
    fn stage2_freezes_everything_but_the_discriminator() {
        let (train, _) = tiny_corpus();
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 3);
        let (out, _) = train_stage2(&train, &bundle, &tiny_cfg()).unwrap();
        assert_eq!(out.encoder.digest(), bundle.encoder.digest());
        assert_eq!(out.decoder.digest(), bundle.decoder.digest());
        assert_eq!(out.classifier.digest(), bundle.classifier.digest());
        assert_ne!(out.discriminator.digest(), bundle.discriminator.digest());
    }

    #[test]
    fn zero_stage2_epochs_keeps_discriminator_bits() {
        let (train, _) = tiny_corpus();
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 4);
        let cfg = SvaeTrainConfig {
            stage2_epochs: 0,
            ..tiny_cfg()
        };
        let (out, history) = train_stage2(&train, &bundle, &cfg).unwrap();
        assert_eq!(out.discriminator.digest(), bundle.discriminator.digest());
        assert!(history.is_empty());
    }

    #[test]
    fn trained_discriminator_ranks_true_latents_above_prior_draws() {
        let corpus_cfg = SyntheticConfig {
            train_count: 2048,
            test_count: 256,
            ..SyntheticConfig::default()
        };
        let (train, test) = generate_corpus::<f32>(21, &corpus_cfg);
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 5);
        let cfg = SvaeTrainConfig {
            stage1_epochs: 6,
            stage2_epochs: 8,
            lr: 1e-3,
            ..tiny_cfg()
        };
        let (b1, _) = train_stage1(&train, None, &bundle, &cfg).unwrap();
        let (b2, _) = train_stage2(&train, &b1, &cfg).unwrap();

        let n = test.count();
        let (mu, sigma) = b2.encode_gaussian(&test.images, n);
        let mut rng = Rng::derive(77, "stage2-test-noise", 0);
        let z_true: Vec<f32> = (0..mu.data.len())
            .map(|i| mu.data[i] + sigma.data[i] * rng.normal::<f32>())
            .collect();
        let z_fake: Vec<f32> = rng.normal_vec(n * 8);

        let p_true = b2.discriminate(&z_true, n);
        let p_fake = b2.discriminate(&z_fake, n);
        let mean = |t: &Tensor<f32>| t.data.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        assert!(
            mean(&p_true) > mean(&p_fake),
            "true {} vs fake {}",
            mean(&p_true),
            mean(&p_fake)
        );
        let acc = discrimination_accuracy(&b2, &z_true, &z_fake);
        assert!(acc > 0.5, "held-out discrimination accuracy {acc}");
    }

    #[test]
    fn determinism_same_seed_same_losses() {
        let (train, _) = tiny_corpus();
        let small = train.subset(&(0..128).collect::<Vec<_>>());
        let bundle = SvaeBundle::<f64>::new(28, 8, 10, 6);
        let cfg = SvaeTrainConfig {
            stage1_epochs: 2,
            ..tiny_cfg()
        };
        let small64 = small.cast::<f64>();
        let (_, h1) = train_stage1(&small64, None, &bundle, &cfg).unwrap();
        let (_, h2) = train_stage1(&small64, None, &bundle, &cfg).unwrap();
        for (a, b) in h1.iter().zip(&h2) {
            assert!((a.j_kl - b.j_kl).abs() < 1e-10);
            assert!((a.j2 - b.j2).abs() < 1e-10);
            assert!((a.j_dec - b.j_dec).abs() < 1e-10);
        }
    }
}
