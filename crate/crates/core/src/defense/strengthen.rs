use crate::backbone::gradcheck::bind_params;
use crate::backbone::{adam_step, AdamState, ParamSet, Rng, Scalar, Tape, Tensor};
use crate::data::{one_hot, LabeledImageSet};
use crate::error::{Error, Result};
use crate::models::{ClassifierTrainConfig, ImageClassifier};

/// Matched (clean, adversarial) images with the clean labels, for logit
/// pairing. Adversarial examples are generated against the pre-strengthening
/// network.
#[derive(Clone, Debug)]
pub struct LogitPairs<F: Scalar> {
    pub clean: Vec<F>,
    pub adversarial: Vec<F>,
    pub labels: Vec<u8>,
    pub pixels: usize,
}

impl<F: Scalar> LogitPairs<F> {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    fn subset(&self, idx: &[usize]) -> (Vec<F>, Vec<F>, Vec<u8>) {
        let mut c = Vec::with_capacity(idx.len() * self.pixels);
        let mut a = Vec::with_capacity(idx.len() * self.pixels);
        let mut l = Vec::with_capacity(idx.len());
        for &i in idx {
            c.extend_from_slice(&self.clean[i * self.pixels..(i + 1) * self.pixels]);
            a.extend_from_slice(&self.adversarial[i * self.pixels..(i + 1) * self.pixels]);
            l.push(self.labels[i]);
        }
        (c, a, l)
    }
}

/// Vanilla adversarial training: fine-tune on the union of the clean set and
/// the adversarial examples under their oracle labels (original label for
/// Type II examples, transformed label for Type I examples).
pub fn adversarial_train<F: Scalar, C: ImageClassifier<F>>(
    clean: &LabeledImageSet<F>,
    adv_images: &[F],
    adv_labels: &[u8],
    net: &C,
    cfg: &ClassifierTrainConfig,
) -> Result<C> {
    let pixels = clean.pixels();
    assert_eq!(adv_images.len(), adv_labels.len() * pixels);
    let mut union = clean.clone();
    union.images.extend_from_slice(adv_images);
    union.labels.extend_from_slice(adv_labels);
    union.split = format!("{}+adversarial", clean.split);
    crate::models::train_classifier(net, &union, cfg)
}

/// Adversarial logit pairing: task cross-entropy over the mixed batch (clean
/// and adversarial images, both under the clean label) plus
/// λ·mean‖logits(x) − logits(x′)‖² over the pairs.
pub fn logit_pairing_train<F: Scalar, C: ImageClassifier<F>>(
    dataset: &LabeledImageSet<F>,
    pairs: &LogitPairs<F>,
    lambda: f64,
    net: &C,
    cfg: &ClassifierTrainConfig,
) -> Result<C> {
    if pairs.count() == 0 {
        return crate::models::train_classifier(net, dataset, cfg);
    }
    let pixels = dataset.pixels();
    assert_eq!(pairs.pixels, pixels, "pair pixel count mismatch");
    let classes = net.class_count();
    let mut current = net.params().clone();
    let mut adam = AdamState::new(&current, cfg.lr);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derive(cfg.seed, "logit-pairing-epoch", epoch as u64);
        let data_perm = rng.permutation(dataset.count());
        let pair_perm = rng.permutation(pairs.count());
        let mut pair_cursor = 0usize;
        let pair_batch = (cfg.batch_size / 4).max(1);

        for batch_idx in data_perm.chunks(cfg.batch_size) {
            // cycle through the pairs alongside the task batches
            let mut pick = Vec::with_capacity(pair_batch);
            for _ in 0..pair_batch {
                pick.push(pair_perm[pair_cursor % pairs.count()]);
                pair_cursor += 1;
            }
            let (pc, pa, pl) = pairs.subset(&pick);
            let batch = dataset.subset(batch_idx);
            let k = pick.len();

            let snapshot = net.replace_params(current.clone());
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &current, true);

            // task term over clean batch + both sides of each pair
            let mut task_images = batch.images.clone();
            task_images.extend_from_slice(&pc);
            task_images.extend_from_slice(&pa);
            let mut task_labels = batch.labels.clone();
            task_labels.extend_from_slice(&pl);
            task_labels.extend_from_slice(&pl);
            let n_task = task_labels.len();
            let x = tape.constant(Tensor::new(task_images, vec![n_task, pixels]));
            let y = tape.constant(one_hot(&task_labels, classes));
            let logits = snapshot.logits_into(&mut tape, x, &bound);
            let ce = tape.softmax_cross_entropy(logits, y);
            let task_loss = tape.mean_all(ce);

            // pairing term: mean squared logit difference over the pairs
            let xc = tape.constant(Tensor::new(pc, vec![k, pixels]));
            let xa = tape.constant(Tensor::new(pa, vec![k, pixels]));
            let lc = snapshot.logits_into(&mut tape, xc, &bound);
            let la = snapshot.logits_into(&mut tape, xa, &bound);
            let diff = tape.sub(lc, la);
            let sq = tape.square(diff);
            let msd = tape.mean_all(sq);
            let pair_loss = tape.scale_shift(msd, lambda, 0.0);

            let loss = tape.add(task_loss, pair_loss);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: "logit-pairing loss is non-finite".into(),
                });
            }
            let grads = tape.backward(loss);
            let mut gset = ParamSet::new();
            for (name, t) in current.iter() {
                gset.insert(name.clone(), grads.of(bound.id(name), &t.shape));
            }
            let (next, next_adam) = adam_step(&current, &gset, &adam)?;
            current = next;
            adam = next_adam;
            step += 1;
        }
    }
    Ok(net.replace_params(current))
}

/// Classifier accuracy on a flat image/label array pair.
pub fn accuracy_on_examples<F: Scalar, C: ImageClassifier<F>>(
    net: &C,
    images: &[F],
    labels: &[u8],
) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let preds = crate::models::predict(net, images, labels.len());
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == **l as usize)
        .count();
    hits as f64 / labels.len() as f64
}

/// Random half/half split of `0..count` for train-vs-heldout adversarial
/// example sets.
pub fn half_split(count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::derive(seed, "strengthen-split", 0);
    let perm = rng.permutation(count);
    let cut = count / 2;
    (perm[..cut].to_vec(), perm[cut..].to_vec())
}
