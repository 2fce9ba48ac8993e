//! Network definitions: attacked classifiers (MLP, LeNet-style convnet,
//! quadratic sphere net, embedding net) and the four SVAE subnetworks.
//!
//! Forward passes are tape builders, so every model shares the backbone's
//! gradient path; parameters are immutable `ParamSet`s and all forwards are
//! safe to run in parallel against shared models.

pub mod embedding;
pub mod lenet;
pub mod mlp;
pub mod quadratic;
pub mod svae;

use crate::backbone::gradcheck::{bind_params, BoundParams};
use crate::backbone::{adam_step, AdamState, NodeId, ParamSet, Rng, Scalar, Tape, Tensor};
use crate::data::{one_hot, LabeledImageSet};
use crate::error::{Error, Result};

pub use embedding::EmbeddingNet;
pub use lenet::LeNet;
pub use mlp::MlpClassifier;
pub use quadratic::{canonicalize, CanonicalQuadratic, QuadraticNet, WeightMode};
pub use svae::SvaeBundle;

/// A classifier over flat `[batch, side²]` images producing class logits.
pub trait ImageClassifier<F: Scalar>: Send + Sync + Sized {
    fn params(&self) -> &ParamSet<F>;
    fn replace_params(&self, params: ParamSet<F>) -> Self;
    fn arch(&self) -> String;
    fn input_side(&self) -> usize;
    fn class_count(&self) -> usize;
    /// Build logits for a `[batch, side²]` node using bound parameters.
    fn logits_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId;
}

/// Gaussian-initialized dense weight `[out, in]` with std `gain/√in`; zero bias.
pub fn init_linear<F: Scalar>(
    params: &mut ParamSet<F>,
    name: &str,
    out: usize,
    inp: usize,
    seed: u64,
    gain: f64,
) {
    let mut rng = Rng::derive(seed, &format!("init/{name}"), 0);
    let std = gain * (1.0 / inp as f64).sqrt();
    let w: Vec<F> = (0..out * inp)
        .map(|_| F::from_f64(rng.normal_f64() * std))
        .collect();
    params.insert(format!("{name}.w"), Tensor::new(w, vec![out, inp]));
    params.insert(format!("{name}.b"), Tensor::zeros(vec![out]));
}

/// He-initialized conv kernel with explicit shape and fan-in; zero bias of
/// `bias_len` channels.
pub fn init_conv<F: Scalar>(
    params: &mut ParamSet<F>,
    name: &str,
    shape: [usize; 4],
    fan_in: usize,
    bias_len: usize,
    seed: u64,
) {
    let mut rng = Rng::derive(seed, &format!("init/{name}"), 0);
    let std = (2.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let k: Vec<F> = (0..len)
        .map(|_| F::from_f64(rng.normal_f64() * std))
        .collect();
    params.insert(format!("{name}.k"), Tensor::new(k, shape.to_vec()));
    params.insert(format!("{name}.b"), Tensor::zeros(vec![bias_len]));
}

/// Forward a batch of flat images through any classifier, no gradients.
pub fn logits_batch<F: Scalar, C: ImageClassifier<F>>(
    net: &C,
    images: &[F],
    count: usize,
) -> Tensor<F> {
    let pixels = net.input_side() * net.input_side();
    assert_eq!(images.len(), count * pixels, "logits_batch shape mismatch");
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, net.params(), false);
    let x = tape.constant(Tensor::new(images.to_vec(), vec![count, pixels]));
    let logits = net.logits_into(&mut tape, x, &bound);
    tape.value(logits).clone()
}

/// Softmax probabilities for a batch of flat images.
pub fn probabilities_batch<F: Scalar, C: ImageClassifier<F>>(
    net: &C,
    images: &[F],
    count: usize,
) -> Tensor<F> {
    let pixels = net.input_side() * net.input_side();
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, net.params(), false);
    let x = tape.constant(Tensor::new(images.to_vec(), vec![count, pixels]));
    let logits = net.logits_into(&mut tape, x, &bound);
    let probs = tape.softmax_rows(logits);
    tape.value(probs).clone()
}

/// Argmax class predictions, evaluated in deterministic chunks.
pub fn predict<F: Scalar, C: ImageClassifier<F>>(
    net: &C,
    images: &[F],
    count: usize,
) -> Vec<usize> {
    let pixels = net.input_side() * net.input_side();
    let classes = net.class_count();
    let mut out = Vec::with_capacity(count);
    for chunk in images.chunks(256 * pixels) {
        let n = chunk.len() / pixels;
        let logits = logits_batch(net, chunk, n);
        for row in logits.data.chunks(classes) {
            out.push(crate::backbone::tensor::argmax(row));
        }
    }
    assert_eq!(out.len(), count);
    out
}

/// Fraction of examples classified into their labeled class.
pub fn accuracy<F: Scalar, C: ImageClassifier<F>>(net: &C, set: &LabeledImageSet<F>) -> f64 {
    let preds = predict(net, &set.images, set.count());
    let hits = preds
        .iter()
        .zip(&set.labels)
        .filter(|(p, l)| **p == **l as usize)
        .count();
    hits as f64 / set.count().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 8,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Minimize mean softmax cross-entropy with Adam. Returns the trained copy.
pub fn train_classifier<F: Scalar, C: ImageClassifier<F>>(
    net: &C,
    data: &LabeledImageSet<F>,
    cfg: &ClassifierTrainConfig,
) -> Result<C> {
    let mut current = net.params().clone();
    let mut adam = AdamState::new(&current, cfg.lr);
    let pixels = data.pixels();
    let classes = net.class_count();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derive(cfg.seed, "classifier-epoch", epoch as u64);
        let perm = rng.permutation(data.count());
        for batch_idx in perm.chunks(cfg.batch_size) {
            let batch = data.subset(batch_idx);
            let snapshot = net.replace_params(current.clone());
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &current, true);
            let x = tape.constant(Tensor::new(
                batch.images.clone(),
                vec![batch_idx.len(), pixels],
            ));
            let y = tape.constant(one_hot(&batch.labels, classes));
            let logits = snapshot.logits_into(&mut tape, x, &bound);
            let ce = tape.softmax_cross_entropy(logits, y);
            let loss = tape.mean_all(ce);
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: "classifier cross-entropy is non-finite".to_string(),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, SyntheticConfig};

    #[test]
    fn small_mlp_learns_the_small_corpus() {
        let cfg = SyntheticConfig {
            train_count: 600,
            test_count: 120,
            ..SyntheticConfig::default()
        };
        let (train, test) = generate_corpus::<f32>(3, &cfg);
        let net = MlpClassifier::new(28, 32, 10, 17);
        let trained = train_classifier(
            &net,
            &train,
            &ClassifierTrainConfig {
                epochs: 6,
                batch_size: 64,
                lr: 2e-3,
                seed: 5,
            },
        )
        .unwrap();
        let acc = accuracy(&trained, &test);
        assert!(acc > 0.5, "tiny MLP should beat chance by far, got {acc}");
    }
}

/// Classifier checkpoint round trip: any `ImageClassifier` saves with a
/// structured meta record and loads back as the matching concrete type.
#[derive(Clone, Debug)]
pub enum AnyClassifier<F: Scalar> {
    Mlp(MlpClassifier<F>),
    LeNet(LeNet<F>),
    Embedding(EmbeddingNet<F>),
}

impl<F: Scalar> ImageClassifier<F> for AnyClassifier<F> {
    fn params(&self) -> &ParamSet<F> {
        match self {
            AnyClassifier::Mlp(n) => n.params(),
            AnyClassifier::LeNet(n) => n.params(),
            AnyClassifier::Embedding(n) => n.params(),
        }
    }

    fn replace_params(&self, params: ParamSet<F>) -> Self {
        match self {
            AnyClassifier::Mlp(n) => AnyClassifier::Mlp(n.replace_params(params)),
            AnyClassifier::LeNet(n) => AnyClassifier::LeNet(n.replace_params(params)),
            AnyClassifier::Embedding(n) => AnyClassifier::Embedding(n.replace_params(params)),
        }
    }

    fn arch(&self) -> String {
        match self {
            AnyClassifier::Mlp(n) => n.arch(),
            AnyClassifier::LeNet(n) => n.arch(),
            AnyClassifier::Embedding(n) => n.arch(),
        }
    }

    fn input_side(&self) -> usize {
        match self {
            AnyClassifier::Mlp(n) => n.input_side(),
            AnyClassifier::LeNet(n) => n.input_side(),
            AnyClassifier::Embedding(n) => n.input_side(),
        }
    }

    fn class_count(&self) -> usize {
        match self {
            AnyClassifier::Mlp(n) => n.class_count(),
            AnyClassifier::LeNet(n) => n.class_count(),
            AnyClassifier::Embedding(n) => n.class_count(),
        }
    }

    fn logits_into(
        &self,
        tape: &mut Tape<F>,
        x: crate::backbone::NodeId,
        bound: &crate::backbone::gradcheck::BoundParams,
    ) -> crate::backbone::NodeId {
        match self {
            AnyClassifier::Mlp(n) => n.logits_into(tape, x, bound),
            AnyClassifier::LeNet(n) => n.logits_into(tape, x, bound),
            AnyClassifier::Embedding(n) => n.logits_into(tape, x, bound),
        }
    }
}

impl<F: Scalar> AnyClassifier<F> {
    pub fn embedding(&self) -> Option<&EmbeddingNet<F>> {
        match self {
            AnyClassifier::Embedding(n) => Some(n),
            _ => None,
        }
    }
}

/// Write a classifier checkpoint with its architecture descriptor.
pub fn save_classifier<F: Scalar, C: ImageClassifier<F>>(
    prefix: &std::path::Path,
    net: &C,
) -> Result<()> {
    let meta = serde_json::json!({ "arch": net.arch() });
    crate::backbone::save_checkpoint(prefix, net.params(), meta)
}

/// Load any classifier checkpoint, reconstructing the network from its
/// architecture descriptor and validating the stored parameter layout.
pub fn load_classifier<F: Scalar>(prefix: &std::path::Path) -> Result<AnyClassifier<F>> {
    let ckpt = crate::backbone::load_checkpoint::<F>(prefix)?;
    let arch = ckpt.meta["arch"].as_str().unwrap_or_default().to_string();
    let corrupt = |what: String| Error::Corrupt {
        path: prefix.to_path_buf(),
        what,
    };
    let nums: Vec<usize> = arch
        .split(['-'])
        .filter_map(|tok| {
            let digits: String = tok
                .chars()
                .skip_while(|c| c.is_ascii_alphabetic())
                .collect();
            if tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && !digits.is_empty() {
                digits.parse().ok()
            } else {
                None
            }
        })
        .collect();
    let built: AnyClassifier<F> = if arch.starts_with("mlp-") {
        // mlp-s{side}-h{hidden}-c{classes}-v1
        let (side, hidden, classes) = (nums[0], nums[1], nums[2]);
        AnyClassifier::Mlp(MlpClassifier::new(side, hidden, classes, 0))
    } else if arch.starts_with("lenet-") {
        // lenet-s{side}-c{c1}x{c2}-f{fc}-c{classes}-v1
        let side = nums[0];
        let mix: Vec<usize> = arch
            .split('-')
            .nth(2)
            .and_then(|t| {
                t.strip_prefix('c').map(|rest| {
                    rest.split('x').filter_map(|v| v.parse().ok()).collect()
                })
            })
            .unwrap_or_default();
        if mix.len() != 2 {
            return Err(corrupt(format!("unparseable lenet descriptor `{arch}`")));
        }
        let fc = nums[nums.len() - 3];
        let classes = nums[nums.len() - 2];
        AnyClassifier::LeNet(LeNet::with_widths(side, classes, mix[0], mix[1], fc, 0))
    } else if arch.starts_with("embed-") {
        // embed-s{side}-c{c1}x{c2}-d{dim}-c{classes}-v1
        let side = nums[0];
        let mix: Vec<usize> = arch
            .split('-')
            .nth(2)
            .and_then(|t| {
                t.strip_prefix('c').map(|rest| {
                    rest.split('x').filter_map(|v| v.parse().ok()).collect()
                })
            })
            .unwrap_or_default();
        if mix.len() != 2 {
            return Err(corrupt(format!("unparseable embed descriptor `{arch}`")));
        }
        let dim = nums[nums.len() - 3];
        let classes = nums[nums.len() - 2];
        AnyClassifier::Embedding(EmbeddingNet::with_channels(
            side, dim, classes, mix[0], mix[1], 0,
        ))
    } else {
        return Err(corrupt(format!("unknown architecture `{arch}`")));
    };
    built
        .params()
        .check_same_layout(&ckpt.params, "classifier checkpoint")?;
    if built.arch() != arch {
        return Err(corrupt(format!(
            "descriptor mismatch: stored `{arch}`, rebuilt `{}`",
            built.arch()
        )));
    }
    Ok(built.replace_params(ckpt.params))
}
