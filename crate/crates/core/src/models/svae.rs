use std::path::Path;

use super::{init_conv, init_linear};
use crate::backbone::gradcheck::{bind_params, BoundParams};
use crate::backbone::{
    load_checkpoint, save_checkpoint, NodeId, ParamSet, Scalar, Tape, Tensor,
};
use crate::error::{Error, Result};

/// The four trained parameter sets of the supervised VAE: encoder
/// (image → μ, log σ), decoder (z → image), latent classifier f₂
/// (z → class logits) and latent discriminator f_dis (z → probability of
/// being an encoded latent rather than a prior draw).
#[derive(Clone, Debug)]
pub struct SvaeBundle<F: Scalar> {
    pub encoder: ParamSet<F>,
    pub decoder: ParamSet<F>,
    pub classifier: ParamSet<F>,
    pub discriminator: ParamSet<F>,
    pub side: usize,
    pub latent: usize,
    pub classes: usize,
    pub c1: usize,
    pub c2: usize,
    pub cls_hidden: usize,
    pub dis_hidden: usize,
}

fn half(side: usize) -> usize {
    (side + 2 - 4) / 2 + 1 // k=4, stride=2, pad=1
}

/// Node ids of the encoder's Gaussian heads.
pub struct EncodedGaussian {
    pub mu: NodeId,
    /// Half-log-variance: σ = exp(half_log_var).
    pub half_log_var: NodeId,
}

impl<F: Scalar> SvaeBundle<F> {
    pub fn new(side: usize, latent: usize, classes: usize, seed: u64) -> Self {
        Self::with_widths(side, latent, classes, 8, 16, 64, 64, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_widths(
        side: usize,
        latent: usize,
        classes: usize,
        c1: usize,
        c2: usize,
        cls_hidden: usize,
        dis_hidden: usize,
        seed: u64,
    ) -> Self {
        let spatial = half(half(side));
        let flat = c2 * spatial * spatial;

        let mut encoder = ParamSet::new();
        init_conv(&mut encoder, "conv1", [c1, 1, 4, 4], 16, c1, seed);
        init_conv(&mut encoder, "conv2", [c2, c1, 4, 4], 16 * c1, c2, seed);
        init_linear(&mut encoder, "mu", latent, flat, seed, 1.0);
        // small half-log-variance head keeps σ near 1 at the start
        init_linear(&mut encoder, "hlv", latent, flat, seed, 0.1);

        let mut decoder = ParamSet::new();
        init_linear(&mut decoder, "fc", flat, latent, seed, 1.0);
        init_conv(&mut decoder, "deconv1", [c2, c1, 4, 4], 16 * c2, c1, seed);
        init_conv(&mut decoder, "deconv2", [c1, 1, 4, 4], 16 * c1, 1, seed);

        let mut classifier = ParamSet::new();
        init_linear(&mut classifier, "fc1", cls_hidden, latent, seed, 2.0f64.sqrt());
        init_linear(&mut classifier, "fc2", classes, cls_hidden, seed, 1.0);

        let mut discriminator = ParamSet::new();
        init_linear(&mut discriminator, "fc1", dis_hidden, latent, seed, 2.0f64.sqrt());
        init_linear(&mut discriminator, "fc2", 1, dis_hidden, seed, 1.0);

        SvaeBundle {
            encoder,
            decoder,
            classifier,
            discriminator,
            side,
            latent,
            classes,
            c1,
            c2,
            cls_hidden,
            dis_hidden,
        }
    }

    pub fn arch(&self) -> String {
        format!(
            "svae-s{}-c{}x{}-L{}-cls{}-dis{}-c{}-v1",
            self.side, self.c1, self.c2, self.latent, self.cls_hidden, self.dis_hidden, self.classes
        )
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    // ----- tape builders -----

    /// Encoder heads for a `[batch, side²]` image node.
    pub fn encode_into(&self, tape: &mut Tape<F>, x: NodeId, enc: &BoundParams) -> EncodedGaussian {
        let batch = tape.shape(x)[0];
        let spatial = half(half(self.side));
        let x4 = tape.reshape(x, vec![batch, 1, self.side, self.side]);
        let h = tape.conv2d(x4, enc.id("conv1.k"), enc.id("conv1.b"), 2, 1);
        let h = tape.relu(h);
        let h = tape.conv2d(h, enc.id("conv2.k"), enc.id("conv2.b"), 2, 1);
        let h = tape.relu(h);
        let h = tape.reshape(h, vec![batch, self.c2 * spatial * spatial]);
        let mu = tape.linear(h, enc.id("mu.w"), enc.id("mu.b"));
        let half_log_var = tape.linear(h, enc.id("hlv.w"), enc.id("hlv.b"));
        EncodedGaussian { mu, half_log_var }
    }

    /// Decoder pre-sigmoid pixel logits `[batch, side²]` for a latent node.
    pub fn decode_logits_into(&self, tape: &mut Tape<F>, z: NodeId, dec: &BoundParams) -> NodeId {
        let batch = tape.shape(z)[0];
        let spatial = half(half(self.side));
        let h = tape.linear(z, dec.id("fc.w"), dec.id("fc.b"));
        let h = tape.relu(h);
        let h = tape.reshape(h, vec![batch, self.c2, spatial, spatial]);
        let h = tape.conv2d_transpose(h, dec.id("deconv1.k"), dec.id("deconv1.b"), 2, 1);
        let h = tape.relu(h);
        let h = tape.conv2d_transpose(h, dec.id("deconv2.k"), dec.id("deconv2.b"), 2, 1);
        tape.reshape(h, vec![batch, self.pixels()])
    }

    /// Decoded image in [0,1]: sigmoid of the pixel logits.
    pub fn decode_into(&self, tape: &mut Tape<F>, z: NodeId, dec: &BoundParams) -> NodeId {
        let logits = self.decode_logits_into(tape, z, dec);
        tape.sigmoid(logits)
    }

    /// Latent classifier logits `[batch, classes]`.
    pub fn classify_into(&self, tape: &mut Tape<F>, z: NodeId, cls: &BoundParams) -> NodeId {
        let h = tape.linear(z, cls.id("fc1.w"), cls.id("fc1.b"));
        let h = tape.relu(h);
        tape.linear(h, cls.id("fc2.w"), cls.id("fc2.b"))
    }

    /// Discriminator probability `[batch]` in (0,1).
    pub fn discriminate_into(&self, tape: &mut Tape<F>, z: NodeId, dis: &BoundParams) -> NodeId {
        let h = tape.linear(z, dis.id("fc1.w"), dis.id("fc1.b"));
        let h = tape.relu(h);
        let out = tape.linear(h, dis.id("fc2.w"), dis.id("fc2.b"));
        let out = tape.sigmoid(out);
        let batch = tape.shape(z)[0];
        tape.reshape(out, vec![batch])
    }

    // ----- no-grad conveniences -----

    /// Posterior means μ(x) for a batch of flat images.
    pub fn encode_mu(&self, images: &[F], count: usize) -> Tensor<F> {
        let mut tape = Tape::new();
        let enc = bind_params(&mut tape, &self.encoder, false);
        let x = tape.constant(Tensor::new(images.to_vec(), vec![count, self.pixels()]));
        let g = self.encode_into(&mut tape, x, &enc);
        tape.value(g.mu).clone()
    }

    /// Posterior (μ, σ) for a batch of flat images.
    pub fn encode_gaussian(&self, images: &[F], count: usize) -> (Tensor<F>, Tensor<F>) {
        let mut tape = Tape::new();
        let enc = bind_params(&mut tape, &self.encoder, false);
        let x = tape.constant(Tensor::new(images.to_vec(), vec![count, self.pixels()]));
        let g = self.encode_into(&mut tape, x, &enc);
        let sigma = tape.exp(g.half_log_var);
        (tape.value(g.mu).clone(), tape.value(sigma).clone())
    }

    /// Decoded images in [0,1] for a batch of latents.
    pub fn decode(&self, z: &[F], count: usize) -> Tensor<F> {
        let mut tape = Tape::new();
        let dec = bind_params(&mut tape, &self.decoder, false);
        let zi = tape.constant(Tensor::new(z.to_vec(), vec![count, self.latent]));
        let img = self.decode_into(&mut tape, zi, &dec);
        tape.value(img).clone()
    }

    /// f₂ class probabilities for a batch of latents.
    pub fn classify_probs(&self, z: &[F], count: usize) -> Tensor<F> {
        let mut tape = Tape::new();
        let cls = bind_params(&mut tape, &self.classifier, false);
        let zi = tape.constant(Tensor::new(z.to_vec(), vec![count, self.latent]));
        let logits = self.classify_into(&mut tape, zi, &cls);
        let probs = tape.softmax_rows(logits);
        tape.value(probs).clone()
    }

    /// f₂ argmax labels for a batch of latents.
    pub fn classify_labels(&self, z: &[F], count: usize) -> Vec<usize> {
        let probs = self.classify_probs(z, count);
        probs
            .data
            .chunks(self.classes)
            .map(crate::backbone::tensor::argmax)
            .collect()
    }

    /// f_dis probabilities for a batch of latents.
    pub fn discriminate(&self, z: &[F], count: usize) -> Tensor<F> {
        let mut tape = Tape::new();
        let dis = bind_params(&mut tape, &self.discriminator, false);
        let zi = tape.constant(Tensor::new(z.to_vec(), vec![count, self.latent]));
        let p = self.discriminate_into(&mut tape, zi, &dis);
        tape.value(p).clone()
    }

    /// Latent-classifier accuracy on flat images via the posterior mean.
    pub fn latent_classifier_accuracy(&self, set: &crate::data::LabeledImageSet<F>) -> f64 {
        let mut hits = 0usize;
        let pixels = self.pixels();
        for (chunk_idx, chunk) in set.images.chunks(256 * pixels).enumerate() {
            let n = chunk.len() / pixels;
            let mu = self.encode_mu(chunk, n);
            let labels = self.classify_labels(&mu.data, n);
            for (i, pred) in labels.iter().enumerate() {
                if *pred == set.labels[chunk_idx * 256 + i] as usize {
                    hits += 1;
                }
            }
        }
        hits as f64 / set.count().max(1) as f64
    }

    // ----- persistence -----

    pub fn save(&self, prefix: &Path) -> Result<()> {
        let merged = ParamSet::merged_with_prefix(&[
            ("enc.", &self.encoder),
            ("dec.", &self.decoder),
            ("cls.", &self.classifier),
            ("dis.", &self.discriminator),
        ]);
        let meta = serde_json::json!({
            "arch": self.arch(),
            "side": self.side,
            "latent": self.latent,
            "classes": self.classes,
            "c1": self.c1,
            "c2": self.c2,
            "cls_hidden": self.cls_hidden,
            "dis_hidden": self.dis_hidden,
        });
        save_checkpoint(prefix, &merged, meta)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let ckpt = load_checkpoint::<F>(prefix)?;
        let meta = &ckpt.meta;
        let get = |k: &str| -> Result<usize> {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Corrupt {
                    path: prefix.to_path_buf(),
                    what: format!("missing bundle field `{k}`"),
                })
        };
        let bundle = SvaeBundle {
            encoder: ckpt.params.split_prefix("enc."),
            decoder: ckpt.params.split_prefix("dec."),
            classifier: ckpt.params.split_prefix("cls."),
            discriminator: ckpt.params.split_prefix("dis."),
            side: get("side")?,
            latent: get("latent")?,
            classes: get("classes")?,
            c1: get("c1")?,
            c2: get("c2")?,
            cls_hidden: get("cls_hidden")?,
            dis_hidden: get("dis_hidden")?,
        };
        let stored = meta["arch"].as_str().unwrap_or_default();
        if stored != bundle.arch() {
            return Err(Error::Corrupt {
                path: prefix.to_path_buf(),
                what: format!(
                    "architecture descriptor mismatch: stored `{stored}`, rebuilt `{}`",
                    bundle.arch()
                ),
            });
        }
        // fresh construction validates every array's presence and shape
        let reference = SvaeBundle::<F>::with_widths(
            bundle.side,
            bundle.latent,
            bundle.classes,
            bundle.c1,
            bundle.c2,
            bundle.cls_hidden,
            bundle.dis_hidden,
            0,
        );
        reference
            .encoder
            .check_same_layout(&bundle.encoder, "svae encoder")?;
        reference
            .decoder
            .check_same_layout(&bundle.decoder, "svae decoder")?;
        reference
            .classifier
            .check_same_layout(&bundle.classifier, "svae classifier")?;
        reference
            .discriminator
            .check_same_layout(&bundle.discriminator, "svae discriminator")?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_flow_end_to_end() {
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 5);
        let x: Vec<f32> = (0..784 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        let (mu, sigma) = bundle.encode_gaussian(&x, 3);
        assert_eq!(mu.shape, vec![3, 8]);
        assert!(sigma.data.iter().all(|&s| s > 0.0));
        let img = bundle.decode(&mu.data, 3);
        assert_eq!(img.shape, vec![3, 784]);
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let probs = bundle.classify_probs(&mu.data, 3);
        for row in probs.data.chunks(10) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let d = bundle.discriminate(&mu.data, 3);
        assert!(d.data.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn save_load_round_trip_validates_arch() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("svae");
        let bundle = SvaeBundle::<f32>::new(28, 8, 10, 6);
        bundle.save(&prefix).unwrap();
        let loaded = SvaeBundle::<f32>::load(&prefix).unwrap();
        assert_eq!(loaded.arch(), bundle.arch());
        assert_eq!(loaded.encoder.digest(), bundle.encoder.digest());
        assert_eq!(loaded.discriminator.digest(), bundle.discriminator.digest());
    }

    #[test]
    fn small_side_variant_for_oracle_tests() {
        let bundle = SvaeBundle::<f64>::with_widths(8, 3, 4, 2, 3, 8, 8, 7);
        let x = vec![0.25; 64 * 2];
        let (mu, _) = bundle.encode_gaussian(&x, 2);
        assert_eq!(mu.shape, vec![2, 3]);
        let img = bundle.decode(&mu.data, 2);
        assert_eq!(img.shape, vec![2, 64]);
    }
}
