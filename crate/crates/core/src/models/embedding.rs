use super::{init_conv, init_linear, ImageClassifier};
use crate::backbone::gradcheck::{bind_params, BoundParams};
use crate::backbone::{NodeId, ParamSet, Scalar, Tape, Tensor};

/// Distance threshold below which two embeddings count as the same identity.
pub const SAME_IDENTITY_THRESHOLD: f64 = 1.242;

/// Small convnet mapping an image to a unit-norm embedding.
///
/// Trained with a softmax head over digit classes (digit class doubles as
/// identity); the head is kept for training but recognition uses the
/// L2-normalized penultimate layer.
#[derive(Clone, Debug)]
pub struct EmbeddingNet<F: Scalar> {
    pub params: ParamSet<F>,
    pub side: usize,
    pub embed_dim: usize,
    pub classes: usize,
    c1: usize,
    c2: usize,
}

fn half(side: usize) -> usize {
    (side + 2 - 4) / 2 + 1 // k=4, stride=2, pad=1
}

impl<F: Scalar> EmbeddingNet<F> {
    pub fn new(side: usize, embed_dim: usize, classes: usize, seed: u64) -> Self {
        Self::with_channels(side, embed_dim, classes, 8, 16, seed)
    }

    pub fn with_channels(
        side: usize,
        embed_dim: usize,
        classes: usize,
        c1: usize,
        c2: usize,
        seed: u64,
    ) -> Self {
        let spatial = half(half(side));
        let flat = c2 * spatial * spatial;
        let mut params = ParamSet::new();
        init_conv(&mut params, "conv1", [c1, 1, 4, 4], 16, c1, seed);
        init_conv(&mut params, "conv2", [c2, c1, 4, 4], 16 * c1, c2, seed);
        init_linear(&mut params, "embed", embed_dim, flat, seed, 1.0);
        init_linear(&mut params, "head", classes, embed_dim, seed, 1.0);
        EmbeddingNet {
            params,
            side,
            embed_dim,
            classes,
            c1,
            c2,
        }
    }

    /// Raw (unnormalized) embedding builder.
    fn trunk_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let batch = tape.shape(x)[0];
        let spatial = half(half(self.side));
        let x4 = tape.reshape(x, vec![batch, 1, self.side, self.side]);
        let h = tape.conv2d(x4, bound.id("conv1.k"), bound.id("conv1.b"), 2, 1);
        let h = tape.relu(h);
        let h = tape.conv2d(h, bound.id("conv2.k"), bound.id("conv2.b"), 2, 1);
        let h = tape.relu(h);
        let h = tape.reshape(h, vec![batch, self.c2 * spatial * spatial]);
        tape.linear(h, bound.id("embed.w"), bound.id("embed.b"))
    }

    /// Unit-norm embedding builder for a `[batch, side²]` node.
    pub fn embed_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let raw = self.trunk_into(tape, x, bound);
        tape.l2_normalize_rows(raw)
    }

    /// Unit-norm embeddings for a batch of flat images, no gradients.
    pub fn embed_batch(&self, images: &[F], count: usize) -> Tensor<F> {
        let pixels = self.side * self.side;
        assert_eq!(images.len(), count * pixels);
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &self.params, false);
        let x = tape.constant(Tensor::new(images.to_vec(), vec![count, pixels]));
        let e = self.embed_into(&mut tape, x, &bound);
        tape.value(e).clone()
    }

    pub fn embed_one(&self, image: &[F]) -> Vec<F> {
        self.embed_batch(image, 1).data
    }

    /// Euclidean distance between the embeddings of two images; 0 for
    /// identical inputs, at most 2 for unit-norm embeddings.
    pub fn distance(&self, a: &[F], b: &[F]) -> f64 {
        let ea = self.embed_one(a);
        let eb = self.embed_one(b);
        embedding_distance(&ea, &eb)
    }
}

/// Euclidean distance between two embedding vectors.
pub fn embedding_distance<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl<F: Scalar> ImageClassifier<F> for EmbeddingNet<F> {
    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn replace_params(&self, params: ParamSet<F>) -> Self {
        self.params
            .check_same_layout(&params, "embedding replace_params")
            .expect("parameter layout must match");
        EmbeddingNet {
            params,
            ..self.clone()
        }
    }

    fn arch(&self) -> String {
        format!(
            "embed-s{}-c{}x{}-d{}-c{}-v1",
            self.side, self.c1, self.c2, self.embed_dim, self.classes
        )
    }

    fn input_side(&self) -> usize {
        self.side
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    /// Training head over the raw embedding; discarded at recognition time.
    fn logits_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let raw = self.trunk_into(tape, x, bound);
        tape.linear(raw, bound.id("head.w"), bound.id("head.b"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_unit_norm() {
        let net = EmbeddingNet::<f32>::new(28, 32, 10, 7);
        let x: Vec<f32> = (0..784).map(|i| ((i * 13) % 256) as f32 / 255.0).collect();
        let e = net.embed_one(&x);
        let n: f64 = e.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5, "norm {n}");
    }

    #[test]
    fn self_distance_is_zero() {
        let net = EmbeddingNet::<f32>::new(28, 32, 10, 8);
        let x: Vec<f32> = (0..784).map(|i| (i % 11) as f32 / 11.0).collect();
        assert_eq!(net.distance(&x, &x), 0.0);
    }

    #[test]
    fn zero_image_embedding_is_finite() {
        // all-zero trunk output on zeroed params hits the epsilon guard, not NaN
        let net = EmbeddingNet::<f32>::new(28, 16, 10, 9);
        let net = net.replace_params(net.params.zeros_like());
        let e = net.embed_one(&vec![0.0; 784]);
        assert!(e.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn orthogonal_unit_embeddings_are_sqrt2_apart() {
        let a = vec![1.0f64, 0.0];
        let b = vec![0.0f64, 1.0];
        assert!((embedding_distance(&a, &b) - 2.0f64.sqrt()).abs() < 1e-12);
    }
}
