use super::{init_conv, init_linear, ImageClassifier};
use crate::backbone::gradcheck::BoundParams;
use crate::backbone::{NodeId, ParamSet, Scalar, Tape};

/// LeNet-style convnet with strided convolutions standing in for pooling:
/// conv5×5(6, stride 2) → conv5×5(16, stride 2) → dense 120 → logits.
#[derive(Clone, Debug)]
pub struct LeNet<F: Scalar> {
    pub params: ParamSet<F>,
    pub side: usize,
    pub classes: usize,
    c1: usize,
    c2: usize,
    fc: usize,
}

fn half(side: usize) -> usize {
    // k=5, stride=2, pad=2 ⇒ out = (side − 1)/2 + 1
    (side - 1) / 2 + 1
}

impl<F: Scalar> LeNet<F> {
    pub fn new(side: usize, classes: usize, seed: u64) -> Self {
        Self::with_widths(side, classes, 6, 16, 120, seed)
    }

    pub fn with_widths(
        side: usize,
        classes: usize,
        c1: usize,
        c2: usize,
        fc: usize,
        seed: u64,
    ) -> Self {
        let spatial = half(half(side));
        let flat = c2 * spatial * spatial;
        let mut params = ParamSet::new();
        init_conv(&mut params, "conv1", [c1, 1, 5, 5], 25, c1, seed);
        init_conv(&mut params, "conv2", [c2, c1, 5, 5], 25 * c1, c2, seed);
        init_linear(&mut params, "fc1", fc, flat, seed, 2.0f64.sqrt());
        init_linear(&mut params, "fc2", classes, fc, seed, 1.0);
        LeNet {
            params,
            side,
            classes,
            c1,
            c2,
            fc,
        }
    }
}

impl<F: Scalar> ImageClassifier<F> for LeNet<F> {
    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn replace_params(&self, params: ParamSet<F>) -> Self {
        self.params
            .check_same_layout(&params, "lenet replace_params")
            .expect("parameter layout must match");
        LeNet {
            params,
            ..self.clone()
        }
    }

    fn arch(&self) -> String {
        format!(
            "lenet-s{}-c{}x{}-f{}-c{}-v1",
            self.side, self.c1, self.c2, self.fc, self.classes
        )
    }

    fn input_side(&self) -> usize {
        self.side
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn logits_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let batch = tape.shape(x)[0];
        let spatial = half(half(self.side));
        let x4 = tape.reshape(x, vec![batch, 1, self.side, self.side]);
        let h = tape.conv2d(x4, bound.id("conv1.k"), bound.id("conv1.b"), 2, 2);
        let h = tape.relu(h);
        let h = tape.conv2d(h, bound.id("conv2.k"), bound.id("conv2.b"), 2, 2);
        let h = tape.relu(h);
        let h = tape.reshape(h, vec![batch, self.c2 * spatial * spatial]);
        let h = tape.linear(h, bound.id("fc1.w"), bound.id("fc1.b"));
        let h = tape.relu(h);
        tape.linear(h, bound.id("fc2.w"), bound.id("fc2.b"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::logits_batch;

    #[test]
    fn output_shape_and_determinism() {
        let net = LeNet::<f32>::new(28, 10, 4);
        let x: Vec<f32> = (0..784 * 2).map(|i| ((i * 31) % 255) as f32 / 255.0).collect();
        let a = logits_batch(&net, &x, 2);
        let b = logits_batch(&net, &x, 2);
        assert_eq!(a.shape, vec![2, 10]);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn works_on_small_sides_too() {
        let net = LeNet::<f64>::with_widths(8, 4, 2, 3, 10, 5);
        let x = vec![0.5; 64];
        let out = logits_batch(&net, &x, 1);
        assert_eq!(out.shape, vec![1, 4]);
        assert!(out.all_finite());
    }
}
