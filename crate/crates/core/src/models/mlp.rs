use super::{init_linear, ImageClassifier};
use crate::backbone::gradcheck::BoundParams;
use crate::backbone::{NodeId, ParamSet, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Dense classifier: input → hidden (relu) → class logits.
#[derive(Clone, Debug)]
pub struct MlpClassifier<F: Scalar> {
    pub params: ParamSet<F>,
    pub side: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl<F: Scalar> MlpClassifier<F> {
    pub fn new(side: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let inp = side * side;
        init_linear(&mut params, "fc1", hidden, inp, seed, 2.0f64.sqrt());
        init_linear(&mut params, "fc2", classes, hidden, seed, 1.0);
        MlpClassifier {
            params,
            side,
            hidden,
            classes,
        }
    }

    /// Logits for a batch of flat images, with input validation.
    pub fn forward(&self, images: &[F], count: usize) -> Result<Tensor<F>> {
        let pixels = self.side * self.side;
        if images.len() != count * pixels {
            return Err(Error::ShapeMismatch {
                name: "mlp input".to_string(),
                expected: vec![count, pixels],
                got: vec![images.len() / pixels.max(1), pixels],
            });
        }
        Ok(super::logits_batch(self, images, count))
    }
}

impl<F: Scalar> ImageClassifier<F> for MlpClassifier<F> {
    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn replace_params(&self, params: ParamSet<F>) -> Self {
        self.params
            .check_same_layout(&params, "mlp replace_params")
            .expect("parameter layout must match");
        MlpClassifier {
            params,
            ..self.clone()
        }
    }

    fn arch(&self) -> String {
        format!("mlp-s{}-h{}-c{}-v1", self.side, self.hidden, self.classes)
    }

    fn input_side(&self) -> usize {
        self.side
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn logits_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let h = tape.linear(x, bound.id("fc1.w"), bound.id("fc1.b"));
        let h = tape.relu(h);
        tape.linear(h, bound.id("fc2.w"), bound.id("fc2.b"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::probabilities_batch;

    #[test]
    fn zero_params_give_equal_logits() {
        let net = MlpClassifier::<f32>::new(28, 128, 10, 1);
        let net = net.replace_params(net.params.zeros_like());
        let logits = net.forward(&vec![0.0; 784], 1).unwrap();
        assert!(logits.data.iter().all(|&v| v == logits.data[0]));
    }

    #[test]
    fn softmax_sums_to_one() {
        let net = MlpClassifier::<f32>::new(28, 128, 10, 2);
        let x: Vec<f32> = (0..784).map(|i| (i % 7) as f32 / 7.0).collect();
        let p = probabilities_batch(&net, &x, 1);
        let s: f32 = p.data.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wrong_input_length_is_an_error() {
        let net = MlpClassifier::<f32>::new(28, 128, 10, 3);
        assert!(net.forward(&vec![0.0; 100], 1).is_err());
    }
}
