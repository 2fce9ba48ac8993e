use crate::backbone::gradcheck::bind_params;
use crate::backbone::{Scalar, Tape, Tensor};
use crate::models::{EmbeddingNet, ImageClassifier};

fn sign<F: Scalar>(v: F) -> F {
    if v > F::ZERO {
        F::ONE
    } else if v < F::ZERO {
        -F::ONE
    } else {
        F::ZERO
    }
}

/// Fast gradient sign method, the Type II baseline:
/// x′ = clip₍₀,₁₎(x + ε·sign(∇ₓ CE(f₁(x), y))).
pub fn fgsm<F: Scalar, C: ImageClassifier<F>>(x: &[F], y: usize, f1: &C, eps: f64) -> Vec<F> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, f1.params(), false);
    let xi = tape.leaf(Tensor::new(x.to_vec(), vec![1, x.len()]), true);
    let logits = f1.logits_into(&mut tape, xi, &bound);
    let mut target = Tensor::zeros(vec![1, f1.class_count()]);
    target.data[y] = F::ONE;
    let yi = tape.constant(target);
    let ce = tape.softmax_cross_entropy(logits, yi);
    let loss = tape.mean_all(ce);
    let grads = tape.backward(loss);
    let g = grads.of(xi, &[1, x.len()]);
    let e = F::from_f64(eps);
    x.iter()
        .zip(&g.data)
        .map(|(&xv, &gv)| (xv + e * sign(gv)).max(F::ZERO).min(F::ONE))
        .collect()
}

/// FGSM against a recognizer: ascend the embedding distance to the
/// reference image, so a small perturbation pushes the identity apart.
pub fn fgsm_embedding<F: Scalar>(x: &[F], x_ref: &[F], net: &EmbeddingNet<F>, eps: f64) -> Vec<F> {
    let reference = net.embed_one(x_ref);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, &net.params, false);
    let xi = tape.leaf(Tensor::new(x.to_vec(), vec![1, x.len()]), true);
    let e = net.embed_into(&mut tape, xi, &bound);
    let r = tape.constant(Tensor::new(reference, vec![1, net.embed_dim]));
    let diff = tape.sub(e, r);
    let sq = tape.square(diff);
    let ssq = tape.sum_rows(sq);
    let d = tape.sqrt(ssq);
    let loss = tape.mean_all(d);
    let grads = tape.backward(loss);
    let g = grads.of(xi, &[1, x.len()]);
    let e = F::from_f64(eps);
    x.iter()
        .zip(&g.data)
        .map(|(&xv, &gv)| (xv + e * sign(gv)).max(F::ZERO).min(F::ONE))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MlpClassifier;

    #[test]
    fn zero_epsilon_returns_input() {
        let net = MlpClassifier::<f64>::new(28, 16, 10, 1);
        let x: Vec<f64> = (0..784).map(|i| (i % 9) as f64 / 9.0).collect();
        assert_eq!(fgsm(&x, 3, &net, 0.0), x);
    }

    #[test]
    fn perturbation_stays_within_bounds() {
        let net = MlpClassifier::<f64>::new(28, 16, 10, 2);
        let x: Vec<f64> = (0..784).map(|i| (i % 5) as f64 / 5.0).collect();
        let eps = 0.3;
        let adv = fgsm(&x, 7, &net, eps);
        for (a, b) in adv.iter().zip(&x) {
            assert!((a - b).abs() <= eps + 1e-12, "|Δ| = {}", (a - b).abs());
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn one_dimensional_logistic_sign_matches_hand_calculation() {
        // Single pixel, two classes: logits = (w·x, 0) with w > 0, true class 1.
        // CE = ln(1 + e^{wx}); d/dx = w·σ(wx) > 0 ⇒ sign = +1, so the attack
        // moves x up by ε.
        let base = MlpClassifier::<f64>::new(1, 1, 2, 3);
        let mut p = base.params.zeros_like();
        p = p.with("fc1.w", Tensor::new(vec![1.0], vec![1, 1]));
        p = p.with(
            "fc2.w",
            Tensor::new(vec![2.0, 0.0], vec![2, 1]),
        );
        let net = base.replace_params(p);
        let x = vec![0.25];
        let adv = fgsm(&x, 1, &net, 0.1);
        assert!((adv[0] - 0.35).abs() < 1e-12, "adv = {}", adv[0]);
    }
}
