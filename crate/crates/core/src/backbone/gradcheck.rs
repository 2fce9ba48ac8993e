use super::params::ParamSet;
use super::scalar::Scalar;
use super::tape::{NodeId, Tape};
use crate::error::Result;

/// Handles to the parameter leaves inserted by [`grad`] / [`eval_loss`], so a
/// loss builder can look its parameters up by name.
pub struct BoundParams {
    ids: std::collections::BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    /// View over an existing binding, e.g. to strip group prefixes.
    pub fn from_ids(ids: std::collections::BTreeMap<String, NodeId>) -> Self {
        BoundParams { ids }
    }
}

/// Insert every array of `params` as a tape leaf.
pub fn bind_params<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamSet<F>,
    needs_grad: bool,
) -> BoundParams {
    let mut ids = std::collections::BTreeMap::new();
    for (name, t) in params.iter() {
        ids.insert(name.clone(), tape.leaf(t.clone(), needs_grad));
    }
    BoundParams { ids }
}

/// Exact reverse-mode gradient of a scalar loss with respect to every
/// parameter. The builder closure constructs the loss out of the tape's
/// primitive set; unused parameters get zero gradients.
///
/// Returns `(loss value, gradients)`.
pub fn grad<F: Scalar>(
    params: &ParamSet<F>,
    build: impl FnOnce(&mut Tape<F>, &BoundParams) -> NodeId,
) -> Result<(F, ParamSet<F>)> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, true);
    let loss = build(&mut tape, &bound);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        out.insert(name.clone(), grads.of(bound.id(name), &t.shape));
    }
    Ok((value, out))
}

/// Forward-only evaluation of the same loss builder.
pub fn eval_loss<F: Scalar>(
    params: &ParamSet<F>,
    build: impl FnOnce(&mut Tape<F>, &BoundParams) -> NodeId,
) -> F {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, false);
    let loss = build(&mut tape, &bound);
    tape.value(loss).item()
}

/// Central-difference gradient oracle: (f(θ+h) − f(θ−h)) / 2h per coordinate.
///
/// Only forward evaluations are used, so this stays independent of the
/// reverse-mode path it is meant to check.
pub fn finite_diff_grad<F: Scalar>(
    params: &ParamSet<F>,
    h: f64,
    mut eval: impl FnMut(&ParamSet<F>) -> F,
) -> ParamSet<F> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        let mut g = t.clone();
        for i in 0..t.len() {
            let orig = t.data[i];
            let mut plus = t.clone();
            plus.data[i] = orig + F::from_f64(h);
            let mut minus = t.clone();
            minus.data[i] = orig - F::from_f64(h);
            let fp = eval(&params.with(name, plus)).to_f64();
            let fm = eval(&params.with(name, minus)).to_f64();
            g.data[i] = F::from_f64((fp - fm) / (2.0 * h));
        }
        out.insert(name.clone(), g);
    }
    out
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor) over all arrays of two gradient sets.
pub fn gradient_rel_error<F: Scalar>(a: &ParamSet<F>, b: &ParamSet<F>) -> f64 {
    let mut diff_sq = 0.0;
    let mut a_sq = 0.0;
    let mut b_sq = 0.0;
    for (name, ta) in a.iter() {
        let tb = b.get(name);
        for i in 0..ta.len() {
            let (x, y) = (ta.data[i].to_f64(), tb.data[i].to_f64());
            diff_sq += (x - y) * (x - y);
            a_sq += x * x;
            b_sq += y * y;
        }
    }
    diff_sq.sqrt() / a_sq.sqrt().max(b_sq.sqrt()).max(1e-30)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::rng::Rng;
    use crate::backbone::tensor::Tensor;

    #[test]
    fn fd_of_square_at_three_is_six() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::scalar(3.0));
        let g = finite_diff_grad(&p, 1e-5, |p| {
            let w = p.get("w").item();
            w * w
        });
        assert!((g.get("w").item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::new(vec![1.0, -2.0, 0.5], vec![3]));
        let g = finite_diff_grad(&p, 1e-5, |_| 42.0);
        assert!(g.get("w").data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_square_matches_analytic() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::scalar(3.0));
        let (loss, g) = grad(&p, |tape, b| {
            let w = b.id("w");
            let sq = tape.square(w);
            tape.sum_all(sq)
        })
        .unwrap();
        assert_eq!(loss, 9.0);
        assert!((g.get("w").item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn two_layer_mlp_loss_gradient_matches_central_differences() {
        // Small dense-relu-dense softmax cross-entropy: the backbone's own
        // oracle contract, in 64-bit mode.
        let mut rng = Rng::derive(11, "gradcheck-mlp", 0);
        let (in_dim, hidden, classes, batch) = (6, 5, 3, 4);
        let mut p = ParamSet::<f64>::new();
        p.insert(
            "w1",
            Tensor::new(rng.normal_vec(hidden * in_dim), vec![hidden, in_dim]),
        );
        p.insert("b1", Tensor::new(rng.normal_vec(hidden), vec![hidden]));
        p.insert(
            "w2",
            Tensor::new(rng.normal_vec(classes * hidden), vec![classes, hidden]),
        );
        p.insert("b2", Tensor::new(rng.normal_vec(classes), vec![classes]));

        let x = Tensor::new(rng.normal_vec(batch * in_dim), vec![batch, in_dim]);
        let mut y = Tensor::zeros(vec![batch, classes]);
        for r in 0..batch {
            y.data[r * classes + r % classes] = 1.0;
        }

        let build = |tape: &mut Tape<f64>, b: &BoundParams, x: &Tensor<f64>, y: &Tensor<f64>| {
            let xi = tape.constant(x.clone());
            let yi = tape.constant(y.clone());
            let h = tape.linear(xi, b.id("w1"), b.id("b1"));
            let h = tape.relu(h);
            let logits = tape.linear(h, b.id("w2"), b.id("b2"));
            let ce = tape.softmax_cross_entropy(logits, yi);
            tape.mean_all(ce)
        };

        let (_, analytic) = grad(&p, |tape, b| build(tape, b, &x, &y)).unwrap();
        let numeric = finite_diff_grad(&p, 1e-5, |p| {
            eval_loss(p, |tape, b| build(tape, b, &x, &y))
        });
        let err = gradient_rel_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }
}
