use super::params::ParamSet;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer moments and hyperparameters.
///
/// `adam_step` always *descends*; callers maximizing an objective negate
/// their gradients.
#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar> {
    pub m: ParamSet<F>,
    pub v: ParamSet<F>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Scalar> AdamState<F> {
    /// Fresh state (zero moments, t = 0) with standard β₁=0.9, β₂=0.999,
    /// eps=1e-8.
    pub fn new(params: &ParamSet<F>, lr: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Pure: returns the new parameters and state.
pub fn adam_step<F: Scalar>(
    params: &ParamSet<F>,
    grads: &ParamSet<F>,
    state: &AdamState<F>,
) -> Result<(ParamSet<F>, AdamState<F>)> {
    params.check_same_layout(grads, "adam_step gradients")?;
    params.check_same_layout(&state.m, "adam_step first moment")?;
    params.check_same_layout(&state.v, "adam_step second moment")?;
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::NonFinite { name: name.clone() });
        }
    }

    let t = state.t + 1;
    let b1 = F::from_f64(state.beta1);
    let b2 = F::from_f64(state.beta2);
    let one_m_b1 = F::from_f64(1.0 - state.beta1);
    let one_m_b2 = F::from_f64(1.0 - state.beta2);
    let corr1 = F::from_f64(1.0 - state.beta1.powi(t as i32));
    let corr2 = F::from_f64(1.0 - state.beta2.powi(t as i32));
    let lr = F::from_f64(state.lr);
    let eps = F::from_f64(state.eps);

    let mut new_params = ParamSet::new();
    let mut new_m = ParamSet::new();
    let mut new_v = ParamSet::new();
    for (name, p) in params.iter() {
        let g = grads.get(name);
        let m_prev = state.m.get(name);
        let v_prev = state.v.get(name);
        let mut m = Tensor::zeros(p.shape.clone());
        let mut v = Tensor::zeros(p.shape.clone());
        let mut out = Tensor::zeros(p.shape.clone());
        for i in 0..p.len() {
            let gi = g.data[i];
            let mi = b1 * m_prev.data[i] + one_m_b1 * gi;
            let vi = b2 * v_prev.data[i] + one_m_b2 * gi * gi;
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            out.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            m.data[i] = mi;
            v.data[i] = vi;
        }
        new_params.insert(name.clone(), out);
        new_m.insert(name.clone(), m);
        new_v.insert(name.clone(), v);
    }
    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            t,
            lr: state.lr,
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn first_step_is_minus_lr_times_sign() {
        // Hand evaluation at t=1: m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps·√corr2⁻¹…)
        // → w ≈ −lr for g = 1.
        let params = single("w", 0.0);
        let grads = single("w", 1.0);
        let state = AdamState::new(&params, 0.001);
        let (next, state) = adam_step(&params, &grads, &state).unwrap();
        let w = next.get("w").item();
        assert!((w + 0.001).abs() < 1e-8, "w = {w}");
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let params = single("w", 1.5);
        let grads = single("w", 0.0);
        let state = AdamState::new(&params, 0.01);
        let (next, state) = adam_step(&params, &grads, &state).unwrap();
        assert_eq!(next.get("w").item(), 1.5);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn two_steps_match_closed_form_recursion() {
        // Constant gradient g for two steps; hand-evaluate the recursion.
        let g = 0.7;
        let (lr, b1, b2, eps) = (0.002, 0.9, 0.999, 1e-8);
        let params = single("w", 0.3);
        let grads = single("w", g);
        let state = AdamState::new(&params, lr);
        let (p1, s1) = adam_step(&params, &grads, &state).unwrap();
        let (p2, _) = adam_step(&p1, &grads, &s1).unwrap();

        let mut w = 0.3;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t));
            let v_hat = v / (1.0 - b1_pow(b2, t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((p2.get("w").item() - w).abs() < 1e-12);
    }

    fn b1_pow(b: f64, t: i32) -> f64 {
        b.powi(t)
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let params = single("enc.w1", 0.0);
        let grads = single("enc.w1", f64::NAN);
        let state = AdamState::new(&params, 0.001);
        let err = adam_step(&params, &grads, &state).unwrap_err();
        assert!(err.to_string().contains("enc.w1"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let params = single("w", 0.0);
        let mut grads = ParamSet::new();
        grads.insert("w", Tensor::new(vec![1.0, 2.0], vec![2]));
        let state = AdamState::new(&params, 0.001);
        assert!(adam_step(&params, &grads, &state).is_err());
    }

    #[test]
    fn deterministic_bitwise() {
        let params = single("w", 0.123456);
        let grads = single("w", -0.7891);
        let state = AdamState::new(&params, 0.0002);
        let (a, _) = adam_step(&params, &grads, &state).unwrap();
        let (b, _) = adam_step(&params, &grads, &state).unwrap();
        assert_eq!(a.get("w").item().to_bits(), b.get("w").item().to_bits());
    }
}
