//! Supervised-VAE losses and the two-stage training procedure.
//!
//! Stage 1 jointly trains encoder, decoder and latent classifier by
//! minimizing J_KL + J₂ + J_dec (the negated supervised ELBO). Stage 2
//! freezes those and trains the latent discriminator to separate encoded
//! latents from prior draws.

pub mod train;

use crate::backbone::gradcheck::BoundParams;
use crate::backbone::{NodeId, Scalar, Tape, EPS_GUARD};
use crate::error::{Error, Result};
use crate::models::SvaeBundle;

pub use train::{train_stage1, train_stage2, EpochRecord, SvaeTrainConfig};

/// Diagonal Gaussian q(z|x) = N(μ, diag σ²) produced by the encoder.
#[derive(Clone, Debug)]
pub struct LatentGaussian<F: Scalar> {
    pub mu: Vec<F>,
    /// Standard deviations, strictly positive.
    pub sigma: Vec<F>,
}

impl<F: Scalar> LatentGaussian<F> {
    pub fn new(mu: Vec<F>, sigma: Vec<F>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Contract(format!(
                "latent gaussian dims disagree: {} vs {}",
                mu.len(),
                sigma.len()
            )));
        }
        if !sigma.iter().all(|s| *s > F::ZERO && s.is_finite()) {
            return Err(Error::Contract("latent sigma must be positive".into()));
        }
        if !mu.iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite { name: "mu".into() });
        }
        Ok(LatentGaussian { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Closed-form KL[q ‖ N(0, I)] = ½ Σᵢ (μᵢ² + σᵢ² − 1 − 2 ln σᵢ).
/// Non-negative, zero exactly at the standard normal.
pub fn kl_diag_gaussian<F: Scalar>(q: &LatentGaussian<F>) -> F {
    let mut acc = F::ZERO;
    let half = F::from_f64(0.5);
    let two = F::from_f64(2.0);
    for (m, s) in q.mu.iter().zip(&q.sigma) {
        acc += *m * *m + *s * *s - F::ONE - two * s.ln();
    }
    half * acc
}

/// Independent numeric oracle for the KL closed form: 2-D Simpson-rule
/// integration of q(x)·ln(q(x)/p(x)) over a ±10σ box. Never touches
/// [`kl_diag_gaussian`]'s algebra; used by the oracle test suites.
pub fn kl_numeric_oracle_2d(mu: [f64; 2], sigma: [f64; 2], points_per_dim: usize) -> f64 {
    assert!(points_per_dim >= 4 && points_per_dim % 2 == 0);
    let ln_q = |x: f64, m: f64, s: f64| {
        let d = (x - m) / s;
        -0.5 * d * d - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let ln_p = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();

    let integrand = |x0: f64, x1: f64| {
        let lq = ln_q(x0, mu[0], sigma[0]) + ln_q(x1, mu[1], sigma[1]);
        let lp = ln_p(x0) + ln_p(x1);
        lq.exp() * (lq - lp)
    };

    let lo = [mu[0] - 10.0 * sigma[0], mu[1] - 10.0 * sigma[1]];
    let hi = [mu[0] + 10.0 * sigma[0], mu[1] + 10.0 * sigma[1]];
    let n = points_per_dim;
    let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let weight = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut acc = 0.0;
    for i in 0..=n {
        let x0 = lo[0] + h[0] * i as f64;
        let wi = weight(i);
        for j in 0..=n {
            let x1 = lo[1] + h[1] * j as f64;
            acc += wi * weight(j) * integrand(x0, x1);
        }
    }
    acc * h[0] * h[1] / 9.0
}

/// Reparameterization z = μ + σ ⊙ ε for a standard-normal draw ε.
pub fn reparameterize<F: Scalar>(q: &LatentGaussian<F>, noise: &[F]) -> Vec<F> {
    assert_eq!(noise.len(), q.dim(), "noise length must match latent dim");
    q.mu
        .iter()
        .zip(&q.sigma)
        .zip(noise)
        .map(|((m, s), e)| *m + *s * *e)
        .collect()
}

/// Loss components of one stage-1 evaluation, as plain numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvaeLossReport {
    pub j_kl: f64,
    pub j2: f64,
    pub j_dec: f64,
    pub total: f64,
}

/// Node ids of the stage-1 loss terms on a tape.
pub struct SvaeLossNodes {
    pub j_kl: NodeId,
    pub j2: NodeId,
    pub j_dec: NodeId,
    pub total: NodeId,
    pub z: NodeId,
}

/// Relative weights on (J_KL, J₂, J_dec); the objective's literal form is
/// 1:1:1.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub kl: f64,
    pub classifier: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            kl: 1.0,
            classifier: 1.0,
            reconstruction: 1.0,
        }
    }
}

/// Build the stage-1 objective on a tape.
///
/// `x` is `[batch, side²]` in [0,1], `y` is one-hot `[batch, classes]`, and
/// `noise` is `[batch, latent]` of standard normals. Components are batch
/// means; J_dec sums Bernoulli NLL over pixels per example.
#[allow(clippy::too_many_arguments)]
pub fn svae_loss_into<F: Scalar>(
    tape: &mut Tape<F>,
    bundle: &SvaeBundle<F>,
    enc: &BoundParams,
    dec: &BoundParams,
    cls: &BoundParams,
    x: NodeId,
    y: NodeId,
    noise: NodeId,
    weights: LossWeights,
) -> SvaeLossNodes {
    let g = bundle.encode_into(tape, x, enc);
    let sigma = tape.exp(g.half_log_var);
    let scaled_noise = tape.mul(sigma, noise);
    let z = tape.add(g.mu, scaled_noise);

    // KL per example: ½ Σ (μ² + e^{2·hlv} − 2·hlv − 1)
    let mu_sq = tape.square(g.mu);
    let two_hlv = tape.scale_shift(g.half_log_var, 2.0, 0.0);
    let var = tape.exp(two_hlv);
    let lin = tape.scale_shift(g.half_log_var, -2.0, -1.0);
    let sum1 = tape.add(mu_sq, var);
    let sum2 = tape.add(sum1, lin);
    let row_kl = tape.sum_rows(sum2);
    let half_row_kl = tape.scale_shift(row_kl, 0.5, 0.0);
    let j_kl = tape.mean_all(half_row_kl);

    let logits = bundle.classify_into(tape, z, cls);
    let ce = tape.softmax_cross_entropy(logits, y);
    let j2 = tape.mean_all(ce);

    let dec_logits = bundle.decode_logits_into(tape, z, dec);
    let nll = tape.bernoulli_nll_logits(dec_logits, x);
    let j_dec = tape.mean_all(nll);

    let kl_w = tape.scale_shift(j_kl, weights.kl, 0.0);
    let cls_w = tape.scale_shift(j2, weights.classifier, 0.0);
    let rec_w = tape.scale_shift(j_dec, weights.reconstruction, 0.0);
    let partial = tape.add(kl_w, cls_w);
    let total = tape.add(partial, rec_w);

    SvaeLossNodes {
        j_kl,
        j2,
        j_dec,
        total,
        z,
    }
}

/// Forward-only evaluation of the stage-1 objective.
pub fn svae_loss<F: Scalar>(
    bundle: &SvaeBundle<F>,
    x: &[F],
    labels: &[u8],
    noise: &[F],
    weights: LossWeights,
) -> SvaeLossReport {
    use crate::backbone::gradcheck::bind_params;
    use crate::backbone::Tensor;
    let count = labels.len();
    let mut tape = Tape::new();
    let enc = bind_params(&mut tape, &bundle.encoder, false);
    let dec = bind_params(&mut tape, &bundle.decoder, false);
    let cls = bind_params(&mut tape, &bundle.classifier, false);
    let xi = tape.constant(Tensor::new(x.to_vec(), vec![count, bundle.pixels()]));
    let yi = tape.constant(crate::data::one_hot(labels, bundle.classes));
    let ni = tape.constant(Tensor::new(noise.to_vec(), vec![count, bundle.latent]));
    let nodes = svae_loss_into(&mut tape, bundle, &enc, &dec, &cls, xi, yi, ni, weights);
    SvaeLossReport {
        j_kl: tape.value(nodes.j_kl).item().to_f64(),
        j2: tape.value(nodes.j2).item().to_f64(),
        j_dec: tape.value(nodes.j_dec).item().to_f64(),
        total: tape.value(nodes.total).item().to_f64(),
    }
}

/// Bernoulli NLL in probability space, for evaluating limit cases where the
/// reconstruction is given directly (e.g. a perfect decoder). Guarded logs.
pub fn bernoulli_nll_probs<F: Scalar>(probs: &[F], targets: &[F]) -> F {
    assert_eq!(probs.len(), targets.len());
    let eps = F::from_f64(EPS_GUARD);
    let mut acc = F::ZERO;
    for (p, t) in probs.iter().zip(targets) {
        acc += -(*t * (*p + eps).ln() + (F::ONE - *t) * (F::ONE - *p + eps).ln());
    }
    acc
}

/// Eq.-(7)-style discriminator objective on a tape:
/// raw form E[f_dis(z_true)] + E[1 − f_dis(z_fake)] (maximized over θ_dis),
/// or the guarded log-likelihood variant behind `log_loss`.
pub fn discriminator_objective_into<F: Scalar>(
    tape: &mut Tape<F>,
    bundle: &SvaeBundle<F>,
    dis: &BoundParams,
    z_true: NodeId,
    z_fake: NodeId,
    log_loss: bool,
) -> NodeId {
    let p_true = bundle.discriminate_into(tape, z_true, dis);
    let p_fake = bundle.discriminate_into(tape, z_fake, dis);
    if log_loss {
        let log_true = tape.log(p_true);
        let one_minus_fake = tape.scale_shift(p_fake, -1.0, 1.0);
        let log_fake = tape.log(one_minus_fake);
        let a = tape.mean_all(log_true);
        let b = tape.mean_all(log_fake);
        tape.add(a, b)
    } else {
        let a = tape.mean_all(p_true);
        let one_minus_fake = tape.scale_shift(p_fake, -1.0, 1.0);
        let b = tape.mean_all(one_minus_fake);
        tape.add(a, b)
    }
}

/// Forward-only value of the raw discriminator objective.
pub fn discriminator_loss<F: Scalar>(bundle: &SvaeBundle<F>, z_true: &[F], z_fake: &[F]) -> f64 {
    use crate::backbone::gradcheck::bind_params;
    use crate::backbone::Tensor;
    let nt = z_true.len() / bundle.latent;
    let nf = z_fake.len() / bundle.latent;
    let mut tape = Tape::new();
    let dis = bind_params(&mut tape, &bundle.discriminator, false);
    let zt = tape.constant(Tensor::new(z_true.to_vec(), vec![nt, bundle.latent]));
    let zf = tape.constant(Tensor::new(z_fake.to_vec(), vec![nf, bundle.latent]));
    let obj = discriminator_objective_into(&mut tape, bundle, &dis, zt, zf, false);
    tape.value(obj).item().to_f64()
}

/// Fraction of latents the discriminator separates correctly at the 0.5
/// decision point, over a balanced true/fake evaluation.
pub fn discrimination_accuracy<F: Scalar>(
    bundle: &SvaeBundle<F>,
    z_true: &[F],
    z_fake: &[F],
) -> f64 {
    let nt = z_true.len() / bundle.latent;
    let nf = z_fake.len() / bundle.latent;
    let p_true = bundle.discriminate(z_true, nt);
    let p_fake = bundle.discriminate(z_fake, nf);
    let half = F::from_f64(0.5);
    let hits = p_true.data.iter().filter(|&&p| p > half).count()
        + p_fake.data.iter().filter(|&&p| p <= half).count();
    hits as f64 / (nt + nf) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Rng;

    #[test]
    fn kl_zero_at_standard_normal() {
        let q = LatentGaussian::new(vec![0.0f64; 4], vec![1.0; 4]).unwrap();
        assert_eq!(kl_diag_gaussian(&q), 0.0);
    }

    #[test]
    fn kl_of_shifted_mean_is_half_norm_squared() {
        let q = LatentGaussian::new(vec![1.0f64, 0.0], vec![1.0, 1.0]).unwrap();
        assert!((kl_diag_gaussian(&q) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_non_positive_sigma() {
        assert!(LatentGaussian::new(vec![0.0f64], vec![0.0]).is_err());
        assert!(LatentGaussian::new(vec![0.0f64], vec![-1.0]).is_err());
    }

    #[test]
    fn kl_matches_numeric_integration_on_random_gaussians() {
        let mut rng = Rng::derive(13, "kl-oracle", 0);
        for _ in 0..10 {
            let mu = [rng.normal_f64(), rng.normal_f64()];
            let sigma = [
                0.3 + rng.uniform_f64() * 1.5,
                0.3 + rng.uniform_f64() * 1.5,
            ];
            let q = LatentGaussian::new(mu.to_vec(), sigma.to_vec()).unwrap();
            let closed = kl_diag_gaussian(&q);
            let numeric = kl_numeric_oracle_2d(mu, sigma, 600);
            assert!(
                (closed - numeric).abs() < 1e-4,
                "closed {closed} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn kl_nonnegative_on_random_gaussians() {
        let mut rng = Rng::derive(14, "kl-nonneg", 0);
        for _ in 0..200 {
            let mu: Vec<f64> = rng.normal_vec(3);
            let sigma: Vec<f64> = (0..3).map(|_| 0.05 + rng.uniform_f64() * 3.0).collect();
            let q = LatentGaussian::new(mu, sigma).unwrap();
            assert!(kl_diag_gaussian(&q) >= 0.0);
        }
    }

    #[test]
    fn reparameterize_near_zero_sigma_returns_mu() {
        let q = LatentGaussian::new(vec![0.4f64, -0.7], vec![1e-12, 1e-12]).unwrap();
        let z = reparameterize(&q, &[3.0, -2.0]);
        assert!((z[0] - 0.4).abs() < 1e-10);
        assert!((z[1] + 0.7).abs() < 1e-10);
    }

    #[test]
    fn reparameterize_standard_returns_noise() {
        let q = LatentGaussian::new(vec![0.0f64, 0.0], vec![1.0, 1.0]).unwrap();
        let e = [1.25, -0.5];
        assert_eq!(reparameterize(&q, &e), e.to_vec());
    }

    #[test]
    fn reparameterize_sample_mean_concentrates_on_mu() {
        // 10⁵ draws per coordinate: mean within 3σ/√n of μ (seeded, so stable)
        let n = 100_000usize;
        let q = LatentGaussian::new(vec![0.8f64, -1.3], vec![0.5, 2.0]).unwrap();
        let mut rng = Rng::derive(15, "reparam-stats", 0);
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let z = reparameterize(&q, &[rng.normal_f64(), rng.normal_f64()]);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let bound = 3.0 * q.sigma[i] / (n as f64).sqrt();
            assert!(
                (mean - q.mu[i]).abs() < bound,
                "coord {i}: mean {mean} vs mu {} (bound {bound})",
                q.mu[i]
            );
        }
    }

    #[test]
    fn perfect_reconstruction_and_confident_classifier_zero_losses() {
        // Limits: decoder output ≡ x (binary) and f₂ assigns probability ~1.
        let x = [1.0f64, 0.0, 1.0, 1.0];
        assert!(bernoulli_nll_probs(&x, &x).abs() < 1e-6);
        // cross-entropy of a ~certain softmax: logits (60, 0) vs class 0
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(crate::backbone::Tensor::new(vec![60.0, 0.0], vec![1, 2]));
        let y = tape.constant(crate::backbone::Tensor::new(vec![1.0, 0.0], vec![1, 2]));
        let ce = tape.softmax_cross_entropy(logits, y);
        assert!(tape.value(ce).data[0].abs() < 1e-6);
    }

    #[test]
    fn fresh_bundle_loss_is_finite_and_positive() {
        let bundle = crate::models::SvaeBundle::<f32>::new(28, 8, 10, 3);
        let mut rng = Rng::derive(16, "svae-loss", 0);
        let x: Vec<f32> = (0..784 * 4)
            .map(|_| (rng.uniform_f64() as f32).clamp(0.0, 1.0))
            .collect();
        let labels = [0u8, 3, 7, 9];
        let noise: Vec<f32> = rng.normal_vec(4 * 8);
        let report = svae_loss(&bundle, &x, &labels, &noise, LossWeights::default());
        assert!(report.total.is_finite());
        assert!(report.total > 0.0);
        assert!(report.j_kl >= 0.0);
        assert!(report.j2 >= 0.0);
        assert!(report.j_dec >= 0.0);
        let sum = report.j_kl + report.j2 + report.j_dec;
        assert!((report.total - sum).abs() < 1e-5 * sum.max(1.0));
    }

    #[test]
    fn constant_half_discriminator_scores_one() {
        // f_dis ≡ 0.5 ⇒ J_dis = 0.5 + (1 − 0.5) = 1
        let bundle = crate::models::SvaeBundle::<f64>::new(28, 8, 10, 4);
        let zeroed = bundle.discriminator.zeros_like();
        let mut b2 = bundle.clone();
        b2.discriminator = zeroed; // zero logits ⇒ sigmoid = 0.5
        let z = vec![0.0f64; 8 * 6];
        let j = discriminator_loss(&b2, &z, &z);
        assert!((j - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_approaches_two() {
        // Saturated logits: p≈1 on the true batch (z₀ = +1), p≈0 on the fake
        // batch (z₀ = −1) ⇒ J_dis → 2, its upper limit.
        let bundle = crate::models::SvaeBundle::<f64>::with_widths(8, 2, 4, 2, 3, 8, 8, 5);
        let mut dis = bundle.discriminator.zeros_like();
        // unit 0 fires on z₀ > 0, unit 1 on z₀ < 0; the head separates them
        let mut w1 = crate::backbone::Tensor::<f64>::zeros(vec![8, 2]);
        w1.data[0] = 100.0;
        w1.data[2] = -100.0;
        dis = dis.with("fc1.w", w1);
        let mut w2 = crate::backbone::Tensor::<f64>::zeros(vec![1, 8]);
        w2.data[0] = 100.0;
        w2.data[1] = -100.0;
        dis = dis.with("fc2.w", w2);
        let mut b2 = bundle.clone();
        b2.discriminator = dis;
        let z_true = vec![1.0, 0.0, 1.0, 0.0]; // two latents with z₀ = 1
        let z_fake = vec![-1.0, 0.0, -1.0, 0.0];
        let j = discriminator_loss(&b2, &z_true, &z_fake);
        assert!(j > 1.999, "J_dis = {j}");
    }
}
