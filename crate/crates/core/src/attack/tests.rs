use super::*;
use crate::backbone::Rng;
use crate::models::{EmbeddingNet, MlpClassifier, SvaeBundle};

fn uniform_mlp() -> MlpClassifier<f64> {
    let net = MlpClassifier::<f64>::new(28, 16, 10, 1);
    net.replace_params(net.params.zeros_like())
}

fn confident_mlp(class: usize) -> MlpClassifier<f64> {
    let net = uniform_mlp();
    let mut bias = crate::backbone::Tensor::<f64>::zeros(vec![10]);
    bias.data[class] = 80.0;
    let params = net.params.with("fc2.b", bias);
    net.replace_params(params)
}

fn test_image(seed: u64) -> Vec<f64> {
    let mut rng = Rng::derive(seed, "attack-test-image", 0);
    (0..784).map(|_| rng.uniform_f64()).collect()
}

#[test]
fn j1_zero_when_f1_is_certain_of_original_class() {
    let f1 = confident_mlp(4);
    let x = test_image(1);
    let j1 = j1_classification(&x, 4, &f1);
    assert!(j1.abs() < 1e-6, "j1 = {j1}");
}

#[test]
fn j1_uniform_output_is_ln_ten() {
    let f1 = uniform_mlp();
    let x = test_image(2);
    let j1 = j1_classification(&x, 0, &f1);
    assert!((j1 - 10.0f64.ln()).abs() < 1e-9, "j1 = {j1}");
}

#[test]
fn j1_recognition_zero_on_reference() {
    let net = EmbeddingNet::<f64>::new(28, 16, 10, 3);
    let x = test_image(3);
    assert_eq!(j1_recognition(&x, &x, &net), 0.0);
}

#[test]
fn transition_loss_vanishes_at_its_minima() {
    // f₂ certain of the target, f_dis ≈ 1, z = 0.
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 4);
    let mut cls = bundle.classifier.zeros_like();
    let mut b2 = crate::backbone::Tensor::<f64>::zeros(vec![10]);
    b2.data[5] = 80.0; // f₂ ≈ certain of class 5 everywhere
    cls = cls.with("fc2.b", b2);
    let mut dis = bundle.discriminator.zeros_like();
    let mut db = crate::backbone::Tensor::<f64>::zeros(vec![1]);
    db.data[0] = 80.0; // f_dis ≈ 1 everywhere
    dis = dis.with("fc2.b", db);
    let mut rigged = bundle.clone();
    rigged.classifier = cls;
    rigged.discriminator = dis;

    let z = vec![0.0f64; 8];
    let cfg = AttackConfig::default();
    let loss = transition_loss(&z, 5, &rigged, &cfg);
    assert!(loss.abs() < 1e-5, "loss = {loss}");
}

#[test]
fn transition_loss_with_zero_alpha_gamma_is_pure_cross_entropy() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 5);
    let mut rng = Rng::derive(6, "transition", 0);
    let z: Vec<f64> = rng.normal_vec(8);
    let cfg = AttackConfig {
        alpha: 0.0,
        gamma: 0.0,
        ..AttackConfig::default()
    };
    let loss = transition_loss(&z, 3, &bundle, &cfg);
    let probs = bundle.classify_probs(&z, 1);
    let expected = -(probs.data[3] + crate::backbone::EPS_GUARD).ln();
    assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
}

#[test]
fn sa_loss_with_zero_k_equals_transition_loss() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 7);
    let f1 = uniform_mlp();
    let target = ClassificationTarget::new(&f1, 2);
    let mut rng = Rng::derive(8, "sa", 0);
    let z: Vec<f64> = rng.normal_vec(8);
    let cfg = AttackConfig::default();
    let (total, _, _, _) = sa_loss(&z, 6, 0.0, &bundle, &target, &cfg);
    let transition = transition_loss(&z, 6, &bundle, &cfg);
    assert!((total - transition).abs() < 1e-12);
}

#[test]
fn sa_loss_gradient_matches_finite_differences() {
    use crate::backbone::gradcheck::{finite_diff_grad, grad, gradient_rel_error};
    use crate::backbone::{ParamSet, Tensor};
    // small-side bundle and classifier keep the finite-difference sweep cheap
    let bundle = SvaeBundle::<f64>::with_widths(8, 3, 4, 2, 3, 8, 8, 9);
    let f1 = MlpClassifier::<f64>::new(8, 6, 4, 10);
    let target = ClassificationTarget::new(&f1, 1);
    let cfg = AttackConfig::default();
    let mut rng = Rng::derive(11, "sa-gradcheck", 0);

    let mut params = ParamSet::<f64>::new();
    params.insert("z", Tensor::new(rng.normal_vec(3), vec![1, 3]));

    let build = |tape: &mut Tape<f64>, bound: &crate::backbone::gradcheck::BoundParams| {
        let cls = crate::backbone::gradcheck::bind_params(tape, &bundle.classifier, false);
        let dis = crate::backbone::gradcheck::bind_params(tape, &bundle.discriminator, false);
        let dec = crate::backbone::gradcheck::bind_params(tape, &bundle.decoder, false);
        let nodes = sa_loss_into(
            tape,
            &bundle,
            &cls,
            &dis,
            &dec,
            bound.id("z"),
            2,
            0.003,
            &target,
            &cfg,
        );
        nodes.total
    };

    let (_, analytic) = grad(&params, build).unwrap();
    let numeric = finite_diff_grad(&params, 1e-5, |p| {
        crate::backbone::gradcheck::eval_loss(p, build)
    });
    let err = gradient_rel_error(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn equilibrium_weight_clamps_to_zero_early_in_the_attack() {
    // k + η(βJ₁ − J₂ + max{J₁−Ĵ₁,0}) < 0 ⇒ clamp to 0
    let cfg = AttackConfig::default(); // β fixed 0.001, η 0.01, Ĵ₁ 0.01
    let k = update_equilibrium_weight(0.0, 0.02, 1.0, &cfg);
    assert_eq!(k, 0.0);
}

#[test]
fn equilibrium_weight_adaptive_reduces_to_hinge_only() {
    // adaptive β makes βJ₁ − J₂ vanish: update = η·max{J₁ − Ĵ₁, 0}
    let cfg = AttackConfig {
        beta: BetaMode::Adaptive,
        eta: 0.001,
        ..AttackConfig::default()
    };
    let k = update_equilibrium_weight(0.0, 0.02, 5.0, &cfg);
    assert!((k - 1e-5).abs() < 1e-18, "k = {k}");
}

#[test]
fn equilibrium_weight_clips_at_upper_bound() {
    let cfg = AttackConfig {
        eta: 1.0,
        ..AttackConfig::default()
    };
    // large positive update: hinge = 10 ⇒ candidate ≫ 0.005
    let k = update_equilibrium_weight(0.004, 10.01, 0.0, &cfg);
    assert_eq!(k, cfg.k_clip);
    assert_eq!(cfg.k_clip, 0.005);
}

#[test]
fn adaptive_beta_with_zero_j1_falls_back_to_fixed() {
    let cfg = AttackConfig {
        beta: BetaMode::Adaptive,
        eta: 1.0,
        ..AttackConfig::default()
    };
    // J₁ = 0: fallback β = 0.001; update = 1.0·(0 − 2.0 + 0) < 0 ⇒ 0
    let k = update_equilibrium_weight(0.003, 0.0, 2.0, &cfg);
    assert_eq!(k, 0.0);
}

#[test]
fn zero_iteration_attack_returns_decoded_posterior_mean() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 12);
    let f1 = uniform_mlp();
    let x = test_image(5);
    let cfg = AttackConfig {
        max_iterations: 0,
        ..AttackConfig::default()
    };
    let target = ClassificationTarget::new(&f1, 3);
    let out = type1_attack(&x, 3, 4, &target, &bundle, &cfg).unwrap();
    let mu = bundle.encode_mu(&x, 1).data;
    let expected = bundle.decode(&mu, 1).data;
    assert_eq!(out.final_image, expected);
    assert_eq!(out.iterations, 0);
    assert!(out.trace.is_empty());
}

#[test]
fn attack_trace_invariants_hold() {
    // k within [0, clip] at every step, J_SA ≥ 0 throughout, the prefix
    // minimum non-increasing, and the frozen f₁ digest unchanged.
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 13);
    let f1 = MlpClassifier::<f64>::new(28, 16, 10, 14);
    let digest_before = f1.params.digest();
    let x = test_image(6);
    let y = crate::models::predict(&f1, &x, 1)[0];
    let y_target = (y + 1) % 10;
    let cfg = AttackConfig {
        max_iterations: 60,
        ..AttackConfig::default()
    };
    let target = ClassificationTarget::new(&f1, y);
    let out = type1_attack(&x, y, y_target, &target, &bundle, &cfg).unwrap();
    assert!(!out.diverged);
    assert!(!out.trace.is_empty());
    let mut best = f64::INFINITY;
    for step in &out.trace {
        assert!(step.k >= 0.0 && step.k <= cfg.k_clip, "k = {}", step.k);
        assert!(step.j_sa >= 0.0, "J_SA = {}", step.j_sa);
        let new_best = best.min(step.j_sa);
        assert!(new_best <= best);
        best = new_best;
    }
    assert_eq!(f1.params.digest(), digest_before);
}

#[test]
fn attack_is_deterministic() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 15);
    let f1 = MlpClassifier::<f64>::new(28, 16, 10, 16);
    let x = test_image(7);
    let y = crate::models::predict(&f1, &x, 1)[0];
    let cfg = AttackConfig {
        max_iterations: 25,
        ..AttackConfig::default()
    };
    let target = ClassificationTarget::new(&f1, y);
    let a = type1_attack(&x, y, (y + 1) % 10, &target, &bundle, &cfg).unwrap();
    let b = type1_attack(&x, y, (y + 1) % 10, &target, &bundle, &cfg).unwrap();
    assert_eq!(a.iterations, b.iterations);
    for (s, t) in a.trace.iter().zip(&b.trace) {
        assert!((s.j_sa - t.j_sa).abs() < 1e-10);
        assert_eq!(s.k, t.k);
    }
    assert!(a
        .final_z
        .iter()
        .zip(&b.final_z)
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn evaluate_empty_pair_list() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 17);
    let f1 = uniform_mlp();
    let m = evaluate_attack_success(&[], &f1, &bundle, SuccessCriteria::default());
    assert_eq!(m.count, 0);
    assert_eq!(m.overall_rate, 0.0);
}

#[test]
fn unchanged_image_fails_condition_two() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 18);
    let f1 = MlpClassifier::<f64>::new(28, 16, 10, 19);
    let x = test_image(8);
    let mu = bundle.encode_mu(&x, 1).data;
    let f2_label = bundle.classify_labels(&mu, 1)[0];
    let y_target = (f2_label + 1) % 10; // guaranteed not where f₂ already is
    let pairs = [AttackPair {
        x: &x,
        x_prime: &x,
        y: f2_label,
        y_target,
    }];
    let m = evaluate_attack_success(&pairs, &f1, &bundle, SuccessCriteria::default());
    assert_eq!(m.count, 1);
    assert!(!m.per_pair[0].1, "x′ = x cannot have moved the oracle");
    assert!(m.per_pair[0].0, "f₁ trivially unchanged on x′ = x");
}

#[test]
fn latent_attack_with_zero_epsilon_stays_put() {
    // Recognition-form J₁ is zero at z′ = z, and the hinge vanishes at ε = 0,
    // so the start is a global minimizer and the iterate never moves.
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 20);
    let net = EmbeddingNet::<f64>::new(28, 16, 10, 21);
    let mut rng = Rng::derive(9, "latent-eps0", 0);
    let z: Vec<f64> = rng.normal_vec(8);
    let g_z = bundle.decode(&z, 1).data;
    let target = RecognitionTarget::new(&net, &g_z, 1.242);
    let cfg = LatentAttackConfig {
        epsilon: 0.0,
        max_iterations: 30,
        ..LatentAttackConfig::default()
    };
    let out = latent_space_attack(&z, &target, &bundle, &cfg).unwrap();
    assert!(out.displacement_sq < 1e-12, "moved {}", out.displacement_sq);
    assert!(out.success);
}

#[test]
fn latent_attack_increases_displacement_toward_epsilon() {
    let bundle = SvaeBundle::<f64>::new(28, 8, 10, 22);
    let f1 = MlpClassifier::<f64>::new(28, 16, 10, 23);
    let mut rng = Rng::derive(10, "latent-run", 0);
    let z: Vec<f64> = rng.normal_vec(8);
    // untargeted: hold whatever label f₁ gives the generated image
    let g_z = bundle.decode(&z, 1).data;
    let y = crate::models::predict(&f1, &g_z, 1)[0];
    let target = ClassificationTarget::new(&f1, y);
    let cfg = LatentAttackConfig {
        max_iterations: 400,
        ..LatentAttackConfig::default()
    };
    let out = latent_space_attack(&z, &target, &bundle, &cfg).unwrap();
    assert!(
        out.displacement_sq >= cfg.epsilon,
        "displacement {} < {}",
        out.displacement_sq,
        cfg.epsilon
    );
    assert!(out.success);
}

#[test]
fn config_validation_rejects_non_positive_fields() {
    let bad = AttackConfig {
        alpha: 0.0,
        ..AttackConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = AttackConfig {
        lr: -1.0,
        ..AttackConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(AttackConfig::default().validate().is_ok());
}
