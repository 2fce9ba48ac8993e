//! Gradient and KL oracle suites.
//!
//! Every composite loss in the toolkit is checked against central finite
//! differences in 64-bit mode, and the closed-form Gaussian KL against an
//! independent Simpson-rule integration. The suites are shared by the
//! `gradcheck` CLI command and the acceptance tests; the oracles themselves
//! (forward-difference sweeps, quadrature) never touch the reverse-mode path
//! they judge.

use crate::attack::AttackTarget;
use crate::attack::{
    sa_loss_into, transition_loss_into, AttackConfig, ClassificationTarget, RecognitionTarget,
};
use crate::backbone::gradcheck::{
    bind_params, eval_loss, finite_diff_grad, grad, gradient_rel_error, BoundParams,
};
use crate::backbone::{ParamSet, Rng, Tape, Tensor};
use crate::data::one_hot;
use crate::models::{EmbeddingNet, ImageClassifier, MlpClassifier, SvaeBundle};
use crate::svae::{
    discriminator_objective_into, kl_diag_gaussian, kl_numeric_oracle_2d, svae_loss_into,
    LatentGaussian, LossWeights,
};

#[derive(Clone, Debug, serde::Serialize)]
pub struct OracleCheck {
    pub name: String,
    /// Worst relative gradient error (gradient checks) or worst absolute
    /// error (KL quadrature) over the sampled points.
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: &str, error: f64, tolerance: f64) -> Self {
        OracleCheck {
            name: name.to_string(),
            error,
            tolerance,
            pass: error < tolerance,
        }
    }
}

const FD_STEP: f64 = 1e-5;

/// Small random bundle/classifier pair sized for finite-difference sweeps.
fn small_bundle(seed: u64) -> SvaeBundle<f64> {
    SvaeBundle::<f64>::with_widths(8, 3, 4, 2, 3, 8, 8, seed)
}

fn randomize(params: &ParamSet<f64>, rng: &mut Rng) -> ParamSet<f64> {
    let mut out = params.clone();
    for name in params.names().cloned().collect::<Vec<_>>() {
        let t = params.get(&name);
        let fresh = Tensor::new(
            (0..t.len()).map(|_| rng.normal_f64() * 0.4).collect(),
            t.shape.clone(),
        );
        out = out.with(&name, fresh);
    }
    out
}

fn random_image(rng: &mut Rng, pixels: usize) -> Vec<f64> {
    (0..pixels).map(|_| rng.uniform_f64()).collect()
}

fn check_loss(
    name: &str,
    tolerance: f64,
    points: usize,
    mut make: impl FnMut(
        u64,
    ) -> (
        ParamSet<f64>,
        Box<dyn Fn(&mut Tape<f64>, &BoundParams) -> crate::backbone::NodeId>,
    ),
) -> OracleCheck {
    let mut worst = 0.0f64;
    for p in 0..points {
        let (params, build) = make(p as u64);
        let (_, analytic) = grad(&params, &*build).expect("gradient evaluation");
        let numeric = finite_diff_grad(&params, FD_STEP, |ps| eval_loss(ps, &*build));
        worst = worst.max(gradient_rel_error(&analytic, &numeric));
    }
    OracleCheck::new(name, worst, tolerance)
}

/// Check every composite loss against central finite differences at
/// `points` random seeded configurations each. 64-bit mode throughout.
pub fn gradient_oracle_suite(seed: u64, points: usize, tolerance: f64) -> Vec<OracleCheck> {
    let mut checks = Vec::new();

    // stage-1 objective: gradients w.r.t. all four parameter sets (the
    // discriminator's are identically zero and must come out that way)
    checks.push(check_loss("svae_loss_total", tolerance, points, |i| {
        let mut rng = Rng::derive(seed, "oracle-svae", i);
        let mut bundle = small_bundle(1000 + i);
        bundle.encoder = randomize(&bundle.encoder, &mut rng);
        bundle.decoder = randomize(&bundle.decoder, &mut rng);
        bundle.classifier = randomize(&bundle.classifier, &mut rng);
        let x = random_image(&mut rng, 64 * 2);
        let labels = [rng.below(4) as u8, rng.below(4) as u8];
        let noise: Vec<f64> = rng.normal_vec(2 * 3);
        let params = ParamSet::merged_with_prefix(&[
            ("enc.", &bundle.encoder),
            ("dec.", &bundle.decoder),
            ("cls.", &bundle.classifier),
            ("dis.", &bundle.discriminator),
        ]);
        let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
            // parameter values flow through the bound leaves; the bundle
            // supplies only the architecture dimensions
            let enc = prefix_view(bound, "enc.", &bundle.encoder);
            let dec = prefix_view(bound, "dec.", &bundle.decoder);
            let cls = prefix_view(bound, "cls.", &bundle.classifier);
            let xi = tape.constant(Tensor::new(x.clone(), vec![2, 64]));
            let yi = tape.constant(one_hot(&labels, 4));
            let ni = tape.constant(Tensor::new(noise.clone(), vec![2, 3]));
            let nodes = svae_loss_into(
                tape,
                &bundle,
                &enc,
                &dec,
                &cls,
                xi,
                yi,
                ni,
                LossWeights::default(),
            );
            nodes.total
        };
        (params, Box::new(build))
    }));

    // discriminator objective, raw and log-loss variants
    for (name, log_loss) in [
        ("discriminator_objective", false),
        ("discriminator_objective_log", true),
    ] {
        checks.push(check_loss(name, tolerance, points, move |i| {
            let mut rng = Rng::derive(seed, "oracle-dis", i * 2 + log_loss as u64);
            let mut bundle = small_bundle(2000 + i);
            bundle.discriminator = randomize(&bundle.discriminator, &mut rng);
            let z_true: Vec<f64> = rng.normal_vec(3 * 3);
            let z_fake: Vec<f64> = rng.normal_vec(3 * 3);
            let params = bundle.discriminator.clone();
            let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
                let zt = tape.constant(Tensor::new(z_true.clone(), vec![3, 3]));
                let zf = tape.constant(Tensor::new(z_fake.clone(), vec![3, 3]));
                discriminator_objective_into(tape, &bundle, bound, zt, zf, log_loss)
            };
            (params, Box::new(build))
        }));
    }

    // image-transition loss w.r.t. the latent
    checks.push(check_loss("transition_loss", tolerance, points, |i| {
        let mut rng = Rng::derive(seed, "oracle-transition", i);
        let mut bundle = small_bundle(3000 + i);
        bundle.classifier = randomize(&bundle.classifier, &mut rng);
        bundle.discriminator = randomize(&bundle.discriminator, &mut rng);
        let cfg = AttackConfig::default();
        let mut params = ParamSet::new();
        params.insert("z", Tensor::new(rng.normal_vec(3), vec![1, 3]));
        let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
            let cls = bind_params(tape, &bundle.classifier, false);
            let dis = bind_params(tape, &bundle.discriminator, false);
            let nodes = transition_loss_into(tape, &bundle, &cls, &dis, bound.id("z"), 2, &cfg);
            nodes.total
        };
        (params, Box::new(build))
    }));

    // full attack objective w.r.t. the latent, both J₁ forms
    checks.push(check_loss("sa_loss_classification", tolerance, points, |i| {
        let mut rng = Rng::derive(seed, "oracle-sa-cls", i);
        let bundle = small_bundle(4000 + i);
        let f1 = MlpClassifier::<f64>::new(8, 6, 4, 4000 + i);
        let cfg = AttackConfig::default();
        let mut params = ParamSet::new();
        params.insert("z", Tensor::new(rng.normal_vec(3), vec![1, 3]));
        let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
            let target = ClassificationTarget::new(&f1, 1);
            let cls = bind_params(tape, &bundle.classifier, false);
            let dis = bind_params(tape, &bundle.discriminator, false);
            let dec = bind_params(tape, &bundle.decoder, false);
            let nodes = sa_loss_into(
                tape, &bundle, &cls, &dis, &dec, bound.id("z"), 2, 0.004, &target, &cfg,
            );
            nodes.total
        };
        (params, Box::new(build))
    }));

    checks.push(check_loss("sa_loss_recognition", tolerance, points, |i| {
        let mut rng = Rng::derive(seed, "oracle-sa-rec", i);
        let bundle = small_bundle(5000 + i);
        let embed = EmbeddingNet::<f64>::with_channels(8, 5, 4, 2, 3, 5000 + i);
        let reference = random_image(&mut rng, 64);
        let cfg = AttackConfig::recognition();
        let mut params = ParamSet::new();
        params.insert("z", Tensor::new(rng.normal_vec(3), vec![1, 3]));
        let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
            let target = RecognitionTarget::new(&embed, &reference, 1.242);
            let cls = bind_params(tape, &bundle.classifier, false);
            let dis = bind_params(tape, &bundle.discriminator, false);
            let dec = bind_params(tape, &bundle.decoder, false);
            let nodes = sa_loss_into(
                tape, &bundle, &cls, &dis, &dec, bound.id("z"), 2, 0.004, &target, &cfg,
            );
            nodes.total
        };
        (params, Box::new(build))
    }));

    // latent-space attack loss, hinge active and inactive
    for (name, epsilon) in [
        ("latent_attack_loss_hinge_active", 1.5),
        ("latent_attack_loss_hinge_inactive", 1e-6),
    ] {
        checks.push(check_loss(name, tolerance, points, move |i| {
            let mut rng = Rng::derive(seed, "oracle-latent", i);
            let bundle = small_bundle(6000 + i);
            let f1 = MlpClassifier::<f64>::new(8, 6, 4, 6000 + i);
            let z0: Vec<f64> = rng.normal_vec(3);
            let z_start: Vec<f64> = z0.iter().map(|v| v + 0.05 * rng.normal_f64()).collect();
            let mut params = ParamSet::new();
            params.insert("z", Tensor::new(z_start, vec![1, 3]));
            let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
                let target = ClassificationTarget::new(&f1, 0);
                let dec = bind_params(tape, &bundle.decoder, false);
                let z_node = bound.id("z");
                let zc = tape.constant(Tensor::new(z0.clone(), vec![1, 3]));
                let img = bundle.decode_into(tape, z_node, &dec);
                let j1 = target.j1_into(tape, img);
                let wj1 = tape.scale_shift(j1, 1e-2, 0.0);
                let diff = tape.sub(z_node, zc);
                let sq = tape.square(diff);
                let ssq = tape.sum_rows(sq);
                let dsq = tape.mean_all(ssq);
                let deficit = tape.scale_shift(dsq, -1.0, epsilon);
                let hinge = tape.relu(deficit);
                tape.add(wj1, hinge)
            };
            (params, Box::new(build))
        }));
    }

    // FGSM's input gradient: CE of a classifier w.r.t. the image itself
    checks.push(check_loss("fgsm_input_gradient", tolerance, points, |i| {
        let mut rng = Rng::derive(seed, "oracle-fgsm", i);
        let f1 = MlpClassifier::<f64>::new(8, 6, 4, 7000 + i);
        let mut params = ParamSet::new();
        params.insert("x", Tensor::new(random_image(&mut rng, 64), vec![1, 64]));
        let label = rng.below(4) as u8;
        let build = move |tape: &mut Tape<f64>, bound: &BoundParams| {
            let f1_bound = bind_params(tape, &f1.params, false);
            let logits = f1.logits_into(tape, bound.id("x"), &f1_bound);
            let y = tape.constant(one_hot(&[label], 4));
            let ce = tape.softmax_cross_entropy(logits, y);
            tape.mean_all(ce)
        };
        (params, Box::new(build))
    }));

    checks
}

fn prefix_view(bound: &BoundParams, prefix: &str, group: &ParamSet<f64>) -> BoundParams {
    let mut ids = std::collections::BTreeMap::new();
    for name in group.names() {
        ids.insert(name.clone(), bound.id(&format!("{prefix}{name}")));
    }
    BoundParams::from_ids(ids)
}

/// Closed-form KL against Simpson-rule integration on random 2-D Gaussians.
pub fn kl_oracle_suite(seed: u64, cases: usize, tolerance: f64) -> OracleCheck {
    let mut rng = Rng::derive(seed, "oracle-kl", 0);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let mu = [rng.normal_f64() * 1.5, rng.normal_f64() * 1.5];
        let sigma = [
            0.25 + rng.uniform_f64() * 2.0,
            0.25 + rng.uniform_f64() * 2.0,
        ];
        let q = LatentGaussian::new(mu.to_vec(), sigma.to_vec()).unwrap();
        let closed = kl_diag_gaussian(&q);
        let numeric = kl_numeric_oracle_2d(mu, sigma, 800);
        worst = worst.max((closed - numeric).abs());
    }
    OracleCheck::new("kl_closed_form_vs_quadrature", worst, tolerance)
}
