//! Concentric-spheres toy experiment: data sampling, quadratic-net training,
//! the exact missing-dimension Type I construction, and the
//! gradient-projection attack that walks a point to the outer sphere while
//! holding the classifier's value fixed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backbone::gradcheck::bind_params;
use crate::backbone::{adam_step, AdamState, ParamSet, Rng, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{CanonicalQuadratic, QuadraticNet, WeightMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SphereConfig {
    /// Ambient dimension.
    pub n: usize,
    /// Hidden width; h < n leaves n−h missing dimensions.
    pub h: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub batch_size: usize,
    /// Desk-scale default 2·10⁵; the full-scale run uses 10⁶.
    pub train_steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        SphereConfig {
            n: 100,
            h: 90,
            inner_radius: 0.8,
            outer_radius: 1.0,
            batch_size: 64,
            train_steps: 200_000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl SphereConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius) {
            return Err(Error::Contract(
                "sphere radii must satisfy 0 < inner < outer".into(),
            ));
        }
        if self.h == 0 {
            return Err(Error::Contract("sphere hidden width must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Uniform points on the radius-`radius` sphere in `n` dimensions,
/// row-major `[count, n]`: each point is radius·g/‖g‖ for standard-normal g.
pub fn sample_sphere(n: usize, radius: f64, count: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(radius > 0.0, "sphere radius must be positive");
    let mut out = Vec::with_capacity(count * n);
    for _ in 0..count {
        let g: Vec<f64> = rng.normal_vec(n);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        out.extend(g.iter().map(|v| radius * v / norm));
    }
    out
}

/// One freshly sampled batch: points plus ±1 labels (inner −1, outer +1).
fn sample_batch(cfg: &SphereConfig, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut points = Vec::with_capacity(cfg.batch_size * cfg.n);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let outer = rng.flip();
        let r = if outer {
            cfg.outer_radius
        } else {
            cfg.inner_radius
        };
        points.extend(sample_sphere(cfg.n, r, 1, rng));
        labels.push(if outer { 1.0 } else { -1.0 });
    }
    (points, labels)
}

/// Train the quadratic net on freshly sampled i.i.d. batches with the
/// logistic loss on y·f(x); `sign(f)` is the class decision.
pub fn train_sphere_net(cfg: &SphereConfig) -> Result<QuadraticNet<f32>> {
    cfg.validate()?;
    let base = QuadraticNet::<f32>::new(cfg.n, cfg.h, WeightMode::Scalar, cfg.seed);
    // zero output bias: everything starts classified as outer (error ≈ 0.5)
    let params = base
        .params
        .with("bias", Tensor::new(vec![0.0f32], vec![1]));
    let mut net = base.replace_params(params);
    let mut adam = AdamState::new(&net.params, cfg.lr);
    let mut rng = Rng::derive(cfg.seed, "sphere-train", 0);

    for step in 0..cfg.train_steps {
        let (points, labels) = sample_batch(cfg, &mut rng);
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &net.params, true);
        let x = tape.constant(Tensor::new(
            points.iter().map(|&v| v as f32).collect(),
            vec![cfg.batch_size, cfg.n],
        ));
        let y = tape.constant(Tensor::new(
            labels.iter().map(|&v| v as f32).collect(),
            vec![cfg.batch_size],
        ));
        let f = net.value_into(&mut tape, x, &bound);
        let yf = tape.mul(f, y);
        let s = tape.sigmoid(yf);
        let log_s = tape.log(s);
        let neg = tape.neg(log_s);
        let loss = tape.mean_all(neg);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "sphere logistic loss is non-finite".into(),
            });
        }
        let grads = tape.backward(loss);
        let mut gset = ParamSet::new();
        for (name, t) in net.params.iter() {
            gset.insert(name.clone(), grads.of(bound.id(name), &t.shape));
        }
        let (next, next_adam) = adam_step(&net.params, &gset, &adam)?;
        net = net.replace_params(next);
        adam = next_adam;
    }
    Ok(net)
}

/// Held-out error rate on fresh samples (balanced across the two spheres).
pub fn sphere_error<F: Scalar>(net: &QuadraticNet<F>, cfg: &SphereConfig, count: usize) -> f64 {
    let mut rng = Rng::derive(cfg.seed, "sphere-heldout", 0);
    let mut wrong = 0usize;
    let chunk = 512usize;
    let mut done = 0usize;
    while done < count {
        let b = chunk.min(count - done);
        let mut points = Vec::with_capacity(b * cfg.n);
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            let outer = rng.flip();
            let r = if outer {
                cfg.outer_radius
            } else {
                cfg.inner_radius
            };
            points.extend(sample_sphere(cfg.n, r, 1, &mut rng));
            labels.push(outer);
        }
        let fx = net.forward_batch(
            &points
                .iter()
                .map(|&v| F::from_f64(v))
                .collect::<Vec<F>>(),
            b,
        );
        for (f, outer) in fx.iter().zip(&labels) {
            let predicted_outer = *f > F::ZERO;
            if predicted_outer != *outer {
                wrong += 1;
            }
        }
        done += b;
    }
    wrong as f64 / count as f64
}

/// Exact Type I construction along the classifier's missing dimensions.
///
/// Transforms x to z-space, keeps every coordinate the classifier can see,
/// and spreads the radius budget (outer² − Σ kept zᵢ²) equally over the
/// zero-α coordinates, landing on the outer sphere with f₁ unchanged.
pub fn analytic_type1(
    x: &[f64],
    canon: &CanonicalQuadratic,
    cfg: &SphereConfig,
) -> Result<Vec<f64>> {
    let missing = canon.missing_dims();
    if missing.is_empty() {
        return Err(Error::Infeasible(
            "classifier has no missing dimensions".into(),
        ));
    }
    let z = canon.to_z(x);
    let kept_sq: f64 = (0..canon.n)
        .filter(|i| canon.alpha[*i] != 0.0)
        .map(|i| z[i] * z[i])
        .sum();
    let budget = cfg.outer_radius * cfg.outer_radius - kept_sq;
    if budget < 0.0 {
        return Err(Error::Infeasible(format!(
            "visible coordinates already exceed the outer sphere (Σz² = {kept_sq:.6})"
        )));
    }
    let fill = (budget / missing.len() as f64).sqrt();
    let mut z_prime = z;
    for i in missing {
        z_prime[i] = fill;
    }
    Ok(canon.from_z(&z_prime))
}

/// Trajectory of the gradient-projection attack.
#[derive(Clone, Debug)]
pub struct SphereAttackTrace {
    pub radii: Vec<f64>,
    pub f_values: Vec<f64>,
    /// Visited points; populated only when requested.
    pub points: Vec<Vec<f64>>,
    pub success: bool,
    pub stalled: bool,
    pub steps: usize,
    /// max |d·∇f| over the run, a direct check of the projection.
    pub max_projection_dot: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectedAttackOptions {
    pub max_steps: usize,
    pub lr: f64,
    /// |f(x_T) − f(x₀)| tolerance for success.
    pub f_tolerance: f64,
    pub keep_points: bool,
}

impl Default for ProjectedAttackOptions {
    fn default() -> Self {
        ProjectedAttackOptions {
            max_steps: 4000,
            lr: 0.01,
            f_tolerance: 1e-2,
            keep_points: false,
        }
    }
}

/// Walk from an inner-sphere point toward the outer sphere along the radial
/// direction projected onto the tangent space of the f₁ level set
/// (d = r − (r·ĝ)ĝ), so f₁ stays constant to first order.
pub fn projected_radial_attack(
    x0: &[f64],
    net: &QuadraticNet<f64>,
    cfg: &SphereConfig,
    opts: &ProjectedAttackOptions,
) -> SphereAttackTrace {
    let mut x = x0.to_vec();
    let f0 = net.forward_one(&x);
    let mut radii = Vec::new();
    let mut f_values = Vec::new();
    let mut points = Vec::new();
    let mut stalled = false;
    let mut max_dot = 0.0f64;
    let mut steps = 0usize;
    let mut last_progress_radius = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut steps_without_progress = 0usize;

    for _ in 0..opts.max_steps {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = net.forward_one(&x);
        radii.push(norm);
        f_values.push(f);
        if opts.keep_points {
            points.push(x.clone());
        }
        if norm >= cfg.outer_radius {
            break;
        }

        let g = net.input_gradient(&x);
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        if g_sq < 1e-24 {
            stalled = true;
            break;
        }
        let r: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let rg: f64 = r.iter().zip(&g).map(|(a, b)| a * b).sum();
        let d: Vec<f64> = r
            .iter()
            .zip(&g)
            .map(|(ri, gi)| ri - rg * gi / g_sq)
            .collect();
        let dot: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        max_dot = max_dot.max(dot.abs());

        let d_norm_sq: f64 = d.iter().map(|v| v * v).sum();
        if d_norm_sq < 1e-24 {
            stalled = true;
            break;
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += opts.lr * di;
        }
        steps += 1;

        let new_radius = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if new_radius > last_progress_radius + 1e-12 {
            last_progress_radius = new_radius;
            steps_without_progress = 0;
        } else {
            steps_without_progress += 1;
            if steps_without_progress >= 100 {
                stalled = true;
                break;
            }
        }
    }

    let final_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let final_f = net.forward_one(&x);
    if radii.last() != Some(&final_norm) {
        radii.push(final_norm);
        f_values.push(final_f);
        if opts.keep_points {
            points.push(x.clone());
        }
    }
    let success =
        !stalled && final_norm >= cfg.outer_radius && (final_f - f0).abs() < opts.f_tolerance;
    SphereAttackTrace {
        radii,
        f_values,
        points,
        success,
        stalled,
        steps,
        max_projection_dot: max_dot,
    }
}

/// CSV rows (step, radius, f value) for plotting a trajectory.
pub fn write_trace_csv(trace: &SphereAttackTrace, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "step,radius,f_value")?;
    for (i, (r, f)) in trace.radii.iter().zip(&trace.f_values).enumerate() {
        writeln!(out, "{i},{r},{f}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::canonicalize;

    // keep the missing-dimension fraction near the full experiment's 10%:
    // much wider and the visible squared mass no longer separates the spheres
    fn small_cfg() -> SphereConfig {
        SphereConfig {
            n: 20,
            h: 18,
            batch_size: 32,
            train_steps: 8000,
            seed: 5,
            ..SphereConfig::default()
        }
    }

    #[test]
    fn samples_lie_on_the_sphere() {
        let mut rng = Rng::derive(1, "sphere-sample", 0);
        let pts = sample_sphere(20, 0.8, 200, &mut rng);
        for p in pts.chunks(20) {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 0.8).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn sample_coordinate_means_vanish() {
        let (n, count, radius) = (25usize, 100_000usize, 1.0f64);
        let mut rng = Rng::derive(2, "sphere-mean", 0);
        let pts = sample_sphere(n, radius, count, &mut rng);
        let mut means = vec![0.0f64; n];
        for p in pts.chunks(n) {
            for (m, v) in means.iter_mut().zip(p) {
                *m += v;
            }
        }
        let bound = 4.0 * radius / ((n * count) as f64).sqrt();
        for m in &means {
            let mean = m / count as f64;
            assert!(mean.abs() < bound, "mean {mean} vs bound {bound}");
        }
    }

    #[test]
    fn one_dimensional_sphere_is_two_points() {
        let mut rng = Rng::derive(3, "sphere-1d", 0);
        let pts = sample_sphere(1, 0.5, 50, &mut rng);
        assert!(pts.iter().all(|&v| (v.abs() - 0.5).abs() < 1e-12));
    }

    #[test]
    fn untrained_net_errs_half_the_time() {
        let cfg = small_cfg();
        let base = QuadraticNet::<f32>::new(cfg.n, cfg.h, WeightMode::Scalar, cfg.seed);
        let params = base.params.with("bias", Tensor::new(vec![0.0f32], vec![1]));
        let net = base.replace_params(params);
        let err = sphere_error(&net, &cfg, 4000);
        assert!((err - 0.5).abs() < 0.05, "init error {err}");
    }

    #[test]
    fn training_separates_the_spheres_at_small_scale() {
        let cfg = small_cfg();
        let net = train_sphere_net(&cfg).unwrap();
        let err = sphere_error(&net, &cfg, 20_000);
        assert!(err < 0.05, "held-out error {err}");
        let canon = canonicalize(&net).unwrap();
        assert!(
            canon.zero_alpha_count() >= cfg.n - cfg.h,
            "rank bound violated: {} zeros",
            canon.zero_alpha_count()
        );
    }

    #[test]
    fn analytic_attack_paper_coordinates() {
        // missing-dimension fill for radii 0.8 → 1.0 over 10 dims:
        // √((1 − 0.8²)/10) ≈ 0.18974, when the original has no mass there
        let cfg = SphereConfig::default();
        let budget = cfg.outer_radius.powi(2) - cfg.inner_radius.powi(2);
        let fill = (budget / 10.0).sqrt();
        assert!((fill - 0.189_736_6).abs() < 1e-6);
        assert!((cfg.inner_radius.powi(2) + 10.0 * fill * fill - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_attack_reaches_outer_sphere_exactly() {
        let cfg = small_cfg();
        let net = train_sphere_net(&cfg).unwrap().to_f64();
        let canon = canonicalize(&net).unwrap();
        assert!(!canon.missing_dims().is_empty());
        let mut rng = Rng::derive(9, "analytic", 0);
        for _ in 0..50 {
            let x = sample_sphere(cfg.n, cfg.inner_radius, 1, &mut rng);
            let x_prime = analytic_type1(&x, &canon, &cfg).unwrap();
            let norm = x_prime.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - cfg.outer_radius).abs() < 1e-6, "norm {norm}");
            let df = (net.forward_one(&x_prime) - net.forward_one(&x)).abs();
            let scale = 1.0 + net.forward_one(&x).abs();
            assert!(df <= 1e-6 * scale, "Δf = {df}");
        }
    }

    #[test]
    fn analytic_attack_rejects_full_rank_nets() {
        let net = QuadraticNet::<f64>::new(6, 8, WeightMode::Scalar, 3);
        let canon = canonicalize(&net).unwrap();
        if canon.missing_dims().is_empty() {
            let cfg = SphereConfig {
                n: 6,
                h: 8,
                ..SphereConfig::default()
            };
            let x = vec![0.3; 6];
            assert!(analytic_type1(&x, &canon, &cfg).is_err());
        }
    }

    #[test]
    fn projected_attack_walks_out_with_f_fixed() {
        let cfg = small_cfg();
        let net = train_sphere_net(&cfg).unwrap().to_f64();
        let mut rng = Rng::derive(10, "projected", 0);
        let mut successes = 0;
        let tries = 20;
        for _ in 0..tries {
            let x = sample_sphere(cfg.n, cfg.inner_radius, 1, &mut rng);
            let trace =
                projected_radial_attack(&x, &net, &cfg, &ProjectedAttackOptions::default());
            assert!(
                trace.max_projection_dot < 1e-8,
                "projection broke orthogonality: {}",
                trace.max_projection_dot
            );
            for w in trace.radii.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "radius decreased: {w:?}");
            }
            if trace.success {
                successes += 1;
            }
        }
        assert!(
            successes as f64 >= 0.9 * tries as f64,
            "only {successes}/{tries} succeeded"
        );
    }

    #[test]
    fn projected_attack_stalls_on_full_rank_isotropic_net() {
        // W = I, w = 1: ∇f ∥ x everywhere, so the projected direction is 0.
        let n = 8;
        let base = QuadraticNet::<f64>::new(n, n, WeightMode::Scalar, 4);
        let mut w = Tensor::<f64>::zeros(vec![n, n]);
        for i in 0..n {
            w.data[i * n + i] = 1.0;
        }
        let params = base
            .params
            .with("proj", w)
            .with("bias", Tensor::new(vec![-0.82], vec![1]));
        let net = base.replace_params(params);
        let cfg = SphereConfig {
            n,
            h: n,
            ..SphereConfig::default()
        };
        let mut rng = Rng::derive(11, "stall", 0);
        let x = sample_sphere(n, cfg.inner_radius, 1, &mut rng);
        let trace = projected_radial_attack(&x, &net, &cfg, &ProjectedAttackOptions::default());
        assert!(trace.stalled);
        assert!(!trace.success);
    }
}
