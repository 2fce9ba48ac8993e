use rayon::prelude::*;
use typeone::backbone::Rng;
use typeone::models::canonicalize;
use typeone::sphere::{
    analytic_type1, projected_radial_attack, sample_sphere, sphere_error, train_sphere_net,
    write_trace_csv, ProjectedAttackOptions,
};

use super::{prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "sphere", seed)?;
    let mut sphere_cfg = cfg.sphere.clone();
    sphere_cfg.seed = seed;
    sphere_cfg.validate()?;

    let net = train_sphere_net(&sphere_cfg)?;
    let held_out_error = sphere_error(&net, &sphere_cfg, 100_000);
    let net64 = net.to_f64();
    let canon = canonicalize(&net64)?;
    let zero_alphas = canon.zero_alpha_count();

    let attack_points = 1000usize;
    let mut rng = Rng::derive(seed, "sphere-attack-points", 0);
    let points = sample_sphere(
        sphere_cfg.n,
        sphere_cfg.inner_radius,
        attack_points,
        &mut rng,
    );

    // exact construction over every feasible inner point
    let mut analytic_success = 0usize;
    let mut analytic_feasible = 0usize;
    let mut worst_norm_gap = 0.0f64;
    let mut worst_df = 0.0f64;
    for p in points.chunks(sphere_cfg.n) {
        match analytic_type1(p, &canon, &sphere_cfg) {
            Ok(x_prime) => {
                analytic_feasible += 1;
                let norm = x_prime.iter().map(|v| v * v).sum::<f64>().sqrt();
                let df = (net64.forward_one(&x_prime) - net64.forward_one(p)).abs();
                let scale = 1.0 + net64.forward_one(p).abs();
                worst_norm_gap = worst_norm_gap.max((norm - sphere_cfg.outer_radius).abs());
                worst_df = worst_df.max(df / scale);
                if (norm - sphere_cfg.outer_radius).abs() <= 1e-6 && df <= 1e-6 * scale {
                    analytic_success += 1;
                }
            }
            Err(_) => {}
        }
    }

    // gradient-projection walk over the same points
    let opts = ProjectedAttackOptions::default();
    let traces: Vec<_> = points
        .par_chunks(sphere_cfg.n)
        .map(|p| projected_radial_attack(p, &net64, &sphere_cfg, &opts))
        .collect();
    let projected_success = traces.iter().filter(|t| t.success).count();

    // a few trajectory CSVs for plotting
    for (i, trace) in traces.iter().take(5).enumerate() {
        let mut csv = Vec::new();
        write_trace_csv(trace, &mut csv).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&dir, &format!("trajectory-{i}.csv"), &csv)?;
    }

    Ok(serde_json::json!({
        "command": "sphere",
        "seed": seed,
        "n": sphere_cfg.n,
        "h": sphere_cfg.h,
        "train_steps": sphere_cfg.train_steps,
        "held_out_error": held_out_error,
        "zero_alpha_dimensions": zero_alphas,
        "analytic_feasible": analytic_feasible,
        "analytic_success_rate": analytic_success as f64 / analytic_feasible.max(1) as f64,
        "analytic_worst_norm_gap": worst_norm_gap,
        "analytic_worst_relative_df": worst_df,
        "projected_success_rate": projected_success as f64 / traces.len() as f64,
    }))
}
