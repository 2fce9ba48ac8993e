use typeone::oracles::{gradient_oracle_suite, kl_oracle_suite};

use super::{prepare_run, write_file};
use crate::config::ExperimentConfig;
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<serde_json::Value, CliError> {
    let dir = prepare_run(cfg, "gradcheck", seed)?;
    let mut checks = gradient_oracle_suite(seed, 20, 1e-4);
    checks.push(kl_oracle_suite(seed, 50, 1e-4));

    let mut report = Vec::new();
    for c in &checks {
        report.extend_from_slice(
            format!(
                "{}: error {:.3e} tolerance {:.0e} {}\n",
                c.name,
                c.error,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            )
            .as_bytes(),
        );
    }
    write_file(&dir, "gradcheck.txt", &report)?;

    let all_pass = checks.iter().all(|c| c.pass);
    let worst = checks
        .iter()
        .map(|c| c.error)
        .fold(0.0f64, f64::max);
    if !all_pass {
        let failed: Vec<&str> = checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::Runtime(format!(
            "oracle checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(serde_json::json!({
        "command": "gradcheck",
        "seed": seed,
        "checks": checks.len(),
        "all_pass": all_pass,
        "worst_error": worst,
    }))
}
