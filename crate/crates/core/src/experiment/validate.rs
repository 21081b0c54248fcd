use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::ExperimentError;
use crate::synth::{build_invertible_generator, validate_generator, GeneratorValidation};

/// Validation of the generator one grid seed trains on.
#[derive(Debug, Clone)]
pub struct GeneratorCheck {
    pub slots: usize,
    pub seed: u64,
    pub generator_seed: u64,
    pub validation: GeneratorValidation,
}

/// Builds the generator of every (K, seed) pair in the grid and probes it.
pub fn validate_config_generators(config: &ExperimentConfig) -> Result<Vec<GeneratorCheck>, ExperimentError> {
    config.validate()?;
    let g = &config.generator;
    let v = &config.validation;
    let mut checks = Vec::new();
    for &slots in &g.slots {
        for &seed in &config.grid.seeds {
            let (gen, generator_seed) = build_invertible_generator(&g.params(slots), seed, g.probes, g.max_attempts)?;
            let validation = validate_generator(&gen, v.probes, v.seed, &v.options)?;
            checks.push(GeneratorCheck { slots, seed, generator_seed, validation });
        }
    }
    Ok(checks)
}

pub fn checks_passed(checks: &[GeneratorCheck]) -> bool {
    checks.iter().all(|c| c.validation.passed())
}

pub fn checks_to_text(checks: &[GeneratorCheck]) -> String {
    let mut out = String::new();
    for c in checks {
        let status = if c.validation.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "== K={} seed={} generator_seed={} {status}", c.slots, c.seed, c.generator_seed);
        out.push_str(&c.validation.to_text());
    }
    out
}
