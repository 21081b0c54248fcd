use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::synth::{GeneratorParams, LatentKind, ValidationOptions, DEFAULT_SLOPE};
use crate::training::TrainConfig;

/// Built-in defaults that a config file is layered onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-scale hyperparameters and grid.
    Paper,
    /// 10k/1k/1k samples, 40 epochs, K = 2, lambda in {0, 1}, five seeds.
    Desk,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn config(&self) -> ExperimentConfig {
        let paper = ExperimentConfig::default();
        match self {
            Preset::Paper => paper,
            Preset::Desk => ExperimentConfig {
                preset: Some(Preset::Desk),
                generator: GeneratorSection { slots: vec![2], ..paper.generator },
                train: TrainConfig {
                    epochs: 40,
                    train_samples: 10_000,
                    val_samples: 1_000,
                    test_samples: 1_000,
                    ..paper.train
                },
                grid: GridSection { lambdas: vec![0.0, 1.0], seeds: (0..5).collect() },
                ..paper
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(ExperimentError::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    /// Slot counts to sweep.
    pub slots: Vec<usize>,
    pub slot_dim: usize,
    pub slot_out: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub weight_range: f64,
    pub leaky_slope: f64,
    /// Rank probes used to reject non-invertible draws.
    pub probes: usize,
    pub max_attempts: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            slots: vec![2, 3, 5],
            slot_dim: 3,
            slot_out: 20,
            hidden: None,
            weight_range: 10.0,
            leaky_slope: DEFAULT_SLOPE,
            probes: 20,
            max_attempts: 50,
        }
    }
}

impl GeneratorSection {
    pub fn params(&self, slots: usize) -> GeneratorParams {
        GeneratorParams {
            slots,
            slot_dim: self.slot_dim,
            slot_out: self.slot_out,
            hidden: self.hidden,
            weight_range: self.weight_range,
            leaky_slope: self.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSection {
    pub kinds: Vec<LatentKind>,
}

impl Default for LatentSection {
    fn default() -> Self {
        LatentSection { kinds: vec![LatentKind::Independent] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { lambdas: vec![0.0, 1e-7, 1e-5, 1e-2, 1.0, 10.0], seeds: (0..10).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub probes: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub options: ValidationOptions,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { probes: 100, seed: 0, options: ValidationOptions::default() }
    }
}

/// A full experiment: generator family, latent kinds, training settings and
/// the (K x kind x lambda x seed) grid. `train.lambda` and `train.seed` are
/// replaced per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub generator: GeneratorSection,
    pub latents: LatentSection,
    pub train: TrainConfig,
    pub grid: GridSection,
    pub output: OutputSection,
    pub validation: ValidationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            generator: GeneratorSection::default(),
            latents: LatentSection::default(),
            train: TrainConfig::default(),
            grid: GridSection::default(),
            output: OutputSection::default(),
            validation: ValidationSection::default(),
        }
    }
}

/// Recursively overlays `top` onto `base`; tables merge key by key, anything
/// else is replaced.
pub fn merge_toml(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (key, value) in t {
                match b.get_mut(&key) {
                    Some(existing) => merge_toml(existing, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

impl ExperimentConfig {
    /// Parses `text` layered over a preset. The preset is `preset` if given,
    /// else the file's own `preset` key, else paper.
    pub fn from_toml_str(text: &str, preset: Option<Preset>) -> Result<Self, ExperimentError> {
        let file: toml::Value = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let named = match file.get("preset") {
            Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(other) => return Err(ExperimentError::Config(format!("preset must be a string, found {other}"))),
            None => None,
        };
        let chosen = preset.or(named).unwrap_or(Preset::Paper);
        let mut merged = toml::Value::try_from(chosen.config()).map_err(|e| ExperimentError::Config(e.to_string()))?;
        merge_toml(&mut merged, file);
        if let toml::Value::Table(t) = &mut merged {
            t.insert("preset".into(), toml::Value::String(chosen.name().into()));
        }
        let config: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_toml_str(&text, preset)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        let g = &self.generator;
        if g.slots.is_empty() || self.latents.kinds.is_empty() || self.grid.lambdas.is_empty() || self.grid.seeds.is_empty() {
            return fail("generator.slots, latents.kinds, grid.lambdas and grid.seeds must be nonempty".into());
        }
        for &k in &g.slots {
            g.params(k).validate().map_err(|e| ExperimentError::Config(format!("generator: {e}")))?;
        }
        if g.probes == 0 || g.max_attempts == 0 {
            return fail("generator.probes and generator.max_attempts must be positive".into());
        }
        if let Some(l) = self.grid.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return fail(format!("lambda {l} must be finite and non-negative"));
        }
        self.train.validate().map_err(|e| ExperimentError::Config(format!("train: {e}")))?;
        if self.validation.probes == 0 {
            return fail("validation.probes must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.grid.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }

    /// Every run in grid order: K, latent kind, lambda, seed.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &slots in &self.generator.slots {
            for &latents in &self.latents.kinds {
                for &lambda in &self.grid.lambdas {
                    for &seed in &self.grid.seeds {
                        out.push(RunSpec {
                            slots,
                            latents,
                            lambda,
                            seed,
                            generator: self.generator.params(slots),
                            probes: self.generator.probes,
                            max_attempts: self.generator.max_attempts,
                            train: TrainConfig { lambda, seed, ..self.train.clone() },
                        });
                    }
                }
            }
        }
        out
    }
}

/// Everything that determines one run's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub slots: usize,
    pub latents: LatentKind,
    pub lambda: f64,
    pub seed: u64,
    pub generator: GeneratorParams,
    pub probes: usize,
    pub max_attempts: usize,
    pub train: TrainConfig,
}

impl RunSpec {
    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn run_id(&self) -> String {
        let canonical = toml::to_string(self).expect("run spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_paper_preset() {
        let cfg = ExperimentConfig::from_toml_str("", None).unwrap();
        assert_eq!(cfg.preset, Some(Preset::Paper));
        assert_eq!(cfg.train.train_samples, 75_000);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.decay_epoch, 50);
        assert_eq!(cfg.runs().len(), 180);
    }

    #[test]
    fn desk_preset_and_overrides() {
        let cfg = ExperimentConfig::from_toml_str("preset = \"desk\"\n[train]\nepochs = 3\n", None).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.train_samples, 10_000);
        assert_eq!(cfg.runs().len(), 10);
        // The flag wins over the file.
        let paper = ExperimentConfig::from_toml_str("preset = \"desk\"\n", Some(Preset::Paper)).unwrap();
        assert_eq!(paper.train.train_samples, 75_000);
    }

    #[test]
    fn round_trip_is_idempotent() {
        for preset in [Preset::Paper, Preset::Desk] {
            let cfg = ExperimentConfig::from_toml_str("[grid]\nlambdas = [0.5]\n", Some(preset)).unwrap();
            let text = cfg.to_toml_string().unwrap();
            let again = ExperimentConfig::from_toml_str(&text, None).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(text, again.to_toml_string().unwrap());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[grid]\nseeds = []\n",
            "[generator]\nslot_out = 3\n",
            "[grid]\nlambdas = [-1.0]\n",
            "[train]\nbatch_size = 0\n",
            "[train]\nunknown_key = 1\n",
            "preset = \"huge\"\n",
            "not toml",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text, None), Err(ExperimentError::Config(_))), "{text}");
        }
    }

    #[test]
    fn run_ids_are_stable_and_distinct() {
        let cfg = Preset::Desk.config();
        let ids: Vec<String> = cfg.runs().iter().map(RunSpec::run_id).collect();
        let again: Vec<String> = cfg.runs().iter().map(RunSpec::run_id).collect();
        assert_eq!(ids, again);
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), ids.len());
        assert!(ids.iter().all(|id| id.len() == 16));
        // The output directory does not enter the id.
        let moved = ExperimentConfig { output: OutputSection { dir: "elsewhere".into() }, ..cfg.clone() };
        assert_eq!(moved.runs()[0].run_id(), ids[0]);
    }

    #[test]
    fn seed_offset_shifts_every_seed() {
        let cfg = Preset::Desk.config().with_seed_offset(100);
        assert_eq!(cfg.grid.seeds, vec![100, 101, 102, 103, 104]);
    }
}
