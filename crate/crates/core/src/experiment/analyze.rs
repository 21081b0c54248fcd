use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::STANDARDIZER_FILE;
use super::ExperimentError;
use crate::analysis::{contrast_variant_of, pixel_index_sets, rows_rank, split_blocks, ContrastVariant, LEARNED_RANK_TOLERANCE};
use crate::metrics::{sis, ReadoutConfig, SisReport, SisSplit};
use crate::synth::{sample_latents, GeneratorSpec, LatentBatch, LatentDistribution, LatentKind, SlotLayout};
use crate::training::{read_checkpoint, AutoEncoderSpec, Standardizer, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeOptions {
    /// Fresh samples drawn for contrast, reconstruction and SIS.
    pub samples: usize,
    pub seed: u64,
    pub latents: LatentKind,
    /// Seed of the latent covariance when `latents` is correlated.
    pub covariance_seed: u64,
    /// Samples at which index sets and mechanism ranks are computed.
    pub structure_samples: usize,
    /// Pixel-to-slot cutoff relative to the largest Jacobian row norm.
    pub index_threshold: f64,
    pub rank_tolerance: f64,
    pub readout: ReadoutConfig,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            samples: 3000,
            seed: 1 << 20,
            latents: LatentKind::Independent,
            covariance_seed: 0,
            structure_samples: 100,
            index_threshold: 1e-2,
            rank_tolerance: LEARNED_RANK_TOLERANCE,
            readout: ReadoutConfig::default(),
        }
    }
}

/// Structure of a decoder at inferred latents, plus SIS of the encoder.
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub samples: usize,
    /// Mean of every contrast variant over the samples.
    pub contrast: Vec<(ContrastVariant, f64)>,
    /// Mean squared reconstruction error per pixel, when an autoencoder was analyzed.
    pub rec_normalized: Option<f64>,
    /// Mean and max fraction of pixels assigned to more than one slot.
    pub overlap_mean: f64,
    pub overlap_max: f64,
    /// `[slot]` histogram of mechanism ranks: `rank_counts[k][r]` probes had rank `r`.
    pub rank_counts: Vec<Vec<usize>>,
    pub sis: SisReport,
}

impl StructureReport {
    pub fn contrast_of(&self, variant: ContrastVariant) -> Option<f64> {
        self.contrast.iter().find(|(v, _)| *v == variant).map(|(_, c)| *c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples {}", self.samples);
        for (variant, value) in &self.contrast {
            let _ = writeln!(out, "contrast {variant} {value:e}");
        }
        if let Some(rec) = self.rec_normalized {
            let _ = writeln!(out, "rec_normalized {rec:e}");
        }
        let _ = writeln!(out, "overlap mean {:.4} max {:.4}", self.overlap_mean, self.overlap_max);
        for (k, counts) in self.rank_counts.iter().enumerate() {
            let hist: Vec<String> =
                counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(r, c)| format!("{r}:{c}")).collect();
            let _ = writeln!(out, "slot {k} mechanism ranks {}", hist.join(" "));
        }
        out.push_str(&self.sis.to_text());
        out
    }
}

fn structure_report<J>(
    layout: SlotLayout,
    jacobian: J,
    z_true: &LatentBatch,
    z_hat: &DMatrix<f64>,
    rec_normalized: Option<f64>,
    options: &AnalyzeOptions,
) -> Result<StructureReport, ExperimentError>
where
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = z_hat.nrows();
    let variants: Vec<ContrastVariant> =
        ContrastVariant::ALL.into_iter().filter(|v| layout.slots >= 2 || *v != ContrastVariant::SlotNormalized).collect();
    let mut sums = vec![0.0; variants.len()];
    let mut overlap_sum = 0.0;
    let mut overlap_max = 0.0f64;
    let mut rank_counts = vec![vec![0; layout.slot_dim + 1]; layout.slots];
    let structure = options.structure_samples.min(n);
    for i in 0..n {
        let z: Vec<f64> = z_hat.row(i).iter().copied().collect();
        let jac = jacobian(&z);
        for (sum, &variant) in sums.iter_mut().zip(&variants) {
            *sum += contrast_variant_of(&jac, layout, variant)?;
        }
        if i < structure {
            let sets = pixel_index_sets(&split_blocks(&jac, layout)?, options.index_threshold)?;
            let overlap = sets.overlapping_pixels().len() as f64 / jac.nrows() as f64;
            overlap_sum += overlap;
            overlap_max = overlap_max.max(overlap);
            for (k, counts) in rank_counts.iter_mut().enumerate() {
                let pixels = sets.slot(k);
                let rank = if pixels.is_empty() { 0 } else { rows_rank(&jac, pixels, options.rank_tolerance)?.rank };
                counts[rank.min(layout.slot_dim)] += 1;
            }
        }
    }
    let fit = n / 3;
    let val = n / 3;
    let split = SisSplit::contiguous(fit, val, n - fit - val);
    let z_hat = LatentBatch::new(z_hat.clone(), layout)?;
    let report = sis(z_true, &z_hat, &split, &options.readout)?;
    Ok(StructureReport {
        samples: n,
        contrast: variants.into_iter().zip(sums.into_iter().map(|s| s / n as f64)).collect(),
        rec_normalized,
        overlap_mean: overlap_sum / structure.max(1) as f64,
        overlap_max,
        rank_counts,
        sis: report,
    })
}

fn fresh_latents(layout: SlotLayout, options: &AnalyzeOptions) -> Result<LatentBatch, ExperimentError> {
    if options.samples < 6 {
        return Err(ExperimentError::Config("analysis needs at least 6 samples".into()));
    }
    let dist = LatentDistribution::of_kind(options.latents, layout, options.covariance_seed)?;
    Ok(sample_latents(options.samples, &dist, options.seed)?)
}

/// Treats the generator as the decoder and the identity as the encoder.
pub fn analyze_generator(gen: &GeneratorSpec, options: &AnalyzeOptions) -> Result<StructureReport, ExperimentError> {
    let z = fresh_latents(gen.layout(), options)?;
    structure_report(gen.layout(), |z| gen.jacobian(z), &z, &z.data.clone(), Some(0.0), options)
}

/// Encodes fresh observations of `gen` with a trained autoencoder and
/// inspects its decoder at the inferred latents.
pub fn analyze_model(
    spec: &AutoEncoderSpec,
    state: &TrainState,
    standardizer: &Standardizer,
    gen: &GeneratorSpec,
    options: &AnalyzeOptions,
) -> Result<StructureReport, ExperimentError> {
    if spec.pixels != gen.pixels() || spec.layout != gen.layout() {
        return Err(ExperimentError::DimensionMismatch(format!(
            "checkpoint has {} pixels and layout {:?}, generator has {} pixels and layout {:?}",
            spec.pixels,
            spec.layout,
            gen.pixels(),
            gen.layout()
        )));
    }
    if standardizer.mean.len() != spec.pixels {
        return Err(ExperimentError::DimensionMismatch(format!(
            "standardizer has {} pixels, model has {}",
            standardizer.mean.len(),
            spec.pixels
        )));
    }
    let z = fresh_latents(gen.layout(), options)?;
    let x = standardizer.apply(&gen.render_matrix(&z.data));
    let z_hat = spec.encode(&state.params, &x);
    let x_hat = spec.decode(&state.params, &z_hat);
    let rec = (x_hat - &x).norm_squared() / (x.nrows() * x.ncols()) as f64;
    let decoder = spec.decoder(&state.params);
    structure_report(spec.layout, |z| decoder.jacobian_at(z), &z, &z_hat, Some(rec), options)
}

/// Loads a checkpoint and generator and analyzes the model. The standardizer
/// is read from the checkpoint's directory; without one the model is assumed
/// to have been trained on raw pixels.
pub fn analyze_checkpoint(checkpoint: &Path, generator: &Path, options: &AnalyzeOptions) -> Result<StructureReport, ExperimentError> {
    let open = |p: &Path| File::open(p).map_err(|e| ExperimentError::Io { path: p.to_path_buf(), source: e });
    let (spec, state) = read_checkpoint(BufReader::new(open(checkpoint)?))?;
    let gen = GeneratorSpec::load(generator)?;
    let std_path = checkpoint.with_file_name(STANDARDIZER_FILE);
    let standardizer = if std_path.exists() {
        let text = std::fs::read_to_string(&std_path).map_err(|e| ExperimentError::Io { path: std_path.clone(), source: e })?;
        toml::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", std_path.display())))?
    } else {
        log::warn!("no {STANDARDIZER_FILE} next to {}; assuming raw pixels", checkpoint.display());
        Standardizer::identity(spec.pixels)
    };
    analyze_model(&spec, &state, &standardizer, &gen, options)
}
