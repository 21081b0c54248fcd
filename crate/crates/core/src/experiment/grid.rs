use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunSpec};
use super::ExperimentError;
use crate::synth::{build_invertible_generator, GeneratorSpec, LatentDistribution, LatentKind};
use crate::training::{
    join_permutation, load_checkpoint, read_history_csv, save_checkpoint, write_history_csv, EvalRecord, TrainError, Trainer,
};

pub const RUNS_DIR: &str = "runs";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const GENERATOR_FILE: &str = "generator.bin";
pub const STANDARDIZER_FILE: &str = "standardizer.toml";
pub const RECORD_FILE: &str = "record.toml";
pub const SPEC_FILE: &str = "run.toml";

/// One row per evaluation of every run.
pub const RESULTS_COLUMNS: [&str; 17] = [
    "run_id",
    "K",
    "M",
    "latents",
    "lambda",
    "seed",
    "status",
    "epoch",
    "lr",
    "rec_raw",
    "rec_normalized",
    "contrast_raw",
    "contrast_normalized",
    "sis",
    "s1",
    "s2",
    "permutation",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed,
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        }
    }
}

/// Terminal state of one run, written last into its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub slots: usize,
    pub slot_dim: usize,
    pub latents: LatentKind,
    pub lambda: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
    pub epochs_completed: usize,
    pub history: String,
    pub checkpoint: String,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    /// Runs that were already finished and were not retrained.
    pub skipped: usize,
    pub results: PathBuf,
    pub summary: PathBuf,
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |e| ExperimentError::Io { path: path.to_path_buf(), source: e };
    let tmp = path.with_extension("partial");
    {
        let mut file = fs::File::create(&tmp).map_err(io)?;
        file.write_all(bytes).map_err(io)?;
        file.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

fn read_text(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| ExperimentError::Io { path: path.to_path_buf(), source: e })
}

pub fn run_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join(RUNS_DIR).join(run_id)
}

pub fn read_record(dir: &Path) -> Result<Option<RunRecord>, ExperimentError> {
    let path = dir.join(RECORD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    toml::from_str(&text).map(Some).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

pub fn read_history(dir: &Path) -> Result<Vec<EvalRecord>, ExperimentError> {
    let path = dir.join(HISTORY_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = fs::File::open(&path).map_err(|e| ExperimentError::Io { path: path.clone(), source: e })?;
    Ok(read_history_csv(file)?)
}

fn write_history(dir: &Path, history: &[EvalRecord]) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    write_history_csv(history, &mut buf)?;
    write_atomic(&dir.join(HISTORY_FILE), &buf)
}

/// The generator and latent distribution a run trains on.
pub fn run_inputs(spec: &RunSpec) -> Result<(GeneratorSpec, u64, LatentDistribution), ExperimentError> {
    let (gen, generator_seed) = build_invertible_generator(&spec.generator, spec.seed, spec.probes, spec.max_attempts)?;
    let dist = LatentDistribution::of_kind(spec.latents, gen.layout(), spec.seed)?;
    Ok((gen, generator_seed, dist))
}

fn train_in_dir(spec: &RunSpec, dir: &Path, record: &mut RunRecord) -> Result<(), ExperimentError> {
    let (gen, generator_seed, dist) = run_inputs(spec)?;
    record.generator_seed = Some(generator_seed);
    let mut gen_bytes = Vec::new();
    gen.write_binary(&mut gen_bytes)?;
    write_atomic(&dir.join(GENERATOR_FILE), &gen_bytes)?;

    let trainer = Trainer::new(&gen, &dist, spec.train.clone())?;
    let standardizer = toml::to_string(&trainer.data.standardizer).map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_atomic(&dir.join(STANDARDIZER_FILE), standardizer.as_bytes())?;

    let checkpoint = dir.join(CHECKPOINT_FILE);
    let (state, history) = if checkpoint.exists() {
        let state = load_checkpoint(&checkpoint, &trainer.spec)?;
        // History is written before the checkpoint, so it may run one
        // evaluation ahead after an interruption.
        let history: Vec<EvalRecord> = read_history(dir)?.into_iter().filter(|r| r.epoch <= state.epoch).collect();
        log::info!("run {} resuming at epoch {}", record.run_id, state.epoch);
        (state, history)
    } else {
        (trainer.init_state(), Vec::new())
    };
    record.epochs_completed = state.epoch;

    let result = trainer.run(state, history, |state, _, history| {
        write_history(dir, history).map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
        save_checkpoint(&checkpoint, &trainer.spec, state)
    });
    match result {
        Ok(outcome) => {
            // Covers a resume that had nothing left to train.
            write_history(dir, &outcome.history)?;
            record.epochs_completed = outcome.state.epoch;
            record.status = RunStatus::Completed;
        }
        Err(TrainError::Diverged { epoch, loss, history }) => {
            write_history(dir, &history)?;
            record.epochs_completed = epoch;
            record.status = RunStatus::Diverged;
            record.message = Some(format!("diverged at epoch {epoch} (loss {loss})"));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Trains one run in `dir`, resuming from its checkpoint if present. A run
/// whose record already exists is returned as is.
pub fn execute_run(spec: &RunSpec, dir: &Path) -> Result<(RunRecord, bool), ExperimentError> {
    if let Some(record) = read_record(dir)? {
        return Ok((record, true));
    }
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io { path: dir.to_path_buf(), source: e })?;
    let spec_text = toml::to_string(spec).map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_atomic(&dir.join(SPEC_FILE), spec_text.as_bytes())?;
    let mut record = RunRecord {
        run_id: spec.run_id(),
        status: RunStatus::Failed,
        message: None,
        slots: spec.slots,
        slot_dim: spec.generator.slot_dim,
        latents: spec.latents,
        lambda: spec.lambda,
        seed: spec.seed,
        generator_seed: None,
        epochs_completed: 0,
        history: HISTORY_FILE.into(),
        checkpoint: CHECKPOINT_FILE.into(),
    };
    if let Err(e) = train_in_dir(spec, dir, &mut record) {
        log::warn!("run {} failed: {e}", record.run_id);
        record.status = RunStatus::Failed;
        record.message = Some(e.to_string());
    }
    let history = read_history(dir)?;
    write_run_metrics(dir, &record, &history)?;
    let text = toml::to_string(&record).map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_atomic(&dir.join(RECORD_FILE), text.as_bytes())?;
    Ok((record, false))
}

/// Per-run SIS rows: run id, K, M, lambda, seed, epoch, s1, s2, sis, permutation.
fn write_run_metrics(dir: &Path, record: &RunRecord, history: &[EvalRecord]) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(crate::metrics::SisReport::CSV_HEADER)?;
    for r in history {
        out.write_record([
            record.run_id.clone(),
            record.slots.to_string(),
            record.slot_dim.to_string(),
            record.lambda.to_string(),
            record.seed.to_string(),
            r.epoch.to_string(),
            r.s1.to_string(),
            r.s2.to_string(),
            r.sis.to_string(),
            join_permutation(&r.permutation),
        ])?;
    }
    let bytes = out.into_inner().map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_atomic(&dir.join(METRICS_FILE), &bytes)
}

fn run_columns(record: &RunRecord) -> Vec<String> {
    vec![
        record.run_id.clone(),
        record.slots.to_string(),
        record.slot_dim.to_string(),
        record.latents.to_string(),
        record.lambda.to_string(),
        record.seed.to_string(),
        record.status.name().to_string(),
    ]
}

fn result_row(record: &RunRecord, r: &EvalRecord) -> Vec<String> {
    let mut row = run_columns(record);
    row.extend([
        r.epoch.to_string(),
        r.lr.to_string(),
        r.rec_raw.to_string(),
        r.rec_normalized.to_string(),
        r.contrast_raw.to_string(),
        r.contrast_normalized.to_string(),
        r.sis.to_string(),
        r.s1.to_string(),
        r.s2.to_string(),
        join_permutation(&r.permutation),
    ]);
    row
}

fn grid_order(a: &RunRecord, b: &RunRecord) -> std::cmp::Ordering {
    (a.slots, a.latents.to_string())
        .cmp(&(b.slots, b.latents.to_string()))
        .then(a.lambda.total_cmp(&b.lambda))
        .then(a.seed.cmp(&b.seed))
}

/// Writes the combined CSVs from the run directories. `results.csv` has every
/// evaluation; `summary.csv` has each run's final evaluation, or one row with
/// empty metrics for a run that never evaluated. Wall times are left out so
/// the files are reproducible byte for byte.
pub fn write_combined(out: &Path, records: &[RunRecord]) -> Result<(PathBuf, PathBuf), ExperimentError> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| grid_order(a, b));
    let mut results = csv::Writer::from_writer(Vec::new());
    let mut summary = csv::Writer::from_writer(Vec::new());
    results.write_record(RESULTS_COLUMNS)?;
    summary.write_record(RESULTS_COLUMNS)?;
    for record in sorted {
        let history = read_history(&run_dir(out, &record.run_id))?;
        for r in &history {
            results.write_record(result_row(record, r))?;
        }
        match history.last() {
            Some(last) => summary.write_record(result_row(record, last))?,
            None => {
                let mut row = run_columns(record);
                row.resize(RESULTS_COLUMNS.len(), String::new());
                summary.write_record(row)?;
            }
        }
    }
    let results_path = out.join(RESULTS_FILE);
    let summary_path = out.join(SUMMARY_FILE);
    let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| ExperimentError::Config(e.to_string()));
    write_atomic(&results_path, &finish(results)?)?;
    write_atomic(&summary_path, &finish(summary)?)?;
    Ok((results_path, summary_path))
}

/// Runs the whole grid on `workers` threads, skipping finished runs, then
/// assembles the combined CSVs.
pub fn run_grid(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<GridOutcome, ExperimentError> {
    config.validate()?;
    fs::create_dir_all(out.join(RUNS_DIR)).map_err(|e| ExperimentError::Io { path: out.to_path_buf(), source: e })?;
    let config_text = config.to_toml_string()?;
    write_atomic(&out.join("config.toml"), config_text.as_bytes())?;
    let specs = config.runs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<(RunRecord, bool), ExperimentError>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let id = spec.run_id();
                log::info!("run {id}: K={} {} lambda={} seed={}", spec.slots, spec.latents, spec.lambda, spec.seed);
                execute_run(spec, &run_dir(out, &id))
            })
            .collect()
    });
    let mut records = Vec::with_capacity(outcomes.len());
    let mut skipped = 0;
    for outcome in outcomes {
        let (record, was_skipped) = outcome?;
        skipped += was_skipped as usize;
        records.push(record);
    }
    let (results, summary) = write_combined(out, &records)?;
    Ok(GridOutcome { records, skipped, results, summary })
}
