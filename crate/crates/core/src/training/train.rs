use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, batch_contrast, lr_schedule, objective_and_gradient, AdamConfig, AutoEncoderSpec, Standardizer, TrainError};
use crate::analysis::ContrastVariant;
use crate::metrics::{sis, ReadoutConfig, SisReport, SisSplit};
use crate::rng::{stream, stream_rng};
use crate::synth::latent::sample_latents_stream;
use crate::synth::{GeneratorSpec, LatentBatch, LatentDistribution};

/// Losses above this are treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub eval_period: usize,
    pub seed: u64,
    pub contrast_variant: ContrastVariant,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// Standardize each pixel with training-set statistics before fitting.
    pub standardize: bool,
    pub adam: AdamConfig,
    pub readout: ReadoutConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            decay_epoch: 50,
            decay_factor: 10.0,
            eval_period: 4,
            seed: 0,
            contrast_variant: ContrastVariant::ScaleNormalized,
            hidden: 80,
            leaky_slope: crate::synth::DEFAULT_SLOPE,
            train_samples: 75_000,
            val_samples: 6_000,
            test_samples: 5_000,
            standardize: true,
            adam: AdamConfig::default(),
            readout: ReadoutConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda must be finite and non-negative");
        }
        if self.eval_period == 0 {
            return fail("eval period must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return fail("decay factor must be positive");
        }
        if self.hidden == 0 {
            return fail("hidden width must be positive");
        }
        if self.train_samples == 0 || self.val_samples < 4 || self.test_samples < 2 {
            return fail("need at least 1 training, 4 validation and 2 test samples");
        }
        Ok(())
    }
}

/// Optimizer state. Shuffling is derived from `seed` and `epoch`, so this is
/// everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: Vec<f64>, seed: u64) -> Self {
        let n = params.len();
        TrainState { params, m: vec![0.0; n], v: vec![0.0; n], step: 0, epoch: 0, seed }
    }
}

/// One evaluation point. Reconstruction and contrast are means over the test
/// split; SIS readouts are fit and matched on the validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub lr: f64,
    pub rec_raw: f64,
    pub rec_normalized: f64,
    pub contrast_raw: f64,
    pub contrast_normalized: f64,
    pub sis: f64,
    pub s1: f64,
    pub s2: f64,
    pub wall_time_s: f64,
    pub permutation: Vec<usize>,
}

pub const HISTORY_COLUMNS: [&str; 11] = [
    "epoch",
    "lr",
    "rec_raw",
    "rec_normalized",
    "contrast_raw",
    "contrast_normalized",
    "sis",
    "s1",
    "s2",
    "wall_time_s",
    "permutation",
];

pub fn write_history_csv<W: Write>(history: &[EvalRecord], w: W) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HISTORY_COLUMNS)?;
    for r in history {
        out.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.rec_raw.to_string(),
            r.rec_normalized.to_string(),
            r.contrast_raw.to_string(),
            r.contrast_normalized.to_string(),
            r.sis.to_string(),
            r.s1.to_string(),
            r.s2.to_string(),
            format!("{:.3}", r.wall_time_s),
            join_permutation(&r.permutation),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Permutations are stored as dash-joined indices, e.g. `1-0`.
pub fn join_permutation(perm: &[usize]) -> String {
    perm.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

pub fn parse_permutation(text: &str) -> Result<Vec<usize>, TrainError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split('-')
        .map(|p| p.parse().map_err(|_| TrainError::Malformed(format!("bad permutation {text:?}"))))
        .collect()
}

/// Reads rows written by [`write_history_csv`].
pub fn read_history_csv<R: Read>(r: R) -> Result<Vec<EvalRecord>, TrainError> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != HISTORY_COLUMNS {
        return Err(TrainError::Malformed(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64, TrainError> {
            row[i].parse().map_err(|_| TrainError::Malformed(format!("bad number {:?}", &row[i])))
        };
        out.push(EvalRecord {
            epoch: row[0].parse().map_err(|_| TrainError::Malformed(format!("bad epoch {:?}", &row[0])))?,
            lr: f(1)?,
            rec_raw: f(2)?,
            rec_normalized: f(3)?,
            contrast_raw: f(4)?,
            contrast_normalized: f(5)?,
            sis: f(6)?,
            s1: f(7)?,
            s2: f(8)?,
            wall_time_s: f(9)?,
            permutation: parse_permutation(&row[10])?,
        });
    }
    Ok(out)
}

/// Latents and (possibly standardized) observations of the three splits.
/// Rows are samples.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub z_train: LatentBatch,
    pub x_train: DMatrix<f64>,
    pub z_val: LatentBatch,
    pub x_val: DMatrix<f64>,
    pub z_test: LatentBatch,
    pub x_test: DMatrix<f64>,
    pub standardizer: Standardizer,
}

impl TrainData {
    pub fn sample(gen: &GeneratorSpec, dist: &LatentDistribution, config: &TrainConfig) -> Result<Self, TrainError> {
        if dist.layout() != gen.layout() {
            return Err(TrainError::DimensionMismatch {
                expected: format!("{:?}", gen.layout()),
                found: format!("{:?}", dist.layout()),
            });
        }
        let draw = |n, id| -> Result<(LatentBatch, DMatrix<f64>), TrainError> {
            let z = sample_latents_stream(n, dist, config.seed, id)?;
            let x = gen.render_matrix(&z.data);
            Ok((z, x))
        };
        let (z_train, x_train) = draw(config.train_samples, stream::TRAIN_LATENTS)?;
        let (z_val, x_val) = draw(config.val_samples, stream::VAL_LATENTS)?;
        let (z_test, x_test) = draw(config.test_samples, stream::TEST_LATENTS)?;
        let standardizer =
            if config.standardize { Standardizer::fit(&x_train) } else { Standardizer::identity(gen.pixels()) };
        Ok(TrainData {
            x_train: standardizer.apply(&x_train),
            x_val: standardizer.apply(&x_val),
            x_test: standardizer.apply(&x_test),
            z_train,
            z_val,
            z_test,
            standardizer,
        })
    }
}

impl TrainData {
    /// SIS of inferred latents for the validation and test splits: readouts
    /// are fit on the first half of the validation split, matched on the
    /// second half and scored on the test split.
    pub fn sis(&self, z_hat_val: &DMatrix<f64>, z_hat_test: &DMatrix<f64>, readout: &ReadoutConfig) -> Result<SisReport, TrainError> {
        let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
            m.rows_mut(0, a.nrows()).copy_from(a);
            m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
            m
        };
        let layout = self.z_val.layout;
        let z_true = LatentBatch::new(stack(&self.z_val.data, &self.z_test.data), layout)?;
        let z_hat = LatentBatch::new(stack(z_hat_val, z_hat_test), layout)?;
        let n_val = self.z_val.len();
        let fit = n_val / 2;
        let split = SisSplit {
            fit: (0..fit).collect(),
            val: (fit..n_val).collect(),
            test: (n_val..n_val + self.z_test.len()).collect(),
        };
        Ok(sis(&z_true, &z_hat, &split, readout)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<EvalRecord>,
}

/// A training run over fixed data.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub spec: AutoEncoderSpec,
    pub config: TrainConfig,
    pub data: TrainData,
}

impl Trainer {
    pub fn new(gen: &GeneratorSpec, dist: &LatentDistribution, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let data = TrainData::sample(gen, dist, &config)?;
        let spec = AutoEncoderSpec { pixels: gen.pixels(), layout: gen.layout(), hidden: config.hidden, slope: config.leaky_slope };
        spec.validate()?;
        Ok(Trainer { spec, config, data })
    }

    pub fn init_state(&self) -> TrainState {
        TrainState::new(self.spec.init_params(self.config.seed), self.config.seed)
    }

    fn lr_for_epoch(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.config.learning_rate, self.config.decay_epoch, self.config.decay_factor)
    }

    /// One pass of shuffled mini-batches. Returns the mean batch loss.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<f64, TrainError> {
        let n = self.data.x_train.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(state.seed, stream::SHUFFLE_BASE + state.epoch as u64));
        let lr = self.lr_for_epoch(state.epoch);
        let mut grad = vec![0.0; state.params.len()];
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let x = self.data.x_train.select_rows(chunk);
            let diverged = |loss| TrainError::Diverged { epoch: state.epoch, loss, history: Vec::new() };
            let terms = match objective_and_gradient(
                &self.spec,
                &state.params,
                &x,
                self.config.lambda,
                self.config.contrast_variant,
                &mut grad,
            ) {
                Ok(t) => t,
                Err(TrainError::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            if !(terms.loss.is_finite() && terms.loss <= DIVERGENCE_LIMIT) {
                return Err(diverged(terms.loss));
            }
            adam_step(state, &grad, lr, &self.config.adam)?;
            total += terms.loss;
            batches += 1;
        }
        state.epoch += 1;
        Ok(total / batches.max(1) as f64)
    }

    /// Reconstruction and contrast on the test split; SIS with readouts fit on
    /// the first half of the validation split, matched on the second half and
    /// scored on the test split.
    pub fn evaluate(&self, state: &TrainState, wall_time_s: f64) -> Result<EvalRecord, TrainError> {
        let spec = &self.spec;
        let z_hat_test = spec.encode(&state.params, &self.data.x_test);
        let x_hat = spec.decode(&state.params, &z_hat_test);
        let n_test = self.data.x_test.nrows() as f64;
        let rec_raw = (x_hat - &self.data.x_test).norm_squared() / n_test;
        if !rec_raw.is_finite() {
            return Err(TrainError::NonFinite("reconstruction"));
        }
        let contrasts = batch_contrast(spec, &state.params, &z_hat_test.transpose(), ContrastVariant::Raw)?;
        let contrast_raw = contrasts.iter().sum::<f64>() / n_test;
        let k = spec.layout.slots;
        let contrast_normalized = if k >= 2 { contrast_raw / (k * k - k) as f64 } else { 0.0 };

        let z_hat_val = spec.encode(&state.params, &self.data.x_val);
        let report = self.data.sis(&z_hat_val, &z_hat_test, &self.config.readout)?;
        Ok(EvalRecord {
            epoch: state.epoch,
            lr: self.lr_for_epoch(state.epoch.saturating_sub(1)),
            rec_raw,
            rec_normalized: rec_raw / spec.pixels as f64,
            contrast_raw,
            contrast_normalized,
            sis: report.sis,
            s1: report.s1,
            s2: report.s2,
            wall_time_s,
            permutation: report.permutation,
        })
    }

    /// Trains from `state` up to the configured epoch count, evaluating every
    /// `eval_period` epochs and after the last one. `hook` sees each new
    /// evaluation with the state that produced it.
    pub fn run<F>(&self, mut state: TrainState, mut history: Vec<EvalRecord>, mut hook: F) -> Result<TrainOutcome, TrainError>
    where
        F: FnMut(&TrainState, &EvalRecord, &[EvalRecord]) -> Result<(), TrainError>,
    {
        let start = Instant::now();
        let offset = history.last().map_or(0.0, |r| r.wall_time_s);
        while state.epoch < self.config.epochs {
            if let Err(e) = self.run_epoch(&mut state) {
                return Err(match e {
                    TrainError::Diverged { epoch, loss, .. } => TrainError::Diverged { epoch, loss, history },
                    other => other,
                });
            }
            if state.epoch % self.config.eval_period == 0 || state.epoch == self.config.epochs {
                let record = self.evaluate(&state, offset + start.elapsed().as_secs_f64())?;
                log::debug!(
                    "epoch {} rec {:.3e} contrast {:.3e} sis {:.3}",
                    record.epoch,
                    record.rec_normalized,
                    record.contrast_normalized,
                    record.sis
                );
                history.push(record);
                hook(&state, history.last().unwrap(), &history)?;
            }
        }
        Ok(TrainOutcome { state, history })
    }
}

/// Samples data, initializes and trains one model.
pub fn train<F>(gen: &GeneratorSpec, dist: &LatentDistribution, config: TrainConfig, hook: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&TrainState, &EvalRecord, &[EvalRecord]) -> Result<(), TrainError>,
{
    let trainer = Trainer::new(gen, dist, config)?;
    let state = trainer.init_state();
    trainer.run(state, Vec::new(), hook)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{GeneratorParams, LatentKind};

    fn tiny() -> (GeneratorSpec, LatentDistribution, TrainConfig) {
        let gen = GeneratorSpec::build(&GeneratorParams::new(2, 1, 3), 0).unwrap();
        let dist = LatentDistribution::of_kind(LatentKind::Independent, gen.layout(), 0).unwrap();
        let config = TrainConfig {
            epochs: 6,
            eval_period: 3,
            hidden: 6,
            train_samples: 128,
            val_samples: 40,
            test_samples: 20,
            batch_size: 16,
            ..TrainConfig::default()
        };
        (gen, dist, config)
    }

    #[test]
    fn paper_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.train_samples, c.val_samples, c.test_samples), (75_000, 6_000, 5_000));
        assert_eq!((c.batch_size, c.epochs, c.decay_epoch, c.eval_period), (64, 100, 50, 4));
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.decay_factor, 10.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainConfig::default();
        for bad in [
            TrainConfig { lambda: -1.0, ..base.clone() },
            TrainConfig { lambda: f64::NAN, ..base.clone() },
            TrainConfig { eval_period: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { learning_rate: 0.0, ..base.clone() },
            TrainConfig { val_samples: 3, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn history_round_trips() {
        let record = EvalRecord {
            epoch: 4,
            lr: 1e-3,
            rec_raw: 0.25,
            rec_normalized: 0.0125,
            contrast_raw: 1.5,
            contrast_normalized: 0.75,
            sis: 0.6,
            s1: 0.8,
            s2: 0.2,
            wall_time_s: 1.25,
            permutation: vec![1, 0],
        };
        let mut buf = Vec::new();
        write_history_csv(&[record.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&HISTORY_COLUMNS.join(",")));
        assert_eq!(read_history_csv(buf.as_slice()).unwrap(), vec![record]);
        assert!(matches!(read_history_csv("a,b\n".as_bytes()), Err(TrainError::Malformed(_))));
        assert_eq!(parse_permutation("").unwrap(), Vec::<usize>::new());
        assert!(parse_permutation("1-x").is_err());
    }

    #[test]
    fn training_evaluates_on_schedule_and_is_deterministic() {
        let (gen, dist, config) = tiny();
        let mut seen = Vec::new();
        let a = train(&gen, &dist, config.clone(), |state, record, _| {
            seen.push((state.epoch, record.epoch));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(3, 3), (6, 6)]);
        assert_eq!(a.state.epoch, 6);
        assert_eq!(a.state.step, 6 * 8);
        let b = train(&gen, &dist, config, |_, _, _| Ok(())).unwrap();
        assert_eq!(a.state, b.state);
        let strip = |h: &[EvalRecord]| h.iter().map(|r| (r.epoch, r.sis, r.rec_raw)).collect::<Vec<_>>();
        assert_eq!(strip(&a.history), strip(&b.history));
    }

    #[test]
    fn training_reduces_the_objective() {
        let (gen, dist, config) = tiny();
        let trainer = Trainer::new(&gen, &dist, TrainConfig { lambda: 0.0, ..config }).unwrap();
        let mut state = trainer.init_state();
        let before = trainer.evaluate(&state, 0.0).unwrap().rec_raw;
        for _ in 0..6 {
            trainer.run_epoch(&mut state).unwrap();
        }
        let after = trainer.evaluate(&state, 0.0).unwrap().rec_raw;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn huge_learning_rate_diverges_with_history() {
        let (gen, dist, config) = tiny();
        let config = TrainConfig { learning_rate: 1e12, epochs: 30, eval_period: 1, ..config };
        match train(&gen, &dist, config, |_, _, _| Ok(())) {
            Err(TrainError::Diverged { epoch, history, .. }) => assert!(history.len() <= epoch),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.state.epoch)),
        }
    }

    #[test]
    fn standardization_uses_training_statistics() {
        let (gen, dist, config) = tiny();
        let data = TrainData::sample(&gen, &dist, &config).unwrap();
        for c in 0..gen.pixels() {
            let col = data.x_train.column(c);
            let mean = col.mean();
            assert!(mean.abs() < 1e-10);
        }
        let raw = TrainData::sample(&gen, &dist, &TrainConfig { standardize: false, ..config }).unwrap();
        assert_eq!(raw.standardizer, Standardizer::identity(gen.pixels()));
        assert_eq!(data.z_test.data, raw.z_test.data);
    }
}
