use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::contrast_of_matrix;
use crate::metrics::{ReadoutConfig, SisReport};
use crate::diff::leaky_relu;
use crate::mlp::{forward_batch, Mlp, MlpShape};
use crate::rng::{stream, stream_rng};
use crate::synth::{GeneratorSpec, LatentDistribution};
use crate::training::{adam_step, lr_schedule, regression_objective_and_gradient, AdamConfig, TrainConfig, TrainData, TrainError, TrainState};

/// Supervised fit of an encoder to the true latents with the decoder frozen to
/// the ground-truth generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub hidden: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// Refit the encoder's output layer by least squares after training.
    pub refit_output: bool,
    pub readout: ReadoutConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            decay_epoch: 40,
            decay_factor: 10.0,
            hidden: 80,
            train_samples: 10_000,
            val_samples: 1_000,
            test_samples: 1_000,
            refit_output: true,
            readout: ReadoutConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    /// Mean squared latent error of the encoder on the test split.
    pub latent_mse: f64,
    pub rec_raw: f64,
    pub rec_normalized: f64,
    pub contrast_raw: f64,
    pub contrast_normalized: f64,
    pub sis: SisReport,
    pub encoder: Mlp,
}

/// Solves the output layer `y = W h + b` by least squares on the hidden
/// features of the training set.
fn refit_output_layer(encoder: &mut Mlp, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<(), TrainError> {
    let shape = encoder.shape().clone();
    let last = shape.layer_count() - 1;
    let hidden_shape = MlpShape::new(shape.sizes[..=last].to_vec());
    let hidden_params = &encoder.params()[..hidden_shape.param_count()];
    // The truncated network ends linearly, so the activation is applied here.
    let features = forward_batch(&hidden_shape, hidden_params, encoder.slope(), &x.transpose())
        .map(|v| leaky_relu(v, encoder.slope()));
    let (fan_in, fan_out) = shape.layer_dims(last);
    let n = features.ncols();
    let mut design = DMatrix::<f64>::zeros(n, fan_in + 1);
    design.columns_mut(0, fan_in).copy_from(&features.transpose());
    design.column_mut(fan_in).fill(1.0);
    let gram = design.transpose() * &design + DMatrix::<f64>::identity(fan_in + 1, fan_in + 1) * 1e-10;
    let rhs = design.transpose() * z;
    let chol = gram.cholesky().ok_or(TrainError::NonFinite("least squares system"))?;
    let coef = chol.solve(&rhs);
    let off = shape.layer_offset(last);
    let params = encoder.params_mut();
    for o in 0..fan_out {
        for i in 0..fan_in {
            params[off + o * fan_in + i] = coef[(i, o)];
        }
        params[off + fan_out * fan_in + o] = coef[(fan_in, o)];
    }
    Ok(())
}

pub fn oracle_pipeline(gen: &GeneratorSpec, dist: &LatentDistribution, config: &OracleConfig) -> Result<OracleReport, TrainError> {
    let data_config = TrainConfig {
        seed: config.seed,
        train_samples: config.train_samples,
        val_samples: config.val_samples,
        test_samples: config.test_samples,
        ..TrainConfig::default()
    };
    data_config.validate()?;
    let data = TrainData::sample(gen, dist, &data_config)?;
    let layout = gen.layout();
    let shape = MlpShape::new(vec![gen.pixels(), config.hidden, config.hidden, layout.dim()]);
    let mut rng = stream_rng(config.seed, stream::INIT);
    let init = Mlp::fan_in_uniform(shape.clone(), gen.leaky_slope(), &mut rng);
    let mut state = TrainState::new(init.params().to_vec(), config.seed);
    let adam = AdamConfig::default();
    let mut grad = vec![0.0; state.params.len()];
    let n = data.x_train.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, stream::SHUFFLE_BASE + epoch as u64));
        let lr = lr_schedule(epoch, config.learning_rate, config.decay_epoch, config.decay_factor);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let x = data.x_train.select_rows(chunk);
            let z = data.z_train.data.select_rows(chunk);
            regression_objective_and_gradient(&shape, &state.params, gen.leaky_slope(), &x, &z, &mut grad)?;
            adam_step(&mut state, &grad, lr, &adam)?;
        }
    }
    let mut encoder = Mlp::new(shape, state.params, gen.leaky_slope());
    if config.refit_output {
        refit_output_layer(&mut encoder, &data.x_train, &data.z_train.data)?;
    }

    let encode = |x: &DMatrix<f64>| encoder.forward_batch(&x.transpose()).transpose();
    let z_hat_test = encode(&data.x_test);
    let z_hat_val = encode(&data.x_val);
    let n_test = z_hat_test.nrows() as f64;
    let latent_mse = (&z_hat_test - &data.z_test.data).norm_squared() / n_test;
    let x_hat = data.standardizer.apply(&gen.render_matrix(&z_hat_test));
    let rec_raw = (x_hat - &data.x_test).norm_squared() / n_test;

    let mut contrast_raw = 0.0;
    for r in 0..z_hat_test.nrows() {
        let z: Vec<f64> = z_hat_test.row(r).iter().copied().collect();
        let mut jac = gen.jacobian(&z);
        for (mut row, s) in jac.row_iter_mut().zip(&data.standardizer.scale) {
            row /= *s;
        }
        contrast_raw += contrast_of_matrix(&jac, layout)?;
    }
    contrast_raw /= n_test;
    let k = layout.slots;
    let contrast_normalized = if k >= 2 { contrast_raw / (k * k - k) as f64 } else { 0.0 };
    let sis = data.sis(&z_hat_val, &z_hat_test, &config.readout)?;
    Ok(OracleReport {
        latent_mse,
        rec_raw,
        rec_normalized: rec_raw / gen.pixels() as f64,
        contrast_raw,
        contrast_normalized,
        sis,
        encoder,
    })
}
