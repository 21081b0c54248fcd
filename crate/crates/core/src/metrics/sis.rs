use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{fit_readout, hungarian, median_heuristic, MetricsError, ReadoutConfig};
use crate::synth::LatentBatch;

/// Row indices for readout fitting, permutation matching and final scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SisSplit {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SisSplit {
    /// Consecutive blocks: the first `fit` rows, then `val`, then `test`.
    pub fn contiguous(fit: usize, val: usize, test: usize) -> Self {
        SisSplit {
            fit: (0..fit).collect(),
            val: (fit..fit + val).collect(),
            test: (fit + val..fit + val + test).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SisReport {
    /// `permutation[k]` is the inferred slot matched to ground-truth slot `k`.
    pub permutation: Vec<usize>,
    /// Test R² of each ground-truth slot from its matched inferred slot.
    pub matched_r2: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
    pub sis: f64,
    /// `val_r2[k][j]`: R² of ground-truth slot `k` predicted from inferred slot `j`.
    pub val_r2: Vec<Vec<f64>>,
    pub test_r2: Vec<Vec<f64>>,
    pub degenerate_true: Vec<bool>,
    pub degenerate_inferred: Vec<bool>,
    pub n_fit: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl SisReport {
    pub const CSV_HEADER: [&'static str; 10] = ["run_id", "K", "M", "lambda", "seed", "epoch", "s1", "s2", "sis", "permutation"];

    pub fn slot_mcc(&self) -> f64 {
        self.s1
    }

    pub fn has_degenerate_slots(&self) -> bool {
        self.degenerate_true.iter().chain(&self.degenerate_inferred).any(|&d| d)
    }

    /// Permutation as `j0-j1-...`, free of commas for CSV use.
    pub fn permutation_string(&self) -> String {
        self.permutation.iter().map(|j| j.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn csv_fields(&self, run_id: &str, slots: usize, slot_dim: usize, lambda: f64, seed: u64, epoch: usize) -> Vec<String> {
        vec![
            run_id.to_string(),
            slots.to_string(),
            slot_dim.to_string(),
            lambda.to_string(),
            seed.to_string(),
            epoch.to_string(),
            self.s1.to_string(),
            self.s2.to_string(),
            self.sis.to_string(),
            self.permutation_string(),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sis = {}", self.sis);
        let _ = writeln!(out, "s1 = {}", self.s1);
        let _ = writeln!(out, "s2 = {}", self.s2);
        let _ = writeln!(out, "permutation = {}", self.permutation_string());
        let _ = writeln!(out, "matched_r2 = {:?}", self.matched_r2);
        let _ = writeln!(out, "samples = fit {} / val {} / test {}", self.n_fit, self.n_val, self.n_test);
        for (k, row) in self.test_r2.iter().enumerate() {
            let _ = writeln!(out, "test_r2[{k}] = {row:?}");
        }
        if self.has_degenerate_slots() {
            let _ = writeln!(out, "degenerate_true = {:?}", self.degenerate_true);
            let _ = writeln!(out, "degenerate_inferred = {:?}", self.degenerate_inferred);
        }
        out
    }
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Column means and standard deviations; `None` when every column is constant.
fn standardizer(x: &DMatrix<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    for c in 0..x.ncols() {
        let col = x.column(c);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    if std.iter().all(|&s| s == 0.0) {
        return None;
    }
    // Constant columns carry no information; map them to zero.
    let std = std.into_iter().map(|s| if s == 0.0 { f64::INFINITY } else { s }).collect();
    Some((mean, std))
}

fn apply_standardizer(x: &DMatrix<f64>, (mean, std): &(Vec<f64>, Vec<f64>)) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - mean[c]) / std[c])
}

/// Mean non-negative R² over the columns in `cols`, skipping constant target
/// columns. `None` if all of them are constant.
fn slot_r2(truth: &DMatrix<f64>, pred: &DMatrix<f64>, cols: std::ops::Range<usize>) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for c in cols {
        let t = truth.column(c);
        let mean = t.mean();
        let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot == 0.0 {
            continue;
        }
        let ss_res: f64 = t.iter().zip(pred.column(c).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += (1.0 - ss_res / ss_tot).max(0.0);
        used += 1;
    }
    (used > 0).then(|| total / used as f64)
}

struct SlotScores {
    val: Vec<Option<f64>>,
    test: Vec<Option<f64>>,
    degenerate: bool,
}

/// Slot identifiability score of `z_hat` with respect to `z_true`.
///
/// For each inferred slot one kernel ridge readout to all ground-truth
/// coordinates is fit on `split.fit` (inputs standardized with fit
/// statistics). Ground-truth slots are matched to inferred slots by a maximum
/// weight assignment on the validation R² matrix. `S1` averages the matched
/// test R², `S2` averages, over the matched inferred slots, the largest test R²
/// against any other ground-truth slot.
pub fn sis(z_true: &LatentBatch, z_hat: &LatentBatch, split: &SisSplit, config: &ReadoutConfig) -> Result<SisReport, MetricsError> {
    if z_true.len() != z_hat.len() {
        return Err(MetricsError::DimensionMismatch(format!("{} true samples vs {} inferred", z_true.len(), z_hat.len())));
    }
    let k_slots = z_true.layout.slots;
    if z_hat.layout.slots != k_slots {
        return Err(MetricsError::DimensionMismatch(format!(
            "{k_slots} true slots vs {} inferred",
            z_hat.layout.slots
        )));
    }
    let n = z_true.len();
    if [&split.fit, &split.val, &split.test].iter().flat_map(|s| s.iter()).any(|&i| i >= n) {
        return Err(MetricsError::DimensionMismatch(format!("split index out of range for {n} samples")));
    }
    let fit_idx = &split.fit[..split.fit.len().min(config.max_fit_points)];
    for part in [fit_idx, &split.val[..], &split.test[..]] {
        if part.len() < 2 {
            return Err(MetricsError::TooFewSamples { needed: 2, found: part.len() });
        }
    }
    if z_true.data.iter().chain(z_hat.data.iter()).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }

    let y_fit = rows(&z_true.data, fit_idx);
    let y_val = rows(&z_true.data, &split.val);
    let y_test = rows(&z_true.data, &split.test);
    let layout = z_true.layout;

    let per_inferred: Vec<Result<SlotScores, MetricsError>> = (0..k_slots)
        .into_par_iter()
        .map(|j| {
            let slot = z_hat.slot(j);
            let x_fit = rows(&slot, fit_idx);
            let Some(stats) = standardizer(&x_fit) else {
                return Ok(SlotScores { val: vec![Some(0.0); k_slots], test: vec![Some(0.0); k_slots], degenerate: true });
            };
            let x_fit = apply_standardizer(&x_fit, &stats);
            let bandwidth = config.bandwidth.unwrap_or_else(|| median_heuristic(&x_fit));
            let model = fit_readout(&x_fit, &y_fit, bandwidth, config.ridge)?;
            let pred_val = model.predict(&apply_standardizer(&rows(&slot, &split.val), &stats))?;
            let pred_test = model.predict(&apply_standardizer(&rows(&slot, &split.test), &stats))?;
            let val = (0..k_slots).map(|k| slot_r2(&y_val, &pred_val, layout.slot_range(k))).collect();
            let test = (0..k_slots).map(|k| slot_r2(&y_test, &pred_test, layout.slot_range(k))).collect();
            Ok(SlotScores { val, test, degenerate: false })
        })
        .collect();
    let per_inferred = per_inferred.into_iter().collect::<Result<Vec<_>, _>>()?;

    let degenerate_true: Vec<bool> = (0..k_slots)
        .map(|k| per_inferred.iter().any(|s| s.val[k].is_none() || s.test[k].is_none()))
        .collect();
    let val_r2: Vec<Vec<f64>> = (0..k_slots)
        .map(|k| per_inferred.iter().map(|s| s.val[k].unwrap_or(0.0)).collect())
        .collect();
    let test_r2: Vec<Vec<f64>> = (0..k_slots)
        .map(|k| per_inferred.iter().map(|s| s.test[k].unwrap_or(0.0)).collect())
        .collect();

    let assignment = hungarian(&val_r2, true)?;
    let permutation = assignment.permutation;
    let matched_r2: Vec<f64> = (0..k_slots).map(|k| test_r2[k][permutation[k]]).collect();

    let valid: Vec<usize> = (0..k_slots).filter(|&k| !degenerate_true[k]).collect();
    let s1 = if valid.is_empty() {
        0.0
    } else {
        valid.iter().map(|&k| matched_r2[k]).sum::<f64>() / valid.len() as f64
    };
    // Summed in ground-truth order so that permuting z_hat leaves S2 bit-identical.
    let s2 = (0..k_slots)
        .map(|k| {
            let j = permutation[k];
            valid.iter().filter(|&&other| other != k).map(|&other| test_r2[other][j]).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / k_slots as f64;

    Ok(SisReport {
        permutation,
        matched_r2,
        s1,
        s2,
        sis: s1 - s2,
        val_r2,
        test_r2,
        degenerate_true,
        degenerate_inferred: per_inferred.iter().map(|s| s.degenerate).collect(),
        n_fit: fit_idx.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
    })
}

/// The matched score `S1` alone, for latents whose slots are dependent.
pub fn slot_mcc(z_true: &LatentBatch, z_hat: &LatentBatch, split: &SisSplit, config: &ReadoutConfig) -> Result<f64, MetricsError> {
    Ok(sis(z_true, z_hat, split, config)?.s1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_latents, LatentDistribution, SlotLayout};

    fn setup(n: usize, seed: u64) -> (LatentBatch, SisSplit) {
        let layout = SlotLayout::new(2, 3);
        let z = sample_latents(n, &LatentDistribution::independent(layout), seed).unwrap();
        (z, SisSplit::contiguous(n / 3, n / 3, n - 2 * (n / 3)))
    }

    fn permuted(z: &LatentBatch, order: &[usize]) -> LatentBatch {
        let m = z.layout.slot_dim;
        let data = DMatrix::from_fn(z.len(), z.layout.dim(), |r, c| z.data[(r, order[c / m] * m + c % m)]);
        LatentBatch::new(data, z.layout).unwrap()
    }

    #[test]
    fn identity_and_permutation() {
        let (z, split) = setup(1500, 11);
        let cfg = ReadoutConfig::default();
        let base = sis(&z, &z, &split, &cfg).unwrap();
        assert!(base.sis >= 0.95, "{}", base.to_text());
        assert_eq!(base.permutation, vec![0, 1]);
        // Inferred slot 0 holds true slot 1.
        let swapped = sis(&z, &permuted(&z, &[1, 0]), &split, &cfg).unwrap();
        assert_eq!(swapped.permutation, vec![1, 0]);
        assert_eq!(swapped.sis, base.sis);
        assert_eq!(swapped.s2, base.s2);
    }

    #[test]
    fn mixing_leaks_into_other_slots() {
        let (z, split) = setup(1500, 12);
        let mixed = DMatrix::from_fn(z.len(), 6, |r, c| {
            let own = z.data[(r, c)];
            let other = z.data[(r, (c + 3) % 6)];
            (own + other) / 2f64.sqrt()
        });
        let z_hat = LatentBatch::new(mixed, z.layout).unwrap();
        let report = sis(&z, &z_hat, &split, &ReadoutConfig::default()).unwrap();
        assert!(report.s2 > 0.2);
        assert!(report.sis < report.s1);
        assert!(report.sis < 0.7);
    }

    #[test]
    fn noise_gives_low_mcc() {
        let (z, split) = setup(1500, 13);
        let (noise, _) = setup(1500, 14);
        let mcc = slot_mcc(&z, &noise, &split, &ReadoutConfig::default()).unwrap();
        assert!(mcc < 0.1, "mcc = {mcc}");
    }

    #[test]
    fn constant_inferred_slot_is_flagged() {
        let (z, split) = setup(300, 15);
        let mut data = z.data.clone();
        data.columns_mut(3, 3).fill(1.0);
        let z_hat = LatentBatch::new(data, z.layout).unwrap();
        let report = sis(&z, &z_hat, &split, &ReadoutConfig::default()).unwrap();
        assert_eq!(report.degenerate_inferred, vec![false, true]);
        assert!(report.s1 <= 0.6);
    }

    #[test]
    fn csv_fields_follow_header() {
        let (z, split) = setup(300, 16);
        let report = sis(&z, &z, &split, &ReadoutConfig::default()).unwrap();
        let fields = report.csv_fields("abc", 2, 3, 1.0, 7, 40);
        assert_eq!(fields.len(), SisReport::CSV_HEADER.len());
        assert_eq!(fields[9], "0-1");
    }
}
