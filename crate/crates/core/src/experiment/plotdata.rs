use std::io::{Read, Write};

use super::grid::RESULTS_COLUMNS;
use super::ExperimentError;

pub const PLOT_COLUMNS: [&str; 7] = ["rec_normalized", "contrast_normalized", "sis", "K", "lambda", "seed", "epoch"];

/// One evaluation point of the Fig. 4A style scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub rec_normalized: f64,
    pub contrast_normalized: f64,
    pub sis: f64,
    pub slots: usize,
    pub lambda: f64,
    pub seed: u64,
    pub epoch: usize,
    pub latents: String,
}

/// Reads a combined results CSV. An empty input yields no points.
pub fn read_plot_points<R: Read>(input: R) -> Result<Vec<PlotPoint>, ExperimentError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text).map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExperimentError::Malformed(format!("missing column {name:?} (expected {})", RESULTS_COLUMNS.join(","))))
    };
    let idx = [
        column("rec_normalized")?,
        column("contrast_normalized")?,
        column("sis")?,
        column("K")?,
        column("lambda")?,
        column("seed")?,
        column("epoch")?,
        column("latents")?,
    ];
    let mut points = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |i: usize| ExperimentError::Malformed(format!("row {}: bad {} {:?}", line + 1, header[i], &row[i]));
        let float = |i: usize| row[i].parse::<f64>().map_err(|_| bad(i));
        points.push(PlotPoint {
            rec_normalized: float(idx[0])?,
            contrast_normalized: float(idx[1])?,
            sis: float(idx[2])?,
            slots: row[idx[3]].parse().map_err(|_| bad(idx[3]))?,
            lambda: float(idx[4])?,
            seed: row[idx[5]].parse().map_err(|_| bad(idx[5]))?,
            epoch: row[idx[6]].parse().map_err(|_| bad(idx[6]))?,
            latents: row[idx[7]].to_string(),
        });
    }
    Ok(points)
}

/// Sorts by (K, lambda, seed, epoch), latent kind last, and writes the
/// scatter columns. Returns the number of points written.
pub fn write_plot_data<W: Write>(mut points: Vec<PlotPoint>, output: W) -> Result<usize, ExperimentError> {
    points.sort_by(|a, b| {
        a.slots
            .cmp(&b.slots)
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.seed.cmp(&b.seed))
            .then(a.epoch.cmp(&b.epoch))
            .then(a.latents.cmp(&b.latents))
    });
    let mut out = csv::Writer::from_writer(output);
    out.write_record(PLOT_COLUMNS)?;
    for p in &points {
        out.write_record([
            p.rec_normalized.to_string(),
            p.contrast_normalized.to_string(),
            p.sis.to_string(),
            p.slots.to_string(),
            p.lambda.to_string(),
            p.seed.to_string(),
            p.epoch.to_string(),
        ])?;
    }
    out.flush().map_err(|e| ExperimentError::Malformed(e.to_string()))?;
    Ok(points.len())
}
