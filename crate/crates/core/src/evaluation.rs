//! Protocol runners, MAE reporting, latency benchmarking and the ablation
//! sweep.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, ConfigSnapshot};
use crate::data::{load_dataset, split_70_30, select_by_ids, DatasetSplit, PoseAngles, RawLandmarkSet};
use crate::error::{Error, Result};
use crate::preprocess::GroupedLandmarks;
use crate::tape::ActivationKind;
use crate::tensor::Tensor;
use crate::training::{
    prepare_samples, train, LossKind, ModelKind, ModelParams, TrainSample, TrainSetup,
};

/// Per-angle and mean MAE over a test set, in degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub param_count: usize,
    pub yaw_mae: f64,
    pub pitch_mae: f64,
    pub roll_mae: f64,
    pub mean_mae: f64,
    pub n: usize,
}

pub const REPORT_CSV_HEADER: &str = "dataset,model,param_count,yaw_mae,pitch_mae,roll_mae,mean_mae,n";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset,
            self.model,
            self.param_count,
            self.yaw_mae,
            self.pitch_mae,
            self.roll_mae,
            self.mean_mae,
            self.n
        )
    }
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Vanilla => "gads",
        ModelKind::Hybrid => "gads-hybrid",
    }
}

/// Published reference MAEs for the two protocols; reported as deltas when
/// a run uses the matching dataset, never used as test gates.
pub fn reference_mae(kind: ModelKind, dataset: &str) -> Option<(f64, f64, f64, f64)> {
    match (kind, dataset) {
        (ModelKind::Vanilla, "biwi") => Some((3.61, 5.05, 3.04, 3.90)),
        (ModelKind::Vanilla, "aflw2000") => Some((3.84, 7.06, 5.00, 5.30)),
        (ModelKind::Hybrid, "biwi") => Some((4.16, 5.61, 3.11, 4.29)),
        (ModelKind::Hybrid, "aflw2000") => Some((4.09, 7.05, 5.01, 5.38)),
        (ModelKind::Vanilla, "biwi-p2") => Some((3.31, 5.00, 2.94, 3.75)),
        (ModelKind::Hybrid, "biwi-p2") => Some((3.20, 4.02, 3.16, 3.46)),
        _ => None,
    }
}

/// Formats the delta line against the published numbers, if any exist for
/// this dataset.
pub fn reference_delta_line(report: &MetricsReport, kind: ModelKind) -> Option<String> {
    let (y, p, r, m) = reference_mae(kind, &report.dataset)?;
    Some(format!(
        "reference {} on {}: yaw {y} pitch {p} roll {r} mae {m}; deltas {:+.2} {:+.2} {:+.2} {:+.2}",
        model_name(kind),
        report.dataset,
        report.yaw_mae - y,
        report.pitch_mae - p,
        report.roll_mae - r,
        report.mean_mae - m,
    ))
}

fn predictions(params: &ModelParams, samples: &[TrainSample]) -> Result<Vec<PoseAngles>> {
    samples
        .par_iter()
        .map(|s| params.forward(&s.gp, s.image.as_ref()))
        .collect()
}

/// Evaluates a checkpoint on raw samples.
pub fn evaluate(ckpt: &Checkpoint, test: &[RawLandmarkSet], dataset: &str) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Precondition("evaluation over an empty set".into()));
    }
    let samples = prepare_samples(test, &ckpt.config.groups, ckpt.kind == ModelKind::Hybrid)?;
    let preds = predictions(&ckpt.params, &samples)?;
    let n = samples.len() as f64;
    let mut sums = [0.0f64; 3];
    for (p, s) in preds.iter().zip(&samples) {
        sums[0] += (p.yaw - s.truth.yaw).abs();
        sums[1] += (p.pitch - s.truth.pitch).abs();
        sums[2] += (p.roll - s.truth.roll).abs();
    }
    let (yaw_mae, pitch_mae, roll_mae) = (sums[0] / n, sums[1] / n, sums[2] / n);
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        model: model_name(ckpt.kind).to_string(),
        param_count: ckpt.params.count_params(),
        yaw_mae,
        pitch_mae,
        roll_mae,
        mean_mae: (yaw_mae + pitch_mae + roll_mae) / 3.0,
        n: samples.len(),
    })
}

/// Per-sample three-angle MAE, in test-set order (for the line plot).
pub fn per_sample_maes(ckpt: &Checkpoint, test: &[RawLandmarkSet]) -> Result<Vec<f64>> {
    let samples = prepare_samples(test, &ckpt.config.groups, ckpt.kind == ModelKind::Hybrid)?;
    let preds = predictions(&ckpt.params, &samples)?;
    Ok(preds
        .iter()
        .zip(&samples)
        .map(|(p, s)| {
            ((p.yaw - s.truth.yaw).abs()
                + (p.pitch - s.truth.pitch).abs()
                + (p.roll - s.truth.roll).abs())
                / 3.0
        })
        .collect())
}

/// Cross-dataset protocol: one training run, evaluated on two test files.
/// Validation for best-model saving is a held-out 5% of the training data.
pub fn run_protocol_p1(
    kind: ModelKind,
    train_path: &Path,
    biwi_path: &Path,
    aflw_path: &Path,
    setup: &TrainSetup,
    seed: u64,
) -> Result<(Checkpoint, MetricsReport, MetricsReport)> {
    let with_images = kind == ModelKind::Hybrid;
    let train_raw = load_dataset(train_path, with_images)?;
    let biwi = load_dataset(biwi_path, with_images)?;
    let aflw = load_dataset(aflw_path, with_images)?;

    if train_raw.len() < 20 {
        return Err(Error::Precondition(format!(
            "protocol training set needs at least 20 samples, got {}",
            train_raw.len()
        )));
    }
    let holdout = (train_raw.len() / 20).max(1);
    let (val_raw, fit_raw) = train_raw.split_at(holdout);

    let outcome = train(kind, fit_raw, val_raw, setup, seed)?;
    let ckpt = Checkpoint {
        kind,
        config: setup.into(),
        best_val_mae: outcome.best_val_mae,
        epoch: outcome.best_epoch,
        params: outcome.params,
    };
    let biwi_report = evaluate(&ckpt, &biwi, "biwi")?;
    let aflw_report = evaluate(&ckpt, &aflw, "aflw2000")?;
    Ok((ckpt, biwi_report, aflw_report))
}

/// Within-dataset protocol: 70:30 split, train on 70%, report on 30%.
/// The held-out test set doubles as the validation set for best-model
/// saving.
pub fn run_protocol_p2(
    kind: ModelKind,
    data_path: &Path,
    setup: &TrainSetup,
    seed: u64,
) -> Result<(Checkpoint, MetricsReport, DatasetSplit)> {
    let with_images = kind == ModelKind::Hybrid;
    let raw = load_dataset(data_path, with_images)?;
    let split = split_70_30(&raw, seed)?;
    let train_raw: Vec<RawLandmarkSet> = select_by_ids(&raw, &split.train)
        .into_iter()
        .cloned()
        .collect();
    let test_raw: Vec<RawLandmarkSet> = select_by_ids(&raw, &split.test)
        .into_iter()
        .cloned()
        .collect();
    let outcome = train(kind, &train_raw, &test_raw, setup, seed)?;
    let ckpt = Checkpoint {
        kind,
        config: setup.into(),
        best_val_mae: outcome.best_val_mae,
        epoch: outcome.best_epoch,
        params: outcome.params,
    };
    let report = evaluate(&ckpt, &test_raw, "biwi-p2")?;
    Ok((ckpt, report, split))
}

/// Wall-clock times of repeated single-sample forward passes.
#[derive(Clone, Debug)]
pub struct LatencyReport {
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
}

/// Times the model-only forward pass on one prepared sample; preprocessing
/// is excluded. Runs are sequential on the calling thread, so keep the
/// machine otherwise idle for representative numbers.
pub fn benchmark_latency(
    params: &ModelParams,
    gp: &GroupedLandmarks,
    image: Option<&Tensor>,
    runs: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if runs < 100 {
        return Err(Error::Precondition(format!(
            "latency runs must be at least 100, got {runs}"
        )));
    }
    if warmup < 10 {
        return Err(Error::Precondition(format!(
            "warmup runs must be at least 10, got {warmup}"
        )));
    }
    for _ in 0..warmup {
        params.forward(gp, image)?;
    }
    let mut times_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = params.forward(gp, image)?;
        let dt = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        times_ms.push(dt.max(f64::MIN_POSITIVE));
    }
    let mut sorted = times_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = sorted[sorted.len() / 2];
    let mean_ms = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let p95_idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(LatencyReport {
        median_ms,
        mean_ms,
        p95_ms: sorted[p95_idx],
        min_ms: sorted[0],
        times_ms,
    })
}

/// The one-axis-at-a-time sweep grid around the default configuration.
#[derive(Clone, Debug)]
pub struct AblationGrid {
    pub decoder_layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub final_encoder_layers: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    pub losses: Vec<LossKind>,
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            decoder_layers: vec![1, 2, 3, 4],
            heads: vec![2, 4, 8],
            final_encoder_layers: vec![1, 2, 3],
            activations: vec![
                ActivationKind::LeakyReLU,
                ActivationKind::Gelu,
                ActivationKind::Sigmoid,
                ActivationKind::ReLU,
            ],
            losses: vec![LossKind::Mae, LossKind::Mse],
            learning_rates: vec![1e-2, 1e-3],
            dropouts: vec![0.0, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub axis: &'static str,
    pub value: String,
    pub setup: TrainSetup,
}

impl AblationGrid {
    /// Expands the grid into cells, each varying one knob of `base`.
    pub fn cells(&self, base: &TrainSetup) -> Vec<AblationCell> {
        let mut cells = Vec::new();
        for &v in &self.decoder_layers {
            let mut s = base.clone();
            s.gads.decoder_layers = v;
            cells.push(AblationCell {
                axis: "decoder_layers",
                value: v.to_string(),
                setup: s,
            });
        }
        for &v in &self.heads {
            let mut s = base.clone();
            s.gads.heads = v;
            cells.push(AblationCell {
                axis: "heads",
                value: v.to_string(),
                setup: s,
            });
        }
        for &v in &self.final_encoder_layers {
            let mut s = base.clone();
            s.gads.final_decoder_layers = v;
            cells.push(AblationCell {
                axis: "final_encoder_layers",
                value: v.to_string(),
                setup: s,
            });
        }
        for &v in &self.activations {
            let mut s = base.clone();
            s.gads.activation = v;
            cells.push(AblationCell {
                axis: "activation",
                value: format!("{v:?}"),
                setup: s,
            });
        }
        for &v in &self.losses {
            let mut s = base.clone();
            s.train.loss = v;
            cells.push(AblationCell {
                axis: "loss",
                value: format!("{v:?}"),
                setup: s,
            });
        }
        for &v in &self.learning_rates {
            let mut s = base.clone();
            s.train.schedule.base_lr = v;
            cells.push(AblationCell {
                axis: "initial_lr",
                value: format!("{v:e}"),
                setup: s,
            });
        }
        for &v in &self.dropouts {
            let mut s = base.clone();
            s.gads.dropout = v;
            cells.push(AblationCell {
                axis: "dropout",
                value: v.to_string(),
                setup: s,
            });
        }
        cells
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub axis: &'static str,
    pub value: String,
    pub param_count: usize,
    pub report: Option<MetricsReport>,
    pub status: &'static str,
}

pub const ABLATION_CSV_HEADER: &str =
    "axis,value,param_count,yaw_mae,pitch_mae,roll_mae,mean_mae,n,status";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        match &r.report {
            Some(rep) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.axis,
                r.value,
                r.param_count,
                rep.yaw_mae,
                rep.pitch_mae,
                rep.roll_mae,
                rep.mean_mae,
                rep.n,
                r.status
            )),
            None => out.push_str(&format!(
                "{},{},{},NaN,NaN,NaN,NaN,0,{}\n",
                r.axis, r.value, r.param_count, r.status
            )),
        }
    }
    out
}

/// Runs one full training per grid cell, all with the same seed so cells
/// stay comparable. A diverged cell is recorded, not fatal.
pub fn run_ablation(
    grid: &AblationGrid,
    train_raw: &[RawLandmarkSet],
    test_raw: &[RawLandmarkSet],
    base: &TrainSetup,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let cells = grid.cells(base);
    cells
        .par_iter()
        .map(|cell| {
            let param_count =
                ModelParams::init(ModelKind::Vanilla, &cell.setup, seed)?.count_params();
            match train(ModelKind::Vanilla, train_raw, test_raw, &cell.setup, seed) {
                Ok(outcome) => {
                    let ckpt = Checkpoint {
                        kind: ModelKind::Vanilla,
                        config: ConfigSnapshot::from(&cell.setup),
                        best_val_mae: outcome.best_val_mae,
                        epoch: outcome.best_epoch,
                        params: outcome.params,
                    };
                    let report = evaluate(&ckpt, test_raw, "synthetic")?;
                    Ok(AblationRow {
                        axis: cell.axis,
                        value: cell.value.clone(),
                        param_count,
                        report: Some(report),
                        status: "ok",
                    })
                }
                Err(Error::Divergence { .. }) => Ok(AblationRow {
                    axis: cell.axis,
                    value: cell.value.clone(),
                    param_count,
                    report: None,
                    status: "divergent",
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// A minimal line plot of per-sample MAE over the first `limit` frames.
pub fn mae_line_plot_svg(values: &[f64], limit: usize) -> String {
    let vals: Vec<f64> = values.iter().take(limit).copied().collect();
    let (w, h, pad) = (800.0, 300.0, 40.0);
    let max = vals.iter().cloned().fold(1e-9f64, f64::max);
    let points: Vec<String> = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let x = pad + (w - 2.0 * pad) * i as f64 / (vals.len().max(2) - 1) as f64;
            let y = h - pad - (h - 2.0 * pad) * v / max;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<text x=\"{pad}\" y=\"{ty}\" font-size=\"12\">per-sample MAE (deg), max {max:.3}</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        pad = pad,
        y0 = h - pad,
        x1 = w - pad,
        ty = pad - 10.0,
        max = max,
        pts = points.join(" ")
    )
}
