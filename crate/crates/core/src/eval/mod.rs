//! Classification metrics, trajectory error, latency benchmark and the
//! ablation runner.

mod ablation;
mod latency;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::data::{FrameSource, Sample, TrajWindow};
use crate::error::{Error, Result};
use crate::model::{CrossingPrediction, Model};
use crate::train::window_tensors;

pub use ablation::{ablation_csv, retrained_stages, run_ablation, AblationRow, AblationTable};
pub use latency::{benchmark_latency, LatencyReport, Staged, TimingStats, CITED_PREPROCESSING_MS};
pub use metrics::{auc, compute_metrics, Confusion, MetricsReport, THRESHOLD};

/// Runs the inference path on every sample and scores the probabilities.
pub fn evaluate(model: &Model, samples: &[&Sample], frames: &dyn FrameSource) -> Result<(MetricsReport, Vec<CrossingPrediction>)> {
    let preds = samples.iter().map(|s| model.predict_crossing(s, frames)).collect::<Result<Vec<_>>>()?;
    let probs: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok((compute_metrics(&probs, &labels)?, preds))
}

/// Mean displacement of predicted box centers from the ground truth, in
/// pixels, next to the persistence baseline (last observed box repeated).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    pub n_windows: usize,
    pub model_px: f64,
    pub persistence_px: f64,
}

impl TrajectoryErrors {
    /// How many times smaller the model error is than the baseline's.
    pub fn improvement(&self) -> f64 {
        self.persistence_px / self.model_px
    }
}

fn center(b: &[f64]) -> (f64, f64) {
    ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn trajectory_errors(model: &Model, windows: &[&TrajWindow]) -> Result<TrajectoryErrors> {
    if windows.is_empty() {
        return Err(Error::Data("no trajectory windows to score".into()));
    }
    let m = model.config().feature_width();
    let (mut sum_model, mut sum_base, mut n) = (0.0, 0.0, 0usize);
    for w in windows {
        let (past, _) = window_tensors(w, &model.stats, m)?;
        let pred = model.predict_trajectory(&past)?;
        let r0 = w.rows[0];
        let boxes = model.future_boxes(&pred, &[r0[0], r0[1], r0[2], r0[3]]);
        let last = center(&w.past()[w.past().len() - 1]);
        for (b, truth) in boxes.iter().zip(w.future()) {
            let t = center(truth);
            sum_model += dist(center(b), t);
            sum_base += dist(last, t);
            n += 1;
        }
    }
    Ok(TrajectoryErrors { n_windows: windows.len(), model_px: sum_model / n as f64, persistence_px: sum_base / n as f64 })
}
