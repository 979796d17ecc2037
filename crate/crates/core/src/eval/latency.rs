use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{FrameSource, Image, Sample};
use crate::error::{Error, Result};
use crate::model::{count_parameters, Model};

/// Per-frame preprocessing costs of competing pipelines, quoted and not
/// re-measured: pose estimation and semantic segmentation.
pub const CITED_PREPROCESSING_MS: [(&str, f64); 2] = [("pose estimation", 32.98), ("semantic segmentation", 157.30)];

/// Fewest timed runs accepted.
pub const MIN_RUNS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl TimingStats {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if s.len() % 2 == 1 { s[s.len() / 2] } else { (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0 };
        Self { mean, std, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub variant: String,
    pub params: usize,
    /// Model alone (M), milliseconds.
    pub model_ms: TimingStats,
    /// Model plus normalization, overlay rendering and resize (M + D).
    pub total_ms: TimingStats,
    /// Normalization, box denormalization, overlay rendering and resize (D),
    /// timed directly as segments of the M + D runs.
    pub preprocessing_ms: TimingStats,
    /// Median (M + D) minus median M.
    pub total_minus_model_ms: f64,
    pub n_warmup: usize,
    pub n_runs: usize,
    pub hardware: String,
    /// Frame reads observed during the timed section; always zero.
    pub frame_reads_during_timing: usize,
}

impl LatencyReport {
    pub fn footer(&self) -> String {
        let cited: Vec<String> = CITED_PREPROCESSING_MS.iter().map(|(k, v)| format!("{k} {v:.2} ms")).collect();
        format!("cited per-frame preprocessing of other pipelines (not measured): {}", cited.join(", "))
    }

    pub fn to_table(&self) -> String {
        let (m, t, d) = (&self.model_ms, &self.total_ms, &self.preprocessing_ms);
        format!(
            "variant,M_ms,M_std,M_median,M+D_ms,M+D_std,M+D_median,D_ms,D_std,params\n\
             {},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}\n# {}\n# {}\n",
            self.variant,
            m.mean,
            m.std,
            m.median,
            t.mean,
            t.std,
            t.median,
            d.mean,
            d.std,
            self.params,
            self.hardware,
            self.footer()
        )
    }
}

/// A sample with both scene frames already decoded.
pub struct Staged<'a> {
    pub sample: &'a Sample,
    pub first: Image,
    pub last: Image,
}

impl<'a> Staged<'a> {
    pub fn load(samples: &[&'a Sample], frames: &dyn FrameSource) -> Result<Vec<Self>> {
        samples
            .iter()
            .map(|s| {
                Ok(Staged {
                    sample: s,
                    first: frames.frame(&s.ped_id, s.first_frame)?,
                    last: frames.frame(&s.ped_id, s.last_frame)?,
                })
            })
            .collect()
    }
}

fn hardware_note() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} {}, {threads} hardware thread(s), single-threaded batch 1", std::env::consts::OS, std::env::consts::ARCH)
}

/// Times batch-1 inference. Frames are decoded before timing starts;
/// `frames.reads()` is checked unchanged across the timed section. Run `i`
/// uses staged sample `i % staged.len()`.
pub fn benchmark_latency(
    model: &Model,
    staged: &[Staged<'_>],
    frames: &dyn FrameSource,
    n_warmup: usize,
    n_runs: usize,
) -> Result<LatencyReport> {
    if n_runs < MIN_RUNS {
        return Err(Error::Config(format!("latency benchmark needs at least {MIN_RUNS} runs, got {n_runs}")));
    }
    if staged.is_empty() {
        return Err(Error::Data("latency benchmark needs at least one sample".into()));
    }
    // Inputs of the model-only path: normalized past and the network images
    // rendered from the model's own prediction.
    let mut prepared = Vec::with_capacity(staged.len());
    for s in staged {
        let past = model.prepare(s.sample)?;
        let pred = model.predict_trajectory(&past)?;
        let boxes = model.future_boxes(&pred, &s.sample.origin());
        prepared.push((past, model.render_inputs(&s.first, &s.last, &s.sample.obs_boxes(), &boxes)?));
    }
    let reads_before = frames.reads();
    let model_only = |k: usize| -> Result<f64> {
        let (past, images) = &prepared[k];
        let t = Instant::now();
        let pred = model.predict_trajectory(past)?;
        std::hint::black_box(model.forward_from_prediction(past, &pred, images)?);
        Ok(t.elapsed().as_secs_f64() * 1e3)
    };
    // Same steps as `Model::predict_with_images`, with the preprocessing
    // segments timed separately. Returns (M + D, D).
    let with_prep = |k: usize| -> Result<(f64, f64)> {
        let s = &staged[k];
        let t0 = Instant::now();
        let past = model.prepare(s.sample)?;
        let t1 = Instant::now();
        let pred = model.predict_trajectory(&past)?;
        let t2 = Instant::now();
        let boxes = model.future_boxes(&pred, &s.sample.origin());
        let images = model.render_inputs(&s.first, &s.last, &s.sample.obs_boxes(), &boxes)?;
        let t3 = Instant::now();
        std::hint::black_box(model.forward_from_prediction(&past, &pred, &images)?);
        let total = t0.elapsed();
        let d = (t1 - t0) + (t3 - t2);
        Ok((total.as_secs_f64() * 1e3, d.as_secs_f64() * 1e3))
    };
    for i in 0..n_warmup {
        model_only(i % staged.len())?;
        with_prep(i % staged.len())?;
    }
    let (mut m, mut md, mut d) = (Vec::with_capacity(n_runs), Vec::with_capacity(n_runs), Vec::with_capacity(n_runs));
    for i in 0..n_runs {
        m.push(model_only(i % staged.len())?);
        let (total, prep) = with_prep(i % staged.len())?;
        md.push(total);
        d.push(prep);
    }
    let frame_reads_during_timing = frames.reads() - reads_before;
    if frame_reads_during_timing != 0 {
        return Err(Error::Data(format!("{frame_reads_during_timing} frame reads inside the timed section")));
    }
    Ok(LatencyReport {
        variant: model.config().variant.to_string(),
        params: count_parameters(&model.store),
        model_ms: TimingStats::of(&m),
        total_ms: TimingStats::of(&md),
        preprocessing_ms: TimingStats::of(&d),
        total_minus_model_ms: TimingStats::of(&md).median - TimingStats::of(&m).median,
        n_warmup,
        n_runs,
        hardware: hardware_note(),
        frame_reads_during_timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_values() {
        let s = TimingStats::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
    }
}
