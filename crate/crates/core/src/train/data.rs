use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfn_tensor::Tensor;

use crate::data::{
    compute_class_weight, extract_classification_samples, extract_trajectory_samples, generate_synthetic_dataset,
    offset_and_zscore, ClassificationProtocol, FrameSource, NormStats, Sample, Split, SynthFrames, SynthScene,
    TrackSet, TrajWindow, OBS_ROWS,
};
use crate::error::{Error, Result};
use crate::model::rows_to_tensor;

use super::config::DataConfig;

/// Tracks, frames and everything derived from them once per run.
pub struct DataBundle {
    pub tracks: TrackSet,
    pub frames: Arc<dyn FrameSource>,
    pub samples: Vec<Sample>,
    pub windows: Vec<TrajWindow>,
    /// Fitted on training-split trajectory windows.
    pub stats: NormStats,
    /// Positive-class weight from the training-split labels.
    pub alpha: f64,
}

impl DataBundle {
    pub fn new(tracks: TrackSet, frames: Arc<dyn FrameSource>, sample_stride: usize, traj_overlap: f64) -> Result<Self> {
        let protocol = ClassificationProtocol { stride: sample_stride, ..ClassificationProtocol::default() };
        let samples = extract_classification_samples(&tracks, &protocol)?.samples;
        let windows = extract_trajectory_samples(&tracks.tracks, traj_overlap);
        let stats = NormStats::fit(windows.iter().filter(|w| w.split == Split::Train).map(|w| w.rows.as_slice()))?;
        let labels: Vec<u8> = samples.iter().filter(|s| s.split == Split::Train).map(|s| s.label).collect();
        let alpha = compute_class_weight(&labels)?;
        Ok(Self { tracks, frames, samples, windows, stats, alpha })
    }

    /// Seeded synthetic scene with frames rendered on demand.
    pub fn synthetic(cfg: &DataConfig, seed: u64) -> Result<Self> {
        let scene = generate_synthetic_dataset(&cfg.synth, seed)?;
        Self::from_scene(scene, cfg)
    }

    pub fn from_scene(scene: SynthScene, cfg: &DataConfig) -> Result<Self> {
        let tracks = scene.tracks();
        Self::new(tracks, Arc::new(SynthFrames::new(scene)), cfg.sample_stride, cfg.traj_overlap)
    }

    pub fn sample_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn window_indices(&self, split: Split) -> Vec<usize> {
        (0..self.windows.len()).filter(|&i| self.windows[i].split == split).collect()
    }

    /// Normalized `[15, m]` past and `[60, m]` future of a window, both
    /// offset by the window's first box.
    pub fn window_tensors(&self, w: &TrajWindow, m: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        window_tensors(w, &self.stats, m)
    }

    pub fn sample_past(&self, s: &Sample, m: usize) -> Result<Tensor<f32>> {
        Ok(rows_to_tensor(&offset_and_zscore(&s.observed, &s.origin(), &self.stats)?, m))
    }
}

pub fn window_tensors(w: &TrajWindow, stats: &NormStats, m: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = w.rows.first().ok_or_else(|| Error::Data("empty trajectory window".into()))?;
    let origin = [first[0], first[1], first[2], first[3]];
    let rows = offset_and_zscore(&w.rows, &origin, stats)?;
    Ok((rows_to_tensor(&rows[..OBS_ROWS], m), rows_to_tensor(&rows[OBS_ROWS..], m)))
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or_else(|| Error::Data("stack of nothing".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != shape.as_slice() {
            return Err(Error::Data(format!("stack shape mismatch {:?} vs {shape:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    let mut full = vec![items.len()];
    full.extend(shape);
    Ok(Tensor::new(&full, data)?)
}

/// Noise-free constant-velocity windows: every box moves by a fixed
/// per-frame displacement and the speed column is constant.
pub fn constant_velocity_windows(n: usize, seed: u64) -> Vec<TrajWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (x, y) = (rng.random_range(0.0..80.0), rng.random_range(20.0..60.0));
            let (w, h) = (rng.random_range(5.0..8.0), rng.random_range(12.0..18.0));
            let (vx, vy) = (rng.random_range(-0.9..0.9), rng.random_range(-0.3..0.3));
            let speed = rng.random_range(10.0..40.0);
            let rows = (0..75)
                .map(|t| {
                    let t = t as f64;
                    [x + vx * t, y + vy * t, x + w + vx * t, y + h + vy * t, speed]
                })
                .collect();
            let split = match i % 5 {
                0 => Split::Val,
                1 => Split::Test,
                _ => Split::Train,
            };
            TrajWindow { ped_id: format!("cv{i:05}"), split, start_row: 0, rows }
        })
        .collect()
}
