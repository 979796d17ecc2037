use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::image::Image;
use super::synth::{render_frame, SynthScene};
use super::track::Track;
use crate::error::{data_err, Result};

/// Source of decoded scene frames, addressed by video (pedestrian id) and
/// frame index. `reads` counts every decode/render for I/O boundary checks.
pub trait FrameSource: Send + Sync {
    fn frame(&self, video: &str, frame: i64) -> Result<Image>;
    fn reads(&self) -> usize;
}

/// Renders synthetic frames on demand.
pub struct SynthFrames {
    scene: SynthScene,
    tracks: BTreeMap<String, (usize, Track)>,
    reads: AtomicUsize,
}

impl SynthFrames {
    pub fn new(scene: SynthScene) -> Self {
        let tracks = scene
            .tracks()
            .tracks
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.ped_id.clone(), (i, t)))
            .collect();
        Self {
            scene,
            tracks,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn scene(&self) -> &SynthScene {
        &self.scene
    }
}

impl FrameSource for SynthFrames {
    fn frame(&self, video: &str, frame: i64) -> Result<Image> {
        let (i, t) = self
            .tracks
            .get(video)
            .ok_or_else(|| data_err(format!("no synthetic video `{video}`")))?;
        let row = t
            .frames
            .binary_search_by_key(&frame, |f| f.frame)
            .map_err(|_| data_err(format!("video `{video}` has no frame {frame}")))?;
        self.reads.fetch_add(1, Ordering::Relaxed);
        Ok(render_frame(&self.scene.config, &self.scene.peds[*i], t, row))
    }

    fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

/// Reads `root/<video>/<frame>.ppm`.
pub struct DirFrames {
    root: PathBuf,
    reads: AtomicUsize,
}

impl DirFrames {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            reads: AtomicUsize::new(0),
        }
    }

    pub fn path(root: &Path, video: &str, frame: i64) -> PathBuf {
        root.join(video).join(format!("{frame}.ppm"))
    }
}

impl FrameSource for DirFrames {
    fn frame(&self, video: &str, frame: i64) -> Result<Image> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        Image::load_ppm(&Self::path(&self.root, video, frame))
    }

    fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_dataset, SynthConfig};

    #[test]
    fn directory_source_matches_procedural() {
        let scene = generate_synthetic_dataset(&SynthConfig { n_tracks: 4, ..Default::default() }, 1).unwrap();
        let synth = SynthFrames::new(scene);
        let id = synth.scene().peds[0].ped_id.clone();
        let im = synth.frame(&id, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        im.save_ppm(&DirFrames::path(dir.path(), &id, 3)).unwrap();
        let d = DirFrames::new(dir.path());
        assert_eq!(d.frame(&id, 3).unwrap(), im);
        assert_eq!(d.reads(), 1);
        assert_eq!(synth.reads(), 1);
        assert!(synth.frame(&id, 100_000).is_err());
    }
}
