use serde::{Deserialize, Serialize};

use super::track::{BBox, Split, Track, TrackSet};
use crate::error::{data_err, Result};

/// Observed rows per sample (t-14..t).
pub const OBS_ROWS: usize = 15;
/// Frames in the observation window including the first scene frame (t-15).
pub const OBS_LEN: usize = 16;
pub const PRED_LEN: usize = 60;
pub const SEQ_LEN: usize = OBS_ROWS + PRED_LEN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ped_id: String,
    pub split: Split,
    /// Row index of the last observed frame within its track.
    pub t_row: usize,
    /// Raw `[x1, y1, x2, y2, speed]` rows for t-14..t.
    pub observed: Vec<[f64; 5]>,
    /// Frame index of the first scene image (t-15).
    pub first_frame: i64,
    /// Frame index of the last scene image (t).
    pub last_frame: i64,
    pub label: u8,
    pub tte: i64,
}

impl Sample {
    pub fn obs_boxes(&self) -> Vec<BBox> {
        self.observed.iter().map(|r| [r[0], r[1], r[2], r[3]]).collect()
    }

    /// First observed box, the origin of the offset transform.
    pub fn origin(&self) -> BBox {
        let r = self.observed[0];
        [r[0], r[1], r[2], r[3]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationProtocol {
    pub obs_len: usize,
    pub tte_min: i64,
    pub tte_max: i64,
    pub stride: usize,
}

impl Default for ClassificationProtocol {
    fn default() -> Self {
        Self {
            obs_len: OBS_LEN,
            tte_min: 30,
            tte_max: 60,
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Extraction {
    pub samples: Vec<Sample>,
    /// Tracks shorter than the observation window.
    pub skipped_short: usize,
    /// Tracks long enough but without any valid anchor.
    pub skipped_no_window: usize,
}

/// Valid anchors `t` satisfy `tte_min <= anchor - frame(t) <= tte_max` and
/// `t >= obs_len - 1`, where `anchor` is the crossing event for crossing
/// tracks and the last frame for the others. Every `stride`-th valid anchor
/// (starting with the earliest) becomes a sample.
pub fn extract_classification_samples(tracks: &TrackSet, p: &ClassificationProtocol) -> Result<Extraction> {
    if p.obs_len < OBS_ROWS + 1 || p.stride == 0 || p.tte_min > p.tte_max {
        return Err(data_err(format!("invalid extraction protocol {p:?}")));
    }
    let mut out = Extraction::default();
    for tr in &tracks.tracks {
        if tr.len() < p.obs_len {
            out.skipped_short += 1;
            continue;
        }
        let anchor = tr.event_frame.unwrap_or_else(|| tr.frames.last().unwrap().frame);
        let valid: Vec<usize> = (p.obs_len - 1..tr.len())
            .filter(|&t| (p.tte_min..=p.tte_max).contains(&(anchor - tr.frames[t].frame)))
            .collect();
        if valid.is_empty() {
            out.skipped_no_window += 1;
            continue;
        }
        for &t in valid.iter().step_by(p.stride) {
            out.samples.push(sample_at(tr, t, anchor - tr.frames[t].frame));
        }
    }
    Ok(out)
}

/// The sample whose last observed row is `t`, whether or not it falls in
/// the extraction window; `tte` is measured to the track's anchor.
pub fn sample_at_row(tr: &Track, t: usize) -> Result<Sample> {
    if t < OBS_ROWS || t >= tr.len() {
        return Err(data_err(format!(
            "track {} has no sample ending at row {t} (needs {OBS_ROWS} <= t < {})",
            tr.ped_id,
            tr.len()
        )));
    }
    let anchor = tr.event_frame.unwrap_or_else(|| tr.frames.last().unwrap().frame);
    Ok(sample_at(tr, t, anchor - tr.frames[t].frame))
}

fn sample_at(tr: &Track, t: usize, tte: i64) -> Sample {
    Sample {
        ped_id: tr.ped_id.clone(),
        split: tr.split,
        t_row: t,
        observed: (t + 1 - OBS_ROWS..=t).map(|i| tr.row(i)).collect(),
        first_frame: tr.frames[t - OBS_ROWS].frame,
        last_frame: tr.frames[t].frame,
        label: tr.label,
        tte,
    }
}

/// One pretraining window: 15 past rows followed by 60 future rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajWindow {
    pub ped_id: String,
    pub split: Split,
    pub start_row: usize,
    pub rows: Vec<[f64; 5]>,
}

impl TrajWindow {
    pub fn past(&self) -> &[[f64; 5]] {
        &self.rows[..OBS_ROWS]
    }

    pub fn future(&self) -> &[[f64; 5]] {
        &self.rows[OBS_ROWS..]
    }
}

pub fn window_step(overlap: f64) -> usize {
    (((1.0 - overlap) * SEQ_LEN as f64).round() as i64).max(1) as usize
}

/// Sliding 75-row windows with step `max(1, round((1 - overlap) * 75))`.
pub fn extract_trajectory_samples<'a>(tracks: impl IntoIterator<Item = &'a Track>, overlap: f64) -> Vec<TrajWindow> {
    let step = window_step(overlap);
    let mut out = Vec::new();
    for tr in tracks {
        let mut s = 0;
        while s + SEQ_LEN <= tr.len() {
            out.push(TrajWindow {
                ped_id: tr.ped_id.clone(),
                split: tr.split,
                start_row: s,
                rows: (s..s + SEQ_LEN).map(|i| tr.row(i)).collect(),
            });
            s += step;
        }
    }
    out
}

/// `alpha = #negatives / N`, the weight of the positive-class term.
pub fn compute_class_weight(labels: &[u8]) -> Result<f64> {
    let n = labels.len();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if n == 0 || neg == 0 || neg == n {
        return Err(data_err("class weight needs both classes in the training labels"));
    }
    Ok(neg as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::track::FrameRecord;

    fn track(n: usize, event: Option<i64>) -> Track {
        Track {
            ped_id: "p".into(),
            split: Split::Train,
            frames: (0..n)
                .map(|i| FrameRecord {
                    frame: i as i64,
                    bbox: [i as f64, 0.0, i as f64 + 5.0, 10.0],
                    speed: 1.0,
                })
                .collect(),
            event_frame: event,
            label: event.is_some() as u8,
        }
    }

    fn set(t: Track) -> TrackSet {
        TrackSet { tracks: vec![t] }
    }

    #[test]
    fn event_at_ninety_gives_thirty_one_samples() {
        let e = extract_classification_samples(&set(track(100, Some(90))), &ClassificationProtocol::default()).unwrap();
        assert_eq!(e.samples.len(), 31);
        let ts: Vec<usize> = e.samples.iter().map(|s| s.t_row).collect();
        assert_eq!(ts.first(), Some(&30));
        assert_eq!(ts.last(), Some(&60));
        for s in &e.samples {
            assert!((30..=60).contains(&s.tte));
            assert_eq!(s.first_frame, s.last_frame - 15);
            assert_eq!(s.observed.len(), 15);
            assert_eq!(s.observed[14][0], s.last_frame as f64);
        }
    }

    #[test]
    fn negative_tail_anchor() {
        let e = extract_classification_samples(&set(track(46, None)), &ClassificationProtocol::default()).unwrap();
        assert_eq!(e.samples.len(), 1);
        assert_eq!(e.samples[0].label, 0);
        assert_eq!(e.samples[0].tte, 30);
        let e = extract_classification_samples(&set(track(45, None)), &ClassificationProtocol::default()).unwrap();
        assert_eq!(e.samples.len(), 0);
        assert_eq!(e.skipped_no_window, 1);
    }

    #[test]
    fn short_tracks_counted() {
        let e = extract_classification_samples(&set(track(10, None)), &ClassificationProtocol::default()).unwrap();
        assert_eq!(e.skipped_short, 1);
    }

    #[test]
    fn stride_subsamples() {
        let p = ClassificationProtocol { stride: 10, ..Default::default() };
        let e = extract_classification_samples(&set(track(100, Some(90))), &p).unwrap();
        assert_eq!(e.samples.iter().map(|s| s.t_row).collect::<Vec<_>>(), vec![30, 40, 50, 60]);
    }

    #[test]
    fn trajectory_windows() {
        assert_eq!(extract_trajectory_samples(&set(track(75, None)).tracks, 0.3).len(), 1);
        assert_eq!(window_step(0.6), 30);
        let w = extract_trajectory_samples(&set(track(149, None)).tracks, 0.6);
        assert_eq!(w.iter().map(|w| w.start_row).collect::<Vec<_>>(), vec![0, 30, 60]);
        assert_eq!(extract_trajectory_samples(&set(track(74, None)).tracks, 0.6).len(), 0);
        assert_eq!(window_step(1.0), 1);
    }

    #[test]
    fn class_weight() {
        assert_eq!(compute_class_weight(&[0, 1, 0, 1]).unwrap(), 0.5);
        let mut l = vec![1u8; 30];
        l.extend(vec![0u8; 70]);
        assert!((compute_class_weight(&l).unwrap() - 0.7).abs() < 1e-15);
        assert!(compute_class_weight(&[1, 1, 1]).is_err());
    }
}
