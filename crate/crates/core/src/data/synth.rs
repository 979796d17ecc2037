//! Synthetic street scenes with known pedestrian dynamics.
//!
//! Each pedestrian has its own video. The road occupies a vertical band on
//! the right of the frame; pedestrians start on the sidewalk to its left.
//! Motion is piecewise-constant velocity (an idle segment, then an intent
//! segment) plus Gaussian jitter; ego speed follows a smooth random walk.
//! A track is a crossing track iff its noise-free trajectory enters the
//! road band, and the event frame is the first frame it does.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::track::{FrameRecord, Split, Track, TrackSet};
use crate::error::{data_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub width: usize,
    pub height: usize,
    /// Road band `[road_x0, road_x1)` in pixels.
    pub road_x0: f64,
    pub road_x1: f64,
    pub pos_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub box_w: (f64, f64),
    pub box_h: (f64, f64),
    /// Horizontal speed range of crossing pedestrians (px/frame).
    pub cross_vx: (f64, f64),
    /// Horizontal speed range of slow approachers that never reach the road.
    pub slow_vx: (f64, f64),
    pub jitter_std: f64,
    pub ego_speed: (f64, f64),
    pub ego_accel_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracks: 500,
            width: 128,
            height: 96,
            road_x0: 88.0,
            road_x1: 128.0,
            pos_fraction: 0.5,
            val_fraction: 0.2,
            test_fraction: 0.2,
            box_w: (5.0, 8.0),
            box_h: (12.0, 18.0),
            cross_vx: (0.35, 0.9),
            slow_vx: (0.08, 0.45),
            jitter_std: 0.3,
            ego_speed: (10.0, 40.0),
            ego_accel_std: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.width as f64;
        if self.width < 16 || self.height < 16 {
            return Err(data_err("synthetic image must be at least 16x16"));
        }
        if !(self.road_x0 > 20.0 && self.road_x0 < self.road_x1 && self.road_x1 <= w) {
            return Err(data_err(format!(
                "road band [{}, {}) must lie inside the image width {w} with sidewalk on its left",
                self.road_x0, self.road_x1
            )));
        }
        if !(0.0..=1.0).contains(&self.pos_fraction) || self.val_fraction + self.test_fraction >= 1.0 {
            return Err(data_err("fractions out of range"));
        }
        if self.box_h.1 + 4.0 >= self.height as f64 || self.box_w.1 * 2.0 >= self.road_x0 {
            return Err(data_err("pedestrian boxes do not fit the sidewalk"));
        }
        Ok(())
    }
}

/// Frames from the start of the intent segment to the crossing event, at least.
pub const MIN_INTENT_LEAD: usize = 75;
const HORIZON: f64 = 60.0;

/// Noise-free kinematics of one pedestrian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub len: usize,
    /// Box center at frame 0.
    pub start: (f64, f64),
    pub size: (f64, f64),
    pub idle_v: (f64, f64),
    pub intent_start: usize,
    pub intent_v: (f64, f64),
}

impl Motion {
    pub fn center(&self, f: f64) -> (f64, f64) {
        let s = self.intent_start as f64;
        let a = f.min(s);
        let b = (f - s).max(0.0);
        (
            self.start.0 + self.idle_v.0 * a + self.intent_v.0 * b,
            self.start.1 + self.idle_v.1 * a + self.intent_v.1 * b,
        )
    }

    /// First frame whose noise-free center is inside the road band,
    /// extrapolating `extra` frames past the end of the track.
    pub fn entry_frame(&self, road_x0: f64, extra: usize) -> Option<usize> {
        (0..self.len + extra).find(|&f| self.center(f as f64).0 >= road_x0)
    }

    /// Crossing label: 1 if the band is entered inside the track, 0 if it is
    /// not entered even `HORIZON` frames past the end, `None` otherwise.
    pub fn label(&self, road_x0: f64) -> Option<(u8, Option<usize>)> {
        match self.entry_frame(road_x0, HORIZON as usize) {
            Some(e) if e < self.len => Some((1, Some(e))),
            Some(_) => None,
            None => Some((0, None)),
        }
    }
}

fn ego_speeds(cfg: &SynthConfig, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = Normal::new(0.0, cfg.ego_accel_std).unwrap();
    let mut s = rng.random_range(cfg.ego_speed.0..cfg.ego_speed.1);
    let mut a = 0.0;
    (0..len)
        .map(|_| {
            let v = s;
            a = 0.9 * a + n.sample(rng);
            s = (s + a).clamp(0.0, 60.0);
            v
        })
        .collect()
}

fn fits(cfg: &SynthConfig, m: &Motion, upto: usize) -> bool {
    let (hw, hh) = (m.size.0 / 2.0, m.size.1 / 2.0);
    (0..upto).all(|f| {
        let (x, y) = m.center(f as f64);
        x - hw >= 1.0 && x + hw <= cfg.width as f64 - 1.0 && y - hh >= 2.0 && y + hh <= cfg.height as f64 - 2.0
    })
}

fn sample_crossing(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Motion {
    loop {
        let size = (rng.random_range(cfg.box_w.0..cfg.box_w.1), rng.random_range(cfg.box_h.0..cfg.box_h.1));
        let event = rng.random_range(MIN_INTENT_LEAD + 5..=MIN_INTENT_LEAD + 65);
        let intent_start = rng.random_range(event.saturating_sub(MIN_INTENT_LEAD + 35)..=event - MIN_INTENT_LEAD);
        let vx = rng.random_range(cfg.cross_vx.0..cfg.cross_vx.1);
        let vy = rng.random_range(-0.12..0.12);
        // Center reaches road_x0 exactly at `event` (minus a fraction so the
        // first frame inside the band is `event`).
        let x_at_intent = cfg.road_x0 - vx * (event - intent_start) as f64 + 0.5 * vx;
        let idle_v = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
        let y_at_intent = rng.random_range(size.1..cfg.height as f64 - size.1);
        let start = (x_at_intent - idle_v.0 * intent_start as f64, y_at_intent - idle_v.1 * intent_start as f64);
        let len = event + rng.random_range(5..=15);
        let m = Motion {
            len,
            start,
            size,
            idle_v,
            intent_start,
            intent_v: (vx, vy),
        };
        let Some((1, Some(e))) = m.label(cfg.road_x0) else { continue };
        if e < intent_start + MIN_INTENT_LEAD || !fits(cfg, &m, len) {
            continue;
        }
        return m;
    }
}

fn sample_non_crossing(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Motion {
    loop {
        let size = (rng.random_range(cfg.box_w.0..cfg.box_w.1), rng.random_range(cfg.box_h.0..cfg.box_h.1));
        let len = rng.random_range(90..=150);
        let intent_start = rng.random_range(0..=len - MIN_INTENT_LEAD);
        let mode = rng.random_range(0..4);
        let intent_v = match mode {
            // standing
            0 => (rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)),
            // walking along the curb
            1 => (rng.random_range(-0.05..0.05), rng.random_range(0.15..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
            // slowly approaching from far away
            2 => (rng.random_range(cfg.slow_vx.0..cfg.slow_vx.1), rng.random_range(-0.12..0.12)),
            // walking away from the road
            _ => (-rng.random_range(0.2..0.6), rng.random_range(-0.12..0.12)),
        };
        let idle_v = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
        let start = (
            rng.random_range(size.0..cfg.road_x0 - size.0),
            rng.random_range(size.1..cfg.height as f64 - size.1),
        );
        let m = Motion {
            len,
            start,
            size,
            idle_v,
            intent_start,
            intent_v,
        };
        if !matches!(m.label(cfg.road_x0), Some((0, None))) || !fits(cfg, &m, len) {
            continue;
        }
        return m;
    }
}

/// A generated pedestrian: its kinematics plus the observed (noisy) track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPed {
    pub ped_id: String,
    pub motion: Motion,
    /// Seed of the pedestrian's own jitter / ego-speed / texture stream.
    pub seed: u64,
}

fn ped_track(cfg: &SynthConfig, p: &SynthPed, split: Split) -> Track {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let jit = Normal::new(0.0, cfg.jitter_std.max(1e-12)).unwrap();
    let speeds = ego_speeds(cfg, p.motion.len, &mut rng);
    let (hw, hh) = (p.motion.size.0 / 2.0, p.motion.size.1 / 2.0);
    let frames = (0..p.motion.len)
        .map(|f| {
            let (cx, cy) = p.motion.center(f as f64);
            let (jx, jy) = if cfg.jitter_std > 0.0 { (jit.sample(&mut rng), jit.sample(&mut rng)) } else { (0.0, 0.0) };
            FrameRecord {
                frame: f as i64,
                bbox: [cx - hw + jx, cy - hh + jy, cx + hw + jx, cy + hh + jy],
                speed: speeds[f],
            }
        })
        .collect();
    let (label, event) = p.motion.label(cfg.road_x0).expect("generator only keeps labelled motions");
    Track {
        ped_id: p.ped_id.clone(),
        split,
        frames,
        event_frame: event.map(|e| e as i64),
        label,
    }
}

/// Everything needed to regenerate tracks and frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub seed: u64,
    pub peds: Vec<SynthPed>,
    pub splits: Vec<Split>,
}

impl SynthScene {
    pub fn tracks(&self) -> TrackSet {
        TrackSet {
            tracks: self
                .peds
                .iter()
                .zip(&self.splits)
                .map(|(p, &s)| ped_track(&self.config, p, s))
                .collect(),
        }
    }

    pub fn ped(&self, id: &str) -> Option<&SynthPed> {
        self.peds.iter().find(|p| p.ped_id == id)
    }
}

pub fn generate_synthetic_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = (cfg.pos_fraction * cfg.n_tracks as f64).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.n_tracks).map(|i| (i < n_pos) as u8).collect();
    labels.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * cfg.n_tracks as f64).round() as usize;
    let n_val = (cfg.val_fraction * cfg.n_tracks as f64).round() as usize;
    let mut splits: Vec<Split> = (0..cfg.n_tracks)
        .map(|i| {
            if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect();
    splits.shuffle(&mut rng);
    let peds = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| SynthPed {
            ped_id: format!("ped{i:05}"),
            motion: if l == 1 { sample_crossing(cfg, &mut rng) } else { sample_non_crossing(cfg, &mut rng) },
            seed: rng.random(),
        })
        .collect();
    Ok(SynthScene {
        config: cfg.clone(),
        seed,
        peds,
        splits,
    })
}

fn hash3(a: u64, b: i64, c: i64) -> u64 {
    let mut h = a ^ 0x9e37_79b9_7f4a_7c15;
    for v in [b as u64, c as u64] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    }
    h
}

/// Renders frame `f` of a pedestrian's video: textured sidewalk, road band
/// with a lane marking that scrolls with ego motion, and the pedestrian.
pub fn render_frame(cfg: &SynthConfig, ped: &SynthPed, track: &Track, f: usize) -> Image {
    let (w, h) = (cfg.width, cfg.height);
    let mut im = Image::new(w, h);
    let scroll: f64 = track.frames[..f].iter().map(|r| r.speed / 10.0).sum();
    let scroll = scroll as i64;
    let x0 = cfg.road_x0.round() as usize;
    let x1 = (cfg.road_x1.round() as usize).min(w);
    let lane = (x0 + x1) / 2;
    for y in 0..h {
        let yy = y as i64 + scroll;
        for x in 0..w {
            let n = (hash3(ped.seed, x as i64 / 2, yy / 2) % 24) as u8;
            let px = if x >= x0 && x < x1 {
                if x == lane && (yy / 6) % 2 == 0 {
                    [220, 220, 220]
                } else {
                    [70 + n / 3, 70 + n / 3, 70 + n / 3]
                }
            } else if x + 1 == x0 {
                [190, 190, 190]
            } else {
                [80 + n, 105 + n, 125 + n]
            };
            im.set_pixel(x, y, px);
        }
    }
    let b = track.frames[f].bbox;
    let c = hash3(ped.seed, 7, 7);
    let color = [40 + (c % 60) as u8, 40 + ((c >> 8) % 60) as u8, 150 + ((c >> 16) % 100) as u8];
    let xa = b[0].round().max(0.0) as usize;
    let xb = (b[2].round().max(0.0) as usize).min(w);
    let ya = b[1].round().max(0.0) as usize;
    let yb = (b[3].round().max(0.0) as usize).min(h);
    for y in ya..yb {
        for x in xa..xb {
            im.set_pixel(x, y, color);
        }
    }
    im
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_tracks: 40,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic_dataset(&small(), 3).unwrap();
        let b = generate_synthetic_dataset(&small(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tracks(), b.tracks());
        let c = generate_synthetic_dataset(&small(), 4).unwrap();
        assert_ne!(a.tracks(), c.tracks());
    }

    #[test]
    fn infeasible_road_rejected() {
        let cfg = SynthConfig {
            road_x0: 200.0,
            road_x1: 220.0,
            ..Default::default()
        };
        assert!(generate_synthetic_dataset(&cfg, 1).is_err());
    }

    #[test]
    fn constant_velocity_into_road_is_crossing() {
        // Zero noise, heading into the band, 40 frames from the event.
        let cfg = SynthConfig {
            jitter_std: 0.0,
            ..Default::default()
        };
        let m = Motion {
            len: 100,
            start: (cfg.road_x0 - 0.5 * 90.0, 40.0),
            size: (6.0, 14.0),
            idle_v: (0.0, 0.0),
            intent_start: 0,
            intent_v: (0.5, 0.0),
        };
        let (label, event) = m.label(cfg.road_x0).unwrap();
        assert_eq!(label, 1);
        let e = event.unwrap();
        assert_eq!(e, 90);
        let t = e - 40;
        assert!(m.center(t as f64).0 < cfg.road_x0);
    }

    #[test]
    fn generated_tracks_respect_construction() {
        let s = generate_synthetic_dataset(&small(), 9).unwrap();
        for (p, t) in s.peds.iter().zip(&s.tracks().tracks) {
            if t.label == 1 {
                let e = t.event_frame.unwrap() as usize;
                assert!(e >= p.motion.intent_start + MIN_INTENT_LEAD);
                assert!(e < t.len());
            } else {
                assert!(t.event_frame.is_none());
            }
            for f in &t.frames {
                assert!(f.bbox[0] < f.bbox[2] && f.bbox[1] < f.bbox[3]);
            }
        }
    }

    #[test]
    fn rendering_shows_road_and_pedestrian() {
        let cfg = small();
        let s = generate_synthetic_dataset(&cfg, 2).unwrap();
        let tracks = s.tracks();
        let im = render_frame(&cfg, &s.peds[0], &tracks.tracks[0], 0);
        assert_eq!((im.width, im.height), (cfg.width, cfg.height));
        let b = tracks.tracks[0].frames[0].bbox;
        let cx = ((b[0] + b[2]) / 2.0) as usize;
        let cy = ((b[1] + b[3]) / 2.0) as usize;
        assert!(im.pixel(cx, cy)[2] >= 150);
        assert_eq!(im.pixel(cfg.road_x0 as usize - 1, 0), [190, 190, 190]);
    }
}
