//! Line-delimited track files:
//! `ped_id<TAB>split<TAB>frame<TAB>x1,y1,x2,y2<TAB>speed<TAB>event_frame|-<TAB>label`.
//!
//! `speed` is either a real (km/h) or one of the ordinal category names.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::speed::encode_speed_ordinal;
use crate::error::{io_err, Error, Result};

pub type BBox = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (train, val, test)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: i64,
    pub bbox: BBox,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub ped_id: String,
    pub split: Split,
    pub frames: Vec<FrameRecord>,
    pub event_frame: Option<i64>,
    pub label: u8,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row `i` as the 5-feature vector `[x1, y1, x2, y2, speed]`.
    pub fn row(&self, i: usize) -> [f64; 5] {
        let f = &self.frames[i];
        [f.bbox[0], f.bbox[1], f.bbox[2], f.bbox[3], f.speed]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(move |t| t.split == s)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

fn parse_bbox(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bbox component `{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let b: BBox = v
        .try_into()
        .map_err(|v: Vec<f64>| format!("bbox needs 4 components, got {}", v.len()))?;
    if b.iter().any(|x| !x.is_finite()) {
        return Err("non-finite bbox".into());
    }
    if b[0] >= b[2] || b[1] >= b[3] {
        return Err(format!("degenerate bbox {b:?}: need x1<x2 and y1<y2"));
    }
    Ok(b)
}

fn parse_speed(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("non-finite speed {v}")),
        Err(_) => encode_speed_ordinal(s).map(f64::from).map_err(|e| e.to_string()),
    }
}

/// Parses track-file text. `origin` names the source in error messages.
pub fn parse_tracks(text: &str, origin: &str) -> Result<TrackSet> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            msg,
        };
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 tab-separated fields, got {}", cols.len())));
        }
        let ped = cols[0].trim();
        if ped.is_empty() {
            return Err(err("empty pedestrian id".into()));
        }
        let split: Split = cols[1].trim().parse().map_err(err)?;
        let frame: i64 = cols[2].trim().parse().map_err(|e| err(format!("frame `{}`: {e}", cols[2])))?;
        let bbox = parse_bbox(cols[3]).map_err(err)?;
        let speed = parse_speed(cols[4].trim()).map_err(err)?;
        let event = match cols[5].trim() {
            "-" => None,
            s => Some(s.parse::<i64>().map_err(|e| err(format!("event frame `{s}`: {e}")))?),
        };
        let label: u8 = match cols[6].trim() {
            "0" => 0,
            "1" => 1,
            s => return Err(err(format!("label must be 0 or 1, got `{s}`"))),
        };
        if label == 1 && event.is_none() {
            return Err(err("crossing track (label 1) needs an event frame".into()));
        }
        let rec = FrameRecord { frame, bbox, speed };
        match by_id.get(ped) {
            Some(&i) => {
                let t = &mut tracks[i];
                if t.split != split || t.event_frame != event || t.label != label {
                    return Err(err(format!(
                        "pedestrian `{ped}` changes split/event/label mid-track"
                    )));
                }
                let last = t.frames.last().map(|f| f.frame).unwrap_or(i64::MIN);
                if frame <= last {
                    return Err(err(format!(
                        "frame {frame} of `{ped}` overlaps or precedes frame {last}"
                    )));
                }
                t.frames.push(rec);
            }
            None => {
                by_id.insert(ped.to_string(), tracks.len());
                tracks.push(Track {
                    ped_id: ped.to_string(),
                    split,
                    frames: vec![rec],
                    event_frame: event,
                    label,
                });
            }
        }
    }
    Ok(TrackSet { tracks })
}

pub fn load_tracks(path: &Path) -> Result<TrackSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_tracks(&text, &path.display().to_string())
}

/// Serializes tracks in the same format; speeds are written as reals.
pub fn format_tracks(set: &TrackSet) -> String {
    let mut out = String::new();
    for t in &set.tracks {
        let ev = t.event_frame.map_or("-".to_string(), |e| e.to_string());
        for f in &t.frames {
            let b = f.bbox;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{},{},{},{}\t{}\t{}\t{}",
                t.ped_id,
                t.split.as_str(),
                f.frame,
                b[0],
                b[1],
                b[2],
                b[3],
                f.speed,
                ev,
                t.label
            );
        }
    }
    out
}

pub fn save_tracks(set: &TrackSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_tracks(set)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(ped: &str, frame: i64, bbox: &str) -> String {
        format!("{ped}\ttrain\t{frame}\t{bbox}\t12.5\t-\t0\n")
    }

    #[test]
    fn empty_file_is_empty_set() {
        assert!(parse_tracks("", "x").unwrap().is_empty());
        assert!(parse_tracks("# comment\n\n", "x").unwrap().is_empty());
    }

    #[test]
    fn eighty_frames_one_track() {
        let text: String = (0..80).map(|f| line("p1", f, "1,2,3,4")).collect();
        let s = parse_tracks(&text, "x").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.tracks[0].len(), 80);
    }

    #[test]
    fn inverted_box_names_the_line() {
        let text = format!("{}{}", line("p1", 0, "1,2,3,4"), line("p1", 1, "5,2,3,4"));
        let e = parse_tracks(&text, "tracks.tsv").unwrap_err().to_string();
        assert!(e.contains("tracks.tsv:2"), "{e}");
    }

    #[test]
    fn overlapping_frames_rejected() {
        let text = format!("{}{}", line("p1", 3, "1,2,3,4"), line("p1", 3, "1,2,3,4"));
        assert!(parse_tracks(&text, "x").is_err());
    }

    #[test]
    fn ordinal_speeds_and_round_trip() {
        let text = "a\tval\t0\t0,0,1,1\tmoving fast\t5\t1\na\tval\t1\t0,0,1,1\tstopped\t5\t1\n";
        let s = parse_tracks(text, "x").unwrap();
        assert_eq!(s.tracks[0].frames[0].speed, 3.0);
        assert_eq!(s.tracks[0].frames[1].speed, 0.0);
        let again = parse_tracks(&format_tracks(&s), "y").unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn split_change_rejected() {
        let text = "a\ttrain\t0\t0,0,1,1\t1\t-\t0\na\ttest\t1\t0,0,1,1\t1\t-\t0\n";
        assert!(parse_tracks(text, "x").is_err());
    }
}
