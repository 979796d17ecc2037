use serde::{Deserialize, Serialize};

use super::track::BBox;
use crate::error::{data_err, Result};

/// Per-feature z-score statistics over offset training rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl NormStats {
    pub fn new(mean: [f64; 5], std: [f64; 5]) -> Result<Self> {
        let s = Self { mean, std };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(data_err(format!("feature {i} has degenerate std {}", self.std[i])));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(data_err("non-finite feature mean"));
        }
        Ok(())
    }

    /// Statistics of `rows` after offsetting each sequence by its own first box.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a [[f64; 5]]>) -> Result<Self> {
        let mut n = 0.0;
        let mut sum = [0.0; 5];
        let mut sq = [0.0; 5];
        for seq in sequences {
            let Some(first) = seq.first() else { continue };
            let origin = [first[0], first[1], first[2], first[3]];
            for r in seq {
                let o = offset_row(r, &origin);
                for j in 0..5 {
                    sum[j] += o[j];
                    sq[j] += o[j] * o[j];
                }
                n += 1.0;
            }
        }
        if n < 2.0 {
            return Err(data_err("normalization needs at least two rows"));
        }
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for j in 0..5 {
            mean[j] = sum[j] / n;
            std[j] = ((sq[j] / n - mean[j] * mean[j]).max(0.0)).sqrt();
        }
        Self::new(mean, std)
    }
}

fn offset_row(r: &[f64; 5], origin: &BBox) -> [f64; 5] {
    [r[0] - origin[0], r[1] - origin[1], r[2] - origin[2], r[3] - origin[3], r[4]]
}

/// Subtracts `origin` from the box columns, then z-scores all five features.
pub fn offset_and_zscore(seq: &[[f64; 5]], origin: &BBox, stats: &NormStats) -> Result<Vec<[f64; 5]>> {
    stats.validate()?;
    if seq.is_empty() {
        return Err(data_err("empty sequence"));
    }
    Ok(seq
        .iter()
        .map(|r| {
            let o = offset_row(r, origin);
            std::array::from_fn(|j| (o[j] - stats.mean[j]) / stats.std[j])
        })
        .collect())
}

pub fn denormalize(seq: &[[f64; 5]], origin: &BBox, stats: &NormStats) -> Vec<[f64; 5]> {
    seq.iter()
        .map(|r| {
            std::array::from_fn(|j| {
                let v = r[j] * stats.std[j] + stats.mean[j];
                if j < 4 {
                    v + origin[j]
                } else {
                    v
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> NormStats {
        NormStats::new([1.0, -2.0, 0.5, 3.0, 20.0], [2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()
    }

    #[test]
    fn self_offset_is_constant() {
        let row = [10.0, 20.0, 30.0, 40.0, 5.0];
        let seq = vec![row; 4];
        let n = offset_and_zscore(&seq, &[10.0, 20.0, 30.0, 40.0], &stats()).unwrap();
        for r in &n {
            assert_eq!(r[0], (0.0 - 1.0) / 2.0);
            assert_eq!(r[3], (0.0 - 3.0) / 5.0);
        }
    }

    #[test]
    fn degenerate_std_rejected() {
        assert!(NormStats::new([0.0; 5], [1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
        let rows = vec![[1.0, 1.0, 2.0, 2.0, 3.0]; 10];
        assert!(NormStats::fit([rows.as_slice()]).is_err());
    }

    #[test]
    fn round_trip() {
        let seq: Vec<[f64; 5]> = (0..20)
            .map(|i| {
                let x = i as f64;
                [3.0 * x + 1.0, 100.0 - x, 3.0 * x + 9.0, 130.0 - 0.5 * x, (x * 0.3).sin() * 10.0 + 20.0]
            })
            .collect();
        let origin = [1.0, 100.0, 9.0, 130.0];
        let back = denormalize(&offset_and_zscore(&seq, &origin, &stats()).unwrap(), &origin, &stats());
        for (a, b) in seq.iter().zip(&back) {
            for j in 0..5 {
                assert!((a[j] - b[j]).abs() <= 1e-5 * a[j].abs().max(1.0));
            }
        }
    }
}
