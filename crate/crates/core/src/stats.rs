//! Dataset channel statistics: per-channel min/max for deformation features
//! and per-vertex-per-axis mean/std for coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dr::{DrFeatures, CHANNELS};
use crate::mesh::Vec3;

/// Ranges or deviations below this are treated as degenerate.
pub const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("statistics mismatch: {0}")]
    StatsMismatch(String),
    #[error("no samples")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    MinMax,
    MeanStd,
}

/// `first`/`second` hold min/max (one per DR channel) or mean/std (one per
/// vertex coordinate, vertex-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    mode: StatsMode,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl FeatureStats {
    pub fn from_parts(mode: StatsMode, first: Vec<f64>, second: Vec<f64>) -> Result<Self, StatsError> {
        if first.len() != second.len() {
            return Err(StatsError::StatsMismatch(format!(
                "{} vs {} entries",
                first.len(),
                second.len()
            )));
        }
        if mode == StatsMode::MinMax && first.len() != CHANNELS {
            return Err(StatsError::StatsMismatch(format!(
                "min/max stats need {CHANNELS} channels, got {}",
                first.len()
            )));
        }
        Ok(Self { mode, first, second })
    }

    /// Per-channel extremes over every vertex of every sample.
    pub fn minmax(samples: &[DrFeatures]) -> Result<Self, StatsError> {
        if samples.is_empty() {
            return Err(StatsError::Empty);
        }
        let mut lo = [f64::INFINITY; CHANNELS];
        let mut hi = [f64::NEG_INFINITY; CHANNELS];
        for f in samples.iter().flat_map(|s| &s.0) {
            for c in 0..CHANNELS {
                lo[c] = lo[c].min(f[c]);
                hi[c] = hi[c].max(f[c]);
            }
        }
        Ok(Self {
            mode: StatsMode::MinMax,
            first: lo.to_vec(),
            second: hi.to_vec(),
        })
    }

    /// Per-vertex-per-axis mean and population standard deviation.
    pub fn meanstd(samples: &[Vec<Vec3>]) -> Result<Self, StatsError> {
        let Some(first) = samples.first() else {
            return Err(StatsError::Empty);
        };
        let n = first.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != n) {
            return Err(StatsError::StatsMismatch(format!(
                "samples have {n} and {} vertices",
                bad.len()
            )));
        }
        let count = samples.len() as f64;
        let mut mean = vec![0.0; 3 * n];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s.iter().flat_map(|v| v.iter())) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; 3 * n];
        for s in samples {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(s.iter().flat_map(|v| v.iter())) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Ok(Self {
            mode: StatsMode::MeanStd,
            first: mean,
            second: std,
        })
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    /// Min (MinMax) or mean (MeanStd).
    pub fn first(&self) -> &[f64] {
        &self.first
    }

    /// Max (MinMax) or std (MeanStd).
    pub fn second(&self) -> &[f64] {
        &self.second
    }

    fn expect(&self, mode: StatsMode, len: usize) -> Result<(), StatsError> {
        if self.mode != mode {
            return Err(StatsError::StatsMismatch(format!("expected {mode:?} stats, got {:?}", self.mode)));
        }
        if self.first.len() != len {
            return Err(StatsError::StatsMismatch(format!(
                "stats cover {} entries, data has {len}",
                self.first.len()
            )));
        }
        Ok(())
    }
}

/// Maps every channel affinely onto `[-1, 1]`; degenerate channels map to 0.
pub fn normalize_dr(f: &DrFeatures, stats: &FeatureStats) -> Result<DrFeatures, StatsError> {
    stats.expect(StatsMode::MinMax, CHANNELS)?;
    let (lo, hi) = (&stats.first, &stats.second);
    Ok(DrFeatures(
        f.0.iter()
            .map(|v| {
                let mut out = [0.0; CHANNELS];
                for c in 0..CHANNELS {
                    let range = hi[c] - lo[c];
                    out[c] = if range < DEGENERATE {
                        0.0
                    } else {
                        2.0 * (v[c] - lo[c]) / range - 1.0
                    };
                }
                out
            })
            .collect(),
    ))
}

/// Inverse of [`normalize_dr`]; degenerate channels come back as their min.
pub fn denormalize_dr(f: &DrFeatures, stats: &FeatureStats) -> Result<DrFeatures, StatsError> {
    stats.expect(StatsMode::MinMax, CHANNELS)?;
    let (lo, hi) = (&stats.first, &stats.second);
    Ok(DrFeatures(
        f.0.iter()
            .map(|v| {
                let mut out = [0.0; CHANNELS];
                for c in 0..CHANNELS {
                    let range = hi[c] - lo[c];
                    out[c] = if range < DEGENERATE {
                        lo[c]
                    } else {
                        (v[c] + 1.0) * 0.5 * range + lo[c]
                    };
                }
                out
            })
            .collect(),
    ))
}

fn effective_std(s: f64) -> f64 {
    if s < DEGENERATE {
        1.0
    } else {
        s
    }
}

/// `(x - mean) / std` per vertex and axis.
pub fn standardize_coords(x: &[Vec3], stats: &FeatureStats) -> Result<Vec<Vec3>, StatsError> {
    stats.expect(StatsMode::MeanStd, 3 * x.len())?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, p)| Vec3::from_fn(|a, _| (p[a] - stats.first[3 * i + a]) / effective_std(stats.second[3 * i + a])))
        .collect())
}

pub fn destandardize_coords(z: &[Vec3], stats: &FeatureStats) -> Result<Vec<Vec3>, StatsError> {
    stats.expect(StatsMode::MeanStd, 3 * z.len())?;
    Ok(z.iter()
        .enumerate()
        .map(|(i, p)| Vec3::from_fn(|a, _| p[a] * effective_std(stats.second[3 * i + a]) + stats.first[3 * i + a]))
        .collect())
}
