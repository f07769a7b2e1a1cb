use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{ModelInput, N_PLANES};

/// Plane standard deviations are floored here.
pub const STD_FLOOR: f64 = 1e-6;
/// Score spread floor, in MUSHRA points.
pub const SCORE_STD_FLOOR: f64 = 1.0;

/// Per-plane z-scoring of the input plus the affine map between the head's
/// unit-scale outputs and MUSHRA points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub plane_mean: [f64; N_PLANES],
    pub plane_std: [f64; N_PLANES],
    pub score_mean: f64,
    pub score_std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            plane_mean: [0.0; N_PLANES],
            plane_std: [1.0; N_PLANES],
            score_mean: 0.0,
            score_std: 1.0,
        }
    }

    pub fn apply(&self, input: &ModelInput) -> Vec<f64> {
        let n = input.plane_len();
        let mut out = Vec::with_capacity(input.planes.len());
        for p in 0..N_PLANES {
            let (m, s) = (self.plane_mean[p], self.plane_std[p]);
            out.extend(input.plane(p).iter().map(|v| (v - m) / s));
        }
        debug_assert_eq!(out.len(), n * N_PLANES);
        out
    }
}

/// Fits per-plane mean and population standard deviation over `inputs`, and
/// the mean/spread of the individual training scores.
pub fn normalize_fit<'a>(
    inputs: impl IntoIterator<Item = &'a ModelInput>,
    scores: impl IntoIterator<Item = f64>,
) -> Result<NormStats> {
    let mut sum = [0.0; N_PLANES];
    let mut sum_sq = [0.0; N_PLANES];
    let mut count = 0usize;
    for x in inputs {
        for p in 0..N_PLANES {
            for &v in x.plane(p) {
                sum[p] += v;
                sum_sq[p] += v * v;
            }
        }
        count += x.plane_len();
    }
    if count == 0 {
        return Err(Error::invalid("cannot fit normalisation on an empty dataset"));
    }
    let mut stats = NormStats::identity();
    for p in 0..N_PLANES {
        let mean = sum[p] / count as f64;
        let var = (sum_sq[p] / count as f64 - mean * mean).max(0.0);
        stats.plane_mean[p] = mean;
        stats.plane_std[p] = var.sqrt().max(STD_FLOOR);
    }

    let (mut n, mut s, mut ss) = (0usize, 0.0, 0.0);
    for v in scores {
        n += 1;
        s += v;
        ss += v * v;
    }
    if n > 0 {
        let mean = s / n as f64;
        stats.score_mean = mean;
        stats.score_std = (ss / n as f64 - mean * mean).max(0.0).sqrt().max(SCORE_STD_FLOOR);
    }
    Ok(stats)
}
