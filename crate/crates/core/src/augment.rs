//! Batch-level CutMix and MixUp on spectrogram inputs.
//!
//! CutMix cuts one rectangle (shared by all eight planes) out of sample A
//! and fills it with the same region of partner B; the label becomes
//! `lambda * y_A + (1 - lambda) * y_B` with `lambda` the area fraction
//! actually kept from A.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{ModelInput, N_PLANES};

/// Draws from the symmetric Beta(alpha, alpha).
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("beta shape must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Half-open rectangle `[band_lo, band_hi) x [frame_lo, frame_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub band_lo: usize,
    pub band_hi: usize,
    pub frame_lo: usize,
    pub frame_hi: usize,
}

impl Mask {
    pub fn empty() -> Self {
        Self {
            band_lo: 0,
            band_hi: 0,
            frame_lo: 0,
            frame_hi: 0,
        }
    }

    pub fn full(n_bands: usize, n_frames: usize) -> Self {
        Self {
            band_lo: 0,
            band_hi: n_bands,
            frame_lo: 0,
            frame_hi: n_frames,
        }
    }

    pub fn area(&self) -> usize {
        (self.band_hi - self.band_lo) * (self.frame_hi - self.frame_lo)
    }

    pub fn contains(&self, band: usize, frame: usize) -> bool {
        (self.band_lo..self.band_hi).contains(&band) && (self.frame_lo..self.frame_hi).contains(&frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub lambda_raw: f64,
    /// `None` for MixUp, which blends every cell.
    pub mask: Option<Mask>,
    pub lambda_eff: f64,
    pub partner_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id_a: String,
    pub id_b: String,
    pub spec: MixSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub input: ModelInput,
    pub labels: Vec<f64>,
    pub provenance: Provenance,
}

/// How partner labels enter the mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Each individual score of A is mixed with a uniformly drawn score of B.
    #[default]
    PerListener,
    /// One label from the two mean scores (mean-regression baseline).
    Mean,
}

/// A training input with its listener scores.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub input: &'a ModelInput,
    pub scores: &'a [f64],
}

/// Rectangle covering `1 - lambda_raw` of the plane.
///
/// Side fractions are both `sqrt(1 - lambda_raw)`, rounded to whole cells;
/// the rectangle is then placed uniformly among the positions where it fits
/// entirely, so rounding is the only gap between requested and realised area.
pub fn cutmix_mask<R: Rng + ?Sized>(
    n_bands: usize,
    n_frames: usize,
    lambda_raw: f64,
    rng: &mut R,
) -> Mask {
    let frac = (1.0 - lambda_raw).clamp(0.0, 1.0).sqrt();
    let h = ((n_bands as f64 * frac).round() as usize).min(n_bands);
    let w = ((n_frames as f64 * frac).round() as usize).min(n_frames);
    if h == 0 || w == 0 {
        return Mask::empty();
    }
    let top = rng.random_range(0..=n_bands - h);
    let left = rng.random_range(0..=n_frames - w);
    Mask {
        band_lo: top,
        band_hi: top + h,
        frame_lo: left,
        frame_hi: left + w,
    }
}

pub fn lambda_eff(mask: &Mask, n_bands: usize, n_frames: usize) -> f64 {
    1.0 - mask.area() as f64 / (n_bands * n_frames) as f64
}

/// Copies `b` into `a` inside `mask`, identically on every plane.
pub fn splice(a: &ModelInput, b: &ModelInput, mask: &Mask) -> Result<ModelInput> {
    if !a.same_shape(b) {
        return Err(Error::Shape("cannot splice inputs of different shapes".into()));
    }
    if mask.band_hi > a.n_bands || mask.frame_hi > a.n_frames {
        return Err(Error::Shape("mask exceeds plane bounds".into()));
    }
    let mut out = a.clone();
    let n = a.plane_len();
    for p in 0..N_PLANES {
        for band in mask.band_lo..mask.band_hi {
            let start = p * n + band * a.n_frames;
            let range = start + mask.frame_lo..start + mask.frame_hi;
            out.planes[range.clone()].copy_from_slice(&b.planes[range]);
        }
    }
    Ok(out)
}

/// Cellwise `lambda * a + (1 - lambda) * b`.
pub fn blend(a: &ModelInput, b: &ModelInput, lambda: f64) -> Result<ModelInput> {
    if !a.same_shape(b) {
        return Err(Error::Shape("cannot blend inputs of different shapes".into()));
    }
    let mut out = a.clone();
    for (o, (x, y)) in out.planes.iter_mut().zip(a.planes.iter().zip(&b.planes)) {
        *o = lambda * x + (1.0 - lambda) * y;
    }
    Ok(out)
}

pub fn mix_label(y_a: f64, y_b: f64, lambda: f64) -> f64 {
    lambda * y_a + (1.0 - lambda) * y_b
}

pub fn mix_labels<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    lambda: f64,
    mode: LabelMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both mix partners need at least one score"));
    }
    Ok(match mode {
        LabelMode::PerListener => a
            .iter()
            .map(|&ya| mix_label(ya, b[rng.random_range(0..b.len())], lambda))
            .collect(),
        LabelMode::Mean => {
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            vec![mix_label(mean(a), mean(b), lambda)]
        }
    })
}

fn check_batch(batch: &[LabeledInput]) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::invalid("mixing needs a batch of at least 2"));
    }
    if batch.iter().any(|x| !x.input.same_shape(batch[0].input)) {
        return Err(Error::Shape("batch inputs differ in shape".into()));
    }
    Ok(())
}

fn partners<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub fn cutmix<R: Rng + ?Sized>(
    batch: &[LabeledInput],
    alpha: f64,
    mode: LabelMode,
    rng: &mut R,
) -> Result<Vec<MixedSample>> {
    check_batch(batch)?;
    let (nb, nf) = (batch[0].input.n_bands, batch[0].input.n_frames);
    let partner = partners(batch.len(), rng);
    batch
        .iter()
        .zip(partner)
        .map(|(a, j)| {
            let b = &batch[j];
            let lambda_raw = sample_beta(alpha, rng)?;
            let mask = cutmix_mask(nb, nf, lambda_raw, rng);
            let lam = lambda_eff(&mask, nb, nf);
            Ok(MixedSample {
                input: splice(a.input, b.input, &mask)?,
                labels: mix_labels(a.scores, b.scores, lam, mode, rng)?,
                provenance: Provenance {
                    id_a: a.input.excerpt_id.clone(),
                    id_b: b.input.excerpt_id.clone(),
                    spec: MixSpec {
                        lambda_raw,
                        mask: Some(mask),
                        lambda_eff: lam,
                        partner_index: j,
                    },
                },
            })
        })
        .collect()
}

pub fn mixup<R: Rng + ?Sized>(
    batch: &[LabeledInput],
    alpha: f64,
    mode: LabelMode,
    rng: &mut R,
) -> Result<Vec<MixedSample>> {
    check_batch(batch)?;
    let partner = partners(batch.len(), rng);
    batch
        .iter()
        .zip(partner)
        .map(|(a, j)| {
            let b = &batch[j];
            let lam = sample_beta(alpha, rng)?;
            Ok(MixedSample {
                input: blend(a.input, b.input, lam)?,
                labels: mix_labels(a.scores, b.scores, lam, mode, rng)?,
                provenance: Provenance {
                    id_a: a.input.excerpt_id.clone(),
                    id_b: b.input.excerpt_id.clone(),
                    spec: MixSpec {
                        lambda_raw: lam,
                        mask: None,
                        lambda_eff: lam,
                        partner_index: j,
                    },
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(id: &str, nb: usize, nf: usize, seed: u64) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..8 * nb * nf).map(|_| rng.random_range(0.0..1.0)).collect();
        ModelInput::new(id, nb, nf, planes).unwrap()
    }

    #[test]
    fn beta_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x: Vec<f64> = (0..100_000).map(|_| sample_beta(1.0, &mut rng).unwrap()).collect();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn beta_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..100_000).map(|_| sample_beta(0.7, &mut rng).unwrap()).collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / x.len() as f64;
        assert!((m - 0.5).abs() < 0.005, "mean {m}");
        let expected = 1.0 / (4.0 * (2.0 * 0.7 + 1.0));
        assert!((v - expected).abs() < 0.05 * expected, "var {v} vs {expected}");
        assert!(sample_beta(0.0, &mut rng).is_err());
        assert!(sample_beta(-1.0, &mut rng).is_err());
    }

    #[test]
    fn empty_and_full_masks() {
        let a = input("a", 6, 10, 1);
        let b = input("b", 6, 10, 2);
        let empty = Mask::empty();
        assert_eq!(lambda_eff(&empty, 6, 10), 1.0);
        assert_eq!(splice(&a, &b, &empty).unwrap(), a);
        assert_eq!(mix_label(80.0, 40.0, 1.0), 80.0);

        let full = Mask::full(6, 10);
        assert_eq!(lambda_eff(&full, 6, 10), 0.0);
        assert_eq!(splice(&a, &b, &full).unwrap().planes, b.planes);
        assert_eq!(mix_label(80.0, 40.0, 0.0), 40.0);
    }

    #[test]
    fn quarter_mask_label() {
        let mask = Mask {
            band_lo: 2,
            band_hi: 5,
            frame_lo: 1,
            frame_hi: 6,
        };
        let lam = lambda_eff(&mask, 6, 10);
        assert_eq!(lam, 0.75);
        assert_eq!(mix_label(80.0, 40.0, lam), 70.0);
    }

    #[test]
    fn mixup_bounds_and_identities() {
        let a = input("a", 4, 5, 3);
        let b = input("b", 4, 5, 4);
        assert_eq!(blend(&a, &b, 1.0).unwrap(), a);
        assert_eq!(blend(&a, &a, 0.5).unwrap(), a);
        let mixed = blend(&a, &b, 0.3).unwrap();
        for ((m, x), y) in mixed.planes.iter().zip(&a.planes).zip(&b.planes) {
            assert!(*m >= x.min(*y) && *m <= x.max(*y));
        }
    }

    #[test]
    fn batch_validation() {
        let a = input("a", 4, 5, 3);
        let b = input("b", 5, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = [LabeledInput { input: &a, scores: &[50.0] }];
        assert!(cutmix(&one, 0.7, LabelMode::PerListener, &mut rng).is_err());
        let mismatched = [
            LabeledInput { input: &a, scores: &[50.0] },
            LabeledInput { input: &b, scores: &[50.0] },
        ];
        assert!(matches!(
            mixup(&mismatched, 0.7, LabelMode::PerListener, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn per_listener_and_mean_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = [10.0, 20.0, 30.0];
        let b = [90.0, 100.0];
        let per = mix_labels(&a, &b, 0.25, LabelMode::PerListener, &mut rng).unwrap();
        assert_eq!(per.len(), 3);
        for (l, ya) in per.iter().zip(a) {
            let ok = [90.0, 100.0].iter().any(|yb| *l == mix_label(ya, *yb, 0.25));
            assert!(ok);
        }
        let mean = mix_labels(&a, &b, 0.25, LabelMode::Mean, &mut rng).unwrap();
        assert_eq!(mean, vec![0.25 * 20.0 + 0.75 * 95.0]);
    }
}
