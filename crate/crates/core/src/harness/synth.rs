//! Synthetic listening-test dataset with known score distributions.
//!
//! References are tone/noise mixtures; each condition applies a low-pass
//! and/or additive noise and has a fixed logistic score distribution, so the
//! true per-condition statistics are known exactly.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{load_manifest, write_manifest, Manifest, ManifestEntry, RatingRecord};
use crate::error::{Error, Result};
use crate::frontend::{quantize_signal16, write_wav16, StereoSignal, SAMPLE_RATE};
use crate::prob::{confidence_interval, ConfidenceInterval, Family, ScoreDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub id: String,
    /// 4th-order Butterworth cutoff in Hz.
    pub lowpass_hz: Option<f64>,
    /// White noise level relative to the reference RMS, in dB.
    pub noise_db: Option<f64>,
    /// Rank of the degradation; larger is worse.
    pub severity: u32,
    /// Location of the listener score distribution.
    pub mu: f64,
}

impl DegradationSpec {
    pub fn is_identity(&self) -> bool {
        self.lowpass_hz.is_none() && self.noise_db.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_excerpts: usize,
    pub listeners: usize,
    pub excerpt_samples: usize,
    /// Logistic scale shared by every condition.
    pub score_scale: f64,
    pub seed: u64,
    pub conditions: Vec<DegradationSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let c = |id: &str, lowpass_hz, noise_db, severity, mu| DegradationSpec {
            id: id.to_string(),
            lowpass_hz,
            noise_db,
            severity,
            mu,
        };
        Self {
            n_excerpts: 200,
            listeners: 20,
            excerpt_samples: 12_000,
            score_scale: 6.0,
            seed: 0,
            conditions: vec![
                c("hidden_ref", None, None, 0, 98.0),
                c("lp3500", Some(3500.0), None, 4, 35.0),
                c("lp7000", Some(7000.0), None, 2, 55.0),
                c("lp_noise_mild", Some(14_000.0), Some(-35.0), 1, 70.0),
                c("lp_noise_severe", Some(10_000.0), Some(-20.0), 3, 45.0),
            ],
        }
    }
}

/// One generated excerpt: the reference, every coded version and all ratings.
#[derive(Debug, Clone)]
pub struct SyntheticExcerpt {
    pub id: String,
    pub reference: StereoSignal,
    /// `(condition_id, coded signal)` in condition order.
    pub coded: Vec<(String, StereoSignal)>,
    pub ratings: Vec<RatingRecord>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub excerpts: Vec<SyntheticExcerpt>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_excerpts == 0 {
            return Err(Error::invalid("n_excerpts must be at least 1"));
        }
        if self.listeners < 2 {
            return Err(Error::invalid("listeners must be at least 2"));
        }
        if self.excerpt_samples == 0 {
            return Err(Error::invalid("excerpt_samples must be at least 1"));
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return Err(Error::invalid("score_scale must be positive"));
        }
        if self.conditions.is_empty() {
            return Err(Error::invalid("need at least one condition"));
        }
        let mut ids = HashSet::new();
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        for c in &self.conditions {
            if c.id.is_empty() || c.id.contains('/') || !ids.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("condition id {:?} is empty, contains '/', or repeats", c.id)));
            }
            if let Some(f) = c.lowpass_hz {
                if !(f > 0.0 && f < nyquist) {
                    return Err(Error::invalid(format!("{}: cutoff {f} Hz outside (0, {nyquist})", c.id)));
                }
            }
            if c.noise_db.is_some_and(|d| !d.is_finite()) {
                return Err(Error::invalid(format!("{}: noise level must be finite", c.id)));
            }
            if !(0.0..=100.0).contains(&c.mu) {
                return Err(Error::invalid(format!("{}: mu {} outside [0, 100]", c.id, c.mu)));
            }
        }
        let mut by_severity: Vec<&DegradationSpec> = self.conditions.iter().collect();
        by_severity.sort_by_key(|c| c.severity);
        for w in by_severity.windows(2) {
            if w[0].severity == w[1].severity || w[1].mu >= w[0].mu {
                return Err(Error::invalid(format!(
                    "mu must fall strictly with severity: {} (severity {}, mu {}) vs {} (severity {}, mu {})",
                    w[0].id, w[0].severity, w[0].mu, w[1].id, w[1].severity, w[1].mu
                )));
            }
        }
        Ok(())
    }

    pub fn excerpt_id(&self, i: usize) -> String {
        format!("e{i:04}")
    }

    pub fn listener_id(&self, k: usize) -> String {
        format!("L{k:02}")
    }

    pub fn condition(&self, id: &str) -> Option<&DegradationSpec> {
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn score_distribution(&self, c: &DegradationSpec) -> ScoreDistribution {
        ScoreDistribution {
            family: Family::Logistic,
            mu: c.mu,
            log_scale: self.score_scale.ln(),
        }
    }

    /// Mean and standard deviation of the clipped score distribution.
    pub fn true_stats(&self, c: &DegradationSpec) -> (f64, f64) {
        clipped_logistic_moments(c.mu, self.score_scale)
    }

    /// 95% interval a panel of `listeners` would report for a condition, from
    /// the true clipped statistics.
    pub fn true_ci(&self, c: &DegradationSpec) -> Result<ConfidenceInterval> {
        let (mean, std) = self.true_stats(c);
        confidence_interval(std, self.listeners, mean, 0.95)
    }

    /// Generates excerpt `i`. Each excerpt has its own random streams, so
    /// excerpts can be produced independently and in any order.
    pub fn excerpt(&self, i: usize) -> Result<SyntheticExcerpt> {
        let id = self.excerpt_id(i);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * i as u64);
        let reference = quantize_signal16(&reference_signal(self.excerpt_samples, &mut rng)?);
        let ref_rms = rms(&reference);
        let mut coded = Vec::with_capacity(self.conditions.len());
        for c in &self.conditions {
            coded.push((c.id.clone(), degrade(&reference, c, ref_rms, &mut rng)?));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * i as u64 + 1);
        let mut ratings = Vec::with_capacity(self.conditions.len() * self.listeners);
        for c in &self.conditions {
            let draws = self.score_distribution(c).sample(self.listeners, &mut rng);
            for (k, s) in draws.into_iter().enumerate() {
                ratings.push(RatingRecord {
                    excerpt_id: id.clone(),
                    condition_id: c.id.clone(),
                    listener_id: self.listener_id(k),
                    score: s.clamp(0.0, 100.0),
                });
            }
        }
        Ok(SyntheticExcerpt {
            id,
            reference,
            coded,
            ratings,
        })
    }
}

/// Whole dataset in memory. Large specs are better streamed through
/// [`SyntheticSpec::excerpt`].
pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let excerpts = (0..spec.n_excerpts).map(|i| spec.excerpt(i)).collect::<Result<_>>()?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        excerpts,
    })
}

/// Writes 16-bit WAV files under `dir/audio`, `dir/manifest.csv` and
/// `dir/synthetic_spec.json`, and returns the loaded manifest.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let dir = dir.as_ref();
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut entries = Vec::with_capacity(spec.n_excerpts * spec.conditions.len());
    for i in 0..spec.n_excerpts {
        let ex = spec.excerpt(i)?;
        let ref_rel = Path::new("audio").join(format!("{}_ref.wav", ex.id));
        write_wav16(dir.join(&ref_rel), &ex.reference)?;
        for (cond, signal) in &ex.coded {
            let cod_rel = Path::new("audio").join(format!("{}_{cond}.wav", ex.id));
            write_wav16(dir.join(&cod_rel), signal)?;
            entries.push(ManifestEntry {
                excerpt_id: ex.id.clone(),
                condition_id: cond.clone(),
                ref_path: ref_rel.clone(),
                cod_path: cod_rel,
                ratings: ex.ratings.iter().filter(|r| &r.condition_id == cond).cloned().collect(),
            });
        }
    }
    let manifest_path = dir.join("manifest.csv");
    write_manifest(
        &manifest_path,
        &Manifest {
            root: dir.to_path_buf(),
            entries,
            sample_rate: SAMPLE_RATE,
            max_len: Some(spec.excerpt_samples),
        },
    )?;
    let json = serde_json::to_vec_pretty(spec).expect("spec serialises");
    super::write_atomic(&dir.join("synthetic_spec.json"), &json)?;
    load_manifest(manifest_path)
}

fn reference_signal(n: usize, rng: &mut ChaCha8Rng) -> Result<StereoSignal> {
    let fs = SAMPLE_RATE as f64;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];

    let n_tones = rng.random_range(2..=6);
    for _ in 0..n_tones {
        let f = rng.random_range(100f64.ln()..12_000f64.ln()).exp();
        let amp = rng.random_range(0.05..0.3);
        let phase = rng.random_range(0.0..2.0 * PI);
        let pan = rng.random_range(0.0..PI / 2.0);
        let (gl, gr) = (amp * pan.cos(), amp * pan.sin());
        for t in 0..n {
            let v = (2.0 * PI * f * t as f64 / fs + phase).sin();
            left[t] += gl * v;
            right[t] += gr * v;
        }
    }

    let level = rng.random_range(0.02..0.08);
    let tilt = rng.random_range(0.0..0.6);
    let rho: f64 = rng.random_range(0.0..0.9);
    let side = (1.0 - rho * rho).sqrt();
    let (mut yl, mut yr) = (0.0, 0.0);
    for t in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        yl = a + tilt * yl;
        yr = rho * a + side * b + tilt * yr;
        left[t] += level * (1.0 - tilt) * yl;
        right[t] += level * (1.0 - tilt) * yr;
    }

    let fm = rng.random_range(1.0..8.0);
    let depth = rng.random_range(0.0..0.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    for t in 0..n {
        let g = 1.0 + depth * (2.0 * PI * fm * t as f64 / fs + phase).sin();
        left[t] *= g;
        right[t] *= g;
    }

    let peak = left.iter().chain(&right).fold(0.0f64, |m, v| m.max(v.abs()));
    let target = rng.random_range(0.3..0.7);
    if peak > 0.0 {
        let g = target / peak;
        left.iter_mut().chain(right.iter_mut()).for_each(|v| *v *= g);
    }
    StereoSignal::new(left, right)
}

fn rms(s: &StereoSignal) -> f64 {
    let ss: f64 = s.left().iter().chain(s.right()).map(|v| v * v).sum();
    (ss / (2 * s.n_samples()).max(1) as f64).sqrt()
}

fn degrade(
    reference: &StereoSignal,
    c: &DegradationSpec,
    ref_rms: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StereoSignal> {
    if c.is_identity() {
        return Ok(reference.clone());
    }
    let fs = SAMPLE_RATE as f64;
    let (mut left, mut right) = match c.lowpass_hz {
        Some(f) => (
            butterworth_lowpass(reference.left(), f, fs),
            butterworth_lowpass(reference.right(), f, fs),
        ),
        None => (reference.left().to_vec(), reference.right().to_vec()),
    };
    if let Some(db) = c.noise_db {
        let g = ref_rms * 10f64.powf(db / 20.0);
        for v in left.iter_mut().chain(right.iter_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *v += g * z;
        }
    }
    Ok(quantize_signal16(&StereoSignal::new(left, right)?))
}

/// 4th-order Butterworth low-pass as two cascaded biquads.
pub fn butterworth_lowpass(x: &[f64], cutoff: f64, fs: f64) -> Vec<f64> {
    // pole-pair quality factors of a 4th-order Butterworth
    const Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];
    let w0 = 2.0 * PI * cutoff / fs;
    let (sin, cos) = w0.sin_cos();
    let mut y = x.to_vec();
    for q in Q {
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        let b1 = (1.0 - cos) / a0;
        let a1 = -2.0 * cos / a0;
        let a2 = (1.0 - alpha) / a0;
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b0 * input - a2 * out;
            *v = out;
        }
    }
    y
}

/// Mean and standard deviation of `clamp(X, 0, 100)` for a logistic `X`,
/// by Simpson quadrature of the survival function.
pub fn clipped_logistic_moments(mu: f64, scale: f64) -> (f64, f64) {
    const N: usize = 20_000;
    let h = 100.0 / N as f64;
    let survival = |t: f64| 1.0 / (1.0 + ((t - mu) / scale).exp());
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..=N {
        let t = i as f64 * h;
        let w = if i == 0 || i == N {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let s = survival(t);
        m1 += w * s;
        m2 += w * 2.0 * t * s;
    }
    let (m1, m2) = (m1 * h / 3.0, m2 * h / 3.0);
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_excerpts: 3,
            listeners: 4,
            excerpt_samples: 4096,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid_and_monotone() {
        let s = SyntheticSpec::default();
        s.validate().unwrap();
        let mu = |id: &str| s.condition(id).unwrap().mu;
        assert!(mu("lp7000") < mu("hidden_ref"));
        assert!(mu("lp3500") < mu("lp7000"));
        assert!(s.condition("hidden_ref").unwrap().is_identity());
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticSpec::default();
        s.conditions[1].mu = 99.0;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.score_scale = 0.0;
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::default();
        s.conditions[2].id = "hidden_ref".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn hidden_reference_is_bit_identical() {
        let ex = small().excerpt(1).unwrap();
        assert_eq!(ex.coded[0].0, "hidden_ref");
        assert_eq!(ex.coded[0].1, ex.reference);
        assert_ne!(ex.coded[1].1, ex.reference);
        assert_eq!(ex.ratings.len(), 5 * 4);
        assert!(ex.ratings.iter().all(|r| (0.0..=100.0).contains(&r.score)));
    }

    #[test]
    fn excerpts_are_deterministic_and_distinct() {
        let s = small();
        let a = s.excerpt(2).unwrap();
        let b = s.excerpt(2).unwrap();
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.ratings, b.ratings);
        assert_ne!(s.excerpt(0).unwrap().reference, a.reference);
    }

    #[test]
    fn lowpass_passes_dc_and_blocks_high_tones() {
        let fs = 48_000.0;
        let dc = butterworth_lowpass(&vec![1.0; 4000], 3500.0, fs);
        assert!((dc[3999] - 1.0).abs() < 1e-9);
        let tone = |f: f64| -> Vec<f64> { (0..9600).map(|t| (2.0 * PI * f * t as f64 / fs).sin()).collect() };
        let gain = |f: f64| {
            let y = butterworth_lowpass(&tone(f), 3500.0, fs);
            let tail = &y[4800..];
            (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64 * 2.0).sqrt()
        };
        // -3 dB at the cutoff, 4th-order roll-off an octave above
        assert!((gain(3500.0) - 0.5f64.sqrt()).abs() < 0.02);
        assert!(gain(7000.0) < 0.08);
        assert!((gain(500.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn clipped_moments_match_closed_form_mean() {
        let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
        for (mu, a) in [(98.0, 6.0), (35.0, 6.0), (50.0, 20.0), (2.0, 3.0)] {
            let closed = 100.0 - a * (softplus((100.0 - mu) / a) - softplus(-mu / a));
            let (m, sd) = clipped_logistic_moments(mu, a);
            assert!((m - closed).abs() < 1e-9, "{mu} {a}: {m} vs {closed}");
            assert!(sd > 0.0 && sd < PI * a / 3f64.sqrt() + 1e-9);
        }
        // far from the bounds clipping is negligible
        let (m, sd) = clipped_logistic_moments(50.0, 2.0);
        assert!((m - 50.0).abs() < 1e-9);
        assert!((sd - PI * 2.0 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn empirical_panel_mean_within_three_standard_errors() {
        let spec = SyntheticSpec {
            listeners: 200,
            ..small()
        };
        let ex = spec.excerpt(0).unwrap();
        for c in &spec.conditions {
            let scores: Vec<f64> = ex
                .ratings
                .iter()
                .filter(|r| r.condition_id == c.id)
                .map(|r| r.score)
                .collect();
            let (mean, sd) = spec.true_stats(c);
            let m = scores.iter().sum::<f64>() / scores.len() as f64;
            let se = sd / (scores.len() as f64).sqrt();
            assert!((m - mean).abs() <= 3.0 * se, "{}: {m} vs {mean} (se {se})", c.id);
        }
    }

    #[test]
    fn generated_files_match_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_excerpts: 2,
            ..small()
        };
        let m = generate_synthetic(&spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2 * 5);
        assert_eq!(m.n_ratings(), 2 * 5 * 4);
        let ex = spec.excerpt(1).unwrap();
        let e = &m.entries[5 + 2];
        assert_eq!(e.condition_id, "lp7000");
        let loaded = crate::frontend::load_audio(m.resolve(&e.cod_path)).unwrap();
        assert_eq!(loaded, ex.coded[2].1);
        let r = std::fs::read(m.resolve(&e.ref_path)).unwrap();
        let h = std::fs::read(m.resolve(&m.entries[5].cod_path)).unwrap();
        assert_eq!(r, h);
    }
}
