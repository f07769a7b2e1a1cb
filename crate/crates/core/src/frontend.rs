//! Audio front end: stereo excerpts to the 8-plane Gammatone input tensor.
//!
//! Planes are ordered `[ref-L, ref-R, ref-M, ref-S, cod-L, cod-R, cod-M, cod-S]`
//! with `M = (L+R)/2` and `S = (L-R)/2`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 48_000;
pub const N_PLANES: usize = 8;

/// Two-channel 48 kHz excerpt, samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSignal {
    left: Vec<f64>,
    right: Vec<f64>,
    sample_rate: u32,
}

impl StereoSignal {
    pub fn new(left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        Self::with_rate(left, right, SAMPLE_RATE)
    }

    pub fn with_rate(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE}"
            )));
        }
        if left.len() != right.len() {
            return Err(Error::Shape(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        if left.iter().chain(&right).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Self {
            left,
            right,
            sample_rate,
        })
    }

    pub fn silence(n_samples: usize) -> Self {
        Self {
            left: vec![0.0; n_samples],
            right: vec![0.0; n_samples],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn left(&self) -> &[f64] {
        &self.left
    }

    pub fn right(&self) -> &[f64] {
        &self.right
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_samples(&self) -> usize {
        self.left.len()
    }

    /// Largest absolute sample over both channels.
    pub fn peak(&self) -> f64 {
        self.left
            .iter()
            .chain(&self.right)
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Reads a 16- or 24-bit PCM stereo WAV at 48 kHz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<StereoSignal> {
    let path = path.as_ref();
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(unsupported(format!("{} channels, expected 2", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(format!(
            "{} Hz, expected {SAMPLE_RATE}",
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported("floating-point samples".into()));
    }
    let scale = match spec.bits_per_sample {
        16 => 1.0 / 32768.0,
        24 => 1.0 / 8_388_608.0,
        b => return Err(unsupported(format!("{b}-bit samples"))),
    };
    let mut left = Vec::with_capacity(reader.len() as usize / 2);
    let mut right = Vec::with_capacity(reader.len() as usize / 2);
    for (i, s) in reader.into_samples::<i32>().enumerate() {
        let v = s.map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => unsupported(other.to_string()),
        })? as f64
            * scale;
        if i % 2 == 0 {
            left.push(v);
        } else {
            right.push(v);
        }
    }
    if left.len() != right.len() {
        return Err(unsupported("odd number of interleaved samples".into()));
    }
    StereoSignal::new(left, right)
}

/// Writes a 16-bit PCM stereo WAV. Samples are rounded to the nearest code
/// and saturated to the representable range.
pub fn write_wav16(path: impl AsRef<Path>, signal: &StereoSignal) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(map)?;
    for (l, r) in signal.left.iter().zip(&signal.right) {
        w.write_sample(quantize16(*l)).map_err(map)?;
        w.write_sample(quantize16(*r)).map_err(map)?;
    }
    w.finalize().map_err(map)
}

pub fn quantize16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds every sample to the 16-bit grid, i.e. what a write/read cycle
/// through [`write_wav16`] and [`load_audio`] yields.
pub fn quantize_signal16(signal: &StereoSignal) -> StereoSignal {
    let q = |v: &[f64]| v.iter().map(|&x| quantize16(x) as f64 / 32768.0).collect();
    StereoSignal {
        left: q(&signal.left),
        right: q(&signal.right),
        sample_rate: signal.sample_rate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourChannels {
    pub l: Vec<f64>,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl FourChannels {
    pub fn as_array(&self) -> [&[f64]; 4] {
        [&self.l, &self.r, &self.m, &self.s]
    }
}

pub fn derive_channels(s: &StereoSignal) -> FourChannels {
    let m = s.left.iter().zip(&s.right).map(|(l, r)| (l + r) / 2.0).collect();
    let side = s.left.iter().zip(&s.right).map(|(l, r)| (l - r) / 2.0).collect();
    FourChannels {
        l: s.left.clone(),
        r: s.right.clone(),
        m,
        s: side,
    }
}

/// Zero-pads on both sides to `target` samples; an odd remainder goes to the end.
pub fn pad_to_length(s: &StereoSignal, target: usize) -> Result<StereoSignal> {
    let n = s.n_samples();
    if target < n {
        return Err(Error::invalid(format!(
            "pad target {target} is shorter than the signal ({n} samples)"
        )));
    }
    let before = (target - n) / 2;
    let pad = |x: &[f64]| {
        let mut out = vec![0.0; target];
        out[before..before + n].copy_from_slice(x);
        out
    };
    Ok(StereoSignal {
        left: pad(&s.left),
        right: pad(&s.right),
        sample_rate: s.sample_rate,
    })
}

pub fn swap_channels(s: &StereoSignal) -> StereoSignal {
    StereoSignal {
        left: s.right.clone(),
        right: s.left.clone(),
        sample_rate: s.sample_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammatoneConfig {
    pub n_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub filter_order: usize,
    pub frame_hop: usize,
    pub frame_len: usize,
    pub compression_exponent: f64,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            n_bands: 32,
            f_min: 50.0,
            f_max: 20_000.0,
            filter_order: 4,
            frame_hop: 512,
            frame_len: 1024,
            compression_exponent: 0.3,
        }
    }
}

impl GammatoneConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::invalid(format!(
                "need 0 < f_min < f_max <= {nyquist}, got {}..{}",
                self.f_min, self.f_max
            )));
        }
        if self.n_bands < 4 {
            return Err(Error::invalid("n_bands must be at least 4"));
        }
        if self.filter_order == 0 {
            return Err(Error::invalid("filter_order must be positive"));
        }
        if self.frame_hop == 0 || self.frame_hop > self.frame_len {
            return Err(Error::invalid("need 0 < frame_hop <= frame_len"));
        }
        if !(self.compression_exponent > 0.0) {
            return Err(Error::invalid("compression_exponent must be positive"));
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.frame_len {
            return Err(Error::invalid(format!(
                "input of {n_samples} samples is shorter than one frame ({})",
                self.frame_len
            )));
        }
        Ok(1 + (n_samples - self.frame_len) / self.frame_hop)
    }

    /// ERB-rate spaced centre frequencies, ascending from `f_min` to `f_max`.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let lo = erb_rate(self.f_min);
        let hi = erb_rate(self.f_max);
        (0..self.n_bands)
            .map(|b| {
                let e = lo + (hi - lo) * b as f64 / (self.n_bands - 1) as f64;
                erb_rate_inverse(e)
            })
            .collect()
    }
}

/// Equivalent rectangular bandwidth (Glasberg & Moore) in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37e-3 * f + 1.0)
}

pub fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37e-3 * f + 1.0).log10()
}

pub fn erb_rate_inverse(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

/// One band of the filterbank: a cascade of identical complex one-pole
/// sections, normalised to unit gain at the centre frequency.
#[derive(Debug, Clone, Copy)]
struct Band {
    pole_re: f64,
    pole_im: f64,
    gain: f64,
}

impl Band {
    fn new(center: f64, order: usize) -> Self {
        let bw = 1.019 * erb(center);
        let r = (-2.0 * PI * bw / SAMPLE_RATE as f64).exp();
        let w = 2.0 * PI * center / SAMPLE_RATE as f64;
        Self {
            pole_re: r * w.cos(),
            pole_im: r * w.sin(),
            gain: (1.0 - r).powi(order as i32),
        }
    }

    /// Envelope of the band output, averaged per frame.
    fn frame_means(&self, x: &[f64], cfg: &GammatoneConfig, n_frames: usize) -> Vec<f64> {
        let order = cfg.filter_order;
        let mut re = vec![0.0f64; order];
        let mut im = vec![0.0f64; order];
        let mut env = Vec::with_capacity(x.len());
        let (pr, pi) = (self.pole_re, self.pole_im);
        for &s in x {
            let mut xr = s * self.gain;
            let mut xi = 0.0;
            for k in 0..order {
                let yr = xr + (pr * re[k] - pi * im[k]);
                let yi = xi + (pr * im[k] + pi * re[k]);
                re[k] = yr;
                im[k] = yi;
                xr = yr;
                xi = yi;
            }
            env.push((xr * xr + xi * xi).sqrt());
        }
        (0..n_frames)
            .map(|t| {
                let start = t * cfg.frame_hop;
                env[start..start + cfg.frame_len].iter().sum::<f64>() / cfg.frame_len as f64
            })
            .collect()
    }
}

/// Row-major `n_bands x n_frames` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_bands: usize,
    pub n_frames: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * self.n_frames + frame]
    }
}

/// Frame-averaged band envelopes before compression.
pub fn gammatone_envelopes(x: &[f64], cfg: &GammatoneConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let n_frames = cfg.n_frames(x.len())?;
    let mut data = Vec::with_capacity(cfg.n_bands * n_frames);
    for fc in cfg.center_frequencies() {
        data.extend(Band::new(fc, cfg.filter_order).frame_means(x, cfg, n_frames));
    }
    Ok(Spectrogram {
        n_bands: cfg.n_bands,
        n_frames,
        data,
    })
}

/// Power-law compressed Gammatone spectrogram; compression follows frame averaging.
pub fn gammatone_spectrogram(x: &[f64], cfg: &GammatoneConfig) -> Result<Spectrogram> {
    let mut spec = gammatone_envelopes(x, cfg)?;
    for v in &mut spec.data {
        *v = v.powf(cfg.compression_exponent);
    }
    Ok(spec)
}

/// Eight stacked spectrogram planes for one reference/coded pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub excerpt_id: String,
    pub n_bands: usize,
    pub n_frames: usize,
    /// `[plane][band][frame]`, flattened.
    pub planes: Vec<f64>,
}

impl ModelInput {
    pub fn new(
        excerpt_id: impl Into<String>,
        n_bands: usize,
        n_frames: usize,
        planes: Vec<f64>,
    ) -> Result<Self> {
        if planes.len() != N_PLANES * n_bands * n_frames {
            return Err(Error::Shape(format!(
                "expected {} values for 8x{n_bands}x{n_frames}, got {}",
                N_PLANES * n_bands * n_frames,
                planes.len()
            )));
        }
        Ok(Self {
            excerpt_id: excerpt_id.into(),
            n_bands,
            n_frames,
            planes,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.n_bands * self.n_frames
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        let n = self.plane_len();
        &self.planes[i * n..(i + 1) * n]
    }

    pub fn same_shape(&self, other: &ModelInput) -> bool {
        self.n_bands == other.n_bands && self.n_frames == other.n_frames
    }

    /// Applies a plane permutation: output plane `i` is input plane `order[i]`.
    pub fn permute_planes(&self, order: [usize; N_PLANES]) -> ModelInput {
        let mut planes = Vec::with_capacity(self.planes.len());
        for &src in &order {
            planes.extend_from_slice(self.plane(src));
        }
        ModelInput {
            excerpt_id: self.excerpt_id.clone(),
            n_bands: self.n_bands,
            n_frames: self.n_frames,
            planes,
        }
    }

    /// The input that [`build_input`] would produce from channel-swapped audio.
    pub fn channel_swapped(&self) -> ModelInput {
        self.permute_planes(SWAP_ORDER)
    }
}

/// Plane permutation equivalent to swapping L and R in both signals.
pub const SWAP_ORDER: [usize; N_PLANES] = [1, 0, 2, 3, 5, 4, 6, 7];

/// The four compressed spectrogram planes (L, R, M, S) of one signal.
pub fn channel_planes(s: &StereoSignal, cfg: &GammatoneConfig) -> Result<Vec<Spectrogram>> {
    derive_channels(s)
        .as_array()
        .iter()
        .map(|c| gammatone_spectrogram(c, cfg))
        .collect()
}

pub fn build_input(
    excerpt_id: &str,
    reference: &StereoSignal,
    coded: &StereoSignal,
    cfg: &GammatoneConfig,
) -> Result<ModelInput> {
    if reference.n_samples() != coded.n_samples() {
        return Err(Error::Shape(format!(
            "reference has {} samples, coded has {}",
            reference.n_samples(),
            coded.n_samples()
        )));
    }
    let ref_planes = channel_planes(reference, cfg)?;
    let cod_planes = channel_planes(coded, cfg)?;
    assemble_input(excerpt_id, &ref_planes, &cod_planes)
}

/// Stacks precomputed reference and coded planes into a [`ModelInput`].
pub fn assemble_input(
    excerpt_id: &str,
    ref_planes: &[Spectrogram],
    cod_planes: &[Spectrogram],
) -> Result<ModelInput> {
    if ref_planes.len() != 4 || cod_planes.len() != 4 {
        return Err(Error::Shape("need four planes per signal".into()));
    }
    let (nb, nf) = (ref_planes[0].n_bands, ref_planes[0].n_frames);
    let mut planes = Vec::with_capacity(N_PLANES * nb * nf);
    for p in ref_planes.iter().chain(cod_planes) {
        if p.n_bands != nb || p.n_frames != nf {
            return Err(Error::Shape("planes differ in shape".into()));
        }
        planes.extend_from_slice(&p.data);
    }
    ModelInput::new(excerpt_id, nb, nf, planes)
}

pub const CACHE_MAGIC: &[u8; 8] = b"GMLSPEC1";

/// Serialises an input in the spectrogram cache layout (little-endian f32 planes).
pub fn encode_cache(input: &ModelInput) -> Vec<u8> {
    let id = input.excerpt_id.as_bytes();
    let mut out = Vec::with_capacity(24 + id.len() + input.planes.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(input.n_bands as u32).to_le_bytes());
    out.extend_from_slice(&(input.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(N_PLANES as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for &v in &input.planes {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cache(bytes: &[u8], path: &Path) -> Result<ModelInput> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != CACHE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut word = || -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| corrupt("truncated header"))?;
        Ok(u32::from_le_bytes(b))
    };
    let n_bands = word()? as usize;
    let n_frames = word()? as usize;
    let n_planes = word()? as usize;
    let id_len = word()? as usize;
    if n_planes != N_PLANES {
        return Err(corrupt("plane count is not 8"));
    }
    let body = &bytes[24..];
    if body.len() < id_len {
        return Err(corrupt("truncated id"));
    }
    let id = std::str::from_utf8(&body[..id_len]).map_err(|_| corrupt("id is not UTF-8"))?;
    let data = &body[id_len..];
    let n = N_PLANES * n_bands * n_frames;
    if data.len() != n * 4 {
        return Err(corrupt("plane data length mismatch"));
    }
    let planes = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ModelInput::new(id, n_bands, n_frames, planes)
}

pub fn write_cache(path: impl AsRef<Path>, input: &ModelInput) -> Result<()> {
    crate::harness::write_atomic(path.as_ref(), &encode_cache(input))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<ModelInput> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes, path)
}
