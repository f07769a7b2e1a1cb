//! Convolutional backbone with a two-output distribution head.
//!
//! Every layer caches what it needs on the forward pass and exposes a
//! vector-Jacobian product, so `accumulate_grad` is reverse-mode
//! differentiation of the whole network at layer granularity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::norm::NormStats;
use crate::error::{Error, Result};
use crate::frontend::{ModelInput, N_PLANES};
use crate::prob::{clamp_log_scale, Family, ScoreDistribution, LOG_SCALE_MAX, LOG_SCALE_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_planes: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pool: (usize, usize),
}

impl ConvBlock {
    pub fn new(out_planes: usize) -> Self {
        Self {
            out_planes,
            kernel: (3, 3),
            stride: 1,
            pool: (2, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub conv_blocks: Vec<ConvBlock>,
    pub head_hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            conv_blocks: [16, 32, 64, 64].into_iter().map(ConvBlock::new).collect(),
            head_hidden: 64,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

/// Number of head outputs: location and log-scale.
pub const HEAD_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Offsets of each layer's weights and biases in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub weight: Span,
    pub bias: Span,
    pub fan_in: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::invalid("backbone needs at least one conv block"));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            let (kh, kw) = b.kernel;
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::invalid(format!("block {i}: kernel dims must be odd")));
            }
            if b.out_planes == 0 || b.stride == 0 || b.pool.0 == 0 || b.pool.1 == 0 {
                return Err(Error::invalid(format!(
                    "block {i}: planes, stride and pool must be positive"
                )));
            }
        }
        if self.head_hidden == 0 {
            return Err(Error::invalid("head_hidden must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerSpan> {
        let mut spans = Vec::new();
        let mut offset = 0;
        let mut push = |w_len: usize, b_len: usize, fan_in: usize| {
            let weight = Span { offset, len: w_len };
            offset += w_len;
            let bias = Span { offset, len: b_len };
            offset += b_len;
            spans.push(LayerSpan {
                weight,
                bias,
                fan_in,
            });
        };
        let mut c_in = N_PLANES;
        for b in &self.conv_blocks {
            let fan_in = c_in * b.kernel.0 * b.kernel.1;
            push(b.out_planes * fan_in, b.out_planes, fan_in);
            c_in = b.out_planes;
        }
        push(self.head_hidden * c_in, self.head_hidden, c_in);
        push(HEAD_OUTPUTS * self.head_hidden, HEAD_OUTPUTS, self.head_hidden);
        spans
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .last()
            .map(|s| s.bias.offset + s.bias.len)
            .unwrap_or(0)
    }

    /// Spatial size after every block, or an error if a block would pool
    /// a dimension down to nothing.
    pub fn block_shapes(&self, n_bands: usize, n_frames: usize) -> Result<Vec<BlockShape>> {
        let mut shapes = Vec::with_capacity(self.conv_blocks.len());
        let (mut h, mut w, mut c) = (n_bands, n_frames, N_PLANES);
        for (i, b) in self.conv_blocks.iter().enumerate() {
            let ch = (h - 1) / b.stride + 1;
            let cw = (w - 1) / b.stride + 1;
            let ph = ch / b.pool.0;
            let pw = cw / b.pool.1;
            if ph == 0 || pw == 0 {
                return Err(Error::Shape(format!(
                    "input {n_bands}x{n_frames} is too small: block {i} pools {ch}x{cw} to nothing"
                )));
            }
            shapes.push(BlockShape {
                c_in: c,
                h_in: h,
                w_in: w,
                c_out: b.out_planes,
                h_conv: ch,
                w_conv: cw,
                h_out: ph,
                w_out: pw,
            });
            h = ph;
            w = pw;
            c = b.out_planes;
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_conv: usize,
    pub w_conv: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn view<'a>(&'a self, span: &Span) -> &'a [f64] {
        &self.values[span.range()]
    }
}

/// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// for weights and biases alike.
pub fn init_params(cfg: &BackboneConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::with_capacity(cfg.param_count());
    for span in cfg.layout() {
        let bound = 1.0 / (span.fan_in as f64).sqrt();
        for _ in 0..span.weight.len + span.bias.len {
            values.push(rng.random_range(-bound..bound));
        }
    }
    Ok(ModelParams {
        values,
        seed: cfg.seed,
    })
}

/// A trained or freshly initialised network with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: BackboneConfig,
    pub params: ModelParams,
    pub norm: NormStats,
    pub family: Family,
}

struct BlockTrace {
    input: Vec<f64>,
    activ: Vec<f64>,
    argmax: Vec<usize>,
}

struct Trace {
    blocks: Vec<BlockTrace>,
    shapes: Vec<BlockShape>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    raw_log_scale: f64,
}

impl Model {
    pub fn new(config: BackboneConfig, norm: NormStats, family: Family) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self {
            config,
            params,
            norm,
            family,
        })
    }

    pub fn forward(&self, input: &ModelInput) -> Result<ScoreDistribution> {
        let (mu, ls, _) = self.run(input)?;
        Ok(ScoreDistribution {
            family: self.family,
            mu,
            log_scale: clamp_log_scale(ls),
        })
    }

    pub fn forward_batch(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreDistribution>> {
        inputs.iter().map(|x| self.forward(x)).collect()
    }

    /// Summed NLL of `scores` under the prediction for `input`.
    pub fn loss(&self, input: &ModelInput, scores: &[f64]) -> Result<f64> {
        let d = self.forward(input)?;
        Ok(scores.iter().map(|&s| d.nll(s)).sum())
    }

    /// Gradient of the NLL of a single listener score.
    pub fn backward(&self, input: &ModelInput, score: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_grad(input, &[score], 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `weight` times the gradient of the summed NLL over `scores` to
    /// `grad` and returns the (unweighted) summed loss.
    pub fn accumulate_grad(
        &self,
        input: &ModelInput,
        scores: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        let (mu, raw_ls, trace) = self.run(input)?;
        let ls = clamp_log_scale(raw_ls);
        let (mut loss, mut d_mu, mut d_ls) = (0.0, 0.0, 0.0);
        for &s in scores {
            let (l, gm, gl) = self.family.nll_with_grad(s, mu, ls);
            loss += l;
            d_mu += gm;
            d_ls += gl;
        }
        if !(LOG_SCALE_MIN..=LOG_SCALE_MAX).contains(&trace.raw_log_scale) {
            d_ls = 0.0;
        }
        let d_out = [weight * d_mu * self.norm.score_std, weight * d_ls];
        self.backprop(trace, d_out, grad);
        Ok(loss)
    }

    fn run(&self, input: &ModelInput) -> Result<(f64, f64, Trace)> {
        let shapes = self.config.block_shapes(input.n_bands, input.n_frames)?;
        if input.planes.len() != N_PLANES * input.plane_len() {
            return Err(Error::Shape("input does not hold 8 planes".into()));
        }
        if self.params.len() != self.config.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, config needs {}",
                self.params.len(),
                self.config.param_count()
            )));
        }
        let layout = self.config.layout();
        let p = &self.params;
        let mut x = self.norm.apply(input);
        let mut blocks = Vec::with_capacity(shapes.len());
        for ((block, shape), span) in self.config.conv_blocks.iter().zip(&shapes).zip(&layout) {
            let mut activ = conv_forward(&x, shape, block, p.view(&span.weight), p.view(&span.bias));
            for v in &mut activ {
                *v = v.max(0.0);
            }
            let (pooled, argmax) = max_pool(&activ, shape, block.pool);
            blocks.push(BlockTrace {
                input: std::mem::replace(&mut x, pooled),
                activ,
                argmax,
            });
        }
        let last = shapes.last().expect("validated non-empty");
        let area = (last.h_out * last.w_out) as f64;
        let pooled: Vec<f64> = x
            .chunks_exact(last.h_out * last.w_out)
            .map(|c| c.iter().sum::<f64>() / area)
            .collect();

        let n = layout.len();
        let mut hidden = dense(&pooled, p.view(&layout[n - 2].weight), p.view(&layout[n - 2].bias));
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        let out = dense(&hidden, p.view(&layout[n - 1].weight), p.view(&layout[n - 1].bias));
        let mu = self.norm.score_mean + self.norm.score_std * out[0];
        let raw_ls = self.norm.score_std.ln() + out[1];
        if !mu.is_finite() || !raw_ls.is_finite() {
            return Err(Error::NonFinite("network output is not finite".into()));
        }
        Ok((
            mu,
            raw_ls,
            Trace {
                blocks,
                shapes,
                pooled,
                hidden,
                raw_log_scale: raw_ls,
            },
        ))
    }

    fn backprop(&self, trace: Trace, d_out: [f64; 2], grad: &mut [f64]) {
        let layout = self.config.layout();
        let p = &self.params.values;
        let n = layout.len();

        let out_l = &layout[n - 1];
        let d_hidden = dense_backward(&trace.hidden, &d_out, &p[out_l.weight.range()], grad, out_l);
        let d_hidden: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.hidden)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        let hid_l = &layout[n - 2];
        let d_pooled = dense_backward(&trace.pooled, &d_hidden, &p[hid_l.weight.range()], grad, hid_l);

        let last = trace.shapes.last().expect("non-empty");
        let area = last.h_out * last.w_out;
        let mut d_x: Vec<f64> = d_pooled
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / area as f64, area))
            .collect();

        for (i, bt) in trace.blocks.iter().enumerate().rev() {
            let shape = &trace.shapes[i];
            let block = &self.config.conv_blocks[i];
            let span = &layout[i];
            let mut d_activ = vec![0.0; bt.activ.len()];
            for (g, &idx) in d_x.iter().zip(&bt.argmax) {
                d_activ[idx] += g;
            }
            for (g, a) in d_activ.iter_mut().zip(&bt.activ) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            d_x = conv_backward(&bt.input, &d_activ, shape, block, &p[span.weight.range()], grad, span, i > 0);
        }
    }
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(w.chunks_exact(x.len()))
        .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Accumulates weight/bias gradients and returns the gradient w.r.t. `x`.
fn dense_backward(x: &[f64], d_y: &[f64], w: &[f64], grad: &mut [f64], span: &LayerSpan) -> Vec<f64> {
    let n_in = x.len();
    let mut d_x = vec![0.0; n_in];
    for (o, &g) in d_y.iter().enumerate() {
        grad[span.bias.offset + o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let g_row = &mut grad[span.weight.offset + o * n_in..span.weight.offset + (o + 1) * n_in];
        for j in 0..n_in {
            g_row[j] += g * x[j];
            d_x[j] += g * row[j];
        }
    }
    d_x
}

/// Output columns `x` whose source column `x * stride + kx - pad` lies in `[0, w)`.
fn valid_range(w_in: usize, w_out: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if w_in + pad > k {
        ((w_in - 1 + pad - k) / stride + 1).min(w_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds `x` into a `(c_in * kh * kw) x out_area` matrix whose rows follow
/// the weight layout, zero where the kernel hangs over the padding.
fn im2col(x: &[f64], s: &BlockShape, b: &ConvBlock) -> Vec<f64> {
    let (kh, kw) = b.kernel;
    let (ph, pw) = (kh / 2, kw / 2);
    let st = b.stride;
    let in_area = s.h_in * s.w_in;
    let out_area = s.h_conv * s.w_conv;
    let mut col = vec![0.0; s.c_in * kh * kw * out_area];
    for c in 0..s.c_in {
        let src = &x[c * in_area..(c + 1) * in_area];
        for ky in 0..kh {
            let (y_lo, y_hi) = valid_range(s.h_in, s.h_conv, st, ky, ph);
            for kx in 0..kw {
                let (x_lo, x_hi) = valid_range(s.w_in, s.w_conv, st, kx, pw);
                let k = (c * kh + ky) * kw + kx;
                let row = &mut col[k * out_area..(k + 1) * out_area];
                for y in y_lo..y_hi {
                    let iy = y * st + ky - ph;
                    let row_in = &src[iy * s.w_in..(iy + 1) * s.w_in];
                    for xx in x_lo..x_hi {
                        row[y * s.w_conv + xx] = row_in[xx * st + kx - pw];
                    }
                }
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`]: accumulates column gradients back onto the input.
fn col2im(d_col: &[f64], s: &BlockShape, b: &ConvBlock) -> Vec<f64> {
    let (kh, kw) = b.kernel;
    let (ph, pw) = (kh / 2, kw / 2);
    let st = b.stride;
    let in_area = s.h_in * s.w_in;
    let out_area = s.h_conv * s.w_conv;
    let mut d_x = vec![0.0; s.c_in * in_area];
    for c in 0..s.c_in {
        let dst = &mut d_x[c * in_area..(c + 1) * in_area];
        for ky in 0..kh {
            let (y_lo, y_hi) = valid_range(s.h_in, s.h_conv, st, ky, ph);
            for kx in 0..kw {
                let (x_lo, x_hi) = valid_range(s.w_in, s.w_conv, st, kx, pw);
                let k = (c * kh + ky) * kw + kx;
                let row = &d_col[k * out_area..(k + 1) * out_area];
                for y in y_lo..y_hi {
                    let iy = y * st + ky - ph;
                    let row_out = &mut dst[iy * s.w_in..(iy + 1) * s.w_in];
                    for xx in x_lo..x_hi {
                        row_out[xx * st + kx - pw] += row[y * s.w_conv + xx];
                    }
                }
            }
        }
    }
    d_x
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with four fixed accumulators (vectorizes, order is fixed).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn conv_forward(x: &[f64], s: &BlockShape, b: &ConvBlock, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let col = im2col(x, s, b);
    let out_area = s.h_conv * s.w_conv;
    let n_k = s.c_in * b.kernel.0 * b.kernel.1;
    let mut out = vec![0.0; s.c_out * out_area];
    for (o, plane) in out.chunks_exact_mut(out_area).enumerate() {
        plane.fill(bias[o]);
        for (k, row) in col.chunks_exact(out_area).enumerate() {
            axpy(plane, w[o * n_k + k], row);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    d_out: &[f64],
    s: &BlockShape,
    b: &ConvBlock,
    w: &[f64],
    grad: &mut [f64],
    span: &LayerSpan,
    need_input_grad: bool,
) -> Vec<f64> {
    let col = im2col(x, s, b);
    let out_area = s.h_conv * s.w_conv;
    let n_k = s.c_in * b.kernel.0 * b.kernel.1;
    let mut d_col = if need_input_grad {
        vec![0.0; col.len()]
    } else {
        Vec::new()
    };
    for (o, g_plane) in d_out.chunks_exact(out_area).enumerate() {
        grad[span.bias.offset + o] += g_plane.iter().sum::<f64>();
        let g_w = &mut grad[span.weight.offset + o * n_k..span.weight.offset + (o + 1) * n_k];
        for (k, row) in col.chunks_exact(out_area).enumerate() {
            g_w[k] += dot(g_plane, row);
        }
        if need_input_grad {
            for (k, d_row) in d_col.chunks_exact_mut(out_area).enumerate() {
                axpy(d_row, w[o * n_k + k], g_plane);
            }
        }
    }
    if need_input_grad {
        col2im(&d_col, s, b)
    } else {
        Vec::new()
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped. Returns the pooled planes and the flat index of each
/// winning input cell (first maximum on ties).
fn max_pool(x: &[f64], s: &BlockShape, pool: (usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (py, px) = pool;
    let in_area = s.h_conv * s.w_conv;
    let mut out = Vec::with_capacity(s.c_out * s.h_out * s.w_out);
    let mut idx = Vec::with_capacity(out.capacity());
    for c in 0..s.c_out {
        for y in 0..s.h_out {
            for xx in 0..s.w_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..py {
                    for dx in 0..px {
                        let i = c * in_area + (y * py + dy) * s.w_conv + xx * px + dx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                idx.push(best_i);
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> BackboneConfig {
        BackboneConfig {
            conv_blocks: vec![
                ConvBlock {
                    out_planes: 4,
                    kernel: (3, 3),
                    stride: 1,
                    pool: (2, 2),
                },
                ConvBlock {
                    out_planes: 6,
                    kernel: (3, 1),
                    stride: 2,
                    pool: (1, 1),
                },
            ],
            head_hidden: 5,
            activation: Activation::Relu,
            seed,
        }
    }

    fn input(seed: u64, nb: usize, nf: usize) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..8 * nb * nf).map(|_| rng.random_range(0.0..2.0)).collect();
        ModelInput::new("t", nb, nf, planes).unwrap()
    }

    #[test]
    fn default_parameter_count_is_closed_form() {
        let cfg = BackboneConfig::default();
        let conv = |ci: usize, co: usize| co * ci * 9 + co;
        let expected =
            conv(8, 16) + conv(16, 32) + conv(32, 64) + conv(64, 64) + (64 * 64 + 64) + (2 * 64 + 2);
        assert_eq!(expected, 65_522);
        assert_eq!(cfg.param_count(), expected);
        assert_eq!(init_params(&cfg).unwrap().len(), expected);
    }

    #[test]
    fn init_is_deterministic_and_centered() {
        let cfg = BackboneConfig::default();
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a, b);
        for span in cfg.layout() {
            let w = a.view(&span.weight);
            let bound = 1.0 / (span.fan_in as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            // U(-b, b) has variance b^2 / 3
            let se = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = BackboneConfig::default();
        cfg.conv_blocks[0].kernel = (2, 3);
        assert!(init_params(&cfg).is_err());
        let cfg = BackboneConfig {
            conv_blocks: vec![],
            ..BackboneConfig::default()
        };
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let model = Model::new(tiny_config(1), NormStats::identity(), Family::Logistic).unwrap();
        let inputs: Vec<_> = (0..4).map(|i| input(i, 9, 7)).collect();
        let batch = model.forward_batch(&inputs).unwrap();
        for (x, d) in inputs.iter().zip(&batch) {
            let again = model.forward(x).unwrap();
            assert_eq!(again, *d);
            assert!(d.mu.is_finite() && d.log_scale.is_finite());
        }
    }

    #[test]
    fn too_small_input_is_a_shape_error() {
        let model = Model::new(BackboneConfig::default(), NormStats::identity(), Family::Logistic).unwrap();
        assert!(matches!(model.forward(&input(0, 8, 8)), Err(Error::Shape(_))));
    }

    #[test]
    fn head_gradient_matches_closed_form() {
        // The bias of the mu output receives dL/dmu * score_std.
        let mut norm = NormStats::identity();
        norm.score_mean = 50.0;
        norm.score_std = 20.0;
        for family in [Family::Gaussian, Family::Logistic] {
            let model = Model::new(tiny_config(2), norm.clone(), family).unwrap();
            let x = input(5, 9, 7);
            let d = model.forward(&x).unwrap();
            let s = 63.0;
            let grad = model.backward(&x, s).unwrap();
            let mu_bias = model.config.layout().last().unwrap().bias.offset;
            let a = d.scale();
            let expected = match family {
                Family::Gaussian => -(s - d.mu) / (a * a),
                Family::Logistic => -((s - d.mu) / (2.0 * a)).tanh() / a,
            };
            assert!((grad[mu_bias] - expected * 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_gaussian_is_stationary_in_mu() {
        let model = Model::new(tiny_config(3), NormStats::identity(), Family::Gaussian).unwrap();
        let x = input(6, 9, 7);
        let d = model.forward(&x).unwrap();
        let grad = model.backward(&x, d.mu).unwrap();
        let mu_bias = model.config.layout().last().unwrap().bias.offset;
        assert_eq!(grad[mu_bias], 0.0);
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for w_in in 1..9 {
            for stride in 1..4 {
                let w_out = (w_in - 1) / stride + 1;
                for k in 0..5 {
                    for pad in 0..3 {
                        let (lo, hi) = valid_range(w_in, w_out, stride, k, pad);
                        for x in 0..w_out {
                            let src = (x * stride + k) as isize - pad as isize;
                            let ok = src >= 0 && (src as usize) < w_in;
                            assert_eq!(ok, x >= lo && x < hi, "w_in={w_in} s={stride} k={k} pad={pad} x={x}");
                        }
                    }
                }
            }
        }
    }
}
