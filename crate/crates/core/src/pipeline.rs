//! Encode, normalize, mask and decode stages of the masking pipeline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::Filterbank;

/// Relative singular-value cutoff for the pseudo-inverse decoder.
pub const PINV_RCOND: f64 = 1e-10;

/// Default hop for framed (overlap-add) decoding, about half of L = 251.
pub const DEFAULT_HOP: usize = 125;

/// Encoder output: N channels by T' frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    channels: usize,
    frames: usize,
    hop: usize,
    kernel_len: usize,
    source_len: usize,
    data: Vec<f64>,
}

/// Number of valid frames for a signal of `source_len` samples.
pub fn frame_count(source_len: usize, kernel_len: usize, hop: usize) -> usize {
    (source_len - kernel_len) / hop + 1
}

impl FrameMatrix {
    pub fn zeros(channels: usize, source_len: usize, kernel_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(invalid("hop must be >= 1"));
        }
        if source_len < kernel_len {
            return Err(invalid(format!("signal of {source_len} samples is shorter than the kernel ({kernel_len})")));
        }
        let frames = frame_count(source_len, kernel_len, hop);
        Ok(Self { channels, frames, hop, kernel_len, source_len, data: vec![0.0; channels * frames] })
    }

    /// Same metadata, new contents.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!("expected {} values, got {}", self.data.len(), data.len())));
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.frames..(i + 1) * self.frames]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let f = self.frames;
        &mut self.data[i * f..(i + 1) * f]
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.frames + t]
    }

    fn same_shape(&self, other_channels: usize, other_frames: usize) -> bool {
        self.channels == other_channels && self.frames == other_frames
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &FrameMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Multiplicative mask with entries in `[0, 1]`, shaped like a [`FrameMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * frames {
            return Err(Error::ShapeMismatch(format!(
                "mask {channels}x{frames} needs {} values, got {}",
                channels * frames,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask entries must lie in [0, 1]"));
        }
        Ok(Self { channels, frames, data })
    }

    pub fn filled(channels: usize, frames: usize, value: f64) -> Result<Self> {
        Self::new(channels, frames, vec![value; channels * frames])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.frames + t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderVariant {
    Transposed,
    #[serde(alias = "linear-combination")]
    LinearCombination,
    #[serde(alias = "pseudo-inverse")]
    PseudoInverse,
}

impl std::str::FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transposed" => Ok(Self::Transposed),
            "linear-combination" | "linear_combination" | "lc" => Ok(Self::LinearCombination),
            "pseudo-inverse" | "pseudo_inverse" | "pinv" => Ok(Self::PseudoInverse),
            other => Err(invalid(format!(
                "unknown decoder `{other}` (expected transposed|linear-combination|pseudo-inverse)"
            ))),
        }
    }
}

impl std::fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Transposed => "transposed",
            Self::LinearCombination => "linear-combination",
            Self::PseudoInverse => "pseudo-inverse",
        })
    }
}

/// Decoder parameters; only the active variant's fields exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DecoderSpec {
    /// Learnable synthesis filters (N x L) scattered by overlap-add.
    Transposed { synth_taps: Vec<Vec<f64>> },
    /// Channel weights `softmax(gamma)`.
    LinearCombination { gamma: Vec<f64> },
    /// Frame-wise Moore-Penrose inverse of the encoder taps; nothing trainable.
    PseudoInverse,
}

impl DecoderSpec {
    pub fn variant(&self) -> DecoderVariant {
        match self {
            Self::Transposed { .. } => DecoderVariant::Transposed,
            Self::LinearCombination { .. } => DecoderVariant::LinearCombination,
            Self::PseudoInverse => DecoderVariant::PseudoInverse,
        }
    }

    /// Default parameters for `variant`: uniform channel weights, or synthesis
    /// filters copied from the encoder's unit-gain taps.
    pub fn initial(variant: DecoderVariant, bank: &Filterbank) -> Self {
        match variant {
            DecoderVariant::Transposed => {
                Self::Transposed { synth_taps: (0..bank.len()).map(|i| bank.unit_taps(i)).collect() }
            }
            DecoderVariant::LinearCombination => Self::LinearCombination { gamma: vec![0.0; bank.len()] },
            DecoderVariant::PseudoInverse => Self::PseudoInverse,
        }
    }

    pub fn trainable_count(&self) -> usize {
        match self {
            Self::Transposed { synth_taps } => synth_taps.iter().map(Vec::len).sum(),
            Self::LinearCombination { gamma } => gamma.len(),
            Self::PseudoInverse => 0,
        }
    }
}

/// Dot product with a fixed accumulation order (four interleaved partial sums).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Valid convolution of `x` with each row of `taps`, sampled every `hop` samples:
/// `out[i][t] = sum_l x[t*hop + L-1-l] * taps[i][l]`.
pub fn encode_with_taps(x: &[f64], taps: &[Vec<f64>], hop: usize) -> Result<FrameMatrix> {
    let kernel_len = taps.first().map(Vec::len).ok_or_else(|| invalid("encoder needs at least one filter"))?;
    if taps.iter().any(|t| t.len() != kernel_len) {
        return Err(Error::ShapeMismatch("encoder filters differ in length".into()));
    }
    let mut fm = FrameMatrix::zeros(taps.len(), x.len(), kernel_len, hop)?;
    let frames = fm.frames;
    for (i, h) in taps.iter().enumerate() {
        let rev: Vec<f64> = h.iter().rev().copied().collect();
        let row = fm.row_mut(i);
        for (t, out) in row.iter_mut().enumerate().take(frames) {
            let start = t * hop;
            *out = dot(&x[start..start + kernel_len], &rev);
        }
    }
    Ok(fm)
}

/// Run the filterbank over `x` (band gains included).
pub fn encode(x: &[f64], fb: &Filterbank, hop: usize) -> Result<FrameMatrix> {
    encode_with_taps(x, &fb.taps(), hop)
}

/// Per-channel statistics captured by [`layer_normalize_with_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

/// Normalize each channel to zero mean and unit (population) variance over time:
/// `(x - mu) / (sigma + eps)`.
pub fn layer_normalize(fm: &FrameMatrix, eps: f64) -> Result<FrameMatrix> {
    layer_normalize_with_stats(fm, eps).map(|(out, _)| out)
}

pub fn layer_normalize_with_stats(fm: &FrameMatrix, eps: f64) -> Result<(FrameMatrix, NormStats)> {
    if fm.frames < 2 {
        return Err(invalid(format!("layer normalization needs >= 2 frames, got {}", fm.frames)));
    }
    let mut out = fm.clone();
    let mut stats = NormStats { mean: Vec::with_capacity(fm.channels), std: Vec::with_capacity(fm.channels), eps };
    let n = fm.frames as f64;
    for i in 0..fm.channels {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let denom = std + eps;
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok((out, stats))
}

/// Multiply channel `i` by `gains[i]`.
pub fn scale_channels(fm: &FrameMatrix, gains: &[f64]) -> Result<FrameMatrix> {
    if gains.len() != fm.channels {
        return Err(Error::ShapeMismatch(format!("{} gains for {} channels", gains.len(), fm.channels)));
    }
    let mut out = fm.clone();
    for (i, &g) in gains.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

/// Element-wise product of features and mask.
pub fn apply_mask(fm: &FrameMatrix, m: &Mask) -> Result<FrameMatrix> {
    if !fm.same_shape(m.channels, m.frames) {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} vs mask {}x{}",
            fm.channels, fm.frames, m.channels, m.frames
        )));
    }
    let mut out = fm.clone();
    out.data.iter_mut().zip(&m.data).for_each(|(v, w)| *v *= w);
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Time-invariant per-band mask `sigmoid(theta_i)`.
pub fn estimate_mask(fm: &FrameMatrix, theta: &[f64]) -> Result<Mask> {
    if theta.len() != fm.channels {
        return Err(Error::ShapeMismatch(format!("{} mask logits for {} channels", theta.len(), fm.channels)));
    }
    let mut data = Vec::with_capacity(fm.channels * fm.frames);
    for &th in theta {
        let m = sigmoid(th);
        data.extend(std::iter::repeat_n(m, fm.frames));
    }
    Mask::new(fm.channels, fm.frames, data)
}

/// Overlap-add synthesis: frame `t` adds `sum_i fm[i,t] * synth[i,..]` at offset `t*hop`.
pub fn decode_transposed(fm: &FrameMatrix, synth_taps: &[Vec<f64>]) -> Result<Vec<f64>> {
    if synth_taps.len() != fm.channels || synth_taps.iter().any(|r| r.len() != fm.kernel_len) {
        return Err(Error::ShapeMismatch(format!("synthesis filters must be {}x{}", fm.channels, fm.kernel_len)));
    }
    let len = fm.kernel_len;
    // frames never extend past source_len by construction
    let mut out = vec![0.0; fm.source_len];
    for (i, synth) in synth_taps.iter().enumerate() {
        for (t, &v) in fm.row(i).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let seg = &mut out[t * fm.hop..t * fm.hop + len];
            seg.iter_mut().zip(synth).for_each(|(o, s)| *o += v * s);
        }
    }
    Ok(out)
}

pub fn softmax(gamma: &[f64]) -> Vec<f64> {
    let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = gamma.iter().map(|g| (g - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `x[t + M] = sum_i softmax(gamma)_i * fm[i,t]`, zero outside the valid region.
///
/// Only defined for dense (`hop == 1`) features. Frame `t` is centered on input
/// sample `t + M`, so the shift cancels the filters' group delay.
pub fn decode_linear_combination(fm: &FrameMatrix, gamma: &[f64]) -> Result<Vec<f64>> {
    if fm.hop != 1 {
        return Err(Error::Unsupported(format!(
            "linear-combination decoder requires hop 1, features have hop {}",
            fm.hop
        )));
    }
    if gamma.len() != fm.channels {
        return Err(Error::ShapeMismatch(format!("{} weights for {} channels", gamma.len(), fm.channels)));
    }
    let weights = softmax(gamma);
    let m = fm.kernel_len / 2;
    let mut out = vec![0.0; fm.source_len];
    let dst = &mut out[m..m + fm.frames];
    for (i, w) in weights.iter().enumerate() {
        dst.iter_mut().zip(fm.row(i)).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// Moore-Penrose pseudo-inverse of the N x L analysis operator.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    /// L x N.
    pinv: DMatrix<f64>,
    /// N x L, rows are time-reversed filter taps.
    forward: DMatrix<f64>,
    rank: usize,
}

impl PseudoInverse {
    /// Build from encoder taps; row `i` of the analysis operator is `taps[i]` reversed.
    pub fn from_taps(taps: &[Vec<f64>]) -> Result<Self> {
        let n = taps.len();
        let l = taps.first().map(Vec::len).unwrap_or(0);
        if n == 0 || l == 0 {
            return Err(invalid("empty filterbank"));
        }
        let forward = DMatrix::from_fn(n, l, |i, k| taps[i][l - 1 - k]);
        let pinv = pseudo_inverse(&forward, PINV_RCOND)?;
        let rank = count_rank(&forward, PINV_RCOND);
        Ok(Self { pinv, forward, rank })
    }

    pub fn from_filterbank(fb: &Filterbank) -> Result<Self> {
        Self::from_taps(&fb.taps())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Reconstruct each frame as `F+ fm[.,t]`, overlap-add, divide by frame coverage.
    pub fn decode(&self, fm: &FrameMatrix) -> Result<Vec<f64>> {
        let (l, n) = self.pinv.shape();
        if n != fm.channels || l != fm.kernel_len {
            return Err(Error::ShapeMismatch(format!(
                "pseudo-inverse is {l}x{n}, features are {}x{} with kernel {}",
                fm.channels, fm.frames, fm.kernel_len
            )));
        }
        let mut out = vec![0.0; fm.source_len];
        let mut coverage = vec![0u32; fm.source_len];
        let mut column = vec![0.0; n];
        for t in 0..fm.frames {
            for (i, c) in column.iter_mut().enumerate() {
                *c = fm.get(i, t);
            }
            let start = t * fm.hop;
            for k in 0..l {
                let row_val: f64 = (0..n).map(|i| self.pinv[(k, i)] * column[i]).sum();
                out[start + k] += row_val;
                coverage[start + k] += 1;
            }
        }
        for (o, &c) in out.iter_mut().zip(&coverage) {
            if c > 1 {
                *o /= c as f64;
            }
        }
        Ok(out)
    }

    pub fn coverage(fm: &FrameMatrix) -> Vec<u32> {
        let mut coverage = vec![0u32; fm.source_len];
        for t in 0..fm.frames {
            for c in &mut coverage[t * fm.hop..t * fm.hop + fm.kernel_len] {
                *c += 1;
            }
        }
        coverage
    }
}

fn count_rank(a: &DMatrix<f64>, rcond: f64) -> usize {
    let sv = a.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rcond * max).count()
}

/// SVD pseudo-inverse, dropping singular values below `rcond * sigma_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !max.is_finite() || max <= 0.0 {
        return Err(Error::SingularOperator("filterbank taps are all zero".into()));
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let cutoff = rcond * max;
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        // out += v_j * u_j^T / s
        let v = vt.row(j).transpose();
        let uj = u.column(j);
        out += (v * uj.transpose()) / s;
    }
    Ok(out)
}

/// Frame-wise pseudo-inverse decoding against the bank's assembled taps.
pub fn decode_pinv(fm: &FrameMatrix, fb: &Filterbank) -> Result<Vec<f64>> {
    PseudoInverse::from_filterbank(fb)?.decode(fm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    /// Two raw cutoffs and one band gain per filter.
    pub sinc_encoder: usize,
    /// A free-form Conv1d encoder with the same N and L.
    pub dense_encoder: usize,
    pub decoder: usize,
    /// One logit per band.
    pub mask: usize,
}

impl ParamCounts {
    pub fn reduction(&self) -> f64 {
        1.0 - self.sinc_encoder as f64 / self.dense_encoder as f64
    }
}

pub fn parameter_count(fb: &Filterbank, decoder: DecoderVariant) -> ParamCounts {
    let (n, l) = (fb.len(), fb.kernel_len());
    ParamCounts {
        sinc_encoder: 3 * n,
        dense_encoder: n * l,
        decoder: match decoder {
            DecoderVariant::Transposed => n * l,
            DecoderVariant::LinearCombination => n,
            DecoderVariant::PseudoInverse => 0,
        },
        mask: n,
    }
}
