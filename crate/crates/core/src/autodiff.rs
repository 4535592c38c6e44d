//! Hand-written reverse-mode gradients of the negative SI-SNR loss with
//! respect to every trainable parameter, plus a central-difference checker.
//!
//! Stages, from the loss back to the raw cutoffs:
//! loss -> decoder -> mask -> band gain / layer norm -> convolution -> taps -> cutoff mapping.

use std::f64::consts::{LN_10, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{Filterbank, Mode, NormalizedBand, RawCutoffPair};
use crate::model::{Forward, Model};
use crate::pipeline::{softmax, DecoderSpec, DecoderVariant, PseudoInverse};
use crate::trainer::{si_snr, SI_SNR_EPS};

/// Partial derivatives mirroring the model's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// `(d/d a1_raw, d/d a2_raw)` per filter, in the filterbank's raw units.
    pub d_raw: Vec<[f64; 2]>,
    pub d_beta: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_gamma: Option<Vec<f64>>,
    pub d_synth: Option<Vec<Vec<f64>>>,
}

impl GradientSet {
    /// Flatten in [`Model::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (r, b) in self.d_raw.iter().zip(&self.d_beta) {
            out.extend([r[0], r[1], *b]);
        }
        out.extend_from_slice(&self.d_theta);
        if let Some(g) = &self.d_gamma {
            out.extend_from_slice(g);
        }
        if let Some(s) = &self.d_synth {
            out.extend(s.iter().flatten());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// `(d taps / d a1, d taps / d a2)` of the ideal band-pass taps, i.e.
/// `-cos(a1 pi d)` and `cos(a2 pi d)` with `d = n - M`.
pub fn taps_grad_wrt_cutoff(band: NormalizedBand, len: usize) -> (Vec<f64>, Vec<f64>) {
    let m = len / 2;
    let mut d1 = vec![0.0; len];
    let mut d2 = vec![0.0; len];
    for k in 0..=m {
        let kf = k as f64;
        let g1 = -(band.a1 * PI * kf).cos();
        let g2 = (band.a2 * PI * kf).cos();
        d1[m + k] = g1;
        d1[m - k] = g1;
        d2[m + k] = g2;
        d2[m - k] = g2;
    }
    (d1, d2)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Which raw input feeds the lower and upper edge: `(lower_from_first, upper_from_first)`.
/// Ties go to the first argument for both.
fn routing(raw: RawCutoffPair) -> (bool, bool) {
    let (r1, r2) = (raw.a1_raw.abs(), raw.a2_raw.abs());
    (r1 <= r2, r1 >= r2)
}

/// Pull `(dL/da1, dL/da2)` back through `a = min(sorted |raw|, 1)`.
///
/// Gradient is zero where the clamp is active or touching (`|r| >= 1`) and at `r = 0`.
pub fn clamp_backward(raw: RawCutoffPair, upstream: (f64, f64)) -> (f64, f64) {
    route(raw, upstream, true)
}

/// Same routing without the clamp, for the original parametrization.
pub fn unclamped_backward(raw: RawCutoffPair, upstream: (f64, f64)) -> (f64, f64) {
    route(raw, upstream, false)
}

fn route(raw: RawCutoffPair, (g1, g2): (f64, f64), clamp: bool) -> (f64, f64) {
    let (lower_first, upper_first) = routing(raw);
    let local = |r: f64| {
        if clamp && r.abs() >= 1.0 {
            0.0
        } else {
            sign(r)
        }
    };
    let mut out = (0.0, 0.0);
    let (src1, src2) = (raw.a1_raw, raw.a2_raw);
    if lower_first {
        out.0 += g1 * local(src1);
    } else {
        out.1 += g1 * local(src2);
    }
    if upper_first {
        out.0 += g2 * local(src1);
    } else {
        out.1 += g2 * local(src2);
    }
    out
}

/// SI-SNR (dB) of `est` against `reference` and its gradient with respect to `est`.
pub fn si_snr_grad(est: &[f64], reference: &[f64], eps: f64) -> Result<(f64, Vec<f64>)> {
    let value = si_snr(est, reference, eps)?;
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|v| v - me).collect();
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let er: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let alpha = er / (rr + eps);
    let noise: Vec<f64> = e.iter().zip(&r).map(|(a, b)| a - alpha * b).collect();
    let s_energy = alpha * alpha * rr + eps;
    let n_energy = noise.iter().map(|v| v * v).sum::<f64>() + eps;
    let nr: f64 = noise.iter().zip(&r).map(|(a, b)| a * b).sum();

    let k = 10.0 / LN_10;
    let ds_coeff = 2.0 * alpha * rr / (rr + eps) / s_energy;
    let mut grad: Vec<f64> = noise
        .iter()
        .zip(&r)
        .map(|(nv, rv)| {
            let dn = 2.0 * nv - 2.0 * nr * rv / (rr + eps);
            k * (ds_coeff * rv - dn / n_energy)
        })
        .collect();
    let mean = grad.iter().sum::<f64>() / n;
    grad.iter_mut().for_each(|g| *g -= mean);
    Ok((value, grad))
}

/// Training loss: negative SI-SNR of the enhanced signal.
pub fn loss(model: &Model, x: &[f64], target: &[f64]) -> Result<f64> {
    if x.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("input has {} samples, target {}", x.len(), target.len())));
    }
    let fwd = model.forward(x)?;
    Ok(-si_snr(&fwd.output, target, SI_SNR_EPS)?)
}

/// Loss and gradients for one `(x, target)` pair.
///
/// The pseudo-inverse decoder is treated as a fixed linear map: gradients reach
/// the encoder through the features but not through the inverse itself.
pub fn backward(model: &Model, x: &[f64], target: &[f64]) -> Result<(f64, GradientSet)> {
    if x.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("input has {} samples, target {}", x.len(), target.len())));
    }
    let fwd = model.forward(x)?;
    let (sisnr, d_out) = si_snr_grad(&fwd.output, target, SI_SNR_EPS)?;
    let loss = -sisnr;
    if !loss.is_finite() {
        return Err(Error::NumericFailure { stage: "loss".into() });
    }
    let pad = model.padding();
    let mut d_decoded = vec![0.0; fwd.padded.len()];
    for (d, g) in d_decoded[pad..pad + x.len()].iter_mut().zip(&d_out) {
        *d = -g;
    }
    let grads = backward_from_decoded(model, &fwd, &d_decoded)?;
    if !grads.is_finite() {
        return Err(Error::NumericFailure { stage: "backward".into() });
    }
    Ok((loss, grads))
}

fn backward_from_decoded(model: &Model, fwd: &Forward, d_decoded: &[f64]) -> Result<GradientSet> {
    let bank = &model.filterbank;
    let n = bank.len();
    let len = bank.kernel_len();
    let masked = &fwd.masked;
    let frames = masked.frames();
    let hop = masked.hop();

    // decoder
    let mut d_masked = vec![0.0; n * frames];
    let mut d_gamma = None;
    let mut d_synth = None;
    match &model.decoder {
        DecoderSpec::LinearCombination { gamma } => {
            let w = softmax(gamma);
            let m = len / 2;
            let g = &d_decoded[m..m + frames];
            let mut d_w = vec![0.0; n];
            for i in 0..n {
                let row = masked.row(i);
                let dst = &mut d_masked[i * frames..(i + 1) * frames];
                for t in 0..frames {
                    dst[t] = w[i] * g[t];
                }
                d_w[i] = crate::pipeline::dot(row, g);
            }
            let weighted: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
            d_gamma = Some(w.iter().zip(&d_w).map(|(wi, dwi)| wi * (dwi - weighted)).collect());
        }
        DecoderSpec::Transposed { synth_taps } => {
            let mut ds = vec![vec![0.0; len]; n];
            for i in 0..n {
                let row = masked.row(i);
                let dst = &mut d_masked[i * frames..(i + 1) * frames];
                for t in 0..frames {
                    let seg = &d_decoded[t * hop..t * hop + len];
                    dst[t] = crate::pipeline::dot(&synth_taps[i], seg);
                    let v = row[t];
                    if v != 0.0 {
                        ds[i].iter_mut().zip(seg).for_each(|(a, b)| *a += v * b);
                    }
                }
            }
            d_synth = Some(ds);
        }
        DecoderSpec::PseudoInverse => {
            let pinv = fwd.pinv.as_ref().expect("forward built the pseudo-inverse");
            let coverage = PseudoInverse::coverage(masked);
            let scaled: Vec<f64> =
                d_decoded.iter().zip(&coverage).map(|(g, &c)| if c > 1 { g / c as f64 } else { *g }).collect();
            let p = pinv.matrix();
            for t in 0..frames {
                let seg = &scaled[t * hop..t * hop + len];
                for i in 0..n {
                    d_masked[i * frames + t] = (0..len).map(|k| p[(k, i)] * seg[k]).sum();
                }
            }
        }
    }

    // mask: masked = m_i * features
    let mut d_features = vec![0.0; n * frames];
    let mut d_theta = vec![0.0; n];
    for i in 0..n {
        let m = fwd.mask[i];
        let feats = fwd.features.row(i);
        let dm = &d_masked[i * frames..(i + 1) * frames];
        let d_mask = crate::pipeline::dot(dm, feats);
        d_theta[i] = d_mask * m * (1.0 - m);
        for t in 0..frames {
            d_features[i * frames + t] = m * dm[t];
        }
    }

    // band gain and optional layer normalization
    let mut d_beta = vec![0.0; n];
    let mut d_conv = vec![0.0; n * frames];
    for i in 0..n {
        let beta = bank.params()[i].beta;
        let df = &d_features[i * frames..(i + 1) * frames];
        let dc = &mut d_conv[i * frames..(i + 1) * frames];
        match &fwd.normalized {
            None => {
                d_beta[i] = crate::pipeline::dot(df, fwd.conv.row(i));
                for t in 0..frames {
                    dc[t] = beta * df[t];
                }
            }
            Some((norm, stats)) => {
                let nrow = norm.row(i);
                d_beta[i] = crate::pipeline::dot(df, nrow);
                let std = stats.std[i];
                let denom = std + stats.eps;
                let mean = stats.mean[i];
                let crow = fwd.conv.row(i);
                let tf = frames as f64;
                // n = d / (std + eps), d = c - mean
                let dn: Vec<f64> = df.iter().map(|g| beta * g).collect();
                let d_denom = -dn.iter().zip(crow).map(|(g, c)| g * (c - mean)).sum::<f64>() / (denom * denom);
                let mut dd: Vec<f64> = dn.iter().map(|g| g / denom).collect();
                if std > 0.0 {
                    for (v, c) in dd.iter_mut().zip(crow) {
                        *v += d_denom * (c - mean) / (tf * std);
                    }
                }
                let dd_mean = dd.iter().sum::<f64>() / tf;
                for t in 0..frames {
                    dc[t] = dd[t] - dd_mean;
                }
            }
        }
    }

    // convolution -> unit taps -> cutoffs -> raw parameters
    let window = crate::filter::window(len);
    let scale = bank.raw_to_normalized();
    let mut d_raw = Vec::with_capacity(n);
    for i in 0..n {
        let dc = &d_conv[i * frames..(i + 1) * frames];
        // d rev[k] = sum_t dc[t] * padded[t*hop + k]; rev[k] = taps[L-1-k]
        let mut d_rev = vec![0.0; len];
        if hop == 1 {
            for (k, v) in d_rev.iter_mut().enumerate() {
                *v = crate::pipeline::dot(dc, &fwd.padded[k..k + frames]);
            }
        } else {
            for (t, &g) in dc.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let seg = &fwd.padded[t * hop..t * hop + len];
                d_rev.iter_mut().zip(seg).for_each(|(a, b)| *a += g * b);
            }
        }
        let band = bank.band(i);
        let (g1, g2) = taps_grad_wrt_cutoff(band, len);
        let (mut da1, mut da2) = (0.0, 0.0);
        for l in 0..len {
            let dh = d_rev[len - 1 - l] * window[l];
            da1 += dh * g1[l];
            da2 += dh * g2[l];
        }
        let raw = bank.normalized_raw(i);
        let (r1, r2) = match bank.mode() {
            Mode::Reformed => clamp_backward(raw, (da1, da2)),
            Mode::Original => unclamped_backward(raw, (da1, da2)),
        };
        d_raw.push([r1 * scale, r2 * scale]);
    }

    Ok(GradientSet { d_raw, d_beta, d_theta, d_gamma, d_synth })
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
    pub skipped: usize,
    pub step: f64,
}

impl FdReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Denominator floor for relative gradient errors.
pub const FD_FLOOR: f64 = 1e-8;

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// True when a raw cutoff is within `margin` of a point where the cutoff
/// mapping is not differentiable (sign change, clamp edge, or min/max tie).
fn near_kink(model: &Model, filter: usize, which: usize, margin: f64) -> bool {
    let raw = model.filterbank.normalized_raw(filter);
    let margin = margin * model.filterbank.raw_to_normalized();
    let v = if which == 0 { raw.a1_raw } else { raw.a2_raw };
    let tie = (raw.a1_raw.abs() - raw.a2_raw.abs()).abs() <= 2.0 * margin;
    let clamp = model.filterbank.mode() == Mode::Reformed && (v.abs() - 1.0).abs() <= margin;
    v.abs() <= margin || clamp || tie
}

/// Central-difference check of [`backward`] over every trainable scalar.
///
/// Raw cutoffs sitting within one step of a kink are skipped, as are entries
/// where both derivatives are below the 1e-8 floor.
pub fn finite_difference_check(model: &Model, x: &[f64], target: &[f64], step: f64) -> Result<FdReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(crate::error::invalid("finite-difference step must be > 0"));
    }
    let (_, grads) = backward(model, x, target)?;
    let analytic = grads.flatten();
    let base = model.params();
    let paths = model.param_paths();
    let mut probe = model.clone();
    let mut report = FdReport { max_rel_error: 0.0, worst_param: String::new(), checked: 0, skipped: 0, step };
    let n_raw = 3 * model.filterbank.len();
    for (j, &a) in analytic.iter().enumerate() {
        if j < n_raw && j % 3 != 2 && near_kink(model, j / 3, j % 3, step) {
            report.skipped += 1;
            continue;
        }
        let mut p = base.clone();
        p[j] = base[j] + step;
        probe.set_params(&p)?;
        let plus = loss(&probe, x, target)?;
        p[j] = base[j] - step;
        probe.set_params(&p)?;
        let minus = loss(&probe, x, target)?;
        let numeric = (plus - minus) / (2.0 * step);
        if a.abs() < FD_FLOOR && numeric.abs() < FD_FLOOR {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = paths[j].clone();
        }
    }
    Ok(report)
}

/// Shape of a randomized gradient-check problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckInstance {
    pub n_filters: usize,
    pub kernel_len: usize,
    pub samples: usize,
    pub decoder: DecoderVariant,
    pub hop: usize,
    pub normalization: bool,
    pub mode: Mode,
}

impl Default for CheckInstance {
    fn default() -> Self {
        Self {
            n_filters: 4,
            kernel_len: 31,
            samples: 200,
            decoder: DecoderVariant::LinearCombination,
            hop: 1,
            normalization: false,
            mode: Mode::Reformed,
        }
    }
}

/// Seeded random model, input and target for [`finite_difference_check`].
///
/// Cutoffs are drawn away from the clamp kinks, gains from `[0.5, 1.5)`,
/// mask logits and mixing weights from `[-1, 1)`.
pub fn random_instance(seed: u64, inst: &CheckInstance) -> Result<(Model, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<RawCutoffPair> =
        (0..inst.n_filters).map(|_| RawCutoffPair::new(rng.gen_range(0.05..0.45), rng.gen_range(0.55..0.95))).collect();
    let fb = Filterbank::from_normalized(16000, inst.kernel_len, inst.mode, &pairs)?;
    let mut model = Model::new(fb, inst.decoder, inst.hop, inst.normalization)?;
    for p in model.filterbank.params_mut() {
        p.beta = rng.gen_range(0.5..1.5);
    }
    for t in &mut model.mask_logits {
        *t = rng.gen_range(-1.0..1.0);
    }
    if let DecoderSpec::LinearCombination { gamma } = &mut model.decoder {
        gamma.iter_mut().for_each(|g| *g = rng.gen_range(-1.0..1.0));
    }
    let x: Vec<f64> = (0..inst.samples).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.gen_range(-0.2..0.2)).collect();
    Ok((model, x, target))
}
