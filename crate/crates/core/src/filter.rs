//! Windowed-sinc band-pass filters built from trainable cutoff parameters.
//!
//! Cutoffs are Nyquist-normalized: a value `a` in `[0, 1]` corresponds to the
//! digital frequency `a * pi` rad/sample, or `a * fs / 2` Hz.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default threshold used when classifying bands by edge position.
pub const DEFAULT_CLASSIFY_EPS: f64 = 0.01;

/// How raw cutoff parameters map onto band edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Raw values are Nyquist-normalized; edges come from abs, min/max and a clamp at 1.
    Reformed,
    /// Raw values are absolute frequencies in Hz; edges are `|raw|` sorted, never clamped.
    Original,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reformed" => Ok(Mode::Reformed),
            "original" => Ok(Mode::Original),
            other => Err(invalid(format!("unknown mode `{other}` (expected reformed|original)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Reformed => "reformed",
            Mode::Original => "original",
        })
    }
}

/// The two unconstrained trainable scalars behind one filter's cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCutoffPair {
    pub a1_raw: f64,
    pub a2_raw: f64,
}

impl RawCutoffPair {
    pub fn new(a1_raw: f64, a2_raw: f64) -> Self {
        Self { a1_raw, a2_raw }
    }
}

/// Band edges as fractions of Nyquist, `a1 <= a2`.
///
/// Reformed bands always satisfy `0 <= a1 <= a2 <= 1`. Bands produced by the
/// original parametrization keep the ordering but may exceed 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBand {
    pub a1: f64,
    pub a2: f64,
}

impl NormalizedBand {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite()) || a1 < 0.0 || a2 < a1 || a2 > 1.0 {
            return Err(invalid(format!("band ({a1}, {a2}) violates 0 <= a1 <= a2 <= 1")));
        }
        Ok(Self { a1, a2 })
    }

    pub fn width(&self) -> f64 {
        self.a2 - self.a1
    }

    /// Edges in Hz for the given sample rate.
    pub fn to_hz(&self, sample_rate: f64) -> (f64, f64) {
        let nyquist = sample_rate / 2.0;
        (self.a1 * nyquist, self.a2 * nyquist)
    }
}

/// Reformed cutoff mapping: `a1 = min(min(|r1|,|r2|), 1)`, `a2 = min(max(|r1|,|r2|), 1)`.
pub fn normalize_cutoffs(raw: RawCutoffPair) -> Result<NormalizedBand> {
    check_finite(raw)?;
    let (r1, r2) = (raw.a1_raw.abs(), raw.a2_raw.abs());
    Ok(NormalizedBand { a1: r1.min(r2).min(1.0), a2: r1.max(r2).min(1.0) })
}

/// Original-form mapping on already-normalized raw values: `|r|` sorted, no upper clamp.
pub fn unclamped_cutoffs(raw: RawCutoffPair) -> Result<NormalizedBand> {
    check_finite(raw)?;
    let (r1, r2) = (raw.a1_raw.abs(), raw.a2_raw.abs());
    Ok(NormalizedBand { a1: r1.min(r2), a2: r1.max(r2) })
}

fn check_finite(raw: RawCutoffPair) -> Result<()> {
    if raw.a1_raw.is_finite() && raw.a2_raw.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("raw cutoffs must be finite, got ({}, {})", raw.a1_raw, raw.a2_raw)))
    }
}

pub(crate) fn check_kernel_len(len: usize) -> Result<()> {
    if len < 3 || len.is_multiple_of(2) {
        return Err(invalid(format!("kernel length must be odd and >= 3, got {len}")));
    }
    Ok(())
}

/// Truncated, delayed ideal band-pass impulse response of odd length `len`.
///
/// `taps[n] = sin(pi a2 d)/(pi d) - sin(pi a1 d)/(pi d)` with `d = n - M`; the
/// center tap is exactly `a2 - a1`. Values are computed from `|d|` so the
/// result is exactly symmetric.
pub fn ideal_band_taps(band: NormalizedBand, len: usize) -> Result<Vec<f64>> {
    check_kernel_len(len)?;
    Ok(band_taps(band.a1, band.a2, len))
}

pub(crate) fn band_taps(a1: f64, a2: f64, len: usize) -> Vec<f64> {
    let m = len / 2;
    let mut taps = vec![0.0; len];
    taps[m] = a2 - a1;
    for k in 1..=m {
        let kf = k as f64;
        let v = ((a2 * PI * kf).sin() - (a1 * PI * kf).sin()) / (PI * kf);
        taps[m + k] = v;
        taps[m - k] = v;
    }
    taps
}

/// Symmetric Hamming window, `0.54 - 0.46 cos(2 pi n / (L - 1))`.
pub fn hamming_window(len: usize) -> Result<Vec<f64>> {
    check_kernel_len(len)?;
    Ok(window(len))
}

pub(crate) fn window(len: usize) -> Vec<f64> {
    let m = len / 2;
    let mf = m as f64;
    let mut w = vec![0.0; len];
    // cos(2 pi n/(L-1)) = -cos(pi k/M) with k = |n - M|
    for k in 0..=m {
        let v = 0.54 + 0.46 * (PI * k as f64 / mf).cos();
        w[m + k] = v;
        w[m - k] = v;
    }
    w
}

/// One materialized band.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub band: NormalizedBand,
    pub beta: f64,
    pub taps: Vec<f64>,
    pub mode: Mode,
}

impl FilterSpec {
    pub fn kernel_len(&self) -> usize {
        self.taps.len()
    }

    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }
}

/// `h[n] = beta * hhat[n] * w[n]`.
///
/// `raw` is Nyquist-normalized in both modes; in original mode the edges are
/// `|raw|` sorted without the clamp at 1.
pub fn assemble_filter(raw: RawCutoffPair, beta: f64, len: usize, mode: Mode) -> Result<FilterSpec> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(invalid(format!("band gain must be finite and >= 0, got {beta}")));
    }
    check_kernel_len(len)?;
    let band = match mode {
        Mode::Reformed => normalize_cutoffs(raw)?,
        Mode::Original => unclamped_cutoffs(raw)?,
    };
    let taps = band_taps(band.a1, band.a2, len).into_iter().zip(window(len)).map(|(h, w)| beta * h * w).collect();
    Ok(FilterSpec { band, beta, taps, mode })
}

/// Magnitude of the DTFT of `taps` on `n_grid` uniformly spaced points over `[0, pi]`.
pub fn frequency_response(taps: &[f64], n_grid: usize) -> Result<Vec<f64>> {
    if taps.is_empty() {
        return Err(invalid("frequency response of an empty tap vector"));
    }
    if n_grid < 2 {
        return Err(invalid(format!("frequency grid needs >= 2 points, got {n_grid}")));
    }
    let step = PI / (n_grid - 1) as f64;
    Ok((0..n_grid).map(|k| magnitude_at(taps, k as f64 * step)).collect())
}

pub(crate) fn magnitude_at(taps: &[f64], omega: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &h) in taps.iter().enumerate() {
        let (s, c) = (omega * n as f64).sin_cos();
        re += h * c;
        im -= h * s;
    }
    re.hypot(im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterType {
    LowPass,
    HighPass,
    BandPass,
    Degenerate,
}

/// Classify a band by where its edges sit relative to DC and Nyquist.
pub fn classify_filter(band: NormalizedBand, eps: f64) -> FilterType {
    let at_dc = band.a1 < eps;
    let at_nyquist = band.a2 > 1.0 - eps;
    if band.a2 - band.a1 < eps || (at_dc && at_nyquist) {
        FilterType::Degenerate
    } else if at_dc {
        FilterType::LowPass
    } else if at_nyquist {
        FilterType::HighPass
    } else {
        FilterType::BandPass
    }
}

/// Trainable encoder parameters of one band as persisted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub a1_raw: f64,
    pub a2_raw: f64,
    pub beta: f64,
}

impl BandParams {
    pub fn raw(&self) -> RawCutoffPair {
        RawCutoffPair::new(self.a1_raw, self.a2_raw)
    }
}

/// N sinc filters sharing a kernel length and sample rate.
///
/// Only raw parameters are stored; taps are rematerialized on demand. In
/// original mode the raw values are absolute frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FilterbankRepr")]
pub struct Filterbank {
    sample_rate: u32,
    kernel_len: usize,
    mode: Mode,
    filters: Vec<BandParams>,
}

#[derive(Deserialize)]
struct FilterbankRepr {
    sample_rate: u32,
    kernel_len: usize,
    mode: Mode,
    filters: Vec<BandParams>,
}

impl TryFrom<FilterbankRepr> for Filterbank {
    type Error = Error;

    fn try_from(r: FilterbankRepr) -> Result<Self> {
        Filterbank::new(r.sample_rate, r.kernel_len, r.mode, r.filters)
    }
}

impl Filterbank {
    pub fn new(sample_rate: u32, kernel_len: usize, mode: Mode, filters: Vec<BandParams>) -> Result<Self> {
        check_kernel_len(kernel_len)?;
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if filters.is_empty() {
            return Err(invalid("filterbank needs at least one filter"));
        }
        for (i, f) in filters.iter().enumerate() {
            check_finite(f.raw()).map_err(|e| invalid(format!("filter {i}: {e}")))?;
            if !f.beta.is_finite() || f.beta < 0.0 {
                return Err(invalid(format!("filter {i}: band gain {} < 0", f.beta)));
            }
        }
        Ok(Self { sample_rate, kernel_len, mode, filters })
    }

    /// Build from Nyquist-normalized raw pairs (as emitted by the init
    /// strategies), all band gains 1. Original mode rescales to Hz.
    pub fn from_normalized(sample_rate: u32, kernel_len: usize, mode: Mode, pairs: &[RawCutoffPair]) -> Result<Self> {
        let scale = match mode {
            Mode::Reformed => 1.0,
            Mode::Original => sample_rate as f64 / 2.0,
        };
        let filters = pairs
            .iter()
            .map(|p| BandParams { a1_raw: p.a1_raw * scale, a2_raw: p.a2_raw * scale, beta: 1.0 })
            .collect();
        Self::new(sample_rate, kernel_len, mode, filters)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn center(&self) -> usize {
        self.kernel_len / 2
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn params(&self) -> &[BandParams] {
        &self.filters
    }

    pub fn params_mut(&mut self) -> &mut [BandParams] {
        &mut self.filters
    }

    /// Factor converting raw units to Nyquist-normalized units.
    pub fn raw_to_normalized(&self) -> f64 {
        match self.mode {
            Mode::Reformed => 1.0,
            Mode::Original => 1.0 / self.nyquist(),
        }
    }

    /// Raw pair of filter `i` expressed in Nyquist-normalized units.
    pub fn normalized_raw(&self, i: usize) -> RawCutoffPair {
        let s = self.raw_to_normalized();
        let f = &self.filters[i];
        RawCutoffPair::new(f.a1_raw * s, f.a2_raw * s)
    }

    pub fn band(&self, i: usize) -> NormalizedBand {
        let raw = self.normalized_raw(i);
        let band = match self.mode {
            Mode::Reformed => normalize_cutoffs(raw),
            Mode::Original => unclamped_cutoffs(raw),
        };
        band.expect("filterbank parameters are validated finite")
    }

    pub fn bands(&self) -> Vec<NormalizedBand> {
        (0..self.len()).map(|i| self.band(i)).collect()
    }

    /// Windowed taps of filter `i` without the band gain.
    pub fn unit_taps(&self, i: usize) -> Vec<f64> {
        let band = self.band(i);
        band_taps(band.a1, band.a2, self.kernel_len)
            .into_iter()
            .zip(window(self.kernel_len))
            .map(|(h, w)| h * w)
            .collect()
    }

    pub fn filter(&self, i: usize) -> FilterSpec {
        let beta = self.filters[i].beta;
        let taps = self.unit_taps(i).into_iter().map(|v| beta * v).collect();
        FilterSpec { band: self.band(i), beta, taps, mode: self.mode }
    }

    pub fn filters(&self) -> Vec<FilterSpec> {
        (0..self.len()).map(|i| self.filter(i)).collect()
    }

    /// Row-major N x L matrix of assembled taps.
    pub fn taps(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.filter(i).taps).collect()
    }

    /// Clamp every band gain to `>= 0`.
    pub fn project_gains(&mut self) {
        for f in &mut self.filters {
            if f.beta < 0.0 {
                f.beta = 0.0;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
