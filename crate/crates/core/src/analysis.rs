//! Interpretability exports: cumulative frequency response, filter census,
//! and cutoff/gain tables.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::filter::{classify_filter, magnitude_at, BandParams, FilterType, Filterbank, Mode};

pub const DEFAULT_CFR_GRID: usize = 2048;

/// Band gains below this count as switched off.
pub const ZERO_GAIN_THRESHOLD: f64 = 1e-6;

/// Sum of all filters' linear magnitude responses on a uniform `[0, fs/2]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CfrCurve {
    pub freqs: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl CfrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,magnitude\n");
        for (f, m) in self.freqs.iter().zip(&self.magnitude) {
            out.push_str(&format!("{f},{m}\n"));
        }
        out
    }
}

pub fn cumulative_frequency_response(fb: &Filterbank, n_grid: usize) -> Result<CfrCurve> {
    if n_grid < 16 {
        return Err(invalid(format!("CFR grid needs >= 16 points, got {n_grid}")));
    }
    let nyq = fb.nyquist();
    let step = std::f64::consts::PI / (n_grid - 1) as f64;
    let taps = fb.taps();
    let freqs = (0..n_grid).map(|k| nyq * k as f64 / (n_grid - 1) as f64).collect();
    let magnitude = (0..n_grid)
        .map(|k| {
            let omega = k as f64 * step;
            taps.iter().map(|t| magnitude_at(t, omega)).sum()
        })
        .collect();
    Ok(CfrCurve { freqs, magnitude })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Census {
    pub low_pass: usize,
    pub high_pass: usize,
    pub band_pass: usize,
    pub degenerate: usize,
    pub zero_gain: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.low_pass + self.high_pass + self.band_pass + self.degenerate
    }
}

pub fn filter_census(fb: &Filterbank, eps: f64) -> Census {
    let mut c = Census::default();
    for (band, p) in fb.bands().into_iter().zip(fb.params()) {
        match classify_filter(band, eps) {
            FilterType::LowPass => c.low_pass += 1,
            FilterType::HighPass => c.high_pass += 1,
            FilterType::BandPass => c.band_pass += 1,
            FilterType::Degenerate => c.degenerate += 1,
        }
        if p.beta < ZERO_GAIN_THRESHOLD {
            c.zero_gain += 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    Lower,
    Upper,
}

impl std::str::FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Self::Lower),
            "upper" => Ok(Self::Upper),
            other => Err(invalid(format!("unknown sort key `{other}` (expected lower|upper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffRow {
    pub index: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub beta: f64,
}

/// Rows sorted ascending by the chosen edge; ties keep filter order.
pub fn export_cutoffs_and_gains(fb: &Filterbank, sort_key: SortKey) -> Vec<CutoffRow> {
    let nyq = fb.nyquist();
    let mut rows: Vec<CutoffRow> = fb
        .bands()
        .into_iter()
        .zip(fb.params())
        .enumerate()
        .map(|(index, (b, p))| CutoffRow { index, f_low_hz: b.a1 * nyq, f_high_hz: b.a2 * nyq, beta: p.beta })
        .collect();
    rows.sort_by(|x, y| {
        let (a, b) = match sort_key {
            SortKey::Lower => (x.f_low_hz, y.f_low_hz),
            SortKey::Upper => (x.f_high_hz, y.f_high_hz),
        };
        a.total_cmp(&b).then(x.index.cmp(&y.index))
    });
    rows
}

pub fn cutoffs_to_csv(rows: &[CutoffRow]) -> String {
    let mut out = String::from("index,f_low_hz,f_high_hz,beta\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.index, r.f_low_hz, r.f_high_hz, r.beta));
    }
    out
}

/// Rebuild a reformed-mode bank from exported rows (in any order).
pub fn filterbank_from_cutoffs(rows: &[CutoffRow], sample_rate: u32, kernel_len: usize) -> Result<Filterbank> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.index);
    if sorted.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(invalid("cutoff table indices must be 0..N without gaps"));
    }
    let nyq = sample_rate as f64 / 2.0;
    let params = sorted
        .iter()
        .map(|r| BandParams { a1_raw: r.f_low_hz / nyq, a2_raw: r.f_high_hz / nyq, beta: r.beta })
        .collect();
    Filterbank::new(sample_rate, kernel_len, Mode::Reformed, params)
}
