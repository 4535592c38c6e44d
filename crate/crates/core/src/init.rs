//! Initial cutoff pairs: uniform, formant-PMF and Mel-scale strategies.
//!
//! Every strategy emits Nyquist-normalized raw pairs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::RawCutoffPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    Uniform,
    Formant,
    Mel,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "formant" => Ok(Self::Formant),
            "mel" => Ok(Self::Mel),
            other => Err(invalid(format!("unknown init strategy `{other}` (expected uniform|formant|mel)"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Formant => "formant",
            Self::Mel => "mel",
        })
    }
}

/// A magnitude curve sampled on an ascending Hz grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCurve {
    freqs: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedCurve {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(invalid("curve frequency and value columns differ in length"));
        }
        if freqs.len() < 2 {
            return Err(invalid("curve needs at least 2 points"));
        }
        if freqs.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(invalid("curve contains non-finite values"));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("curve frequencies must be strictly ascending"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(invalid("curve magnitudes must be >= 0"));
        }
        if !values.iter().any(|&v| v > 0.0) {
            return Err(invalid("curve is identically zero"));
        }
        Ok(Self { freqs, values })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation, held constant beyond either end.
    pub fn interpolate(&self, f: f64) -> f64 {
        let n = self.freqs.len();
        if f <= self.freqs[0] {
            return self.values[0];
        }
        if f >= self.freqs[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.freqs.partition_point(|&x| x <= f);
        let (f0, f1) = (self.freqs[hi - 1], self.freqs[hi]);
        let (v0, v1) = (self.values[hi - 1], self.values[hi]);
        v0 + (v1 - v0) * (f - f0) / (f1 - f0)
    }

    /// Two-column CSV (`freq_hz,magnitude`), header row optional.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let csv_err = |detail: String| Error::Csv { path: path.to_path_buf(), detail };
        let (mut freqs, mut values) = (Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(csv_err(format!("line {}: expected 2 columns", lineno + 1)));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(f), Ok(v)) => {
                    freqs.push(f);
                    values.push(v);
                }
                _ if lineno == 0 && freqs.is_empty() => continue,
                _ => return Err(csv_err(format!("line {}: not numeric", lineno + 1))),
            }
        }
        Self::new(freqs, values).map_err(|e| csv_err(e.to_string()))
    }

    /// Synthetic formant-like curve with peaks near 500, 1500 and 2500 Hz.
    ///
    /// Stand-in test data only; not a learned speaker-ID response.
    pub fn synthetic_formant(sample_rate: f64) -> Self {
        let nyquist = sample_rate / 2.0;
        let n = 257;
        let peaks = [(500.0, 1.0, 150.0), (1500.0, 0.7, 250.0), (2500.0, 0.5, 300.0)];
        let freqs: Vec<f64> = (0..n).map(|k| nyquist * k as f64 / (n - 1) as f64).collect();
        let values = freqs
            .iter()
            .map(|&f| 0.02 + peaks.iter().map(|&(c, a, w)| a * (-0.5 * ((f - c) / w).powi(2)).exp()).sum::<f64>())
            .collect();
        Self { freqs, values }
    }
}

/// Probability mass over an ascending Hz support.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    support: Vec<f64>,
    mass: Vec<f64>,
}

impl Pmf {
    pub fn new(support: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if support.len() != mass.len() || support.is_empty() {
            return Err(invalid("pmf support and mass must be non-empty and equal length"));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("pmf support must be strictly ascending"));
        }
        if mass.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(invalid("pmf mass must be finite and >= 0"));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("pmf mass sums to {total}, not 1")));
        }
        Ok(Self { support, mass })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mass
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect()
    }

    /// Index of the support point selected by inverse-CDF lookup of `u` in `[0, 1)`.
    fn sample_index(cdf: &[f64], u: f64) -> usize {
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }
}

/// `N` pairs drawn i.i.d. from `U[0, 1)`.
pub fn init_uniform(n: usize, seed: u64) -> Result<Vec<RawCutoffPair>> {
    if n == 0 {
        return Err(invalid("filter count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let a1 = rng.gen::<f64>();
            let a2 = rng.gen::<f64>();
            RawCutoffPair::new(a1, a2)
        })
        .collect())
}

/// Interpolate `curve` onto `n_bins` uniformly spaced frequencies over
/// `[0, fs/2]` and normalize to unit mass.
pub fn cfr_to_pmf(curve: &TabulatedCurve, n_bins: usize, sample_rate: f64) -> Result<Pmf> {
    if n_bins < 2 {
        return Err(invalid(format!("pmf needs >= 2 bins, got {n_bins}")));
    }
    if sample_rate.is_nan() || sample_rate <= 0.0 {
        return Err(invalid("sample rate must be positive"));
    }
    let nyquist = sample_rate / 2.0;
    let support: Vec<f64> = (0..n_bins).map(|k| nyquist * k as f64 / (n_bins - 1) as f64).collect();
    let raw: Vec<f64> = support.iter().map(|&f| curve.interpolate(f)).collect();
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(invalid("interpolated curve has zero mass on [0, fs/2]"));
    }
    let mut mass: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // absorb the rounding residue so the sum is 1 to within 1e-12
    let residue = 1.0 - mass.iter().sum::<f64>();
    if let Some(big) = mass.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *big += residue;
    }
    Pmf::new(support, mass)
}

/// Two independent inverse-CDF draws per filter, sorted and mapped to `f / (fs/2)`.
pub fn init_formant(n: usize, pmf: &Pmf, sample_rate: f64, seed: u64) -> Result<Vec<RawCutoffPair>> {
    if n == 0 {
        return Err(invalid("filter count must be >= 1"));
    }
    if sample_rate.is_nan() || sample_rate <= 0.0 {
        return Err(invalid("sample rate must be positive"));
    }
    let nyquist = sample_rate / 2.0;
    if pmf.support.iter().any(|&f| f < 0.0 || f > nyquist) {
        return Err(invalid("pmf support lies outside [0, fs/2]"));
    }
    let cdf = pmf.cdf();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let f1 = pmf.support[Pmf::sample_index(&cdf, rng.gen::<f64>())];
            let f2 = pmf.support[Pmf::sample_index(&cdf, rng.gen::<f64>())];
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            RawCutoffPair::new(lo / nyquist, hi / nyquist)
        })
        .collect())
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `N + 1` mel-spaced edges in Hz from `f_min` to `fs/2`.
pub fn mel_edges(n: usize, sample_rate: f64, f_min: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("filter count must be >= 1"));
    }
    let nyquist = sample_rate / 2.0;
    if !(f_min >= 0.0 && f_min < nyquist) {
        return Err(invalid(format!("f_min {f_min} must lie in [0, {nyquist})")));
    }
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(nyquist));
    let mut edges: Vec<f64> = (0..=n).map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / n as f64)).collect();
    edges[0] = f_min;
    edges[n] = nyquist;
    Ok(edges)
}

/// Contiguous mel-spaced bands; filter `i` spans `(edge_i, edge_{i+1})`.
pub fn init_mel(n: usize, sample_rate: f64, f_min: f64) -> Result<Vec<RawCutoffPair>> {
    let nyquist = sample_rate / 2.0;
    let edges = mel_edges(n, sample_rate, f_min)?;
    Ok(edges.windows(2).map(|w| RawCutoffPair::new(w[0] / nyquist, w[1] / nyquist)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_range_and_determinism() {
        let a = init_uniform(80, 3).unwrap();
        assert_eq!(a.len(), 80);
        assert!(a.iter().all(|p| (0.0..1.0).contains(&p.a1_raw) && (0.0..1.0).contains(&p.a2_raw)));
        assert_eq!(a, init_uniform(80, 3).unwrap());
        assert_ne!(a, init_uniform(80, 4).unwrap());
        assert!(init_uniform(0, 3).is_err());
    }

    #[test]
    fn uniform_mean() {
        let v = init_uniform(10_000, 11).unwrap();
        let mean = v.iter().map(|p| p.a1_raw + p.a2_raw).sum::<f64>() / 20_000.0;
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");
    }

    #[test]
    fn flat_curve_gives_uniform_pmf() {
        let c = TabulatedCurve::new(vec![0.0, 8000.0], vec![3.0, 3.0]).unwrap();
        let p = cfr_to_pmf(&c, 7, 16000.0).unwrap();
        for m in p.mass() {
            assert!((m - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ramp_curve_pmf() {
        let c = TabulatedCurve::new(vec![0.0, 8000.0], vec![0.0, 1.0]).unwrap();
        let p = cfr_to_pmf(&c, 5, 16000.0).unwrap();
        let want = [0.0, 0.1, 0.2, 0.3, 0.4];
        for (m, w) in p.mass().iter().zip(want) {
            assert!((m - w).abs() < 1e-15, "{m} vs {w}");
        }
        assert_eq!(p.support(), &[0.0, 2000.0, 4000.0, 6000.0, 8000.0]);
    }

    #[test]
    fn pmf_sums_to_one() {
        let c = TabulatedCurve::synthetic_formant(16000.0);
        for bins in [2, 3, 100, 1001, 4097] {
            let p = cfr_to_pmf(&c, bins, 16000.0).unwrap();
            assert!((p.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn curve_validation() {
        assert!(TabulatedCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(TabulatedCurve::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(TabulatedCurve::new(vec![0.0], vec![1.0]).is_err());
        assert!(TabulatedCurve::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn point_mass_gives_degenerate_pairs() {
        let pmf = Pmf::new(vec![0.0, 1000.0, 2000.0], vec![0.0, 1.0, 0.0]).unwrap();
        let pairs = init_formant(20, &pmf, 16000.0, 9).unwrap();
        assert!(pairs.iter().all(|p| p.a1_raw == 0.125 && p.a2_raw == 0.125));
    }

    #[test]
    fn formant_pairs_sorted_and_reproducible() {
        let pmf = cfr_to_pmf(&TabulatedCurve::synthetic_formant(16000.0), 512, 16000.0).unwrap();
        let a = init_formant(80, &pmf, 16000.0, 5).unwrap();
        assert!(a.iter().all(|p| p.a1_raw <= p.a2_raw && p.a2_raw <= 1.0 && p.a1_raw >= 0.0));
        assert_eq!(a, init_formant(80, &pmf, 16000.0, 5).unwrap());
    }

    #[test]
    fn mel_single_band_spans_everything() {
        let p = init_mel(1, 16000.0, 0.0).unwrap();
        assert_eq!(p, vec![RawCutoffPair::new(0.0, 1.0)]);
    }

    #[test]
    fn mel_of_nyquist() {
        let direct = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        assert!((hz_to_mel(8000.0) - direct).abs() < 1e-12);
        assert!((hz_to_mel(8000.0) - 2840.0).abs() < 0.1);
    }

    #[test]
    fn mel_bands_contiguous_and_widening() {
        let p = init_mel(80, 16000.0, 0.0).unwrap();
        for w in p.windows(2) {
            assert_eq!(w[0].a2_raw, w[1].a1_raw);
        }
        let widths: Vec<f64> = p.iter().map(|b| b.a2_raw - b.a1_raw).collect();
        assert!(widths.iter().all(|&w| w > 0.0));
        assert!(widths.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p[0].a1_raw, 0.0);
        assert_eq!(p[79].a2_raw, 1.0);
        assert!(init_mel(4, 16000.0, 8000.0).is_err());
        assert!(init_mel(4, 16000.0, -1.0).is_err());
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "freq_hz,magnitude\n0,1\n4000,2\n8000,0\n").unwrap();
        let c = TabulatedCurve::from_csv(&p).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0, 0.0]);
        std::fs::write(&p, "0,1\n8000,2\n").unwrap();
        assert_eq!(TabulatedCurve::from_csv(&p).unwrap().freqs(), &[0.0, 8000.0]);
        std::fs::write(&p, "0,1\nx,2\n").unwrap();
        assert!(TabulatedCurve::from_csv(&p).is_err());
    }
}
