//! Desk-scale training: SI-SNR loss, synthetic tone-plus-noise data, Adam,
//! and the optimization loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::backward;
use crate::error::{invalid, Error, Result};
use crate::filter::{self, Filterbank, Mode, NormalizedBand, RawCutoffPair};
use crate::init::{self, InitStrategy, TabulatedCurve};
use crate::model::Model;
use crate::pipeline::{encode_with_taps, DecoderVariant};

pub const SI_SNR_EPS: f64 = 1e-8;

/// Length of the windowed-sinc prototype used for noise shaping and the band-stop oracle.
pub const REFERENCE_KERNEL_LEN: usize = 1001;

/// Scale-invariant SNR in dB after mean removal.
pub fn si_snr(est: &[f64], reference: &[f64], eps: f64) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!("estimate has {} samples, reference {}", est.len(), reference.len())));
    }
    if est.len() < 2 {
        return Err(invalid("si-snr needs at least 2 samples"));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(invalid("si-snr eps must be > 0"));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let (mut er, mut rr) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let (e, r) = (e - me, r - mr);
        er += e * r;
        rr += r * r;
    }
    let alpha = er / (rr + eps);
    let mut ee = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let d = (e - me) - alpha * (r - mr);
        ee += d * d;
    }
    let ss = alpha * alpha * rr;
    Ok(10.0 * ((ss + eps) / (ee + eps)).log10())
}

/// Tones in band-limited white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub tone_freqs: Vec<f64>,
    pub tone_amps: Vec<f64>,
    pub noise_band: (f64, f64),
    pub input_snr_db: f64,
    pub duration: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            tone_freqs: vec![400.0, 700.0],
            tone_amps: vec![1.0, 0.7],
            noise_band: (3000.0, 5000.0),
            input_snr_db: 0.0,
            duration: 2048,
            seed: 1234,
        }
    }
}

impl SynthSpec {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.nyquist();
        if self.tone_freqs.is_empty() || self.tone_freqs.len() != self.tone_amps.len() {
            return Err(invalid("need one amplitude per tone and at least one tone"));
        }
        if self.tone_freqs.iter().any(|&f| !(f > 0.0 && f < nyq)) {
            return Err(invalid(format!("tone frequencies must lie in (0, {nyq}) Hz")));
        }
        let (lo, hi) = self.noise_band;
        if !(lo > 0.0 && lo < hi && hi < nyq) {
            return Err(invalid(format!("noise band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {nyq}")));
        }
        if !self.input_snr_db.is_finite() {
            return Err(invalid("input SNR must be finite"));
        }
        if self.duration < 2 {
            return Err(invalid("duration must be >= 2 samples"));
        }
        Ok(())
    }

    fn noise_band_normalized(&self) -> NormalizedBand {
        let nyq = self.nyquist();
        NormalizedBand { a1: self.noise_band.0 / nyq, a2: self.noise_band.1 / nyq }
    }
}

/// One `(noisy, clean)` example.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Zero-phase filtering with a symmetric odd-length kernel (same-length output).
pub(crate) fn filter_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let m = taps.len() / 2;
    let mut padded = vec![0.0; x.len() + 2 * m];
    padded[m..m + x.len()].copy_from_slice(x);
    encode_with_taps(&padded, &[taps.to_vec()], 1).expect("padded signal covers the kernel").row(0).to_vec()
}

fn band_pass_prototype(band: NormalizedBand) -> Vec<f64> {
    filter::assemble_filter(RawCutoffPair::new(band.a1, band.a2), 1.0, REFERENCE_KERNEL_LEN, Mode::Reformed)
        .expect("prototype length is odd")
        .taps
}

/// Example `index` of the stream defined by `spec` (deterministic).
pub fn synth_pair(spec: &SynthSpec, index: u64) -> Result<Pair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let fs = spec.sample_rate as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let phases: Vec<f64> = spec.tone_freqs.iter().map(|_| rng.gen::<f64>() * two_pi).collect();
    let clean: Vec<f64> = (0..spec.duration)
        .map(|n| {
            spec.tone_freqs
                .iter()
                .zip(&spec.tone_amps)
                .zip(&phases)
                .map(|((f, a), p)| a * (two_pi * f * n as f64 / fs + p).sin())
                .sum()
        })
        .collect();

    // generate long white noise and keep the fully filtered middle
    let proto = band_pass_prototype(spec.noise_band_normalized());
    let white: Vec<f64> =
        (0..spec.duration + REFERENCE_KERNEL_LEN - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise = encode_with_taps(&white, &[proto], 1)?.row(0).to_vec();

    let gain = solve_noise_gain(&clean, &noise, spec.input_snr_db)?;
    let noisy = clean.iter().zip(&noise).map(|(c, v)| c + gain * v).collect();
    Ok(Pair { noisy, clean })
}

/// Find `g` with `si_snr(clean + g * noise, clean) = target` by bisection on `log g`.
fn solve_noise_gain(clean: &[f64], noise: &[f64], target_db: f64) -> Result<f64> {
    let eval = |log_g: f64| {
        let g = 10f64.powf(log_g);
        let mix: Vec<f64> = clean.iter().zip(noise).map(|(c, v)| c + g * v).collect();
        si_snr(&mix, clean, SI_SNR_EPS)
    };
    let (mut lo, mut hi) = (-8.0, 8.0);
    if eval(lo)? < target_db || eval(hi)? > target_db {
        return Err(invalid(format!("input SNR {target_db} dB is not reachable")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// The first `count` examples of the stream.
pub fn synth_dataset(spec: &SynthSpec, count: usize) -> Result<Vec<Pair>> {
    (0..count as u64).map(|k| synth_pair(spec, k)).collect()
}

/// Held-out example, drawn from a stream never used for training.
pub fn validation_pair(spec: &SynthSpec) -> Result<Pair> {
    synth_pair(spec, u64::MAX)
}

/// SI-SNR gain of an ideal-ish band-stop over the noise band on the validation pair.
pub fn oracle_bandstop_baseline(spec: &SynthSpec) -> Result<f64> {
    let pair = validation_pair(spec)?;
    let mut stop: Vec<f64> = band_pass_prototype(spec.noise_band_normalized()).iter().map(|v| -v).collect();
    stop[REFERENCE_KERNEL_LEN / 2] += 1.0;
    let filtered = filter_same(&pair.noisy, &stop);
    Ok(si_snr(&filtered, &pair.clean, SI_SNR_EPS)? - si_snr(&pair.noisy, &pair.clean, SI_SNR_EPS)?)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub hop: usize,
    pub decoder: DecoderVariant,
    pub init: InitStrategy,
    pub seed: u64,
    pub mode: Mode,
    pub normalization: bool,
    pub n_filters: usize,
    pub kernel_len: usize,
    /// Lower edge for mel initialization, Hz.
    pub f_min: f64,
    /// Bins of the PMF used by formant initialization.
    pub pmf_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-3,
            batch: 1,
            hop: 1,
            decoder: DecoderVariant::LinearCombination,
            init: InitStrategy::Uniform,
            seed: 7,
            mode: Mode::Reformed,
            normalization: false,
            n_filters: 80,
            kernel_len: 251,
            f_min: 0.0,
            pmf_bins: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be >= 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(invalid("learning rate must be finite and >= 0"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be >= 1"));
        }
        if self.hop == 0 {
            return Err(invalid("hop must be >= 1"));
        }
        if self.n_filters == 0 {
            return Err(invalid("need at least one filter"));
        }
        filter::check_kernel_len(self.kernel_len)?;
        if self.decoder == DecoderVariant::LinearCombination && self.hop != 1 {
            return Err(Error::Unsupported("linear-combination decoder requires hop 1".into()));
        }
        Ok(())
    }

    /// Initial raw pairs (Nyquist-normalized) for this configuration.
    pub fn initial_pairs(
        &self,
        sample_rate: u32,
        formant_curve: Option<&TabulatedCurve>,
    ) -> Result<Vec<RawCutoffPair>> {
        let fs = sample_rate as f64;
        match self.init {
            InitStrategy::Uniform => init::init_uniform(self.n_filters, self.seed),
            InitStrategy::Mel => init::init_mel(self.n_filters, fs, self.f_min),
            InitStrategy::Formant => {
                let synthetic;
                let curve = match formant_curve {
                    Some(c) => c,
                    None => {
                        synthetic = TabulatedCurve::synthetic_formant(fs);
                        &synthetic
                    }
                };
                let pmf = init::cfr_to_pmf(curve, self.pmf_bins, fs)?;
                init::init_formant(self.n_filters, &pmf, fs, self.seed)
            }
        }
    }

    pub fn initial_model(&self, sample_rate: u32, formant_curve: Option<&TabulatedCurve>) -> Result<Model> {
        self.validate()?;
        let pairs = self.initial_pairs(sample_rate, formant_curve)?;
        let bank = Filterbank::from_normalized(sample_rate, self.kernel_len, self.mode, &pairs)?;
        Model::new(bank, self.decoder, self.hop, self.normalization)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub val_sisnr_db: f64,
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    /// SI-SNR of the unprocessed validation mixture.
    pub val_input_sisnr_db: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,val_sisnr_db,displacement\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.val_sisnr_db, r.displacement));
        }
        out
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Final validation SI-SNR minus the unprocessed mixture's.
    pub fn improvement_db(&self) -> f64 {
        self.last().map_or(0.0, |r| r.val_sisnr_db - self.val_input_sisnr_db)
    }

    /// Mean training loss over the `window` steps ending at `step` (1-based).
    pub fn moving_average(&self, step: usize, window: usize) -> f64 {
        let end = step.min(self.records.len());
        let start = end.saturating_sub(window);
        let slice = &self.records[start..end];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Mean over filters of `|a1 - a1_init| + |a2 - a2_init|` in Nyquist-normalized units.
pub fn cutoff_displacement(initial: &[NormalizedBand], bank: &Filterbank) -> f64 {
    let total: f64 = initial.iter().zip(bank.bands()).map(|(a, b)| (b.a1 - a.a1).abs() + (b.a2 - a.a2).abs()).sum();
    total / initial.len() as f64
}

/// Optimize `model` on fresh synthetic pairs for `config.steps` steps.
pub fn train_model(model: Model, config: &TrainConfig, spec: &SynthSpec) -> Result<(Model, TrainHistory)> {
    train_model_observed(model, config, spec, |_, _| {})
}

/// [`train_model`], calling `observe` with each step's record and the updated model.
pub fn train_model_observed<F>(
    mut model: Model,
    config: &TrainConfig,
    spec: &SynthSpec,
    mut observe: F,
) -> Result<(Model, TrainHistory)>
where
    F: FnMut(&StepRecord, &Model),
{
    config.validate()?;
    spec.validate()?;
    let min_len = 4 * model.filterbank.kernel_len();
    if spec.duration < min_len {
        return Err(invalid(format!("duration {} is shorter than 4L = {min_len}", spec.duration)));
    }
    if spec.sample_rate != model.filterbank.sample_rate() {
        return Err(Error::SampleRateMismatch { checkpoint: model.filterbank.sample_rate(), audio: spec.sample_rate });
    }
    let val = validation_pair(spec)?;
    let mut history = TrainHistory {
        records: Vec::with_capacity(config.steps),
        val_input_sisnr_db: si_snr(&val.noisy, &val.clean, SI_SNR_EPS)?,
    };
    let initial_bands = model.filterbank.bands();
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), config.learning_rate);

    for step in 1..=config.steps {
        let mut grad_sum = vec![0.0; params.len()];
        let mut loss_sum = 0.0;
        for b in 0..config.batch {
            let pair = synth_pair(spec, ((step - 1) * config.batch + b) as u64)?;
            let (loss, grads) = backward(&model, &pair.noisy, &pair.clean)
                .map_err(|e| Error::Diverged { step, detail: e.to_string() })?;
            loss_sum += loss;
            grad_sum.iter_mut().zip(grads.flatten()).for_each(|(a, g)| *a += g);
        }
        let scale = 1.0 / config.batch as f64;
        let loss = loss_sum * scale;
        grad_sum.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() || grad_sum.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, detail: "non-finite loss or gradient".into() });
        }

        adam.step(&mut params, &grad_sum);
        model.set_params(&params)?;
        model.filterbank.project_gains();
        // keep the optimizer's copy consistent with the projection
        for (i, p) in model.filterbank.params().iter().enumerate() {
            params[3 * i + 2] = p.beta;
        }

        let enhanced = model.enhance(&val.noisy).map_err(|e| Error::Diverged { step, detail: e.to_string() })?;
        let record = StepRecord {
            step,
            loss,
            val_sisnr_db: si_snr(&enhanced, &val.clean, SI_SNR_EPS)?,
            displacement: cutoff_displacement(&initial_bands, &model.filterbank),
        };
        observe(&record, &model);
        history.records.push(record);
    }
    Ok((model, history))
}

/// Build the initial model from `config` and train it.
pub fn train(
    config: &TrainConfig,
    spec: &SynthSpec,
    formant_curve: Option<&TabulatedCurve>,
) -> Result<(Model, TrainHistory)> {
    let model = config.initial_model(spec.sample_rate, formant_curve)?;
    train_model(model, config, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn si_snr_perfect_and_scaled() {
        let r: Vec<f64> = white(4000, 1);
        let p = r.iter().map(|v| v * v).sum::<f64>() / 4000.0;
        let unit: Vec<f64> = r.iter().map(|v| v / p.sqrt()).collect();
        let same = si_snr(&unit, &unit, SI_SNR_EPS).unwrap();
        // capped by eps: about 10 log10(energy / eps)
        let cap = 10.0 * (4000.0 / SI_SNR_EPS).log10();
        assert!((same - cap).abs() < 0.1, "{same} vs {cap}");
        let noise = white(4000, 9);
        let noisy: Vec<f64> = unit.iter().zip(&noise).map(|(u, n)| u + 0.3 * n).collect();
        let base = si_snr(&noisy, &unit, SI_SNR_EPS).unwrap();
        for k in [0.01, 2.0, 50.0] {
            let scaled: Vec<f64> = noisy.iter().map(|v| k * v).collect();
            assert!((si_snr(&scaled, &unit, SI_SNR_EPS).unwrap() - base).abs() < 1e-4);
        }
    }

    #[test]
    fn si_snr_ten_db() {
        let n = 2000;
        let r: Vec<f64> = (0..n).map(|k| (0.05 * k as f64).sin()).collect();
        let mut noise = white(n, 2);
        // orthogonalize against the centered reference and center the noise
        let mr = r.iter().sum::<f64>() / n as f64;
        let rc: Vec<f64> = r.iter().map(|v| v - mr).collect();
        let mn = noise.iter().sum::<f64>() / n as f64;
        noise.iter_mut().for_each(|v| *v -= mn);
        let proj = noise.iter().zip(&rc).map(|(a, b)| a * b).sum::<f64>() / rc.iter().map(|v| v * v).sum::<f64>();
        noise.iter_mut().zip(&rc).for_each(|(v, c)| *v -= proj * c);
        let want = rc.iter().map(|v| v * v).sum::<f64>() / 10.0;
        let have = noise.iter().map(|v| v * v).sum::<f64>();
        noise.iter_mut().for_each(|v| *v *= (want / have).sqrt());
        let est: Vec<f64> = r.iter().zip(&noise).map(|(a, b)| a + b).collect();
        assert!((si_snr(&est, &r, SI_SNR_EPS).unwrap() - 10.0).abs() < 0.01);
    }

    #[test]
    fn si_snr_rejects_length_mismatch() {
        assert!(si_snr(&[1.0, 2.0], &[1.0, 2.0, 3.0], SI_SNR_EPS).is_err());
    }

    #[test]
    fn synthetic_mixture_hits_requested_snr() {
        let spec = SynthSpec::default();
        for k in 0..3 {
            let p = synth_pair(&spec, k).unwrap();
            let s = si_snr(&p.noisy, &p.clean, SI_SNR_EPS).unwrap();
            assert!(s.abs() <= 0.1, "{s}");
        }
        let spec = SynthSpec { input_snr_db: 7.5, ..SynthSpec::default() };
        let p = synth_pair(&spec, 0).unwrap();
        assert!((si_snr(&p.noisy, &p.clean, SI_SNR_EPS).unwrap() - 7.5).abs() <= 0.1);
    }

    #[test]
    fn synthetic_data_is_deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(synth_dataset(&spec, 2).unwrap(), synth_dataset(&spec, 2).unwrap());
        let other = SynthSpec { seed: 99, ..SynthSpec::default() };
        assert_ne!(synth_pair(&spec, 0).unwrap(), synth_pair(&other, 0).unwrap());
    }

    #[test]
    fn synth_rejects_bad_specs() {
        let bad = SynthSpec { input_snr_db: f64::INFINITY, ..SynthSpec::default() };
        assert!(synth_pair(&bad, 0).is_err());
        let bad = SynthSpec { noise_band: (5000.0, 3000.0), ..SynthSpec::default() };
        assert!(synth_pair(&bad, 0).is_err());
        let bad = SynthSpec { noise_band: (3000.0, 9000.0), ..SynthSpec::default() };
        assert!(synth_pair(&bad, 0).is_err());
    }

    #[test]
    fn oracle_is_deterministic_and_fails_on_overlap() {
        let spec = SynthSpec::default();
        assert_eq!(oracle_bandstop_baseline(&spec).unwrap(), oracle_bandstop_baseline(&spec).unwrap());
        let overlap = SynthSpec { noise_band: (200.0, 1000.0), ..SynthSpec::default() };
        assert!(oracle_bandstop_baseline(&overlap).unwrap() < 1.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let config =
            TrainConfig { steps: 3, learning_rate: 0.0, n_filters: 4, kernel_len: 31, ..TrainConfig::default() };
        let spec = SynthSpec { duration: 256, ..SynthSpec::default() };
        let start = config.initial_model(16000, None).unwrap();
        let (end, hist) = train(&config, &spec, None).unwrap();
        assert_eq!(start.params(), end.params());
        assert!(hist.records.iter().all(|r| r.displacement == 0.0));
        assert_eq!(hist.records.len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { hop: 4, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { kernel_len: 250, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        let short = SynthSpec { duration: 500, ..SynthSpec::default() };
        assert!(train(&TrainConfig { steps: 1, ..TrainConfig::default() }, &short, None).is_err());
    }
}
