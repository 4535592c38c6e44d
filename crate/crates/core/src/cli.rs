//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
//! stderr; results go to stdout or the requested files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{self, SortKey};
use crate::autodiff::{self, CheckInstance};
use crate::error::{invalid, Error, Result};
use crate::filter::{Filterbank, Mode, DEFAULT_CLASSIFY_EPS};
use crate::init::{InitStrategy, TabulatedCurve};
use crate::io::{self, AudioBuffer, Checkpoint};
use crate::model::Model;
use crate::pipeline::{self, DecoderVariant};
use crate::trainer::{self, si_snr, SynthSpec, TrainConfig, SI_SNR_EPS};

#[derive(Debug, Parser)]
#[command(name = "sincfb", version, about = "Learnable sinc filterbank encoder/decoder for speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an initialized filterbank model and save it as a checkpoint
    Init(InitArgs),
    /// Print the filter census and parameter counts of a checkpoint
    Inspect(InspectArgs),
    /// Run one encoder filter over a WAV file
    Filter(FilterArgs),
    /// Train on synthetic tone-plus-noise data
    Train(TrainArgs),
    /// Enhance a WAV file with a trained checkpoint
    Enhance(EnhanceArgs),
    /// Compare analytic gradients with central finite differences
    CheckGrads(CheckGradsArgs),
    /// Export the cumulative frequency response as CSV
    ExportCfr(ExportCfrArgs),
    /// Export cutoff frequencies and band gains as CSV
    ExportCutoffs(ExportCutoffsArgs),
    /// Write one synthetic (noisy, clean) pair as WAV files
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct InitArgs {
    /// Number of filters
    #[arg(long, default_value_t = 80)]
    n: usize,
    /// Kernel length L (odd)
    #[arg(long, default_value_t = 251)]
    kernel: usize,
    /// uniform | formant | mel
    #[arg(long, default_value = "uniform")]
    strategy: InitStrategy,
    #[arg(long, default_value = "reformed")]
    mode: Mode,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    /// Lower edge of the mel range, Hz
    #[arg(long, default_value_t = 0.0)]
    f_min: f64,
    /// Formant curve CSV (freq_hz,magnitude); a synthetic curve is used if omitted
    #[arg(long)]
    formant_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pmf_bins: usize,
    /// transposed | linear-combination | pseudo-inverse
    #[arg(long, default_value = "linear-combination")]
    decoder: DecoderVariant,
    #[arg(long, default_value_t = 1)]
    hop: usize,
    /// Enable per-channel layer normalization
    #[arg(long)]
    normalization: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    checkpoint: PathBuf,
    /// Edge threshold for filter classification
    #[arg(long, default_value_t = DEFAULT_CLASSIFY_EPS)]
    eps: f64,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Filter index
    #[arg(long)]
    index: usize,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Default)]
struct TrainFlags {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    decoder: Option<DecoderVariant>,
    #[arg(long)]
    init: Option<InitStrategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    normalization: Option<bool>,
    #[arg(long)]
    n_filters: Option<usize>,
    #[arg(long)]
    kernel_len: Option<usize>,
    #[arg(long)]
    f_min: Option<f64>,
    #[arg(long)]
    pmf_bins: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct SynthFlags {
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Tone frequencies in Hz, comma separated
    #[arg(long, value_delimiter = ',')]
    tones: Option<Vec<f64>>,
    /// Tone amplitudes, comma separated
    #[arg(long, value_delimiter = ',')]
    amps: Option<Vec<f64>>,
    /// Noise band edges in Hz: LO,HI
    #[arg(long, value_delimiter = ',', value_name = "LO,HI")]
    noise_band: Option<Vec<f64>>,
    #[arg(long)]
    input_snr_db: Option<f64>,
    /// Samples per example
    #[arg(long)]
    duration: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file with optional "train" and "synth" sections; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    synth: SynthFlags,
    /// Formant curve CSV for --init formant
    #[arg(long)]
    formant_csv: Option<PathBuf>,
    /// Checkpoint output
    #[arg(long)]
    out: PathBuf,
    /// Training history CSV (step,loss,val_sisnr_db,displacement)
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Clean reference for SI-SNR reporting
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckGradsArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 31)]
    kernel: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value = "linear-combination")]
    decoder: DecoderVariant,
    #[arg(long, default_value_t = 1)]
    hop: usize,
    #[arg(long)]
    normalization: bool,
    #[arg(long, default_value = "reformed")]
    mode: Mode,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ExportCfrArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = analysis::DEFAULT_CFR_GRID)]
    grid: usize,
}

#[derive(Debug, Args)]
struct ExportCutoffsArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// lower | upper
    #[arg(long, default_value = "lower")]
    sort: SortKey,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
    /// Example index within the seeded stream
    #[arg(long, default_value_t = 0)]
    index: u64,
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    clean: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConfigFile {
    train: Option<TrainConfig>,
    synth: Option<SynthSpec>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            steps,
            learning_rate,
            batch,
            hop,
            decoder,
            init,
            seed,
            mode,
            normalization,
            n_filters,
            kernel_len,
            f_min,
            pmf_bins
        );
    }
}

impl SynthFlags {
    fn apply(&self, s: &mut SynthSpec) -> Result<()> {
        if let Some(v) = self.sample_rate {
            s.sample_rate = v;
        }
        if let Some(v) = &self.tones {
            s.tone_freqs = v.clone();
            if self.amps.is_none() {
                s.tone_amps = vec![1.0; v.len()];
            }
        }
        if let Some(v) = &self.amps {
            s.tone_amps = v.clone();
        }
        if let Some(v) = &self.noise_band {
            if v.len() != 2 {
                return Err(invalid("--noise-band takes LO,HI"));
            }
            s.noise_band = (v[0], v[1]);
        }
        if let Some(v) = self.input_snr_db {
            s.input_snr_db = v;
        }
        if let Some(v) = self.duration {
            s.duration = v;
        }
        if let Some(v) = self.data_seed {
            s.seed = v;
        }
        Ok(())
    }
}

/// Parse `argv` (including the program name) and run; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Init(a) => cmd_init(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::CheckGrads(a) => cmd_check_grads(a),
        Command::ExportCfr(a) => cmd_export_cfr(a),
        Command::ExportCutoffs(a) => cmd_export_cutoffs(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn warn_all(notes: &io::AudioNotes, path: &Path) {
    for w in notes.warnings() {
        eprintln!("warning: {}: {w}", path.display());
    }
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let curve = a.formant_csv.as_deref().map(TabulatedCurve::from_csv).transpose()?;
    let config = TrainConfig {
        n_filters: a.n,
        kernel_len: a.kernel,
        init: a.strategy,
        mode: a.mode,
        seed: a.seed,
        f_min: a.f_min,
        pmf_bins: a.pmf_bins,
        decoder: a.decoder,
        hop: a.hop,
        normalization: a.normalization,
        ..TrainConfig::default()
    };
    let model = config.initial_model(a.sample_rate, curve.as_ref())?;
    Checkpoint::new(model).save(&a.out)?;
    println!("wrote {} filters ({} init, {} mode) to {}", a.n, a.strategy, a.mode, a.out.display());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = &ck.model;
    let fb = &model.filterbank;
    let census = analysis::filter_census(fb, a.eps);
    let counts = pipeline::parameter_count(fb, model.decoder.variant());
    println!("filters: {} (L = {}, fs = {} Hz, mode = {})", fb.len(), fb.kernel_len(), fb.sample_rate(), fb.mode());
    println!("decoder: {} (hop {}, normalization {})", model.decoder.variant(), model.hop, model.normalization);
    println!(
        "census: low_pass={} high_pass={} band_pass={} degenerate={} zero_gain={}",
        census.low_pass, census.high_pass, census.band_pass, census.degenerate, census.zero_gain
    );
    println!(
        "parameters: encoder={} dense_equivalent={} ({:.1}% fewer) decoder={} mask={}",
        counts.sinc_encoder,
        counts.dense_encoder,
        100.0 * counts.reduction(),
        counts.decoder,
        counts.mask
    );
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let fb = &ck.model.filterbank;
    if a.index >= fb.len() {
        return Err(invalid(format!("filter index {} out of range (bank has {})", a.index, fb.len())));
    }
    let (audio, notes) = io::read_wav(&a.input)?;
    warn_all(&notes, &a.input);
    check_rate(fb, &audio)?;
    let taps = fb.filter(a.index).taps;
    let out = trainer::filter_same(&audio.samples, &taps);
    let notes = io::write_wav(&AudioBuffer { samples: out, sample_rate: audio.sample_rate }, &a.out)?;
    warn_all(&notes, &a.out);
    Ok(())
}

fn check_rate(fb: &Filterbank, audio: &AudioBuffer) -> Result<()> {
    if fb.sample_rate() != audio.sample_rate {
        return Err(Error::SampleRateMismatch { checkpoint: fb.sample_rate(), audio: audio.sample_rate });
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let mut config = file.train.unwrap_or_default();
    a.train.apply(&mut config);
    let mut spec = file.synth.unwrap_or_default();
    a.synth.apply(&mut spec)?;
    let curve = a.formant_csv.as_deref().map(TabulatedCurve::from_csv).transpose()?;

    let (model, history) = trainer::train(&config, &spec, curve.as_ref())?;
    let ck = Checkpoint { train_config: Some(config), data_seed: Some(spec.seed), ..Checkpoint::new(model) };
    ck.save(&a.out)?;
    if let Some(h) = &a.history {
        io::write_atomic(h, history.to_csv().as_bytes())?;
    }
    let last = history.last().expect("at least one step");
    println!(
        "steps={} loss={:.4} val_si_snr_db={:.3} input_si_snr_db={:.3} improvement_db={:.3} displacement={:.6}",
        last.step,
        last.loss,
        last.val_sisnr_db,
        history.val_input_sisnr_db,
        history.improvement_db(),
        last.displacement
    );
    Ok(())
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (audio, notes) = io::read_wav(&a.input)?;
    warn_all(&notes, &a.input);
    check_rate(&ck.model.filterbank, &audio)?;
    let enhanced = ck.model.enhance(&audio.samples)?;
    if let Some(r) = &a.reference {
        let (reference, notes) = io::read_wav(r)?;
        warn_all(&notes, r);
        let out_db = si_snr(&enhanced, &reference.samples, SI_SNR_EPS)?;
        let in_db = si_snr(&audio.samples, &reference.samples, SI_SNR_EPS)?;
        println!("si_snr_db={out_db:.3} input_si_snr_db={in_db:.3} gain_db={:.3}", out_db - in_db);
    }
    let notes = io::write_wav(&AudioBuffer { samples: enhanced, sample_rate: audio.sample_rate }, &a.out)?;
    warn_all(&notes, &a.out);
    Ok(())
}

fn cmd_check_grads(a: CheckGradsArgs) -> Result<()> {
    let inst = CheckInstance {
        n_filters: a.n,
        kernel_len: a.kernel,
        samples: a.samples,
        decoder: a.decoder,
        hop: a.hop,
        normalization: a.normalization,
        mode: a.mode,
    };
    let (model, x, target) = autodiff::random_instance(a.seed, &inst)?;
    let report = autodiff::finite_difference_check(&model, &x, &target, a.step)?;
    let verdict = if report.passed(a.tolerance) { "PASS" } else { "FAIL" };
    println!(
        "{verdict} max_rel_error={:.3e} worst={} tolerance={:.0e}",
        report.max_rel_error, report.worst_param, a.tolerance
    );
    println!("{}", serde_json::to_string(&report)?);
    if report.passed(a.tolerance) {
        Ok(())
    } else {
        Err(Error::NumericFailure { stage: format!("gradient check ({})", report.worst_param) })
    }
}

fn load_bank(path: &Path) -> Result<Model> {
    Ok(Checkpoint::load(path)?.model)
}

fn cmd_export_cfr(a: ExportCfrArgs) -> Result<()> {
    let model = load_bank(&a.checkpoint)?;
    let cfr = analysis::cumulative_frequency_response(&model.filterbank, a.grid)?;
    io::write_atomic(&a.out, cfr.to_csv().as_bytes())
}

fn cmd_export_cutoffs(a: ExportCutoffsArgs) -> Result<()> {
    let model = load_bank(&a.checkpoint)?;
    let rows = analysis::export_cutoffs_and_gains(&model.filterbank, a.sort);
    io::write_atomic(&a.out, analysis::cutoffs_to_csv(&rows).as_bytes())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = load_config(a.config.as_deref())?.synth.unwrap_or_default();
    a.synth.apply(&mut spec)?;
    let pair = trainer::synth_pair(&spec, a.index)?;
    // keep the mixture inside the PCM16 range
    let peak = pair.noisy.iter().chain(&pair.clean).fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.99 { 0.99 / peak } else { 1.0 };
    for (path, sig) in [(&a.noisy, &pair.noisy), (&a.clean, &pair.clean)] {
        let samples = sig.iter().map(|v| v * scale).collect();
        io::write_wav(&AudioBuffer { samples, sample_rate: spec.sample_rate }, path)?;
    }
    println!(
        "wrote pair {} (input si_snr_db={:.3}) to {} and {}",
        a.index,
        si_snr(&pair.noisy, &pair.clean, SI_SNR_EPS)?,
        a.noisy.display(),
        a.clean.display()
    );
    Ok(())
}
