//! WAV audio, JSON checkpoints and atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::trainer::TrainConfig;

pub const STANDARD_SAMPLE_RATE: u32 = 16000;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Mono audio normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Diagnostics produced while reading or writing audio.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AudioNotes {
    pub downmixed_channels: Option<u16>,
    pub nonstandard_rate: bool,
    pub clipped: usize,
}

impl AudioNotes {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(ch) = self.downmixed_channels {
            out.push(format!("averaged {ch} channels to mono"));
        }
        if self.nonstandard_rate {
            out.push(format!("sample rate differs from the standard {STANDARD_SAMPLE_RATE} Hz"));
        }
        if self.clipped > 0 {
            out.push(format!("clipped {} samples to [-1, 1]", self.clipped));
        }
        out
    }
}

fn wav_err(path: &Path, detail: impl ToString) -> Error {
    Error::Wav { path: path.to_path_buf(), detail: detail.to_string() }
}

/// Read PCM16 or float32 WAV, averaging multichannel input to mono.
pub fn read_wav(path: &Path) -> Result<(AudioBuffer, AudioNotes)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, format!("data chunk: {e}")))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, format!("data chunk: {e}")))?,
        (fmt, bits) => {
            return Err(wav_err(path, format!("fmt chunk: unsupported {bits}-bit {fmt:?} samples")));
        }
    };
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err(path, "fmt chunk: zero channels"));
    }
    let mut notes = AudioNotes { nonstandard_rate: spec.sample_rate != STANDARD_SAMPLE_RATE, ..AudioNotes::default() };
    let samples = if channels == 1 {
        samples
    } else {
        notes.downmixed_channels = Some(spec.channels);
        samples.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect()
    };
    Ok((AudioBuffer { samples, sample_rate: spec.sample_rate }, notes))
}

/// Write mono PCM16, clipping to `[-1, 1]`. NaN samples are rejected.
pub fn write_wav(buffer: &AudioBuffer, path: &Path) -> Result<AudioNotes> {
    if buffer.samples.iter().any(|v| v.is_nan()) {
        return Err(invalid("cannot write NaN samples"));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut notes = AudioNotes::default();
    let mut bytes = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut bytes, spec).map_err(|e| wav_err(path, e))?;
        for &s in &buffer.samples {
            let clipped = s.clamp(-1.0, 1.0);
            if clipped != s {
                notes.clipped += 1;
            }
            let q = (clipped * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(q).map_err(|e| wav_err(path, e))?;
        }
        writer.finalize().map_err(|e| wav_err(path, e))?;
    }
    write_atomic(path, bytes.get_ref())?;
    Ok(notes)
}

/// Write `contents` to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Versioned model snapshot. Stores raw parameters only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { version: CHECKPOINT_VERSION, model, train_config: None, data_seed: None }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Filterbank, Mode, RawCutoffPair};
    use crate::pipeline::DecoderVariant;

    fn write_pcm16(path: &Path, channels: u16, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_reads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_pcm16(&p, 1, &vec![0; 16000]);
        let (buf, notes) = read_wav(&p).unwrap();
        assert_eq!(buf.samples.len(), 16000);
        assert!(buf.samples.iter().all(|&v| v == 0.0));
        assert!(notes.warnings().is_empty());
    }

    #[test]
    fn square_wave_normalization_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let raw: Vec<i16> = (0..200).map(|n| if (n / 10) % 2 == 0 { 32767 } else { -32768 }).collect();
        write_pcm16(&p, 1, &raw);
        let (buf, _) = read_wav(&p).unwrap();
        assert_eq!(buf.samples[0], 32767.0 / 32768.0);
        assert_eq!(buf.samples[10], -1.0);
        let q = dir.path().join("sq2.wav");
        write_wav(&buf, &q).unwrap();
        let (again, _) = read_wav(&q).unwrap();
        assert_eq!(again, buf);
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_pcm16(&p, 2, &[16384, 0, -16384, -16384]);
        let (buf, notes) = read_wav(&p).unwrap();
        assert_eq!(buf.samples, vec![0.25, -0.5]);
        assert_eq!(notes.downmixed_channels, Some(2));
    }

    #[test]
    fn float_wav_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for s in [0.5f32, -0.25] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let (buf, notes) = read_wav(&p).unwrap();
        assert_eq!(buf.samples, vec![0.5, -0.25]);
        assert!(notes.nonstandard_rate);
    }

    #[test]
    fn unsupported_and_truncated_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("fmt chunk"), "{err}");

        let q = dir.path().join("t.wav");
        write_pcm16(&q, 1, &[1, 2, 3, 4, 5, 6]);
        let bytes = std::fs::read(&q).unwrap();
        std::fs::write(&q, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_wav(&q).is_err());
    }

    #[test]
    fn write_clips_and_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let buf = AudioBuffer { samples: vec![2.0, -2.0, 0.5], sample_rate: 16000 };
        assert_eq!(write_wav(&buf, &p).unwrap().clipped, 2);
        let empty = AudioBuffer { samples: vec![], sample_rate: 16000 };
        write_wav(&empty, &p).unwrap();
        assert!(read_wav(&p).unwrap().0.samples.is_empty());
        let nan = AudioBuffer { samples: vec![f64::NAN], sample_rate: 16000 };
        assert!(write_wav(&nan, &p).is_err());
    }

    #[test]
    fn checkpoint_bytes_are_stable() {
        let fb = Filterbank::from_normalized(
            16000,
            31,
            Mode::Reformed,
            &[RawCutoffPair::new(0.123456789012345, 0.9), RawCutoffPair::new(1.0 / 3.0, 0.7)],
        )
        .unwrap();
        let mut model = Model::new(fb, DecoderVariant::Transposed, 4, true).unwrap();
        model.mask_logits = vec![0.1, -2.0 / 7.0];
        let ck = Checkpoint::new(model);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        back.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn checkpoint_version_checked() {
        let fb = Filterbank::from_normalized(16000, 31, Mode::Reformed, &[RawCutoffPair::new(0.1, 0.9)]).unwrap();
        let ck = Checkpoint::new(Model::new(fb, DecoderVariant::PseudoInverse, 31, false).unwrap());
        let s = ck.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(Checkpoint::from_json(&s), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::load(Path::new("/nonexistent/ck.json")).is_err());
    }
}
