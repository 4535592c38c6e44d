//! A complete enhancement model: sinc encoder, per-band mask, decoder.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::Filterbank;
use crate::pipeline::{self, DecoderSpec, DecoderVariant, FrameMatrix, NormStats, PseudoInverse};

/// Epsilon added to the channel standard deviation in layer normalization.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub filterbank: Filterbank,
    /// One logit per band; the mask is `sigmoid(logit)`.
    pub mask_logits: Vec<f64>,
    pub decoder: DecoderSpec,
    pub hop: usize,
    pub normalization: bool,
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input zero-padded by M on both sides.
    pub padded: Vec<f64>,
    /// Windowed taps without band gains.
    pub unit_taps: Vec<Vec<f64>>,
    /// Convolution with unit-gain taps.
    pub conv: FrameMatrix,
    /// Normalized convolution output (present when normalization is on).
    pub normalized: Option<(FrameMatrix, NormStats)>,
    /// Features after band gains, before the mask.
    pub features: FrameMatrix,
    pub mask: Vec<f64>,
    pub masked: FrameMatrix,
    pub pinv: Option<PseudoInverse>,
    /// Decoder output trimmed back to the input length.
    pub output: Vec<f64>,
}

impl Model {
    pub fn new(filterbank: Filterbank, decoder: DecoderVariant, hop: usize, normalization: bool) -> Result<Self> {
        let decoder = DecoderSpec::initial(decoder, &filterbank);
        let model = Self { mask_logits: vec![0.0; filterbank.len()], filterbank, decoder, hop, normalization };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.filterbank.len();
        let l = self.filterbank.kernel_len();
        if self.hop == 0 {
            return Err(invalid("hop must be >= 1"));
        }
        if self.mask_logits.len() != n {
            return Err(Error::ShapeMismatch(format!("{} mask logits for {n} bands", self.mask_logits.len())));
        }
        match &self.decoder {
            DecoderSpec::LinearCombination { gamma } => {
                if self.hop != 1 {
                    return Err(Error::Unsupported(format!(
                        "linear-combination decoder requires hop 1, got {}",
                        self.hop
                    )));
                }
                if gamma.len() != n {
                    return Err(Error::ShapeMismatch(format!("{} decoder weights for {n} bands", gamma.len())));
                }
            }
            DecoderSpec::Transposed { synth_taps } => {
                if synth_taps.len() != n || synth_taps.iter().any(|r| r.len() != l) {
                    return Err(Error::ShapeMismatch(format!("synthesis filters must be {n}x{l}")));
                }
            }
            DecoderSpec::PseudoInverse => {}
        }
        let all_finite = self.mask_logits.iter().all(|v| v.is_finite())
            && match &self.decoder {
                DecoderSpec::LinearCombination { gamma } => gamma.iter().all(|v| v.is_finite()),
                DecoderSpec::Transposed { synth_taps } => synth_taps.iter().flatten().all(|v| v.is_finite()),
                DecoderSpec::PseudoInverse => true,
            };
        if !all_finite {
            return Err(invalid("model parameters must be finite"));
        }
        Ok(())
    }

    /// Padding applied to each side of the input (the filter center index).
    pub fn padding(&self) -> usize {
        self.filterbank.center()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.validate()?;
        if x.is_empty() {
            return Err(invalid("empty input signal"));
        }
        let bank = &self.filterbank;
        let pad = self.padding();
        let mut padded = vec![0.0; x.len() + 2 * pad];
        padded[pad..pad + x.len()].copy_from_slice(x);

        let unit_taps: Vec<Vec<f64>> = (0..bank.len()).map(|i| bank.unit_taps(i)).collect();
        let conv = pipeline::encode_with_taps(&padded, &unit_taps, self.hop)?;
        check(conv.data(), "encoder")?;

        let gains: Vec<f64> = bank.params().iter().map(|p| p.beta).collect();
        let normalized =
            if self.normalization { Some(pipeline::layer_normalize_with_stats(&conv, NORM_EPS)?) } else { None };
        let features = match &normalized {
            Some((norm, _)) => pipeline::scale_channels(norm, &gains)?,
            None => pipeline::scale_channels(&conv, &gains)?,
        };
        check(features.data(), "normalization")?;

        let mask_matrix = pipeline::estimate_mask(&features, &self.mask_logits)?;
        let mask: Vec<f64> = (0..bank.len()).map(|i| mask_matrix.get(i, 0)).collect();
        let masked = pipeline::apply_mask(&features, &mask_matrix)?;

        let (decoded, pinv) = match &self.decoder {
            DecoderSpec::Transposed { synth_taps } => (pipeline::decode_transposed(&masked, synth_taps)?, None),
            DecoderSpec::LinearCombination { gamma } => (pipeline::decode_linear_combination(&masked, gamma)?, None),
            DecoderSpec::PseudoInverse => {
                let taps: Vec<Vec<f64>> =
                    unit_taps.iter().zip(&gains).map(|(t, g)| t.iter().map(|v| v * g).collect()).collect();
                let p = PseudoInverse::from_taps(&taps)?;
                (p.decode(&masked)?, Some(p))
            }
        };
        let output = decoded[pad..pad + x.len()].to_vec();
        check(&output, "decoder")?;

        Ok(Forward { padded, unit_taps, conv, normalized, features, mask, masked, pinv, output })
    }

    /// Enhanced signal for `x`.
    pub fn enhance(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Visit every trainable scalar in a fixed order with its path.
    pub fn param_paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.filterbank.len() {
            out.push(format!("filter[{i}].a1_raw"));
            out.push(format!("filter[{i}].a2_raw"));
            out.push(format!("filter[{i}].beta"));
        }
        for i in 0..self.mask_logits.len() {
            out.push(format!("mask_logit[{i}]"));
        }
        match &self.decoder {
            DecoderSpec::LinearCombination { gamma } => {
                out.extend((0..gamma.len()).map(|i| format!("gamma[{i}]")));
            }
            DecoderSpec::Transposed { synth_taps } => {
                for (i, row) in synth_taps.iter().enumerate() {
                    out.extend((0..row.len()).map(|k| format!("synth[{i}][{k}]")));
                }
            }
            DecoderSpec::PseudoInverse => {}
        }
        out
    }

    /// All trainable scalars, in [`Model::param_paths`] order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.filterbank.params() {
            out.extend([p.a1_raw, p.a2_raw, p.beta]);
        }
        out.extend_from_slice(&self.mask_logits);
        match &self.decoder {
            DecoderSpec::LinearCombination { gamma } => out.extend_from_slice(gamma),
            DecoderSpec::Transposed { synth_taps } => out.extend(synth_taps.iter().flatten()),
            DecoderSpec::PseudoInverse => {}
        }
        out
    }

    /// Inverse of [`Model::params`]. Band gains are written as given; call
    /// [`Filterbank::project_gains`] to enforce `beta >= 0`.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params().len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params().len(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for p in self.filterbank.params_mut() {
            p.a1_raw = it.next().unwrap();
            p.a2_raw = it.next().unwrap();
            p.beta = it.next().unwrap();
        }
        for v in &mut self.mask_logits {
            *v = it.next().unwrap();
        }
        match &mut self.decoder {
            DecoderSpec::LinearCombination { gamma } => gamma.iter_mut().for_each(|g| *g = it.next().unwrap()),
            DecoderSpec::Transposed { synth_taps } => {
                synth_taps.iter_mut().flatten().for_each(|s| *s = it.next().unwrap())
            }
            DecoderSpec::PseudoInverse => {}
        }
        Ok(())
    }
}

fn check(values: &[f64], stage: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure { stage: stage.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{Mode, RawCutoffPair};

    fn identity_model() -> Model {
        let fb = Filterbank::from_normalized(16000, 31, Mode::Reformed, &[RawCutoffPair::new(0.0, 1.0)]).unwrap();
        let mut m = Model::new(fb, DecoderVariant::LinearCombination, 1, false).unwrap();
        m.mask_logits[0] = 60.0;
        m
    }

    #[test]
    fn all_pass_model_reproduces_input() {
        let m = identity_model();
        let x: Vec<f64> = (0..200).map(|n| ((n * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let y = m.enhance(&x).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let fb = Filterbank::from_normalized(
            16000,
            11,
            Mode::Reformed,
            &[RawCutoffPair::new(0.1, 0.3), RawCutoffPair::new(0.5, 0.6)],
        )
        .unwrap();
        let mut m = Model::new(fb, DecoderVariant::Transposed, 3, true).unwrap();
        let p = m.params();
        assert_eq!(p.len(), m.param_paths().len());
        assert_eq!(p.len(), 6 + 2 + 22);
        let shifted: Vec<f64> = p.iter().map(|v| v + 0.5).collect();
        m.set_params(&shifted).unwrap();
        assert_eq!(m.params(), shifted);
        assert!(m.set_params(&p[1..]).is_err());
    }

    #[test]
    fn lc_decoder_requires_dense_hop() {
        let fb = Filterbank::from_normalized(16000, 11, Mode::Reformed, &[RawCutoffPair::new(0.1, 0.3)]).unwrap();
        assert!(Model::new(fb, DecoderVariant::LinearCombination, 2, false).is_err());
    }
}
