//! Learnable windowed-sinc filterbanks for time-domain speech enhancement.
//!
//! Each encoder channel is a Hamming-windowed band-pass FIR whose two cutoffs
//! are mapped from unconstrained raw parameters onto `[0, Nyquist]` and scaled
//! by a nonnegative band gain. The crate provides the encoder, three decoders
//! (overlap-add synthesis, softmax linear combination, pseudo-inverse), exact
//! reverse-mode gradients, a small Adam trainer on synthetic data, and
//! interpretability exports.

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod filter;
pub mod init;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
pub use filter::{BandParams, FilterSpec, FilterType, Filterbank, Mode, NormalizedBand, RawCutoffPair};
pub use model::Model;
pub use pipeline::{DecoderSpec, DecoderVariant, FrameMatrix, Mask};
