//! Streaming neural audio codec engine.
//!
//! A causal convolutional encoder turns 24 kHz mono audio into one 128-dim
//! latent per 320 samples, a residual vector quantizer maps each latent to a
//! handful of codebook indices, and a mirrored decoder reconstructs the
//! waveform. The crate also ships the machinery around the codec: PQMF filter
//! banks and the discriminator frontends built on them, the loss suite with a
//! gradient balancer, bit-exact chunked streaming, signal-propagation and
//! complexity analysis, and a packed bitstream container.
//!
//! See the `examples/` directory for one runnable program per capability; the
//! `hilcodec` binary exposes the same operations as subcommands.

pub mod analysis;
pub mod bitstream;
pub mod conv;
pub mod disc;
pub mod error;
pub mod generator;
pub mod losses;
pub mod pqmf;
pub mod quantizer;
pub mod stft;
pub mod streaming;
pub mod tensor;
pub mod wav;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor3;
