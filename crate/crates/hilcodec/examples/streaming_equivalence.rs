//! Feed the same audio through the offline path and through chunked
//! streaming with several chunkings, and verify the outputs are bitwise
//! identical.
//!
//!     cargo run --release --example streaming_equivalence

use hilcodec::generator::{Codec, GeneratorConfig, NormStats, VcdMode};
use hilcodec::quantizer::QuantizerConfig;
use hilcodec::streaming::{DecoderStream, EncoderStream};
use hilcodec::tensor::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hilcodec::Result<()> {
    let cfg = GeneratorConfig::small();
    let qcfg = QuantizerConfig::new(4, 64, cfg.latent_dim);
    let codec = Codec::init(cfg, qcfg, VcdMode::Vcd, NormStats::identity(&GeneratorConfig::small()), 3)?;
    let codec = Codec { generator: codec.generator.with_residual_gains(0.5), books: codec.books };

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let audio: Vec<f32> = (0..24_000)
        .map(|_| (hilcodec::conv::sample_standard_normal(&mut rng) as f32 * 0.25).clamp(-1.0, 1.0))
        .collect();

    let offline_frames = codec.encode_frames(&Tensor3::from_samples(&audio), 4)?;
    let offline_wave = codec.decode_frames(&offline_frames, 1)?;

    for chunk in [320usize, 640, 997, 24_000] {
        let mut enc = EncoderStream::new(&codec, 4)?;
        let mut frames = Vec::new();
        for c in audio.chunks(chunk) {
            frames.extend(enc.push(c)?);
        }
        assert_eq!(frames, offline_frames, "chunk={chunk}: frames diverged");

        let mut dec = DecoderStream::new(&codec);
        let mut wave = Vec::new();
        for f in frames.chunks((chunk / 320).max(1)) {
            wave.extend(dec.push(f)?);
        }
        let bitwise = wave
            .iter()
            .zip(&offline_wave.data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(bitwise, "chunk={chunk}: samples diverged");
        println!("chunk {chunk:>6}: {} frames, {} samples, bitwise identical", frames.len(), wave.len());
    }
    println!("streaming == offline for every chunking");
    Ok(())
}
