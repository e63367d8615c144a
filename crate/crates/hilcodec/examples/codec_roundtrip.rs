//! Initialize a codec, run a waveform through encode -> RVQ -> bitstream ->
//! decode, and report shapes, bitrate, and reconstruction statistics.
//!
//!     cargo run --release --example codec_roundtrip

use hilcodec::bitstream;
use hilcodec::generator::{Codec, GeneratorConfig, NormStats, VcdMode};
use hilcodec::quantizer::QuantizerConfig;
use hilcodec::tensor::Tensor3;

fn main() -> hilcodec::Result<()> {
    let cfg = GeneratorConfig::default();
    let qcfg = QuantizerConfig::new(12, 1024, cfg.latent_dim);
    let stats = NormStats::identity(&cfg);
    let codec = Codec::init(cfg.clone(), qcfg, VcdMode::Vcd, stats, 7)?;

    // one second of a 440 Hz tone with a little noise
    let sr = cfg.sample_rate as f64;
    let audio: Vec<f32> = (0..cfg.sample_rate as usize)
        .map(|i| {
            let t = i as f64 / sr;
            (0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.01 * ((i * 2654435761) % 1000) as f64 / 1000.0) as f32
        })
        .collect();
    let wave = Tensor3::from_samples(&audio);

    for nq in [4usize, 12] {
        let frames = codec.encode_frames(&wave, nq)?;
        let bytes = bitstream::pack(
            &frames,
            cfg.sample_rate,
            cfg.hop() as u16,
            codec.books.cfg.bits_per_stage(),
            nq as u8,
        )?;
        let (header, unpacked) = bitstream::unpack(&bytes)?;
        assert_eq!(unpacked, frames);
        let out = codec.decode_frames(&frames, 1)?;
        let peak = out.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        println!(
            "nq={nq:2}  frames={}  container={} bytes  bitrate={} bps  decoded={} samples  peak={peak:.3}",
            frames.len(),
            bytes.len(),
            header.bitrate_bps(),
            out.time,
        );
    }
    Ok(())
}
