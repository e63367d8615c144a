//! Real-time-factor measurement: first the controlled-clock self-test of the
//! harness (must report exactly 2.0), then a real measurement on a small
//! codec under the 320-sample chunk protocol, single-threaded.
//!
//!     cargo run --release --example rtf_benchmark

use hilcodec::generator::{Codec, GeneratorConfig, NormStats, VcdMode};
use hilcodec::quantizer::QuantizerConfig;
use hilcodec::streaming::{bench_rtf, rtf_selftest, MonotonicClock};

fn main() -> hilcodec::Result<()> {
    let st = rtf_selftest(2.0, 320, 24_000);
    println!("harness self-test (virtual clock, 2x real time workload):");
    println!("  encode rtf {:.3}, decode rtf {:.3}", st.encode_rtf, st.decode_rtf);

    let cfg = GeneratorConfig::small();
    let qcfg = QuantizerConfig::new(4, 64, cfg.latent_dim);
    let codec = Codec::init(cfg, qcfg, VcdMode::Vcd, NormStats::identity(&GeneratorConfig::small()), 0)?;
    let mut clock = MonotonicClock::new();
    let r = bench_rtf(&codec, 4, 2.0, 320, &mut clock)?;
    println!("small codec, {} s of audio, chunk {}:", r.seconds, r.chunk);
    println!("  encode rtf {:.2}, decode rtf {:.2} (>1 means faster than real time)", r.encode_rtf, r.decode_rtf);
    Ok(())
}
