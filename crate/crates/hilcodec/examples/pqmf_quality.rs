//! Filter-bank quality report: reconstruction SNR for each band count,
//! alias energy of the three decimation frontends, and the moving-average
//! response that motivates replacing average pooling.
//!
//!     cargo run --release --example pqmf_quality

use hilcodec::pqmf::{
    alias_energy, avgpool_response, chirp, design_pqmf_default, reconstruction_snr, Frontend,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hilcodec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f32> =
        (0..8192).map(|_| hilcodec::conv::sample_standard_normal(&mut rng) as f32).collect();

    println!("reconstruction SNR on white noise (delay compensated):");
    for n in [1usize, 2, 3, 5, 7, 11] {
        let bank = design_pqmf_default(n)?;
        let snr = reconstruction_snr(&bank, &noise)?;
        println!("  N={n:<2} taps={:<4} delay={:<4} snr={snr:>7.1} dB", bank.prototype.len(), bank.delay);
    }

    let sweep = chirp(16384, 0.0, 0.5);
    println!("\nalias energy, full-band sweep, decimation by 4:");
    for (name, fe) in [("plain", Frontend::Plain), ("avgpool", Frontend::AvgPool), ("pqmf", Frontend::Pqmf)] {
        println!("  {name:<8} {:.5}", alias_energy(&sweep, 4, fe)?);
    }

    let resp = avgpool_response(4, 8001);
    let sidelobe = resp
        .iter()
        .filter(|(f, _)| *f > 0.26)
        .map(|&(_, db)| db)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("\n4-tap average pooling: first sidelobe {sidelobe:.2} dB (flat passbands need much more attenuation)");
    Ok(())
}
