//! Exact parameter and multiply-add accounting for the default codec, plus
//! the 2f-model score mapping on a small grid.
//!
//!     cargo run --release --example complexity_report

use hilcodec::analysis::{count_complexity, two_f_model_score};
use hilcodec::generator::GeneratorConfig;
use hilcodec::quantizer::QuantizerConfig;

fn main() -> hilcodec::Result<()> {
    let cfg = GeneratorConfig::default();
    let qcfg = QuantizerConfig::new(12, 1024, cfg.latent_dim);
    let r = count_complexity(&cfg, &qcfg)?;
    println!("parameters:");
    println!("  encoder   {:>12}", r.params_encoder);
    println!("  decoder   {:>12}", r.params_decoder);
    println!("  quantizer {:>12}", r.params_quantizer);
    println!("  total     {:>12}", r.params_total());
    println!("multiply-adds per second of audio:");
    println!("  encode    {:>12}  ({:.2} G)", r.mac_encode, r.mac_encode as f64 / 1e9);
    println!("  decode    {:>12}  ({:.2} G)", r.mac_decode, r.mac_decode as f64 / 1e9);

    println!("\n2f-model score (rows: AvgModDiff1, cols: ADB):");
    print!("{:>8}", "");
    for adb in [0.0, 1.0, 2.0, 3.0] {
        print!("{adb:>8.1}");
    }
    println!();
    for amd in [0.0, -20.0, -50.0, -100.0] {
        print!("{amd:>8.1}");
        for adb in [0.0, 1.0, 2.0, 3.0] {
            print!("{:>8.2}", two_f_model_score(amd, adb));
        }
        println!();
    }
    Ok(())
}
