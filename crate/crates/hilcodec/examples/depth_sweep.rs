//! Variance dynamic range as the residual blocks per stage grow from 1 to 8:
//! roughly flat for the variance-constrained design, geometric for the plain
//! baseline.
//!
//!     cargo run --release --example depth_sweep

use hilcodec::analysis::depth_sweep;
use hilcodec::generator::{GeneratorConfig, VcdMode};

fn main() -> hilcodec::Result<()> {
    let cfg = GeneratorConfig::default();
    let depths: Vec<usize> = (1..=8).collect();
    let vcd = depth_sweep(&cfg, &depths, VcdMode::Vcd, 5)?;
    let base = depth_sweep(&cfg, &depths, VcdMode::Baseline, 5)?;
    println!("{:>5} {:>16} {:>16}", "depth", "constrained", "baseline");
    for (a, b) in vcd.iter().zip(&base) {
        println!("{:>5} {:>16.2} {:>16.1}", a.depth, a.dynamic_range, b.dynamic_range);
    }
    Ok(())
}
