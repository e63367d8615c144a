//! Compare activation variance across the network depth for the
//! variance-constrained design against the plain residual baseline, with
//! residual gains forced to 1 to expose the branch statistics.
//!
//!     cargo run --release --example signal_propagation

use hilcodec::analysis::signal_propagation;
use hilcodec::generator::{GeneratorConfig, VcdMode};

fn main() -> hilcodec::Result<()> {
    let cfg = GeneratorConfig::default();
    let vcd = signal_propagation(&cfg, 7, VcdMode::Vcd, true)?;
    let base = signal_propagation(&cfg, 7, VcdMode::Baseline, true)?;

    println!("{:<18} {:>14} {:>14}", "tap", "constrained", "baseline");
    for (name, v) in &vcd.taps {
        let b = base.variance_of(name).unwrap_or(f32::NAN);
        println!("{name:<18} {v:>14.4} {b:>14.1}");
    }
    println!();
    println!("dynamic range: constrained {:.2}, baseline {:.1}", vcd.dynamic_range(), base.dynamic_range());
    println!("block terminal ratios (constrained, target 2):");
    for (name, r) in vcd.per_block_terminal_ratios(&cfg) {
        println!("  {name}: {r:.3}");
    }
    Ok(())
}
