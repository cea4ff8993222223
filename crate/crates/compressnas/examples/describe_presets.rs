//! Build every built-in preset and print its size and peak-RAM figures.
//!
//! Run with: cargo run --example describe_presets

use compressnas::presets::{build_preset, PRESET_NAMES};

fn main() {
    println!(
        "{:<16} {:>8} {:>12} {:>14} {:>16}",
        "preset", "layers", "params", "flash @1B (B)", "act. peak @4B (B)"
    );
    for name in PRESET_NAMES {
        let graph = build_preset(name).expect("preset builds");
        graph.validate().expect("preset validates");
        println!(
            "{:<16} {:>8} {:>12} {:>14} {:>16}",
            name,
            graph.layers.len(),
            graph.param_count(),
            graph.flash_bytes(1),
            graph.activation_peak(4).unwrap(),
        );
    }
}
