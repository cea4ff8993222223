//! The two structural rewrites: moving the stem's channel-restoring
//! projection past the first pool (cuts early-layer peak RAM), and
//! tapping backbone stages with 1x1 projections for a detection neck.
//!
//! Run with: cargo run --example graph_rewrites

use compressnas::model::{rewrite_neck_projection, rewrite_projection_stem};
use compressnas::presets::build_preset;

fn main() {
    // Peak-RAM rewrite, shown at detection resolution.
    let mut micro = build_preset("stresnet-micro").unwrap();
    micro.input_shape = [3, 320, 320];
    let micro = micro.finalize().unwrap();
    let before = micro.activation_peak(4).unwrap();
    let outcome = rewrite_projection_stem(&micro).unwrap();
    let after = outcome.graph.activation_peak(4).unwrap();
    println!("stem rewrite: {}", outcome.note);
    println!(
        "  activation peak {} -> {} bytes ({:.2}x)",
        before,
        after,
        before as f64 / after as f64
    );
    // Applying it again is a flagged no-op.
    let again = rewrite_projection_stem(&outcome.graph).unwrap();
    println!("  re-applied: applied={} ({})", again.applied, again.note);

    // Neck alignment taps on the three stages a detection neck consumes.
    let nano = build_preset("stresnet-nano").unwrap();
    let taps = vec![
        ("l2b2_add".to_string(), 64),
        ("l3b2_add".to_string(), 128),
        ("l4b2_add".to_string(), 256),
    ];
    let tapped = rewrite_neck_projection(&nano, &taps).unwrap();
    println!("neck taps: {}", tapped.note);
    println!(
        "  params {} -> {} (+{})",
        nano.param_count(),
        tapped.graph.param_count(),
        tapped.graph.param_count() - nano.param_count()
    );
    println!("  outputs: {:?}", tapped.graph.outputs);
}
