//! Score decomposition proposals with the single-forward-pass MSE
//! proxy: calibrate once, then compare ranks on one layer.
//!
//! Run with: cargo run --example accuracy_proxy

use compressnas::estimate::{mse_proxy, Calibration};
use compressnas::exec::WeightResolver;
use compressnas::model::parse_model;
use compressnas::tucker2_decompose;

fn main() {
    let graph = parse_model(
        r#"{ "input_shape": [16, 20, 20], "layers": [
            { "id": "in", "kind": "input" },
            { "id": "c1", "kind": "conv", "in": 16, "out": 32, "k": 3, "pad": 1,
              "inputs": ["in"], "decomposable": true, "weights": {"seed": 11} },
            { "id": "c2", "kind": "conv", "in": 32, "out": 32, "k": 3, "pad": 1,
              "inputs": ["c1"], "decomposable": true, "weights": {"seed": 12} }
        ] }"#,
    )
    .expect("valid model");

    let resolver = WeightResolver::default();
    // One forward pass per calibration input caches what each conv sees.
    let calib = Calibration::seeded(&graph, &resolver, 42, 4).expect("calibration");

    let layer = graph.layer("c2").unwrap();
    let kernel = resolver.conv_kernel(layer).unwrap();
    println!("{:>5} {:>16} {:>16}", "rank", "relative MSE", "delta accuracy");
    for rank in [4, 8, 16, 24, 32] {
        let factors = tucker2_decompose(&kernel, rank, 2).unwrap();
        let score = mse_proxy(&graph, "c2", &factors, &calib, &resolver).unwrap();
        println!(
            "{:>5} {:>16.8} {:>16.8}",
            rank, score.relative_mse, score.delta_accuracy
        );
    }
}
