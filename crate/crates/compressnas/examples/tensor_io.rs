//! Save a tensor in the CNT binary format, reload it bit-exactly, and
//! run a model whose conv weights come from that file.
//!
//! Run with: cargo run --example tensor_io

use compressnas::exec::{forward, seeded_gaussian_input, seeded_gaussian_tensor, WeightResolver};
use compressnas::model::parse_model;
use compressnas::cnt;

fn main() {
    let dir = std::env::temp_dir().join("compressnas_tensor_io");
    std::fs::create_dir_all(&dir).unwrap();

    // CNT payloads are f32; quantize first so the round trip is bit-exact.
    let mut kernel = seeded_gaussian_tensor(vec![4, 3, 3, 3], 99, 27);
    for v in kernel.data_mut() {
        *v = *v as f32 as f64;
    }
    let path = dir.join("c1.cnt");
    cnt::save(&path, &kernel).unwrap();
    let loaded = cnt::load(&path).unwrap();
    assert_eq!(kernel, loaded);
    println!("round-tripped {:?} through {}", kernel.shape(), path.display());

    let graph = parse_model(
        r#"{ "input_shape": [3, 8, 8], "layers": [
            { "id": "in", "kind": "input" },
            { "id": "c1", "kind": "conv", "in": 3, "out": 4, "k": 3, "pad": 1,
              "inputs": ["in"], "weights": "c1.cnt" }
        ] }"#,
    )
    .unwrap();
    let resolver = WeightResolver::new(Some(&dir));
    let out = forward(&graph, &seeded_gaussian_input([3, 8, 8], 1), &resolver).unwrap();
    println!("forward pass with file-backed weights: c1 -> {:?}", out["c1"].shape());
}
