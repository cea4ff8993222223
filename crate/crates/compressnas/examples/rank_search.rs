//! The whole pipeline on a small network: calibrate, build the
//! proposal lookup table, solve the knapsack under a 50% flash budget,
//! and apply the winning ranks.
//!
//! Run with: cargo run --example rank_search

use compressnas::estimate::Calibration;
use compressnas::exec::WeightResolver;
use compressnas::model::parse_model;
use compressnas::search::{
    apply_selection, build_lookup_table, solve_mckp, Rank, SearchConfig,
};

fn main() {
    let graph = parse_model(
        r#"{ "input_shape": [16, 16, 16], "layers": [
            { "id": "in", "kind": "input" },
            { "id": "c1", "kind": "conv", "in": 16, "out": 32, "k": 3, "pad": 1,
              "inputs": ["in"], "decomposable": true, "weights": {"seed": 1} },
            { "id": "c2", "kind": "conv", "in": 32, "out": 32, "k": 3, "pad": 1,
              "inputs": ["c1"], "decomposable": true, "weights": {"seed": 2} },
            { "id": "c3", "kind": "conv", "in": 32, "out": 64, "k": 3, "stride": 2, "pad": 1,
              "inputs": ["c2"], "decomposable": true, "weights": {"seed": 3} },
            { "id": "c4", "kind": "conv", "in": 64, "out": 64, "k": 3, "pad": 1,
              "inputs": ["c3"], "decomposable": true, "weights": {"seed": 4} }
        ] }"#,
    )
    .expect("valid model");

    let original = graph.param_count();
    let cfg = SearchConfig {
        flash_max: original / 2,
        granularity: 64,
        calib_batch: 4,
        ..SearchConfig::default()
    };
    let resolver = WeightResolver::default();
    let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch).unwrap();
    let table = build_lookup_table(&graph, &calib, &cfg, &resolver).unwrap();
    println!(
        "lookup table: {} layers, {} proposals",
        table.layers.len(),
        table.layers.iter().map(|l| l.proposals.len()).sum::<usize>()
    );

    let selection = solve_mckp(&table, &cfg).expect("budget is feasible");
    for (layer, choice) in &selection.choices {
        match choice.rank {
            Rank::Keep => println!("  {layer}: keep"),
            Rank::Decompose(r) => println!(
                "  {layer}: rank {r} (saves {}, proxy {:.5})",
                choice.delta_flash, choice.delta_accuracy
            ),
        }
    }

    let compressed = apply_selection(&graph, &table, &selection, &cfg, &resolver).unwrap();
    println!("params: {original} -> {} (budget {})", compressed.param_count(), cfg.flash_max);
    assert!(compressed.param_count() <= cfg.flash_max);
    assert_eq!(
        compressed.param_count() as i64,
        original as i64 - selection.total_delta_flash
    );
}
