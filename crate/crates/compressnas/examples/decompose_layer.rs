//! Factor one conv kernel at a sweep of ranks and show the trade-off
//! between reconstruction error and parameter savings.
//!
//! Run with: cargo run --example decompose_layer

use compressnas::decompose::{reconstruction_error, tucker2_decompose};
use compressnas::estimate::delta_flash;
use compressnas::exec::seeded_gaussian_tensor;

fn main() {
    let (m, n, k) = (64, 64, 3);
    let kernel = seeded_gaussian_tensor(vec![m, n, k, k], 7, n * k * k);
    println!("kernel [{m}, {n}, {k}, {k}], {} params", m * n * k * k);
    println!("{:>5} {:>14} {:>12}", "rank", "rel. error", "delta_flash");
    for rank in (8..=64).step_by(8) {
        let factors = tucker2_decompose(&kernel, rank, 2).expect("decompose");
        println!(
            "{:>5} {:>14.6} {:>12}",
            rank,
            reconstruction_error(&kernel, &factors),
            delta_flash(n, m, k, rank),
        );
    }
}
