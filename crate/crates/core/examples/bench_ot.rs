//! Times one exact solve: `cargo run --release --example bench_ot -- <n> <d> <std>`.

use got_core::{make_empirical, sample_source, solve_transport, SeedTuple, SourceSpec};
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let d: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let spec = SourceSpec::gaussian(d, std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1.0));
    let a = sample_source(&spec, n, SeedTuple::new(1)).unwrap();
    let b = sample_source(&spec, n, SeedTuple::new(2)).unwrap();
    let t = Instant::now();
    let s = solve_transport(&make_empirical(a).unwrap(), &make_empirical(b).unwrap()).unwrap();
    println!("n={n} d={d} cost={} pivots={} {:?}", s.cost, s.iterations, t.elapsed());
}
