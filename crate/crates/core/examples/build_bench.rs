//! Builds or resumes a groundtruth bench table: `build_bench <out.csv> [size] [seed]`.

use std::path::PathBuf;
use std::time::Instant;

use regnas::bench::{build_bench_table, BenchConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> regnas::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let path = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("bench/bench32.csv"));
    let size = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = BenchConfig::new(size, seed);
    let start = Instant::now();
    let table = build_bench_table(&path, &cfg, 1, |id, acc| {
        println!("{id} {acc:.4} ({:.0}s)", start.elapsed().as_secs_f64());
    })?;
    println!("{} rows in {}", table.len(), path.display());
    Ok(())
}
