//! A small Monte-Carlo study on the MAR design: bias, spread and coverage
//! per estimator and sample size.
//!
//! `cargo run --release --example monte_carlo_study -- [reps]`

use riesz_selection::forest::ForestConfig;
use riesz_selection::mc::{format_table, histogram, run_mc, McConfig};

fn main() -> riesz_selection::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let mut cfg = McConfig::desk_scale();
    cfg.reps = reps;
    cfg.sample_sizes = vec![500, 1000];
    cfg.fr.forest = ForestConfig { n_trees: 50, ..cfg.fr.forest };
    let summary = run_mc(&cfg)?;
    print!("{}", format_table(&summary));
    for bin in histogram(&summary, 8).iter().filter(|b| b.n == 1000) {
        println!("{:<4} [{:>7.3}, {:>7.3}) {}", bin.method.name(), bin.lo, bin.hi, "#".repeat(bin.count));
    }
    Ok(())
}
