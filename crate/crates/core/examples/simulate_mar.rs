//! Draws a MAR sample and writes it as CSV to stdout.
//!
//! `cargo run --release --example simulate_mar -- [n] [seed] > mar.csv`

use riesz_selection::data::write_csv_to;
use riesz_selection::dgp::{gen_mar, MarDgpConfig};

fn main() -> riesz_selection::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let data = gen_mar(&MarDgpConfig::new(n, seed))?;
    eprintln!("n = {}, selected = {}, p = {}", data.n(), data.selected_count(), data.p());
    write_csv_to(&data, std::io::stdout().lock())
}
