//! Quasi-Gaussian calibration curve `μ_S² ↦ C_S²` for a fixed set of
//! propensities, with Monte-Carlo errors and floor counts.
//!
//! `cargo run --release --example calibration_curve -- [b_draws]`

use riesz_selection::sensitivity::{calibrate_quasi_gaussian, default_mu2_grid};

fn main() -> riesz_selection::Result<()> {
    let b: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let n = 200;
    let p1: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * i as f64 / n as f64).collect();
    let pi1: Vec<f64> = (0..n).map(|i| 0.5 + 0.4 * ((i * 7) % n) as f64 / n as f64).collect();
    let pi0: Vec<f64> = pi1.iter().map(|p| p - 0.1).collect();
    let curve = calibrate_quasi_gaussian(&p1, &pi1, &pi0, &default_mu2_grid(), b, 11)?;
    println!("{:>6} {:>10} {:>10} {:>8} {:>8}", "mu2", "cs2", "mc_se", "R2", "floored");
    for g in 0..curve.mu2_grid.len() {
        println!(
            "{:>6.3} {:>10.5} {:>10.5} {:>8.4} {:>8}",
            curve.mu2_grid[g], curve.cs2_values[g], curve.mc_se[g], curve.r2_values[g], curve.floored[g]
        );
    }
    Ok(())
}
