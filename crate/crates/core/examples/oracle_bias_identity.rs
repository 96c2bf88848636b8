//! On the discrete confounded design everything is enumerable: the gap
//! between the short and long targets equals the covariance of outcome and
//! representer errors, and the bias bound at the population parameters is
//! attained.
//!
//! `cargo run --release --example oracle_bias_identity`

use riesz_selection::dgp::{ConfoundedDgpConfig, OracleTables};
use riesz_selection::sensitivity::bias_bound;

fn main() -> riesz_selection::Result<()> {
    let oracle = OracleTables::from_config(&ConfoundedDgpConfig::example(1, 0))?;
    let c = oracle.components();
    println!("theta0 {:.6}  theta_s {:.6}", oracle.theta0, oracle.theta_s);
    println!("theta0 - theta_s      {:+.6}", c.bias);
    println!("E[(g0-gs)(a0-as)]     {:+.6}", c.covariance);
    println!("cy2 {:.4}  cs2 {:.4}  rho {:+.4}  S2 {:.4}", c.cy2, c.cs2, c.rho, c.s2);
    println!("bound at these values {:.6}", bias_bound(c.s2, c.cy2, c.cs2, c.rho)?);
    Ok(())
}
