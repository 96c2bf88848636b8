//! Fits ForestRiesz on one MAR sample and compares it with the baselines.
//!
//! `cargo run --release --example forest_riesz -- [n] [seed]`

use std::time::Instant;

use riesz_selection::data::make_folds;
use riesz_selection::dgp::{gen_mar, MarDgpConfig};
use riesz_selection::estimators::{estimate_fr, estimate_irm, estimate_ssm, FrConfig, IrmSample, LearnerConfig};

fn main() -> riesz_selection::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let data = gen_mar(&MarDgpConfig::new(n, seed))?;
    let folds = make_folds(&data, 3, seed)?;
    let learners = LearnerConfig::parametric();

    let t = Instant::now();
    let fr = estimate_fr(&data, &folds, &FrConfig::default())?;
    println!("FR   theta {:.4} se {:.4}  ({:.2?})", fr.theta, fr.se, t.elapsed());
    let ssm = estimate_ssm(&data, &folds, &learners, true)?;
    println!("SSM  theta {:.4} se {:.4}", ssm.theta, ssm.se);
    let irm = estimate_irm(&data, &folds, &learners, IrmSample::ZeroFilled)?;
    println!("IRM  theta {:.4} se {:.4}", irm.theta, irm.se);
    Ok(())
}
