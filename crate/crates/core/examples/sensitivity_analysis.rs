//! Sensitivity of a ForestRiesz estimate to latent selection: scale factor,
//! robustness value and bounds on the calibrated selection axis.
//!
//! `cargo run --release --example sensitivity_analysis`

use riesz_selection::data::make_folds;
use riesz_selection::dgp::{gen_confounded, ConfoundedDgpConfig};
use riesz_selection::estimators::{attach_plugin, estimate_fr, FrConfig, LearnerConfig};
use riesz_selection::sensitivity::{analyze, SensitivityInputs, SensitivityOptions};

fn main() -> riesz_selection::Result<()> {
    let sample = gen_confounded(&ConfoundedDgpConfig::example(5000, 3))?;
    let data = &sample.data;
    let folds = make_folds(data, 3, 3)?;
    let est = estimate_fr(data, &folds, &FrConfig::default())?;
    let mut nuis = est.nuisances.clone().expect("FR keeps its nuisances");
    attach_plugin(&mut nuis, data, &folds, &LearnerConfig::parametric())?;

    let inputs = SensitivityInputs::new(nuis.residuals(data), nuis.alpha_hat.clone(), est.theta, est.se)?;
    let opts = SensitivityOptions { b_draws: 500, ..SensitivityOptions::default() };
    let (report, _) = analyze(&inputs, Some((&nuis.p1, &nuis.pi1, &nuis.pi0)), &opts)?;

    println!("theta_s {:.4} (se {:.4}), long target {:.4}", report.theta_s, report.se_s, sample.oracle.theta0);
    println!("S2 {:.4}  RV {:.4}", report.s2, report.robustness_value);
    println!("{:>6} {:>6} {:>8} {:>9} {:>9}", "cy2", "cs2", "bound", "ci_low", "ci_high");
    for p in &report.points {
        println!("{:>6.3} {:>6.3} {:>8.4} {:>9.4} {:>9.4}", p.cy2, p.cs2, p.bias_bound, p.ci_low, p.ci_high);
    }
    let c = sample.oracle.components();
    println!("population: cy2 {:.4} cs2 {:.4} rho {:.4} bias {:.4}", c.cy2, c.cs2, c.rho, c.bias);
    Ok(())
}
