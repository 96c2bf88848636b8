//! Benchmarks sensitivity parameters against observed covariates: each
//! covariate is dropped in turn and the outcome and representer gains are
//! reported.
//!
//! `cargo run --release --example benchmark_groups`

use riesz_selection::benchmark::{benchmark_groups, write_table};
use riesz_selection::data::{make_folds, CovariateGroup};
use riesz_selection::dgp::{gen_mar, MarDgpConfig};
use riesz_selection::estimators::FrConfig;

fn main() -> riesz_selection::Result<()> {
    let data = gen_mar(&MarDgpConfig::new(3000, 5))?;
    let folds = make_folds(&data, 3, 5)?;
    let groups: Vec<CovariateGroup> = data
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| CovariateGroup { name: name.clone(), indices: vec![j] })
        .collect();
    let results = benchmark_groups(&data, &folds, &groups, &FrConfig::default())?;
    write_table(&results, std::io::stdout().lock())
}
