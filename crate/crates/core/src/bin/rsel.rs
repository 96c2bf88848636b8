//! Command-line front end: simulate, estimate, sensitivity, benchmark and
//! simulate-study. Every report is pretty-printed JSON without timestamps,
//! so identical flags give identical bytes at any thread count.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use riesz_selection::benchmark::{benchmark_groups, write_table};
use riesz_selection::data::{load_csv, load_groups, make_folds, write_csv, CsvSchema, Dataset};
use riesz_selection::dgp::{gen_confounded, gen_mar, ConfoundedDgpConfig, MarDgpConfig, OracleTables};
use riesz_selection::estimators::{
    attach_plugin, estimate, nuisance_rows, read_nuisances, write_nuisances, AteEstimate, FrConfig, LearnerConfig, Method,
};
use riesz_selection::forest::{FeatureMapKind, ForestConfig};
use riesz_selection::learners::{OutcomeKind, PropensityKind};
use riesz_selection::mc::{format_table, histogram, run_mc, DgpChoice, McConfig};
use riesz_selection::sensitivity::{analyze, write_contour, SensitivityInputs, SensitivityOptions, DEFAULT_B_DRAWS};
use riesz_selection::{Error, Result};

#[derive(Parser)]
#[command(name = "rsel", version, about = "Debiased treatment effects under sample selection")]
struct Cli {
    /// Worker threads (defaults to RAYON_NUM_THREADS or the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sample and write it as CSV with a JSON sidecar.
    Simulate(SimulateArgs),
    /// Estimate the ATE with IRM, SSM or ForestRiesz.
    Estimate(EstimateArgs),
    /// Bias bounds, robustness value and calibration from an estimate.
    Sensitivity(SensitivityArgs),
    /// Drop covariate groups and report gain metrics.
    Benchmark(BenchmarkArgs),
    /// Monte-Carlo study over replications and sample sizes.
    SimulateStudy(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Mar,
    Confounded,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Irm,
    Ssm,
    Fr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Irm => Method::Irm,
            MethodArg::Ssm => Method::Ssm,
            MethodArg::Fr => Method::Fr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Constant,
    Intercepts,
    ArmLinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropensityArg {
    Logistic,
    Forest,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Linear,
    Forest,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    y: String,
    #[arg(long, default_value = "d")]
    d: String,
    #[arg(long, default_value = "s")]
    s: String,
    /// Columns to ignore, comma separated.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema { drop: self.drop.clone(), ..CsvSchema::new(&self.y, &self.d, &self.s) };
        load_csv(&self.data, &schema)
    }
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 25)]
    min_leaf: usize,
    #[arg(long, default_value_t = 20)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.5)]
    subsample: f64,
    #[arg(long)]
    mtry: Option<usize>,
    /// Relative Jacobian ridge.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    #[arg(long)]
    honest: bool,
    #[arg(long, default_value_t = 0.5)]
    multitask_weight: f64,
    /// Grow separate trees for the representer and the regression.
    #[arg(long)]
    separate_heads: bool,
    #[arg(long, default_value_t = 32)]
    max_candidates: usize,
    #[arg(long, value_enum, default_value_t = MapArg::ArmLinear)]
    feature_map: MapArg,
}

impl ForestArgs {
    fn forest(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            subsample_fraction: self.subsample,
            mtry: self.mtry,
            ridge: self.ridge,
            honest: self.honest,
            multitask_weight: self.multitask_weight,
            separate_heads: self.separate_heads,
            max_candidates: self.max_candidates,
            seed,
        }
    }

    fn fr(&self, seed: u64, level: f64) -> FrConfig {
        let feature_map = match self.feature_map {
            MapArg::Constant => FeatureMapKind::Constant,
            MapArg::Intercepts => FeatureMapKind::Intercepts,
            MapArg::ArmLinear => FeatureMapKind::ArmLinear,
        };
        FrConfig { feature_map, forest: self.forest(seed), level }
    }
}

#[derive(Args)]
struct LearnerArgs {
    #[arg(long, value_enum, default_value_t = PropensityArg::Logistic)]
    propensity: PropensityArg,
    /// Outcome learner for IRM and SSM.
    #[arg(long, value_enum)]
    outcome: Option<OutcomeArg>,
    /// Probability clipping bound.
    #[arg(long, default_value_t = 0.01)]
    clip: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

impl LearnerArgs {
    fn learners(&self, forest: ForestConfig, default_outcome: OutcomeKind) -> LearnerConfig {
        LearnerConfig {
            propensity: match self.propensity {
                PropensityArg::Logistic => PropensityKind::Logistic,
                PropensityArg::Forest => PropensityKind::Forest,
            },
            outcome: match self.outcome {
                Some(OutcomeArg::Linear) => OutcomeKind::Linear,
                Some(OutcomeArg::Forest) => OutcomeKind::Forest,
                None => default_outcome,
            },
            clip: self.clip,
            level: self.level,
            forest,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Design::Mar)]
    design: Design,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariates (MAR design).
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// True ATE (MAR design).
    #[arg(long, default_value_t = 1.0)]
    theta0: f64,
    /// Output CSV; the sidecar is written next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Fr)]
    method: MethodArg,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    learners: LearnerArgs,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-observation scores CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Per-observation nuisance CSV, the input of `sensitivity`.
    #[arg(long)]
    nuisances: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    /// JSON report written by `estimate`.
    #[arg(long)]
    report: PathBuf,
    /// Nuisance CSV written by `estimate --nuisances`.
    #[arg(long)]
    nuisances: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.03, 0.05, 0.1])]
    cy2: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.03, 0.05, 0.1])]
    mu2: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Contour resolution per axis.
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_B_DRAWS)]
    b_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read `mu2` as the technical axis instead of calibrating it.
    #[arg(long)]
    technical: bool,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Contour CSV.
    #[arg(long)]
    grid_csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON object mapping group names to column lists.
    #[arg(long)]
    groups: PathBuf,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// CSV table.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, value_enum, default_value_t = Design::Mar)]
    design: Design,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 4000])]
    sizes: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Irm, MethodArg::Ssm, MethodArg::Fr])]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    learners: LearnerArgs,
    /// Histogram bins.
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    design: &'static str,
    n: usize,
    n_selected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mar: Option<&'a MarDgpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confounded: Option<&'a ConfoundedDgpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<&'a OracleTables>,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let sidecar = a.out.with_extension("json");
    match a.design {
        Design::Mar => {
            let mut cfg = MarDgpConfig::new(a.n, a.seed).with_p(a.p);
            cfg.theta0 = a.theta0;
            let data = gen_mar(&cfg)?;
            write_csv(&data, &a.out)?;
            let meta = SimulateSidecar {
                design: "mar",
                n: data.n(),
                n_selected: data.selected_count(),
                mar: Some(&cfg),
                confounded: None,
                oracle: None,
            };
            write_json(&meta, Some(&sidecar))
        }
        Design::Confounded => {
            let cfg = ConfoundedDgpConfig::example(a.n, a.seed);
            let sample = gen_confounded(&cfg)?;
            write_csv(&sample.data, &a.out)?;
            let meta = SimulateSidecar {
                design: "confounded",
                n: sample.data.n(),
                n_selected: sample.data.selected_count(),
                mar: None,
                confounded: Some(&cfg),
                oracle: Some(&sample.oracle),
            };
            write_json(&meta, Some(&sidecar))
        }
    }
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    data: String,
    folds: usize,
    seed: u64,
    learners: &'a LearnerConfig,
    fr: &'a FrConfig,
    estimate: &'a AteEstimate,
}

fn estimate_cmd(a: &EstimateArgs) -> Result<()> {
    let data = a.data.load()?;
    let folds = make_folds(&data, a.folds, a.seed)?;
    let learners = a.learners.learners(a.forest.forest(a.seed), OutcomeKind::Forest);
    let fr = a.forest.fr(a.seed, a.learners.level);
    let mut est = estimate(&data, &folds, a.method.into(), &learners, &fr)?;
    if let Some(nuis) = est.nuisances.as_mut() {
        // Parametric plug-in propensities feed the calibration step.
        let plugin = LearnerConfig { propensity: PropensityKind::Logistic, ..learners.clone() };
        attach_plugin(nuis, &data, &folds, &plugin)?;
    }
    if let Some(path) = &a.scores {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["score"])?;
        for s in &est.scores {
            w.write_record([riesz_selection::data::format_f64(*s)])?;
        }
        w.flush()?;
    }
    if let (Some(path), Some(nuis)) = (&a.nuisances, &est.nuisances) {
        write_nuisances(&nuisance_rows(nuis, &data), create(path)?)?;
    }
    let report = EstimateReport {
        data: a.data.data.display().to_string(),
        folds: a.folds,
        seed: a.seed,
        learners: &learners,
        fr: &fr,
        estimate: &est,
    };
    write_json(&report, a.out.as_deref())
}

fn sensitivity_cmd(a: &SensitivityArgs) -> Result<()> {
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a.report)?)?;
    let est: AteEstimate = serde_json::from_value(report.get("estimate").cloned().unwrap_or(report))?;
    let rows = read_nuisances(File::open(&a.nuisances)?)?;
    // The unnormalized plug-in representer; the score's own representer
    // stands in where no plug-in was recorded.
    let alpha: Vec<f64> = rows.iter().map(|r| if r.alpha_plugin.is_nan() { r.alpha_hat } else { r.alpha_plugin }).collect();
    let residuals: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    let inputs = SensitivityInputs::new(residuals, alpha, est.theta, est.se)?;
    let p1: Vec<f64> = rows.iter().map(|r| r.p1).collect();
    let pi1: Vec<f64> = rows.iter().map(|r| r.pi1).collect();
    let pi0: Vec<f64> = rows.iter().map(|r| r.pi0).collect();
    let have_probs = p1.iter().chain(&pi1).chain(&pi0).all(|v| v.is_finite());
    if !a.technical && !have_probs {
        return Err(Error::Domain("nuisance table lacks propensities; rerun with --technical".into()));
    }
    let opts = SensitivityOptions {
        cy2: a.cy2.clone(),
        mu2: a.mu2.clone(),
        rho: a.rho,
        level: est.level,
        b_draws: a.b_draws,
        seed: a.seed,
        contour_resolution: a.grid,
        ..SensitivityOptions::default()
    };
    let probs = (!a.technical).then_some((p1.as_slice(), pi1.as_slice(), pi0.as_slice()));
    let (out, contour) = analyze(&inputs, probs, &opts)?;
    if let Some(path) = &a.grid_csv {
        write_contour(&contour, create(path)?)?;
    }
    write_json(&out, a.out.as_deref())
}

fn benchmark_cmd(a: &BenchmarkArgs) -> Result<()> {
    let data = a.data.load()?;
    let groups = load_groups(&a.groups, &data)?;
    let folds = make_folds(&data, a.folds, a.seed)?;
    let results = benchmark_groups(&data, &folds, &groups, &a.forest.fr(a.seed, a.level))?;
    if let Some(path) = &a.out {
        write_table(&results, create(path)?)?;
    }
    write_json(&results, a.report.as_deref())
}

fn study_cmd(a: &StudyArgs) -> Result<()> {
    let dgp = match a.design {
        Design::Mar => DgpChoice::Mar(MarDgpConfig::new(1000, 0)),
        Design::Confounded => DgpChoice::Confounded(ConfoundedDgpConfig::example(1000, 0)),
    };
    let cfg = McConfig {
        dgp,
        methods: a.methods.iter().map(|&m| m.into()).collect(),
        reps: a.reps,
        sample_sizes: a.sizes.clone(),
        base_seed: a.seed,
        folds: a.folds,
        learners: a.learners.learners(a.forest.forest(a.seed), OutcomeKind::Linear),
        fr: a.forest.fr(a.seed, a.learners.level),
    };
    let summary = run_mc(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_json(&summary, Some(&a.out.join("summary.json")))?;
    fs::write(a.out.join("summary.txt"), format_table(&summary))?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("reps.csv"))?);
    for r in &summary.reps {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&a.out.join("histogram.csv"))?);
    for b in histogram(&summary, a.bins) {
        w.serialize(b)?;
    }
    w.flush()?;
    print!("{}", format_table(&summary));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Sensitivity(a) => sensitivity_cmd(a),
        Command::Benchmark(a) => benchmark_cmd(a),
        Command::SimulateStudy(a) => study_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
