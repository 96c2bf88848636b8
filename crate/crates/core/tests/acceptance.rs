//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). By default it reports and
//! exits 0 so the workspace test run completes; `ACCEPTANCE_STRICT=1`
//! turns any FAIL into a non-zero exit.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use riesz_selection::benchmark::benchmark_group;
use riesz_selection::data::{make_folds, CovariateGroup};
use riesz_selection::dgp::{gen_confounded, gen_mar, ConfoundedDgpConfig, MarDgpConfig, OracleTables};
use riesz_selection::estimators::{estimate_dr_with, representer_check, FrConfig, Method};
use riesz_selection::mc::{run_mc, McConfig};
use riesz_selection::normal;
use riesz_selection::rng;
use riesz_selection::sensitivity::{
    bias_bound, calibrate_quasi_gaussian, mixture_mean, robustness_value, PROBABILITY_FLOOR,
};

struct Outcome {
    id: &'static str,
    pass: bool,
}

fn line(out: &mut Vec<Outcome>, id: &'static str, pass: bool, detail: String) {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass });
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Criteria 1 to 3 share one desk-scale study.
fn study(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let cfg = McConfig::desk_scale();
    let summary = match run_mc(&cfg) {
        Ok(s) => s,
        Err(e) => {
            for id in ["1", "2", "3"] {
                line(out, id, false, format!("study aborted: {e}"));
            }
            return;
        }
    };
    let secs = t.elapsed().as_secs_f64();
    let cell = |m: Method, n: usize| summary.cell(m, n).expect("cell present");
    let (irm, fr4, fr1, ssm) = (cell(Method::Irm, 4000), cell(Method::Fr, 4000), cell(Method::Fr, 1000), cell(Method::Ssm, 4000));
    let a = irm.mean_ate <= 0.85;
    let b = (0.95..=1.20).contains(&fr4.mean_ate) && fr4.mae <= 0.15;
    let c = fr4.mae < fr1.mae;
    let runtime = secs <= 900.0;
    line(
        out,
        "1",
        a && b && c && runtime,
        format!(
            "(a) IRM mean ATE n=4000 {:.4} <= 0.85 [{}]; (b) FR mean ATE {:.4} in [0.95, 1.20], MAE {:.4} <= 0.15 [{}]; \
             (c) FR MAE {:.4} (n=4000) < {:.4} (n=1000) [{}]; runtime {:.0}s <= 900s [{}]",
            irm.mean_ate,
            ok(a),
            fr4.mean_ate,
            fr4.mae,
            ok(b),
            fr4.mae,
            fr1.mae,
            ok(c),
            secs,
            ok(runtime)
        ),
    );
    let pass2 = (0.98..=1.08).contains(&ssm.mean_ate) && ssm.mae <= 0.06;
    line(out, "2", pass2, format!("SSM n=4000 mean ATE {:.4} in [0.98, 1.08], MAE {:.4} <= 0.06", ssm.mean_ate, ssm.mae));
    let mut pass3 = true;
    let mut parts = Vec::new();
    for m in [Method::Irm, Method::Ssm, Method::Fr] {
        let r = cell(m, 4000).mean_se / cell(m, 1000).mean_se;
        let p = (0.4..=0.6).contains(&r);
        pass3 &= p;
        parts.push(format!("{m} {r:.3} [{}]", ok(p)));
    }
    line(out, "3", pass3, format!("mean SE ratio n=4000/n=1000 in [0.4, 0.6]: {}", parts.join(", ")));
    let failed: usize = summary.cells.iter().map(|c| c.reps_failed).sum();
    println!("       study cells: {} failed replications in total", failed);
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn bias_identity(out: &mut Vec<Outcome>) {
    let o = OracleTables::from_config(&ConfoundedDgpConfig::example(1, 0)).expect("valid example");
    let c = o.components();
    let rel_cov = (c.bias - c.covariance).abs() / c.bias.abs();
    let product = c.rho * (c.s2 * c.cy2 * c.cs2).sqrt();
    let rel_prod = (c.bias - product).abs() / c.bias.abs();
    line(
        out,
        "4",
        rel_cov <= 1e-10 && rel_prod <= 1e-10,
        format!(
            "theta0 - theta_s = {:.12}; covariance rel err {rel_cov:.2e}, rho*S*C_Y*C_S rel err {rel_prod:.2e} (<= 1e-10)",
            c.bias
        ),
    );
}

fn riesz_identity(out: &mut Vec<Outcome>) {
    let sample = gen_confounded(&ConfoundedDgpConfig::example(100_000, 11)).expect("sample");
    let o = &sample.oracle;
    let data = &sample.data;
    let alpha: Vec<f64> = (0..data.n()).map(|i| o.alpha_s(data.d()[i], sample.x_index[i], data.s()[i])).collect();
    type G = Box<dyn Fn(u8, &[f64], u8) -> f64>;
    let tests: Vec<(&str, G)> = vec![
        ("d*s", Box::new(|d, _, s| (d * s) as f64)),
        ("s*(1+x)*(1+d)", Box::new(|d, x, s| s as f64 * (1.0 + x[0]) * (1.0 + d as f64))),
        ("s*(2d-1)*exp(x)", Box::new(|d, x, s| s as f64 * (2.0 * d as f64 - 1.0) * x[0].exp())),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, g) in &tests {
        let r = representer_check(&alpha, g, data).expect("check");
        let z = (r.lhs - r.rhs) / r.se;
        pass &= z.abs() <= 3.0;
        parts.push(format!("{name}: lhs {:.4} rhs {:.4} z {z:.2}", r.lhs, r.rhs));
    }
    line(out, "5", pass, format!("|mean(alpha*g) - mean(m(g))| <= 3 MC-SE at n=1e5: {}", parts.join("; ")));
}

/// True MAR nuisances: `p_1 = Φ(x'β)`, `π(d, x) = Φ(d + x'β)`,
/// `g(d, x) = θ d + x'β`.
fn double_robustness(out: &mut Vec<Outcome>) {
    let reps = 30;
    let (mut bad_alpha, mut bad_g) = (Vec::new(), Vec::new());
    for r in 0..reps {
        let cfg = MarDgpConfig::new(4000, 6000 + r);
        let data = gen_mar(&cfg).expect("sample");
        let n = data.n();
        let mut alpha = vec![0.0; n];
        let mut alpha_bad = vec![0.0; n];
        let (mut g1, mut g0, mut g1_bad, mut g0_bad) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let x = data.row(i);
            let xb: f64 = x.iter().zip(&cfg.beta0).map(|(a, b)| a * b).sum();
            let (d, s) = (data.d()[i], data.s()[i]);
            let p1 = normal::cdf(xb);
            let a = match (d, s) {
                (_, 0) => 0.0,
                (1, _) => 1.0 / (p1 * normal::cdf(1.0 + xb)),
                _ => -1.0 / ((1.0 - p1) * normal::cdf(xb)),
            };
            alpha[i] = a;
            alpha_bad[i] = a * (1.0 + 0.5 * x[0].sin());
            g1[i] = cfg.theta0 + xb;
            g0[i] = xb;
            g1_bad[i] = g1[i] + 0.5 * x[1].cos() + 0.3;
            g0_bad[i] = g0[i] - 0.4 * x[0].tanh();
        }
        bad_alpha.push(estimate_dr_with(&data, &alpha_bad, &g1, &g0, 0.95).expect("estimate").theta - cfg.theta0);
        bad_g.push(estimate_dr_with(&data, &alpha, &g1_bad, &g0_bad, 0.95).expect("estimate").theta - cfg.theta0);
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, v) in [("alpha corrupted, g exact", &bad_alpha), ("g corrupted, alpha exact", &bad_g)] {
        let (m, sd) = mean_sd(v);
        let mcse = sd / (v.len() as f64).sqrt();
        pass &= m.abs() <= 3.0 * mcse;
        parts.push(format!("{name}: bias {m:.4}, MC-SE {mcse:.4}"));
    }
    line(out, "6", pass, format!("30 reps n=4000, |bias| <= 3 MC-SE: {}", parts.join("; ")));
}

/// `E[min(1/Φ(−A), 1/floor)]` for `A ~ N(0, 1)` by composite Simpson on
/// both sides of the floor kink plus the exact tail mass beyond it.
fn floored_inverse_cdf_moment(floor: f64) -> f64 {
    let kink = -normal::quantile(floor);
    let f = |a: f64| normal::pdf(a) / normal::cdf(-a).max(floor);
    let simpson = |lo: f64, hi: f64, m: usize| {
        let h = (hi - lo) / m as f64;
        let mut s = f(lo) + f(hi);
        for k in 1..m {
            s += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    simpson(-40.0, kink, 2_000_000) + normal::sf(kink) / floor
}

fn calibration(out: &mut Vec<Outcome>) {
    // (a) endpoint on MAR-like probabilities.
    let mut r = rng::stream(3, &[99]);
    let n = 200;
    let p1: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * r.random::<f64>()).collect();
    let pi1: Vec<f64> = (0..n).map(|_| 0.3 + 0.6 * r.random::<f64>()).collect();
    let pi0: Vec<f64> = (0..n).map(|_| 0.1 + 0.6 * r.random::<f64>()).collect();
    let curve = calibrate_quasi_gaussian(&p1, &pi1, &pi0, &[0.0, 0.3], 1000, 5).expect("curve");
    let a = curve.cs2_values[0] == 0.0;

    // (b) probit mixture coherence.
    let mut b = true;
    let mut worst: f64 = 0.0;
    for (k, &(pi, mu2)) in [(0.2, 0.3), (0.5, 0.5), (0.8, 0.7), (0.65, 0.1), (0.05, 0.9)].iter().enumerate() {
        let (m, se) = mixture_mean(pi, mu2, 100_000, 40 + k as u64);
        let z = (m - pi) / se;
        worst = worst.max(z.abs());
        b &= z.abs() <= 3.0;
    }

    // (c) covariate-free point against quadrature.
    let moment = floored_inverse_cdf_moment(PROBABILITY_FLOOR);
    let oracle = moment / 2.0 - 1.0;
    let c_curve = calibrate_quasi_gaussian(&[0.5], &[0.5], &[0.5], &[0.5], 100_000, 7).expect("curve");
    let (est, se) = (c_curve.cs2_values[0], c_curve.mc_se[0]);
    let c = (est - oracle).abs() <= 3.0 * se;
    line(
        out,
        "7",
        a && b && c,
        format!(
            "(a) C_S^2(0) = {} [{}]; (b) max |mean_b pi0 - pi_s| / MC-SE = {worst:.2} <= 3 [{}]; \
             (c) mu2=0.5 covariate-free C_S^2 MC {est:.4} (MC-SE {se:.4}) vs quadrature {oracle:.4} [{}]",
            curve.cs2_values[0],
            ok(a),
            ok(b),
            ok(c)
        ),
    );

    // Same comparison at mu2 = 0.25, where the inverse moment is finite.
    let mu = 0.5;
    let scale = (1.0f64 - 0.25).sqrt();
    let kink_free = {
        let f = |a: f64| normal::pdf(a) / normal::cdf(-mu * a / scale);
        let (lo, hi, m) = (-40.0, 40.0, 2_000_000);
        let h = (hi - lo) / m as f64;
        let mut s = f(lo) + f(hi);
        for k in 1..m {
            s += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let oracle25 = kink_free / 2.0 - 1.0;
    let q = calibrate_quasi_gaussian(&[0.5], &[0.5], &[0.5], &[0.25], 100_000, 7).expect("curve");
    println!(
        "       supplementary: mu2=0.25 covariate-free C_S^2 MC {:.4} (MC-SE {:.4}) vs quadrature {:.4}, z {:.2}",
        q.cs2_values[0],
        q.mc_se[0],
        oracle25,
        (q.cs2_values[0] - oracle25) / q.mc_se[0]
    );
}

fn rv_inversion(out: &mut Vec<Outcome>) {
    let mut r = rng::stream(8, &[8]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta: f64 = r.random_range(-5.0..5.0);
        let s2: f64 = 10f64.powf(r.random_range(-3.0..2.0));
        let rv = robustness_value(theta, s2).expect("rv");
        let back = bias_bound(s2, rv, rv / (1.0 - rv), 1.0).expect("bound");
        worst = worst.max((back - theta.abs()).abs());
    }
    line(out, "8", worst <= 1e-10, format!("max |bias_bound(S2, r, r/(1-r), 1) - |theta_s|| over 100 pairs = {worst:.2e} <= 1e-10"));
}

fn benchmark_null(out: &mut Vec<Outcome>) {
    let reps = 20;
    let cfg = FrConfig::default();
    let (mut gy, mut gs, mut dt) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..reps {
        let data = gen_mar(&MarDgpConfig::new(2000, 9000 + r)).expect("sample");
        let mut z = rng::stream(9000 + r, &[77]);
        let noise: Vec<f64> = (0..data.n()).map(|_| z.sample(StandardNormal)).collect();
        let data = data.with_covariate("noise", &noise).expect("column");
        let folds = make_folds(&data, 3, r).expect("folds");
        let group = CovariateGroup { name: "noise".into(), indices: vec![data.p() - 1] };
        let b = benchmark_group(&data, &folds, &group, &cfg).expect("benchmark");
        gy.push(b.gy);
        gs.push(b.gs);
        dt.push(b.delta_theta);
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, v) in [("G_Y", &gy), ("G_S", &gs), ("delta_theta", &dt)] {
        let (m, sd) = mean_sd(v);
        let mcse = sd / (v.len() as f64).sqrt();
        let p = m.abs() <= 3.0 * mcse;
        pass &= p;
        parts.push(format!("{name} mean {m:.4} MC-SE {mcse:.4} [{}]", ok(p)));
    }
    line(out, "9", pass, format!("pure-noise group, 20 reps n=2000, default forest: {}", parts.join("; ")));
}

fn run_cli(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rsel"))
        .args(args)
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("rsel {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_pass(dir: &Path, threads: &str) -> Result<(), String> {
    let forest = ["--trees", "20"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", "--n", "800", "--seed", "5", "--out", "mar.csv"],
        vec!["simulate", "--design", "confounded", "--n", "800", "--seed", "5", "--out", "conf.csv"],
        [&["estimate", "--data", "mar.csv", "--method", "fr", "--seed", "3", "--out", "fr.json", "--nuisances", "fr_n.csv", "--scores", "fr_s.csv"][..], &forest].concat(),
        vec!["estimate", "--data", "mar.csv", "--method", "ssm", "--seed", "3", "--outcome", "linear", "--out", "ssm.json", "--nuisances", "ssm_n.csv"],
        [&["estimate", "--data", "conf.csv", "--method", "irm", "--seed", "3", "--out", "irm.json"][..], &forest].concat(),
        vec!["sensitivity", "--report", "fr.json", "--nuisances", "fr_n.csv", "--b-draws", "200", "--grid", "6", "--out", "sens.json", "--grid-csv", "grid.csv"],
        vec!["sensitivity", "--report", "ssm.json", "--nuisances", "ssm_n.csv", "--technical", "--out", "sens_t.json"],
        [&["benchmark", "--data", "mar.csv", "--groups", "groups.json", "--seed", "2", "--out", "bench.csv", "--report", "bench.json"][..], &forest].concat(),
        vec!["simulate-study", "--reps", "3", "--sizes", "300,400", "--trees", "10", "--out", "study"],
    ];
    std::fs::write(dir.join("groups.json"), r#"{"first": ["x1"], "rest": ["x4", "x5"]}"#).map_err(|e| e.to_string())?;
    for s in &steps {
        run_cli(dir, threads, s)?;
    }
    Ok(())
}

fn determinism(out: &mut Vec<Outcome>) {
    let (one, many) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    if let Err(e) = cli_pass(one.path(), "1").and_then(|_| cli_pass(many.path(), "8")) {
        line(out, "10", false, e);
        return;
    }
    let files = [
        "mar.json", "conf.json", "fr.json", "ssm.json", "irm.json", "sens.json", "sens_t.json", "bench.json",
        "study/summary.json", "mar.csv", "fr_n.csv", "fr_s.csv", "grid.csv", "bench.csv", "study/reps.csv",
        "study/histogram.csv", "study/summary.txt",
    ];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(one.path().join(f)).unwrap_or_default();
        let b = std::fs::read(many.path().join(f)).unwrap_or_default();
        if a.is_empty() || a != b {
            differing.push(f);
        }
    }
    line(
        out,
        "10",
        differing.is_empty(),
        if differing.is_empty() {
            format!("all {} outputs of the five subcommands byte-identical at 1 and 8 threads", files.len())
        } else {
            format!("outputs differ or are missing: {}", differing.join(", "))
        },
    );
}

fn main() {
    let t = Instant::now();
    let mut out = Vec::new();
    study(&mut out);
    bias_identity(&mut out);
    riesz_identity(&mut out);
    double_robustness(&mut out);
    calibration(&mut out);
    rv_inversion(&mut out);
    benchmark_null(&mut out);
    determinism(&mut out);
    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", out.len(), t.elapsed().as_secs_f64());
    let failed: Vec<&str> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        println!("acceptance: failing criteria {}", failed.join(", "));
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
