//! Property tests for invariants that hold for every input.

use std::sync::OnceLock;

use proptest::prelude::*;

use riesz_selection::data::{make_folds, read_csv, write_csv_to, CsvSchema, Dataset};
use riesz_selection::dgp::{gen_mar, MarDgpConfig};
use riesz_selection::estimators::{AteEstimate, Diagnostics, Method};
use riesz_selection::forest::{solve_node, FeatureMap, FeatureMapKind, ForestConfig, MomentForest, TrainView};
use riesz_selection::learners::clip_probability;
use riesz_selection::sensitivity::{bias_bound, robustness_value};

/// Rows as `(d, s, y, x0, x1)`; both selection values are forced to occur.
fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0u8..2, 0u8..2, -1e6f64..1e6, -1e3f64..1e3, any::<f64>()), 4..40).prop_map(|mut rows| {
        rows[0].1 = 0;
        rows[1].1 = 1;
        let mut x = Vec::new();
        let (mut y, mut d, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for (di, si, yi, x0, x1) in rows {
            d.push(di);
            s.push(si);
            y.push((si == 1).then_some(yi));
            x.extend([x0, if x1.is_finite() { x1 } else { 0.0 }]);
        }
        Dataset::new(y, d, s, x, vec!["a".into(), "b c".into()]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_lossless(data in dataset_strategy()) {
        let mut buf = Vec::new();
        write_csv_to(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::new("y", "d", "s")).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn folds_partition_and_balance(n in 40usize..400, k in 2usize..6, seed in any::<u64>()) {
        let data = gen_mar(&MarDgpConfig::new(n, seed)).unwrap();
        let Ok(plan) = make_folds(&data, k, seed) else { return Ok(()) };
        prop_assert_eq!(plan.assignment.len(), n);
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for cell in 0..4u8 {
            let mut per_fold = vec![0usize; k];
            for i in 0..n {
                if data.d()[i] * 2 + data.s()[i] == cell {
                    per_fold[plan.assignment[i]] += 1;
                }
            }
            prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }
        let mut seen = vec![0usize; n];
        for f in 0..k {
            for i in plan.test_rows(f) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn robustness_value_inverts_the_bound(theta in -50.0f64..50.0, s2 in 1e-3f64..1e3) {
        let rv = robustness_value(theta, s2).unwrap();
        prop_assert!((0.0..1.0).contains(&rv));
        let b = bias_bound(s2, rv, rv / (1.0 - rv), 1.0).unwrap();
        prop_assert!((b - theta.abs()).abs() <= 1e-9 * (1.0 + theta.abs()));
    }

    #[test]
    fn robustness_value_is_monotone(t1 in 0.0f64..10.0, dt in 0.0f64..10.0, s2 in 1e-2f64..1e2) {
        let (a, b) = (robustness_value(t1, s2).unwrap(), robustness_value(t1 + dt, s2).unwrap());
        prop_assert!(a <= b);
    }

    #[test]
    fn bias_bound_is_homogeneous(
        s2 in 0.0f64..100.0, cy2 in 0.0f64..0.99, cs2 in 0.0f64..10.0, rho in -1.0f64..=1.0, c in 0.01f64..100.0,
    ) {
        let b = bias_bound(s2, cy2, cs2, rho).unwrap();
        let scaled = bias_bound(c * s2, cy2, cs2, rho).unwrap();
        prop_assert!((scaled - c.sqrt() * b).abs() <= 1e-12 * (1.0 + scaled));
        prop_assert!((bias_bound(s2, cy2, cs2, 0.5 * rho).unwrap() - 0.5 * b).abs() <= 1e-12 * (1.0 + b));
        prop_assert_eq!(bias_bound(s2, cy2, cs2, -rho).unwrap(), b);
    }

    #[test]
    fn scores_determine_the_estimate(scores in prop::collection::vec(-1e3f64..1e3, 2..200), shift in -1e3f64..1e3) {
        let e = AteEstimate::from_scores(Method::Fr, scores.clone(), 0.95, Diagnostics::default()).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|v| v + shift).collect();
        let f = AteEstimate::from_scores(Method::Fr, shifted, 0.95, Diagnostics::default()).unwrap();
        prop_assert!((f.theta - e.theta - shift).abs() <= 1e-9 * (1.0 + shift.abs() + e.theta.abs()));
        prop_assert!((f.se - e.se).abs() <= 1e-9 * (1.0 + e.se));
        prop_assert!(e.ci_low <= e.theta && e.theta <= e.ci_high);
        let z = (e.ci_high - e.theta) / e.se;
        if e.se > 0.0 {
            prop_assert!((z - 1.959963984540054).abs() < 1e-9);
        }
    }

    #[test]
    fn clipping_stays_in_bounds_and_is_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0, eps in 0.0f64..0.5) {
        let (cp, moved) = clip_probability(p, eps);
        prop_assert!(cp >= eps && cp <= 1.0 - eps);
        prop_assert_eq!(moved, cp != p);
        let (cq, _) = clip_probability(q, eps);
        if p <= q {
            prop_assert!(cp <= cq);
        }
    }

    /// In every node `mean(α̂ · r) = (J + λI) β − λβ = M − λβ`, so the fitted
    /// representer reproduces the moment functional on the local dictionary.
    #[test]
    fn node_solution_satisfies_the_representer_identity(seed in any::<u64>(), n in 40usize..200) {
        let data = gen_mar(&MarDgpConfig::new(n, seed)).unwrap();
        let y = data.y_filled();
        let view = TrainView { x: data.x(), p: data.p(), d: data.d(), s: data.s(), target: &y };
        let rows: Vec<usize> = (0..n).collect();
        let fmap = FeatureMap::fit(FeatureMapKind::ArmLinear, data.x(), data.p(), &rows);
        let ridge = 1e-8;
        let sol = solve_node(&rows, &view, &fmap, ridge).unwrap();
        let dim = fmap.dim();
        let mut lhs = vec![0.0; dim];
        let mut moment = vec![0.0; dim];
        for i in 0..n {
            let r = fmap.eval(data.d()[i], data.row(i), data.s()[i]);
            let alpha: f64 = r.iter().zip(&sol.beta).map(|(a, b)| a * b).sum();
            for (l, v) in lhs.iter_mut().zip(&r) {
                *l += alpha * v / n as f64;
            }
            for (m, v) in moment.iter_mut().zip(fmap.moment_eval(data.row(i))) {
                *m += v / n as f64;
            }
        }
        for t in 0..dim {
            prop_assert!((moment[t] - sol.m[t]).abs() <= 1e-10 * (1.0 + moment[t].abs()));
            let want = sol.m[t] - sol.ridge_used * sol.beta[t];
            prop_assert!((lhs[t] - want).abs() <= 1e-7 * (1.0 + want.abs()), "t={} {} vs {}", t, lhs[t], want);
        }
    }

    #[test]
    fn representer_vanishes_off_the_selected_sample(x in prop::collection::vec(-5.0f64..5.0, 5), d in 0u8..2) {
        let forest = small_forest();
        prop_assert_eq!(forest.predict_alpha(d, &x, 0).unwrap(), 0.0);
        prop_assert!(forest.predict_alpha(d, &x, 1).unwrap().is_finite());
    }
}

fn small_forest() -> &'static MomentForest {
    static FOREST: OnceLock<MomentForest> = OnceLock::new();
    FOREST.get_or_init(|| {
        let data = gen_mar(&MarDgpConfig::new(600, 3)).unwrap();
        let y = data.y_filled();
        let view = TrainView { x: data.x(), p: data.p(), d: data.d(), s: data.s(), target: &y };
        let rows: Vec<usize> = (0..data.n()).collect();
        let cfg = ForestConfig { n_trees: 10, min_leaf: 10, ..ForestConfig::default() };
        MomentForest::train(&view, &rows, FeatureMapKind::ArmLinear, &cfg, 0.5).unwrap()
    })
}
