use proptest::prelude::*;
use rmpw::data::{read_csv, Dataset, VariableRoles};
use rmpw::design::Design;
use rmpw::estimator::{estimate_effects, AugRow, AugmentedDataset, SeMethod};
use rmpw::glm::{fit_logistic, logistic_log_likelihood, score, Family};
use rmpw::propensity::stratify;

fn augmented(rows: &[(u8, bool, f64, f64, f64)]) -> AugmentedDataset {
    let mut out = Vec::new();
    for (u, &(a, d_extra, y, w0, w1)) in rows.iter().enumerate() {
        let a = a.min(1);
        out.push(AugRow { unit: u, a, d: 0, y, w: w0 });
        if a == 1 && d_extra {
            out.push(AugRow { unit: u, a, d: 1, y, w: w1 });
        }
    }
    // Every group needs members.
    out.push(AugRow { unit: rows.len(), a: 0, d: 0, y: 0.5, w: 1.0 });
    out.push(AugRow { unit: rows.len() + 1, a: 1, d: 0, y: -0.5, w: 1.0 });
    out.push(AugRow { unit: rows.len() + 1, a: 1, d: 1, y: -0.5, w: 1.0 });
    AugmentedDataset { rows: out, exclusions: vec![] }
}

fn logistic_problem() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<f64>)> {
    (10usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec([-2.0..2.0f64, -2.0..2.0f64], n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_map(|(x, y)| {
                let mut y: Vec<f64> = y.into_iter().map(f64::from).collect();
                // Rows with opposite responses at the same x rule out separation.
                y[0] = 0.0;
                y[1] = 1.0;
                let mut x = x;
                x[1] = x[0];
                y[2] = 1.0 - y[3];
                x[2] = x[3];
                (x, y)
            })
    })
}

fn design(x: &[[f64; 2]]) -> Design {
    Design::from_rows(&x.iter().map(|r| vec![1.0, r[0], r[1]]).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strata_follow_a_permutation(scores in prop::collection::hash_set(0u32..100_000, 10..120), k in 2usize..8, seed in any::<u64>()) {
        let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 1e5).collect();
        let n = scores.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let a = stratify(&scores, k).unwrap().by_unit(n);
        let b = stratify(&permuted, k).unwrap().by_unit(n);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(b[j], a[i]);
        }
    }

    #[test]
    fn effects_ignore_group_weight_scale(
        rows in prop::collection::vec((0u8..2, prop::bool::ANY, -5.0..5.0f64, 0.1..4.0f64, 0.1..4.0f64), 5..60),
        c in [0.01..100.0f64, 0.01..100.0f64, 0.01..100.0f64],
    ) {
        let aug = augmented(&rows);
        let mut scaled = aug.clone();
        scaled.scale_group(0, 0, c[0]);
        scaled.scale_group(1, 0, c[1]);
        scaled.scale_group(1, 1, c[2]);
        let e = estimate_effects(&aug, Family::Gaussian, SeMethod::None).unwrap();
        let f = estimate_effects(&scaled, Family::Gaussian, SeMethod::None).unwrap();
        prop_assert!((e.nde.estimate - f.nde.estimate).abs() < 1e-9);
        prop_assert!((e.nie.estimate - f.nie.estimate).abs() < 1e-9);
        prop_assert!((e.total.estimate - e.nde.estimate - e.nie.estimate).abs() < 1e-12);
    }

    #[test]
    fn logistic_fit_is_a_local_maximum((x, y) in logistic_problem(), dir in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]) {
        let d = design(&x);
        let w = vec![1.0; y.len()];
        let Ok(fit) = fit_logistic(&d, &y, &w) else { return Ok(()) };
        let s = score(Family::BinomialLogit, &d, &y, &w, &fit.coefficients);
        prop_assert!(s.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        let best = logistic_log_likelihood(&d, &y, &w, &fit.coefficients);
        for step in [1e-3, 1e-2, 1e-1] {
            let moved: Vec<f64> = fit.coefficients.iter().zip(dir).map(|(b, u)| b + step * u).collect();
            prop_assert!(logistic_log_likelihood(&d, &y, &w, &moved) <= best + 1e-12);
        }
    }

    #[test]
    fn score_matches_finite_differences((x, y) in logistic_problem(), beta in [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64], w in prop::collection::vec(0.1..3.0f64, 80)) {
        let d = design(&x);
        let w = &w[..y.len()];
        let s = score(Family::BinomialLogit, &d, &y, w, &beta);
        for j in 0..3 {
            let h = 1e-6;
            let (mut up, mut down) = (beta, beta);
            up[j] += h;
            down[j] -= h;
            let fd = (logistic_log_likelihood(&d, &y, w, &up) - logistic_log_likelihood(&d, &y, w, &down)) / (2.0 * h);
            prop_assert!((s[j] - fd).abs() <= 1e-5 * s[j].abs().max(1.0));
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0u8..2, 0u8..2, -1e6..1e6f64, -50.0..50.0f64), 1..40)) {
        let ds = Dataset::from_columns(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            vec![("x".into(), rows.iter().map(|r| r.3).collect())],
            vec![],
            Some((0..rows.len()).map(|i| format!("u{i}")).collect()),
        ).unwrap();
        let roles = VariableRoles::new("A", "Z", "Y").with_pretreatment(&["x"]).with_unit_id("id");
        let mut buf = Vec::new();
        ds.write_csv(&roles, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &roles, "memory").unwrap();
        prop_assert_eq!(back, ds);
    }
}
