use rmpw::simulation::{builtin, compute_truth, Scenario, TruthMode, BUILTIN_NAMES};

fn bundled(name: &str) -> Scenario {
    let path = format!("{}/scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(path.as_ref()).unwrap()
}

#[test]
fn bundled_files_match_builtins() {
    for name in BUILTIN_NAMES {
        let mut file = bundled(name);
        let code = builtin(name).unwrap();
        file.estimators = code.estimators.clone();
        assert_eq!(file, code, "{name}");
    }
}

#[test]
fn to_toml_round_trips() {
    for name in BUILTIN_NAMES {
        let s = bundled(name);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s, "{name}");
    }
}

#[test]
fn f1_truth_by_hand() {
    // x ~ Bern(0.5); Z0 share 0.2/0.4 and Z1 share 0.6/0.8 by x; Y_az = 1 + a + 2z + az.
    let ez0 = (0.2 + 0.4) / 2.0;
    let ez1 = (0.6 + 0.8) / 2.0;
    let t = compute_truth(&bundled("f1"), TruthMode::Exact).unwrap();
    assert!((t.mean_0z0 - (1.0 + 2.0 * ez0)).abs() < 1e-12);
    assert!((t.mean_1z0 - (2.0 + 3.0 * ez0)).abs() < 1e-12);
    assert!((t.mean_1z1 - (2.0 + 3.0 * ez1)).abs() < 1e-12);
    assert!((t.nde - 1.3).abs() < 1e-12);
    assert!((t.nie - 1.2).abs() < 1e-12);
}

#[test]
fn monte_carlo_truth_agrees_with_enumeration() {
    for name in ["f1", "post_treatment", "shared_cause"] {
        let s = bundled(name);
        let exact = compute_truth(&s, TruthMode::Exact).unwrap();
        let mc = compute_truth(&s, TruthMode::MonteCarlo { draws: 200_000, seed: 5 }).unwrap();
        for (e, m) in [(exact.nde, mc.nde), (exact.nie, mc.nie), (exact.mean_1z0, mc.mean_1z0)] {
            assert!((e - m).abs() < 0.02, "{name}: {e} vs {m}");
        }
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = std::fs::read_to_string(format!("{}/scenarios/f1.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let bad = text.replace("sigma = 0.0", "sigma = 0.0\nsigmaa = 1.0");
    let err = Scenario::from_toml(&bad).unwrap_err().to_string();
    assert!(err.contains("sigmaa"), "{err}");
}
