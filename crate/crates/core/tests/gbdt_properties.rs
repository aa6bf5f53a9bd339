use fuzztarget::gbdt::{logistic_grad_hess, train_gbdt, train_gbdt_matrix, GbdtConfig, GbdtModel, Node};
use fuzztarget::toy::synthetic_table;
use fuzztarget::TableKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Logistic loss of one margin written from the definition.
fn loss(m: f64, y: f64) -> f64 {
    let p = 1.0 / (1.0 + (-m).exp());
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let m: f64 = rng.random_range(-4.0..4.0);
        let y = f64::from(u8::from(rng.random_bool(0.5)));
        let (g, h) = logistic_grad_hess(m, y);
        let e = 1e-6;
        let fd_g = (loss(m + e, y) - loss(m - e, y)) / (2.0 * e);
        let e = 1e-3;
        let fd_h = (loss(m + e, y) - 2.0 * loss(m, y) + loss(m - e, y)) / (e * e);
        assert!(rel_err(g, fd_g) < 1e-6, "g at {m}: {g} vs {fd_g}");
        assert!(rel_err(h, fd_h) < 1e-6, "h at {m}: {h} vs {fd_h}");
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> =
        (0..rows).map(|_| (0..cols).map(|_| f64::from(rng.random_range(0..8u8))).collect()).collect();
    let y = x.iter().map(|r| u8::from(r[0] + r[1] + rng.random_range(0.0..6.0) > 9.0)).collect();
    (x, y, (0..cols).map(|c| format!("f{c}")).collect())
}

fn full_sample(rounds: usize) -> GbdtConfig {
    GbdtConfig { n_estimators: rounds, subsample: 1.0, colsample_bytree: 1.0, ..Default::default() }
}

#[test]
fn training_logloss_never_increases() {
    let (x, y, names) = random_matrix(50, 4, 3);
    let t = train_gbdt_matrix(&x, &y, names, &full_sample(30)).unwrap();
    assert_eq!(t.train_logloss.len(), 30);
    for w in t.train_logloss.windows(2) {
        assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
    }
}

/// Best depth-1 split by enumerating every (feature, threshold) pair.
fn brute_force_stump(x: &[Vec<f64>], y: &[u8], lambda: f64) -> Option<(usize, f64)> {
    let g: Vec<f64> = y.iter().map(|&l| 0.5 - f64::from(l)).collect();
    let h = 0.25;
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let total_g: f64 = g.iter().sum();
    let total_h = h * y.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = (0..x.len()).filter(|&i| x[i][f] < t).collect();
            let gl: f64 = left.iter().map(|&i| g[i]).sum();
            let hl = h * left.len() as f64;
            let gain = 0.5 * (score(gl, hl) + score(total_g - gl, total_h - hl) - score(total_g, total_h));
            let better = match best {
                None => gain > 0.0,
                Some((bg, bf, bt)) => gain > bg || (gain == bg && (f, t) < (bf, bt)),
            };
            if better {
                best = Some((gain, f, t));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn depth_one_split_matches_enumeration(
        x in prop::collection::vec(prop::collection::vec(0u8..5, 2), 4),
        y in prop::collection::vec(0u8..2, 4),
    ) {
        let x: Vec<Vec<f64>> = x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let config = GbdtConfig { max_depth: 1, min_child_weight: 0.0, learning_rate: 1.0, ..full_sample(1) };
        let t = train_gbdt_matrix(&x, &y, vec!["a".into(), "b".into()], &config).unwrap();
        let tree = &t.model.trees[0];
        match (brute_force_stump(&x, &y, config.reg_lambda), &tree.nodes[0]) {
            (None, Node::Leaf { .. }) => {}
            (Some((f, thr)), Node::Split { feature, threshold, .. }) => {
                prop_assert_eq!((f, thr), (*feature, *threshold));
            }
            (expected, got) => prop_assert!(false, "expected {:?}, got {:?}", expected, got),
        }
        // Leaves hold the Newton step of their rows.
        for row in &x {
            let same: Vec<usize> = (0..4).filter(|&i| tree.predict(&x[i]) == tree.predict(row)).collect();
            let g: f64 = same.iter().map(|&i| 0.5 - f64::from(y[i])).sum();
            let leaf = -g / (0.25 * same.len() as f64 + 1.0);
            prop_assert!((tree.predict(row) - leaf).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_stay_in_unit_interval(seed in 0u64..1000) {
        let (x, y, names) = random_matrix(30, 3, seed);
        prop_assume!(y.contains(&0) && y.contains(&1));
        let config = GbdtConfig { n_estimators: 10, max_depth: 3, seed, ..Default::default() };
        let m = train_gbdt_matrix(&x, &y, names, &config).unwrap().model;
        for p in m.predict_matrix(&x) {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        let back = GbdtModel::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back.predict_matrix(&x), m.predict_matrix(&x));
    }
}

#[test]
fn identical_inputs_give_identical_model_bytes() {
    let table = synthetic_table(TableKind::Function, 120, 4);
    let config = GbdtConfig { n_estimators: 25, ..Default::default() };
    let a = train_gbdt(&table, &config).unwrap().model.to_bytes();
    let b = train_gbdt(&table, &config).unwrap().model.to_bytes();
    assert_eq!(a, b);
    let other = train_gbdt(&table, &GbdtConfig { seed: 41, ..config }).unwrap().model.to_bytes();
    assert_ne!(a, other);
}

#[test]
fn newton_step_example_predicts_expected_probability() {
    let x = vec![vec![1.0], vec![1.0]];
    let t = train_gbdt_matrix(&x, &[1, 1], vec!["a".into()], &full_sample(1)).unwrap();
    // G = -1 (two residuals of -0.5), H = 0.5.
    let leaf: f64 = 1.0 / (0.5 + 1.0) * 0.05;
    let expected = 1.0 / (1.0 + (-leaf).exp());
    assert!((t.model.predict_row(&[1.0]) - expected).abs() < 1e-15);
    assert!((t.model.predict_row(&[1.0]) - 0.5083).abs() < 1e-4);
}
