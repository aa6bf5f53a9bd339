//! Acceptance suite. Runs every primary criterion, prints one PASS/FAIL line
//! each, and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fuzztarget::dataset::{
    apply_feature_profile, sanity_check_blocks, stratified_split, FeatureProfile, FUNCTION_HEADER,
};
use fuzztarget::dnn::{grad, train_mlp_with_holdout, MlpConfig, MlpModel};
use fuzztarget::gbdt::{train_gbdt, train_gbdt_matrix, GbdtConfig};
use fuzztarget::graphs::{compute_dominators, count_natural_loops, Cfg};
use fuzztarget::ir::samples::{S1, S2};
use fuzztarget::metrics::{roc_auc, summary, ConfusionMatrix};
use fuzztarget::pipeline::{extract_sources, ExtractOptions, SourceFile};
use fuzztarget::report::Thresholds;
use fuzztarget::toy::{synthetic_table, toy_corpus, ToyCorpusConfig};
use fuzztarget::{AnyModel, Classifier, TableKind};
use fuzztarget_service::{router, AppState, Evicted, LoadedModel, ModelId, PredictionResponse};
use http_body_util::BodyExt;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "metrics-vs-published", budget: Duration::from_secs(1), run: metrics_vs_published },
        Criterion { name: "branch-invariants-200-functions", budget: Duration::from_secs(5), run: branch_invariants },
        Criterion { name: "s1-s2-hand-counts", budget: Duration::from_secs(1), run: hand_counts },
        Criterion { name: "loops-vs-brute-force", budget: Duration::from_secs(5), run: loops_vs_brute_force },
        Criterion { name: "mlp-gradient-check", budget: Duration::from_secs(10), run: mlp_gradient_check },
        Criterion { name: "gbdt-monotone-logloss", budget: Duration::from_secs(30), run: gbdt_monotone },
        Criterion { name: "desk-scale-learning", budget: Duration::from_secs(120), run: desk_scale_learning },
        Criterion { name: "auc-vs-pairwise", budget: Duration::from_secs(5), run: auc_vs_pairwise },
        Criterion { name: "pipeline-determinism", budget: Duration::from_secs(60), run: pipeline_determinism },
        Criterion { name: "service-contract", budget: Duration::from_secs(30), run: service_contract },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => {
                Err(format!("{detail}; took {:.2}s, budget {}s", elapsed.as_secs_f64(), c.budget.as_secs()))
            }
            r => r,
        };
        let line = match &result {
            Ok(detail) => format!("PASS [{:>2}] {} ({:.2}s): {detail}\n", i + 1, c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                format!("FAIL [{:>2}] {} ({:.2}s): {why}\n", i + 1, c.name, elapsed.as_secs_f64())
            }
        };
        let _ = std::io::stdout().lock().write_all(line.as_bytes());
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn metrics_vs_published() -> Outcome {
    let (tn, fp, fn_, tp) = (31040u64, 3465u64, 4092u64, 16617u64);
    let s = summary(&ConfusionMatrix::new(tn, fp, fn_, tp));
    // Published test-set figures, in percent.
    let published = [
        ("accuracy", 86.31, s.accuracy.value),
        ("precision", 82.75, s.precision.value),
        ("recall", 80.24, s.recall.value),
        ("f1", 81.47, s.f1.value),
    ];
    // Textbook formulas on the same counts.
    let (tn, fp, fn_, tp) = (tn as f64, fp as f64, fn_ as f64, tp as f64);
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    let formula = [(tp + tn) / (tp + tn + fp + fn_), p, r, 2.0 * p * r / (p + r)];
    let mut detail = Vec::new();
    for ((name, pct, got), want) in published.iter().zip(formula) {
        ensure!((got - pct / 100.0).abs() <= 1e-4, "{name} {got:.6} vs published {pct}%");
        ensure!((got - want).abs() < 1e-12, "{name} {got} vs formula {want}");
        detail.push(format!("{name}={got:.4}"));
    }
    Ok(detail.join(" "))
}

fn toy_sources(cases: usize, seed: u64) -> Vec<SourceFile> {
    toy_corpus(ToyCorpusConfig { cases, seed })
        .into_iter()
        .map(|f| SourceFile { path: f.file_name, text: f.source })
        .collect()
}

fn branch_invariants() -> Outcome {
    let out = extract_sources(&toy_sources(100, 2024), &ExtractOptions::default());
    ensure!(out.errors.is_empty(), "extraction errors: {:?}", out.errors);
    let functions = out.combined(TableKind::Function).len();
    ensure!(functions == 200, "expected 200 functions, got {functions}");
    let blocks = out.combined(TableKind::Block);
    let report = sanity_check_blocks(&blocks).map_err(|e| e.to_string())?;
    ensure!(report.is_clean(), "{} violations", report.violations.len());
    // Read the two branch columns directly rather than trusting the checker.
    let n = blocks.numeric_column("CondBranches").map_err(|e| e.to_string())?;
    let m = blocks.numeric_column("UnCondBranches").map_err(|e| e.to_string())?;
    let bad =
        n.iter().zip(&m).filter(|(&n, &m)| !(n == 0.0 || n == 1.0) || !(m == 0.0 || m == 1.0) || n * m != 0.0).count();
    ensure!(bad == 0, "{bad} rows break N,M in {{0,1}}, N*M = 0");
    let terminators = n.iter().zip(&m).filter(|(&n, &m)| n + m == 1.0).count();
    Ok(format!(
        "{} block rows from 200 functions, 0 violations ({terminators} with a counted terminator)",
        blocks.len()
    ))
}

fn hand_counts() -> Outcome {
    let out = extract_sources(
        &[SourceFile { path: "s1.ll".into(), text: S1.into() }, SourceFile { path: "s2.ll".into(), text: S2.into() }],
        &ExtractOptions::default(),
    );
    ensure!(out.errors.is_empty(), "{:?}", out.errors);
    let (s1, s2) = (&out.files[0].features, &out.files[1].features);
    let f = &s1.functions[0];
    ensure!(f.function_name == "f", "name {}", f.function_name);
    let got = (f.bbs, f.instructions, f.cond_branches, f.uncond_branches, f.num_loops, f.direct_calls);
    ensure!(got == (4, 5, 1, 3, 0, 0), "S1 function row {got:?}");
    let (entry, end) = (&s1.blocks[0], &s1.blocks[3]);
    let got = (entry.instructions, entry.cond_branches, entry.uncond_branches, entry.out_degree);
    ensure!(got == (2, 1, 0, 2), "S1 entry {got:?}");
    let got = (end.cond_branches, end.uncond_branches, end.in_degree);
    ensure!(got == (0, 1, 2), "S1 end {got:?}");
    let degrees: Vec<(u64, u64)> = s1.blocks.iter().map(|b| (b.in_degree, b.out_degree)).collect();
    ensure!(degrees == [(0, 2), (1, 1), (1, 1), (2, 0)], "S1 degrees {degrees:?}");
    let g = &s2.functions[0];
    ensure!(g.function_name == "g" && g.bbs == 3 && g.num_loops == 1, "S2 function row {g:?}");
    let lp = &s2.blocks[1];
    let got = (lp.in_degree, lp.out_degree, lp.cond_branches, lp.uncond_branches);
    ensure!(got == (2, 2, 1, 0), "S2 loop block {got:?}");
    Ok("S1: 4 blocks / 5 instructions / 0 loops; S2: 3 blocks / 1 loop".into())
}

fn reachable(n: usize, edges: &[(usize, usize)], removed: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    if removed == Some(0) {
        return seen;
    }
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            if a == u && !seen[b] && Some(b) != removed {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen
}

/// Distinct headers `h` of edges `t -> h` where every entry path to `t`
/// passes through `h`.
fn brute_force_loops(n: usize, edges: &[(usize, usize)]) -> usize {
    let r = reachable(n, edges, None);
    let dominates = |d: usize, v: usize| r[v] && (d == v || !reachable(n, edges, Some(d))[v]);
    edges.iter().filter(|&&(t, h)| r[t] && dominates(h, t)).map(|&(_, h)| h).collect::<BTreeSet<_>>().len()
}

fn loops_vs_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut with_loops = 0;
    for case in 0..100 {
        let n = rng.random_range(1..=10);
        let m = rng.random_range(0..=3 * n);
        let edges: Vec<(usize, usize)> = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let cfg = Cfg::from_edges(n, &edges);
        let got = count_natural_loops(&cfg, &compute_dominators(&cfg));
        let want = brute_force_loops(n, &edges);
        ensure!(got == want, "case {case}: {got} loops, brute force {want}, edges {edges:?}");
        with_loops += usize::from(want > 0);
    }
    Ok(format!("100 CFGs agree ({with_loops} contain loops)"))
}

/// Mean BCE computed layer by layer without dropout.
fn naive_loss(m: &MlpModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let mut a: Vec<f64> = (0..row.len()).map(|i| (row[i] - m.mean[i]) / m.std[i]).collect();
        for (l, layer) in m.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    layer.bias[o] + (0..layer.inputs).map(|i| layer.weights[o * layer.inputs + i] * a[i]).sum::<f64>()
                })
                .collect();
            a = if l + 1 < m.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let p = 1.0 / (1.0 + (-a[0]).exp());
        let t = f64::from(label);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    total / x.len() as f64
}

fn param(m: &mut MlpModel, layer: usize, p: usize) -> &mut f64 {
    let l = &mut m.layers[layer];
    let nw = l.weights.len();
    if p < nw {
        &mut l.weights[p]
    } else {
        &mut l.bias[p - nw]
    }
}

/// Smallest |pre-activation| over every hidden unit and row. Central
/// differences are only valid if no step can push a unit across the ReLU
/// kink, so check points must keep this well above the step size.
fn kink_margin(model: &MlpModel, x: &[Vec<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let hidden = model.layers.len() - 1;
    x.iter()
        .flat_map(|row| model.forward(row, false, rng).unwrap().pre_activations.into_iter().take(hidden).flatten())
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

fn gradient_check_point(seed: u64) -> (MlpModel, Vec<Vec<f64>>, ChaCha8Rng) {
    let features = 11;
    let config = MlpConfig { dropout_rate: 0.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::initialized((0..features).map(|i| format!("f{i}")).collect(), config, &mut rng);
    for l in &mut model.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let x = (0..3).map(|_| (0..features).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    (model, x, rng)
}

fn mlp_gradient_check() -> Outcome {
    let eps = 1e-6;
    let min_margin = 1e-3;
    let mut seed = 5;
    let (mut model, x, mut rng) = loop {
        let (model, x, mut rng) = gradient_check_point(seed);
        if kink_margin(&model, &x, &mut rng) >= min_margin {
            break (model, x, rng);
        }
        seed += 1;
        ensure!(seed < 105, "no kink-free check point in 100 draws");
    };
    let margin = kink_margin(&model, &x, &mut rng);
    let y = [1, 0, 1];
    let (_, analytic) = grad(&model, &x, &y, false, &mut rng).map_err(|e| e.to_string())?;
    let analytic = analytic.flat();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    for l in 0..model.layers.len() {
        for p in 0..model.layers[l].weights.len() + model.layers[l].bias.len() {
            let orig = *param(&mut model, l, p);
            *param(&mut model, l, p) = orig + eps;
            let up = naive_loss(&model, &x, &y);
            *param(&mut model, l, p) = orig - eps;
            let down = naive_loss(&model, &x, &y);
            *param(&mut model, l, p) = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max((analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8));
            k += 1;
        }
    }
    ensure!(k == analytic.len(), "gradient has {} entries, model {k}", analytic.len());
    ensure!(worst < 1e-4, "max relative error {worst:e} (seed {seed}, kink margin {margin:.1e})");
    Ok(format!("{k} parameters, 3 rows, max relative error {worst:.2e} (seed {seed}, kink margin {margin:.1e})"))
}

fn gbdt_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..8).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
    let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
    let names = (0..8).map(|i| format!("c{i}")).collect();
    let config = GbdtConfig { n_estimators: 50, subsample: 1.0, colsample_bytree: 1.0, ..Default::default() };
    let t = train_gbdt_matrix(&x, &y, names, &config).map_err(|e| e.to_string())?;
    // Recompute the loss after every round from the trees themselves.
    let mut margins = vec![t.model.base_margin(); x.len()];
    let mut losses = Vec::new();
    for tree in &t.model.trees {
        for (m, row) in margins.iter_mut().zip(&x) {
            *m += tree.predict(row);
        }
        let loss = margins
            .iter()
            .zip(&y)
            .map(|(&m, &l)| {
                let p = 1.0 / (1.0 + (-m).exp());
                if l == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / x.len() as f64;
        losses.push(loss);
    }
    ensure!(losses.len() == 50, "{} rounds", losses.len());
    for (i, (a, b)) in losses.iter().zip(&t.train_logloss).enumerate() {
        ensure!((a - b).abs() < 1e-9, "round {i}: reported {b}, recomputed {a}");
    }
    for (i, w) in losses.windows(2).enumerate() {
        ensure!(w[1] <= w[0], "loss rose at round {}: {} -> {}", i + 1, w[0], w[1]);
    }
    Ok(format!("logloss {:.4} -> {:.4} over 50 rounds", losses[0], losses[49]))
}

fn desk_scale_learning() -> Outcome {
    let raw = synthetic_table(TableKind::Function, 1000, 2024);
    // Independent check that the construction is separable on one column.
    let statics = raw.numeric_column("StaticAllocations").map_err(|e| e.to_string())?;
    let labels = raw.labels().map_err(|e| e.to_string())?;
    let max_safe = statics.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(v, _)| *v).fold(f64::MIN, f64::max);
    let min_bad = statics.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(v, _)| *v).fold(f64::MAX, f64::min);
    ensure!(max_safe < min_bad, "not separable: {max_safe} vs {min_bad}");

    let table = apply_feature_profile(&raw, &FeatureProfile::function_default()).map_err(|e| e.to_string())?;
    let (train, test) = stratified_split(&table, 0.2, 42).map_err(|e| e.to_string())?;
    let test_y = test.labels().map_err(|e| e.to_string())?;
    let held_out = |m: &AnyModel| -> Result<f64, String> {
        let p = m.predict_table(&test).map_err(|e| e.to_string())?;
        Ok(p.iter().zip(&test_y).filter(|(&p, &l)| u8::from(p >= 0.5) == l).count() as f64 / test_y.len() as f64)
    };

    let gcfg = GbdtConfig::default();
    ensure!((gcfg.learning_rate, gcfg.max_depth, gcfg.n_estimators) == (0.05, 10, 400), "gbdt defaults {gcfg:?}");
    let gbdt = AnyModel::Gbdt(train_gbdt(&train, &gcfg).map_err(|e| e.to_string())?.model);

    let mcfg = MlpConfig::default();
    ensure!(
        mcfg.hidden_units == [128, 64, 32]
            && mcfg.learning_rate == 0.001
            && mcfg.batch_size == 32
            && mcfg.patience == 5,
        "mlp defaults {mcfg:?}"
    );
    let names = train.feature_names();
    let m = |t: &fuzztarget::FeatureTable| t.matrix(&names).map_err(|e| e.to_string());
    let l = |t: &fuzztarget::FeatureTable| t.labels().map_err(|e| e.to_string());
    let mlp = train_mlp_with_holdout(&m(&train)?, &l(&train)?, &m(&test)?, &test_y, names.clone(), &mcfg)
        .map_err(|e| e.to_string())?;
    let mlp = AnyModel::Mlp(mlp.model);

    let (ga, ma) = (held_out(&gbdt)?, held_out(&mlp)?);
    ensure!(ga >= 0.99 && ma >= 0.99, "held-out accuracy gbdt {ga:.4}, mlp {ma:.4}");
    Ok(format!("{} test rows: gbdt {ga:.4}, mlp {ma:.4}", test_y.len()))
}

fn auc_vs_pairwise() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    while done < 200 {
        let n = rng.random_range(2..=50);
        // Coarse scores so that ties are common.
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / f64::from(levels)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
        if pos.is_empty() || neg.is_empty() {
            ensure!(roc_auc(&scores, &labels).is_err(), "single-class input accepted");
            continue;
        }
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let want = wins / (pos.len() * neg.len()) as f64;
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-12, "instance {done}: {got} vs pairwise {want}");
        worst = worst.max((got - want).abs());
        done += 1;
    }
    Ok(format!("200 instances, max |diff| {worst:.1e}"))
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fuzztarget"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(out.stdout)
}

fn pipeline_once(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    cli(dir, &["toy-corpus", "-o", "ir", "--cases", "40", "--seed", "5"])?;
    cli(dir, &["extract", "ir", "-o", "fragments"])?;
    cli(dir, &["assemble", "fragments", "-o", "dataset.ssv"])?;
    cli(dir, &["train", "dataset.ssv", "--model", "gbdt", "-o", "model.json", "--report", "train-report.json"])?;
    cli(dir, &["predict", "dataset.ssv", "--model", "model.json", "-o", "predictions.json"])?;
    ["dataset.ssv", "model.json", "train-report.json", "predictions.json"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| e.to_string()))
        .collect()
}

fn pipeline_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = pipeline_once(a.path())?;
    let second = pipeline_once(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(x == y, "{name} differs between runs");
        ensure!(!x.is_empty(), "{name} is empty");
    }
    let sizes: Vec<String> = first.iter().map(|(n, b)| format!("{n} {}B", b.len())).collect();
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

const BOUNDARY: &str = "acceptance-boundary";

fn upload(endpoint: &str, file: &[u8], model: &str) -> Request<Body> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"modelselect\"\r\n\r\n{model}\r\n--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"f.csv\"\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(file);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    Request::post(endpoint)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> Result<(StatusCode, Vec<u8>), String> {
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    Ok((status, resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes().to_vec()))
}

async fn predict(app: &Router, endpoint: &str, file: &[u8]) -> Result<PredictionResponse, String> {
    let (status, body) = call(app, upload(endpoint, file, "gbdtfn")).await?;
    ensure!(status == StatusCode::OK, "{endpoint}: {status} {}", String::from_utf8_lossy(&body));
    // Unknown or missing fields fail here.
    serde_json::from_slice(&body).map_err(|e| format!("{endpoint}: schema: {e}"))
}

fn random_upload() -> impl Strategy<Value = Vec<u8>> {
    let row = (prop::collection::vec(0u32..25, FUNCTION_HEADER.len() - 3), 0u8..2);
    prop::collection::vec(row, 1..40).prop_map(|rows| {
        let mut text = FUNCTION_HEADER.join(";") + "\n";
        for (i, (values, label)) in rows.iter().enumerate() {
            let cells: Vec<String> = values.iter().map(u32::to_string).collect();
            text.push_str(&format!("{i};fn_{i};{};{label}\n", cells.join(";")));
        }
        text.into_bytes()
    })
}

fn service_contract() -> Outcome {
    let table =
        apply_feature_profile(&synthetic_table(TableKind::Function, 300, 8), &FeatureProfile::function_default())
            .map_err(|e| e.to_string())?;
    let config = GbdtConfig { n_estimators: 60, max_depth: 4, ..Default::default() };
    let model = train_gbdt(&table, &config).map_err(|e| e.to_string())?.model;
    let loaded = LoadedModel::new(ModelId::Gbdtfn, AnyModel::Gbdt(model)).map_err(|e| e.to_string())?;
    let app = router(AppState::new(vec![loaded], Thresholds::default()).map_err(|e| e.to_string())?, None);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let file = fuzztarget::dataset::write_ssv(&synthetic_table(TableKind::Function, 50, 9), true)
        .map_err(|e| e.to_string())?
        .into_bytes();

    rt.block_on(async {
        let first = predict(&app, "/api/all-list", &file).await?;
        ensure!(!first.cache_hit, "first upload reported a cache hit");
        ensure!(first.stats.total == 50, "total {}", first.stats.total);
        ensure!(first.stats.buckets.iter().map(|b| b.count).sum::<usize>() == 50, "bucket sum");
        let again = predict(&app, "/api/all-list", &file).await?;
        ensure!(again.cache_hit, "re-upload missed the cache");
        ensure!(again.records == first.records, "cached records differ");

        let uri = format!("/api/clear-cache-record?hash={}", first.file_sha256);
        let (status, _) = call(&app, Request::get(uri).body(Body::empty()).unwrap()).await?;
        ensure!(status == StatusCode::OK, "clear-cache-record: {status}");
        ensure!(!predict(&app, "/api/all-list", &file).await?.cache_hit, "record survived clear-cache-record");

        let (status, body) = call(&app, Request::post("/api/clear-cache").body(Body::empty()).unwrap()).await?;
        ensure!(status == StatusCode::OK, "clear-cache: {status}");
        let evicted: Evicted = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure!(evicted.evicted == 1, "clear-cache evicted {}", evicted.evicted);
        Ok::<_, String>(())
    })?;

    let mut runner =
        TestRunner::new(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() });
    let nonempty = std::cell::Cell::new(0usize);
    runner
        .run(&random_upload(), |file| {
            let (all, high, sure) = rt
                .block_on(async {
                    Ok::<_, String>((
                        predict(&app, "/api/all-list", &file).await?,
                        predict(&app, "/api/high-conf-list", &file).await?,
                        predict(&app, "/api/sure-list", &file).await?,
                    ))
                })
                .map_err(TestCaseError::fail)?;
            let names = |r: &PredictionResponse| r.records.iter().map(|x| x.name.clone()).collect::<BTreeSet<_>>();
            prop_assert!(names(&sure).is_subset(&names(&high)));
            prop_assert!(names(&high).is_subset(&names(&all)));
            nonempty.set(nonempty.get() + usize::from(!all.records.is_empty()));
            Ok(())
        })
        .map_err(|e| format!("nesting: {e}"))?;
    Ok(format!(
        "cache hit/evict cycle ok; sure <= high <= all on 20 generated uploads ({} with listings)",
        nonempty.get()
    ))
}
