use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fuzztarget::dataset::{
    apply_feature_profile, assemble_corpus, read_table, sanity_check_blocks, stratified_split, write_ssv,
    FeatureProfile, FeatureTable, TableKind,
};
use fuzztarget::dnn::{train_mlp_with_holdout, EpochRecord};
use fuzztarget::gbdt::{top_features, train_gbdt};
use fuzztarget::ir::ParseOptions;
use fuzztarget::metrics::{
    evaluate, learning_curve, pr_curve, roc_curve, CurvePoint, LearningCurvePoint, MetricsReport,
};
use fuzztarget::model::{permutation_importance, ImportanceMetric};
use fuzztarget::pipeline::{
    collect_ir_files, extract_sources, fragment_names, read_sources, CallGraphScope, ExtractOptions,
};
use fuzztarget::report::{predict_report, Filter, PredictionRecord, SummaryStats, Thresholds};
use fuzztarget::toy::{toy_corpus, ToyCorpusConfig};
use fuzztarget::tuning::{grid_search_table, Candidate, Grid, Tunable};
use fuzztarget::{AnyModel, Classifier};
use fuzztarget_service::{ModelId, ServiceConfig};
use serde::Serialize;
use serde_json::Value;

use crate::args::*;
use crate::config::{parse_model_arg, FileConfig, DEFAULT_HOST, DEFAULT_PORT};
use crate::error::{read_bytes, read_text, to_json, write_file, CliError};

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_table(path: &Path, kind: TableKind) -> Result<FeatureTable, CliError> {
    read_table(&read_text(path)?, kind).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<AnyModel, CliError> {
    AnyModel::from_bytes(&read_bytes(path)?).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn model_kind(model: &AnyModel, flag: Option<KindArg>) -> Result<TableKind, CliError> {
    match (flag.map(TableKind::from), model.table_kind()) {
        (Some(k), Some(m)) if k != m => Err(CliError::user(format!(
            "model was trained on {} features, but --kind {} was given",
            m.as_str(),
            k.as_str()
        ))),
        (Some(k), _) | (None, Some(k)) => Ok(k),
        (None, None) => Err(CliError::user("model file does not record its table kind; pass --kind")),
    }
}

pub fn extract(args: &ExtractArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let kind = TableKind::from(args.kind);
    let files = collect_ir_files(&args.inputs)?;
    if files.is_empty() {
        eprintln!("warning: no .ll files found");
        return Ok(());
    }
    let (sources, read_errors) = read_sources(&files);
    let callgraph = if args.corpus_callgraph || cfg.extract.corpus_callgraph.unwrap_or(false) {
        CallGraphScope::Corpus
    } else {
        CallGraphScope::PerFile
    };
    let options = ExtractOptions {
        parse: ParseOptions { symbols: cfg.symbols(), ..Default::default() },
        label_override: args.label,
        callgraph,
    };
    let outcome = extract_sources(&sources, &options);

    for (path, w) in outcome.warnings() {
        eprintln!("warning: {path}: function `{}` labelled by fallback rule ({:?})", w.function, w.source);
    }
    let paths: Vec<&str> = outcome.files.iter().map(|f| f.path.as_str()).collect();
    let mut rows = 0;
    for (file, name) in outcome.files.iter().zip(fragment_names(&paths)) {
        let table = file.table(kind);
        if kind == TableKind::Block {
            let report = sanity_check_blocks(&table)?;
            for v in &report.violations {
                eprintln!("warning: {}: block row {} violates {:?}", file.path, v.row, v.rule);
            }
        }
        rows += table.len();
        write_file(&args.out_dir.join(name), write_ssv(&table, false)?.as_bytes())?;
    }
    let failures: Vec<String> = read_errors.iter().chain(&outcome.errors).map(ToString::to_string).collect();
    for f in &failures {
        eprintln!("error: {f}");
    }
    emit(&format!(
        "extracted {rows} {} rows from {} files into {}\n",
        kind.as_str(),
        outcome.files.len(),
        args.out_dir.display()
    ));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::user(format!("{} of {} files failed", failures.len(), files.len())))
    }
}

pub fn assemble(args: &AssembleArgs) -> Result<(), CliError> {
    let kind = TableKind::from(args.kind);
    if !args.fragment_dir.is_dir() {
        return Err(CliError::user(format!("{} is not a directory", args.fragment_dir.display())));
    }
    let table = assemble_corpus(&args.fragment_dir, kind)?;
    let out = args.out.clone().unwrap_or_else(|| args.fragment_dir.join(kind.dataset_file_name()));
    write_file(&out, write_ssv(&table, true)?.as_bytes())?;
    emit(&format!("assembled {} rows into {}\n", table.len(), out.display()));
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitInfo {
    test_fraction: f64,
    seed: u64,
    train_rows: usize,
    test_rows: usize,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum TrainingDetails {
    Gbdt { rounds: usize, final_train_logloss: f64, single_class: bool, top_features: Vec<(String, f64)> },
    Mlp { best_epoch: Option<usize>, epochs_run: usize, history: Vec<EpochRecord> },
}

#[derive(Debug, Serialize)]
struct TrainReport {
    model: &'static str,
    kind: TableKind,
    profile: FeatureProfile,
    features: Vec<String>,
    split: SplitInfo,
    hyperparameters: Value,
    training: TrainingDetails,
    metrics: MetricsReport,
}

fn training_table(inputs: &TrainingInputs, cfg: &FileConfig) -> Result<(FeatureTable, FeatureProfile), CliError> {
    let kind = TableKind::from(inputs.kind);
    let table = load_table(&inputs.dataset, kind)?;
    if !table.has_label() {
        return Err(CliError::user(format!("{}: dataset has no VULNERABLE label column", inputs.dataset.display())));
    }
    let profile = cfg.profile(inputs.profile.as_deref(), kind)?;
    Ok((apply_feature_profile(&table, &profile)?, profile))
}

fn hyperparameters<T: Serialize>(c: &T) -> Result<Value, CliError> {
    serde_json::to_value(c).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn train(args: &TrainArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let (table, profile) = training_table(&args.inputs, cfg)?;
    let kind = table.kind();
    let seed = cfg.seed(args.inputs.seed);
    let test_fraction = cfg.test_fraction(args.test_fraction);
    let (train, test) = stratified_split(&table, test_fraction, seed)?;

    let (model, hyper, training) = match args.inputs.model {
        ModelKind::Gbdt => {
            let config = cfg.gbdt(&args.inputs.overrides)?;
            let t = train_gbdt(&train, &config)?;
            if t.degenerate {
                eprintln!("warning: training rows contain a single class");
            }
            let details = TrainingDetails::Gbdt {
                rounds: t.model.trees.len(),
                final_train_logloss: t.train_logloss.last().copied().unwrap_or(f64::NAN),
                single_class: t.degenerate,
                top_features: top_features(&t.model.feature_importance(), 10),
            };
            (AnyModel::Gbdt(t.model), hyperparameters(&config)?, details)
        }
        ModelKind::Mlp => {
            let config = cfg.mlp(&args.inputs.overrides)?;
            let names = train.feature_names();
            // The held-out split doubles as the early-stopping monitor.
            let mut t = train_mlp_with_holdout(
                &train.matrix(&names)?,
                &train.labels()?,
                &test.matrix(&names)?,
                &test.labels()?,
                names,
                &config,
            )?;
            t.model.table_kind = Some(kind);
            let details =
                TrainingDetails::Mlp { best_epoch: t.best_epoch, epochs_run: t.history.len(), history: t.history };
            (AnyModel::Mlp(t.model), hyperparameters(&config)?, details)
        }
    };

    let metrics = evaluate(&model.predict_table(&test)?, &test.labels()?, fuzztarget::metrics::DEFAULT_THRESHOLD)?;
    let report = TrainReport {
        model: model.family(),
        kind,
        features: model.feature_names().to_vec(),
        profile,
        split: SplitInfo { test_fraction, seed, train_rows: train.len(), test_rows: test.len() },
        hyperparameters: hyper,
        training,
        metrics,
    };
    write_file(&args.out, &model.to_bytes())?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let text = to_json(&report)?;
    write_file(&report_path, text.as_bytes())?;
    emit(&text);
    Ok(())
}

#[derive(Debug, Serialize)]
struct Curves {
    roc: Vec<CurvePoint>,
    precision_recall: Vec<CurvePoint>,
}

#[derive(Debug, Serialize)]
struct Importance {
    /// Mean ROC-AUC drop when the column is shuffled.
    permutation_auc_drop: Vec<(String, f64)>,
    /// GBDT only: share of splits on each feature.
    #[serde(skip_serializing_if = "Option::is_none")]
    split_share: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    model: &'static str,
    kind: TableKind,
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    curves: Option<Curves>,
    #[serde(skip_serializing_if = "Option::is_none")]
    importance: Option<Importance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_curve: Option<Vec<LearningCurvePoint>>,
}

pub fn evaluate_cmd(args: &EvaluateArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let kind = model_kind(&model, args.kind)?;
    let table = load_table(&args.dataset, kind)?;
    let labels = table.labels().map_err(|e| CliError::user(format!("{}: {e}", args.dataset.display())))?;
    let scores = model.predict_table(&table)?;
    let seed = cfg.seed(args.seed);
    let metrics = evaluate(&scores, &labels, args.threshold)?;

    let curves = if args.curves {
        Some(Curves { roc: roc_curve(&scores, &labels)?, precision_recall: pr_curve(&scores, &labels)? })
    } else {
        None
    };
    let importance = if args.importance {
        Some(Importance {
            permutation_auc_drop: permutation_importance(&model, &table, ImportanceMetric::Auc, seed)?,
            split_share: match &model {
                AnyModel::Gbdt(m) => Some(m.feature_importance()),
                AnyModel::Mlp(_) => None,
            },
        })
    } else {
        None
    };
    let curve = match &args.learning_curve {
        None => None,
        Some(fractions) => {
            let names = model.feature_names().to_vec();
            let x = table.matrix(&names)?;
            let folds = cfg.folds(args.folds);
            let points = match &model {
                AnyModel::Gbdt(m) => learning_curve(&x, &labels, fractions, folds, seed, |xt, yt, xe| {
                    m.config.fit_predict(xt, yt, &names, xe).map_err(|e| e.to_string())
                }),
                AnyModel::Mlp(m) => learning_curve(&x, &labels, fractions, folds, seed, |xt, yt, xe| {
                    m.config.fit_predict(xt, yt, &names, xe).map_err(|e| e.to_string())
                }),
            }?;
            Some(points)
        }
    };
    let report = EvaluateReport { model: model.family(), kind, metrics, curves, importance, learning_curve: curve };
    let text = to_json(&report)?;
    if let Some(out) = &args.out {
        write_file(out, text.as_bytes())?;
    }
    emit(&text);
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    model: &'static str,
    kind: TableKind,
    filter: Filter,
    thresholds: Thresholds,
    stats: SummaryStats,
    records: Vec<PredictionRecord>,
}

pub fn predict(args: &PredictArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let thresholds = cfg.thresholds(args.thresholds.high, args.thresholds.sure)?;
    let model = load_model(&args.model)?;
    let kind = model_kind(&model, args.kind)?;
    let table = load_table(&args.features, kind)?;
    let filter = Filter::from(args.filter);
    let report = predict_report(&model, &table, filter, &thresholds)?;
    let out =
        PredictOutput { model: model.family(), kind, filter, thresholds, stats: report.stats, records: report.records };
    let text = to_json(&out)?;
    match &args.out {
        Some(path) => write_file(path, text.as_bytes())?,
        None => emit(&text),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TuneReport {
    model: &'static str,
    kind: TableKind,
    profile: FeatureProfile,
    folds: usize,
    seed: u64,
    best_index: usize,
    best_params: BTreeMap<String, Value>,
    best_config: Value,
    candidates: Vec<Candidate>,
}

fn load_grid(path: &Path) -> Result<Grid, CliError> {
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<Grid>(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str::<Grid>(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

pub fn tune(args: &TuneArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let (table, profile) = training_table(&args.inputs, cfg)?;
    let grid = load_grid(&args.grid)?;
    let folds = cfg.folds(args.folds);
    let seed = cfg.seed(args.inputs.seed);
    let (model, best_index, best_config, candidates) = match args.inputs.model {
        ModelKind::Gbdt => {
            let r = grid_search_table(&table, &cfg.gbdt(&args.inputs.overrides)?, &grid, folds, seed)?;
            ("gbdt", r.best_index, hyperparameters(&r.best)?, r.candidates)
        }
        ModelKind::Mlp => {
            let r = grid_search_table(&table, &cfg.mlp(&args.inputs.overrides)?, &grid, folds, seed)?;
            ("mlp", r.best_index, hyperparameters(&r.best)?, r.candidates)
        }
    };
    let report = TuneReport {
        model,
        kind: table.kind(),
        profile,
        folds,
        seed,
        best_index,
        best_params: candidates[best_index].params.clone(),
        best_config,
        candidates,
    };
    let text = to_json(&report)?;
    if let Some(out) = &args.out {
        write_file(out, text.as_bytes())?;
    }
    emit(&text);
    Ok(())
}

pub fn serve(args: &ServeArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let mut models = cfg.serve.models.clone();
    for m in &args.models {
        let (id, path) = parse_model_arg(m)?;
        models.insert(id, path);
    }
    if models.is_empty() {
        return Err(CliError::user(format!(
            "no models configured; pass --model ID=PATH (ID one of {})",
            ModelId::ALL.map(ModelId::as_str).join(", ")
        )));
    }
    let config = ServiceConfig {
        models,
        thresholds: cfg.thresholds(args.thresholds.high, args.thresholds.sure)?,
        static_dir: args.static_dir.clone().or_else(|| cfg.serve.static_dir.clone()),
    };
    let host = args.host.clone().or_else(|| cfg.serve.host.clone()).unwrap_or_else(|| DEFAULT_HOST.into());
    let port = args.port.or(cfg.serve.port).unwrap_or(DEFAULT_PORT);
    let addr =
        format!("{host}:{port}").parse().map_err(|e| CliError::user(format!("invalid address {host}:{port}: {e}")))?;

    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async {
        // Load models before binding so a bad file fails fast.
        fuzztarget_service::AppState::from_config(&config)?;
        let listener = fuzztarget_service::bind(addr).await?;
        let local = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
        emit(&format!("listening on http://{local}\n"));
        fuzztarget_service::serve(listener, &config).await?;
        Ok(())
    })
}

pub fn toy(args: &ToyCorpusArgs) -> Result<(), CliError> {
    let files = toy_corpus(ToyCorpusConfig { cases: args.cases, seed: args.seed });
    for f in &files {
        write_file(&args.out_dir.join(&f.file_name), f.source.as_bytes())?;
    }
    emit(&format!("wrote {} IR files to {}\n", files.len(), args.out_dir.display()));
    Ok(())
}
