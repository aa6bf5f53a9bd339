use std::collections::BTreeMap;

use axum::extract::multipart::{Multipart, MultipartRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fuzztarget::dataset::read_table;
use fuzztarget::report::{build_report, Filter, PredictionRecord, SummaryStats};
use fuzztarget::{Classifier, ModelError};
use serde::{Deserialize, Serialize};

use crate::cache::{file_hash, is_valid_hash, CachedPrediction};
use crate::{AppState, ModelId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionResponse {
    pub file_sha256: String,
    pub model: ModelId,
    pub cache_hit: bool,
    pub stats: SummaryStats,
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), line: None } }
    }

    fn with_line(mut self, line: Option<usize>) -> Self {
        self.body.line = line;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct Upload {
    file: Vec<u8>,
    model: ModelId,
}

async fn read_upload(multipart: Result<Multipart, MultipartRejection>) -> Result<Upload, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let mut file = None;
    let mut model = None;
    loop {
        let field = multipart.next_field().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let Some(field) = field else { break };
        match field.name() {
            Some("file") => {
                file = Some(field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?.to_vec());
            }
            Some("modelselect") => {
                model = Some(field.text().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?);
            }
            _ => {}
        }
    }
    let file = file.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing form field `file`"))?;
    let model = model.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing form field `modelselect`"))?;
    let model = model.trim().parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    Ok(Upload { file, model })
}

fn compute(state: &AppState, model: ModelId, bytes: &[u8]) -> Result<CachedPrediction, ApiError> {
    let loaded = state.models.get(&model).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, format!("model `{model}` is not loaded on this server"))
    })?;
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("upload is not UTF-8 text: {e}")))?;
    let table = read_table(text, loaded.kind)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with_line(e.line()))?;
    let probabilities = loaded.model.predict_table(&table).map_err(|e| match e {
        ModelError::MissingFeature(_) | ModelError::Dataset(_) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })?;
    Ok(CachedPrediction { names: table.row_names(), probabilities })
}

async fn predict(
    state: AppState,
    multipart: Result<Multipart, MultipartRejection>,
    filter: Filter,
) -> Result<Json<PredictionResponse>, ApiError> {
    let upload = read_upload(multipart).await?;
    if !state.models.contains_key(&upload.model) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("model `{}` is not loaded on this server", upload.model),
        ));
    }
    let hash = file_hash(&upload.file);
    let cached = state.cache.lock().expect("cache lock").get(&hash, upload.model);
    let (prediction, cache_hit) = match cached {
        Some(p) => (p, true),
        None => {
            let worker = state.clone();
            let model = upload.model;
            let computed = tokio::task::spawn_blocking(move || compute(&worker, model, &upload.file))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            let stored = state.cache.lock().expect("cache lock").insert(hash.clone(), model, computed);
            (stored, false)
        }
    };
    let report = build_report(&prediction.names, &prediction.probabilities, filter, &state.thresholds);
    Ok(Json(PredictionResponse {
        file_sha256: hash,
        model: upload.model,
        cache_hit,
        stats: report.stats,
        records: report.records,
    }))
}

pub async fn high_conf_list(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    predict(state, multipart, Filter::High).await
}

pub async fn sure_list(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    predict(state, multipart, Filter::Sure).await
}

pub async fn all_list(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    predict(state, multipart, Filter::All).await
}

#[derive(Debug, Deserialize)]
pub struct HashQuery {
    hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Evicted {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    pub evicted: usize,
}

pub async fn clear_cache_record(
    State(state): State<AppState>,
    Query(query): Query<HashQuery>,
) -> Result<Json<Evicted>, ApiError> {
    let hash = query.hash.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing query parameter `hash`"))?;
    if !is_valid_hash(&hash) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "`hash` must be 64 hexadecimal characters"));
    }
    let hash = hash.to_ascii_lowercase();
    let evicted = state.cache.lock().expect("cache lock").remove_hash(&hash);
    if evicted == 0 {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no cached results for {hash}")));
    }
    Ok(Json(Evicted { hash: Some(hash), evicted }))
}

pub async fn clear_cache(State(state): State<AppState>) -> Json<Evicted> {
    let evicted = state.cache.lock().expect("cache lock").clear();
    Json(Evicted { hash: None, evicted })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: BTreeMap<ModelId, Vec<String>>,
    pub cache_entries: usize,
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    let models = state.models.iter().map(|(id, m)| (*id, m.model.feature_names().to_vec())).collect();
    let cache_entries = state.cache.lock().expect("cache lock").len();
    Json(Health { status: "ok".into(), models, cache_entries })
}
