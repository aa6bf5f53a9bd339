//! HTTP front end for trained models.
//!
//! Clients upload a feature table (semicolon- or comma-separated) together
//! with a model id and get back per-row vulnerability probabilities, filtered
//! by confidence. Results are cached by `(sha256 of the upload, model id)`
//! until explicitly cleared.

mod cache;
mod handlers;

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use fuzztarget::report::Thresholds;
use fuzztarget::{AnyModel, TableKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

pub use cache::{file_hash, Cache, CacheEntry, CachedPrediction};
pub use handlers::{ErrorBody, Evicted, Health, PredictionResponse};

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

/// Model ids accepted in the `modelselect` form field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Dnnfn,
    Dnnbb,
    Gbdtfn,
    Gbdtbb,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Dnnfn, ModelId::Dnnbb, ModelId::Gbdtfn, ModelId::Gbdtbb];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Dnnfn => "dnnfn",
            ModelId::Dnnbb => "dnnbb",
            ModelId::Gbdtfn => "gbdtfn",
            ModelId::Gbdtbb => "gbdtbb",
        }
    }

    pub fn kind(self) -> TableKind {
        match self {
            ModelId::Dnnfn | ModelId::Gbdtfn => TableKind::Function,
            ModelId::Dnnbb | ModelId::Gbdtbb => TableKind::Block,
        }
    }

    pub fn family(self) -> &'static str {
        match self {
            ModelId::Dnnfn | ModelId::Dnnbb => "mlp",
            ModelId::Gbdtfn | ModelId::Gbdtbb => "gbdt",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected dnnfn, dnnbb, gbdtfn or gbdtbb)"))
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("reading model {id} from {path}: {source}")]
    ReadModel { id: ModelId, path: String, source: std::io::Error },
    #[error("loading model {id} from {path}: {source}")]
    LoadModel { id: ModelId, path: String, source: fuzztarget::ModelError },
    #[error("model {id} is a {found} model, but the id requires {expected}")]
    ModelMismatch { id: ModelId, expected: String, found: String },
    #[error("static directory {0} does not exist")]
    MissingStaticDir(String),
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A model served under one id.
#[derive(Debug)]
pub struct LoadedModel {
    pub id: ModelId,
    pub model: AnyModel,
    pub kind: TableKind,
}

impl LoadedModel {
    /// Checks that the model's family and table kind agree with `id`.
    pub fn new(id: ModelId, model: AnyModel) -> Result<Self, ServiceError> {
        if model.family() != id.family() {
            return Err(ServiceError::ModelMismatch { id, expected: id.family().into(), found: model.family().into() });
        }
        if let Some(kind) = model.table_kind() {
            if kind != id.kind() {
                return Err(ServiceError::ModelMismatch {
                    id,
                    expected: format!("{} features", id.kind().as_str()),
                    found: format!("{} features", kind.as_str()),
                });
            }
        }
        Ok(LoadedModel { id, model, kind: id.kind() })
    }

    pub fn from_file(id: ModelId, path: &Path) -> Result<Self, ServiceError> {
        let display = path.display().to_string();
        let bytes =
            std::fs::read(path).map_err(|source| ServiceError::ReadModel { id, path: display.clone(), source })?;
        let model =
            AnyModel::from_bytes(&bytes).map_err(|source| ServiceError::LoadModel { id, path: display, source })?;
        Self::new(id, model)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default)]
    pub models: BTreeMap<ModelId, PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Directory of the browser UI bundle, served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

/// Shared, immutable-after-boot state plus the cache.
#[derive(Debug, Clone)]
pub struct AppState {
    pub models: Arc<BTreeMap<ModelId, LoadedModel>>,
    pub thresholds: Thresholds,
    pub cache: Arc<Mutex<Cache>>,
}

impl AppState {
    pub fn new(models: Vec<LoadedModel>, thresholds: Thresholds) -> Result<Self, ServiceError> {
        thresholds.validate().map_err(ServiceError::Thresholds)?;
        Ok(AppState {
            models: Arc::new(models.into_iter().map(|m| (m.id, m)).collect()),
            thresholds,
            cache: Arc::new(Mutex::new(Cache::default())),
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let models =
            config.models.iter().map(|(id, path)| LoadedModel::from_file(*id, path)).collect::<Result<Vec<_>, _>>()?;
        Self::new(models, config.thresholds)
    }
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/high-conf-list", post(handlers::high_conf_list))
        .route("/api/sure-list", post(handlers::sure_list))
        .route("/api/all-list", post(handlers::all_list))
        .route("/api/clear-cache-record", get(handlers::clear_cache_record))
        .route("/api/clear-cache", get(handlers::clear_cache).post(handlers::clear_cache))
        .route("/api/health", get(handlers::health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Binds `addr`, reporting a taken port as [`ServiceError::Bind`].
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, config: &ServiceConfig) -> Result<(), ServiceError> {
    if let Some(dir) = &config.static_dir {
        if !dir.is_dir() {
            return Err(ServiceError::MissingStaticDir(dir.display().to_string()));
        }
    }
    let state = AppState::from_config(config)?;
    tracing::info!(models = ?state.models.keys().collect::<Vec<_>>(), addr = ?listener.local_addr().ok(), "serving");
    let app = router(state, config.static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
