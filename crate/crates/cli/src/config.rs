//! Optional TOML config file. Every field is optional; command-line flags
//! take precedence.
//!
//! ```toml
//! seed = 42
//! test_fraction = 0.2
//! folds = 5
//!
//! [profiles]
//! tiny = ["FunctionID", "FunctionName", "InDirectCalls", "MemOps", "NumLoops"]
//!
//! [gbdt]
//! n_estimators = 200
//!
//! [mlp]
//! hidden_units = [64, 32]
//!
//! [thresholds]
//! high = 0.95
//!
//! [extract]
//! mem_ops = ["memcpy", "llvm.memcpy*"]
//! corpus_callgraph = true
//!
//! [serve]
//! port = 8000
//! static_dir = "webui/dist"
//! models = { gbdtfn = "models/fn.json" }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fuzztarget::dataset::FeatureProfile;
use fuzztarget::dnn::MlpConfig;
use fuzztarget::gbdt::GbdtConfig;
use fuzztarget::ir::{SymbolLists, SymbolPattern};
use fuzztarget::model::ParamError;
use fuzztarget::report::Thresholds;
use fuzztarget::TableKind;
use fuzztarget_service::ModelId;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{read_text, CliError};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8000;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub test_fraction: Option<f64>,
    pub folds: Option<usize>,
    pub profiles: BTreeMap<String, Vec<String>>,
    pub gbdt: BTreeMap<String, Value>,
    pub mlp: BTreeMap<String, Value>,
    pub thresholds: ThresholdSection,
    pub extract: ExtractSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub high: Option<f64>,
    pub sure: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub mem_ops: Option<Vec<String>>,
    pub dynamic_allocs: Option<Vec<String>>,
    pub corpus_callgraph: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub static_dir: Option<PathBuf>,
    pub models: BTreeMap<ModelId, PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn folds(&self, flag: Option<usize>) -> usize {
        flag.or(self.folds).unwrap_or(DEFAULT_FOLDS)
    }

    pub fn test_fraction(&self, flag: Option<f64>) -> f64 {
        flag.or(self.test_fraction).unwrap_or(DEFAULT_TEST_FRACTION)
    }

    pub fn profile(&self, name: Option<&str>, kind: TableKind) -> Result<FeatureProfile, CliError> {
        match name {
            None => Ok(FeatureProfile::default_for(kind)),
            Some(n) => match self.profiles.get(n) {
                Some(cols) => Ok(FeatureProfile::new(n, &cols.iter().map(String::as_str).collect::<Vec<_>>())),
                None => Ok(FeatureProfile::builtin(n)?),
            },
        }
    }

    pub fn gbdt(&self, overrides: &[String]) -> Result<GbdtConfig, CliError> {
        let mut c = GbdtConfig::default();
        apply(&self.gbdt, overrides, |k, v| c.set_param(k, v))?;
        Ok(c)
    }

    pub fn mlp(&self, overrides: &[String]) -> Result<MlpConfig, CliError> {
        let mut c = MlpConfig::default();
        apply(&self.mlp, overrides, |k, v| c.set_param(k, v))?;
        Ok(c)
    }

    pub fn thresholds(&self, high: Option<f64>, sure: Option<f64>) -> Result<Thresholds, CliError> {
        let d = Thresholds::default();
        let t = Thresholds {
            high: high.or(self.thresholds.high).unwrap_or(d.high),
            sure: sure.or(self.thresholds.sure).unwrap_or(d.sure),
        };
        t.validate().map_err(CliError::User)?;
        Ok(t)
    }

    pub fn symbols(&self) -> SymbolLists {
        let mut s = SymbolLists::default();
        if let Some(list) = &self.extract.mem_ops {
            s.mem_ops = list.iter().map(SymbolPattern::new).collect();
        }
        if let Some(list) = &self.extract.dynamic_allocs {
            s.dynamic_allocs = list.iter().map(SymbolPattern::new).collect();
        }
        s
    }
}

/// Applies config-file values, then `name=value` flags.
fn apply(
    file: &BTreeMap<String, Value>,
    overrides: &[String],
    mut set: impl FnMut(&str, &Value) -> Result<(), ParamError>,
) -> Result<(), CliError> {
    for (k, v) in file {
        set(k, v).map_err(|e| CliError::user(format!("config: {e}")))?;
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set(&k, &v).map_err(|e| CliError::user(format!("--set {o}: {e}")))?;
    }
    Ok(())
}

/// Splits `name=value`; the value is JSON, or a bare string if it does not
/// parse as JSON.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::user(format!("--set expects NAME=VALUE, got `{s}`")))?;
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
    Ok((k.trim().to_string(), value))
}

/// Parses `ID=PATH`.
pub fn parse_model_arg(s: &str) -> Result<(ModelId, PathBuf), CliError> {
    let (id, path) = s.split_once('=').ok_or_else(|| CliError::user(format!("--model expects ID=PATH, got `{s}`")))?;
    let id = id.trim().parse::<ModelId>().map_err(CliError::User)?;
    Ok((id, PathBuf::from(path)))
}
