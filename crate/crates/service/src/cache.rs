use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::SystemTime;

use sha2::{Digest, Sha256};

use crate::ModelId;

/// Lowercase hex sha256 of `bytes`.
pub fn file_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn is_valid_hash(hash: &str) -> bool {
    hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Everything needed to answer any of the three listing endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedPrediction {
    pub names: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub prediction: Arc<CachedPrediction>,
    pub created_at: SystemTime,
}

/// Results keyed by (content hash, model). Entries never expire.
#[derive(Debug, Default)]
pub struct Cache {
    entries: HashMap<(String, ModelId), CacheEntry>,
}

impl Cache {
    pub fn get(&self, hash: &str, model: ModelId) -> Option<Arc<CachedPrediction>> {
        self.entries.get(&(hash.to_string(), model)).map(|e| Arc::clone(&e.prediction))
    }

    /// Stores `prediction` unless another request already did, and returns
    /// the stored value.
    pub fn insert(&mut self, hash: String, model: ModelId, prediction: CachedPrediction) -> Arc<CachedPrediction> {
        let entry = self
            .entries
            .entry((hash, model))
            .or_insert_with(|| CacheEntry { prediction: Arc::new(prediction), created_at: SystemTime::now() });
        Arc::clone(&entry.prediction)
    }

    /// Removes every model's entry for `hash`; returns how many were removed.
    pub fn remove_hash(&mut self, hash: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|(h, _), _| h != hash);
        before - self.entries.len()
    }

    pub fn clear(&mut self) -> usize {
        let n = self.entries.len();
        self.entries.clear();
        n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
