use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::ChatMessage;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache key of a request: model id plus the exact messages sent.
pub fn request_key(model_id: &str, messages: &[ChatMessage]) -> String {
    let body = serde_json::json!({"model": model_id, "messages": messages});
    sha256_hex(body.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub request: String,
    pub text: String,
    pub attempts: usize,
    pub timestamp: u64,
}

/// Responses stored as `<dir>/<key[..2]>/<key>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedResponse>> {
        match read_json(&self.path(key)) {
            Ok(r) => Ok(Some(r)),
            Err(Error::MissingFile(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &str, response: &CachedResponse) -> Result<()> {
        write_json(&self.path(key), response)
    }
}
