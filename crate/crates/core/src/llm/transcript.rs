//! Append-only JSON-lines store of prompt/reply exchanges, keyed by a
//! request hash over the prompt and provider parameters.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmError, ProviderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub prompt: String,
    pub reply: String,
    pub provider: String,
    pub model: String,
    /// RFC 3339; informational only.
    pub timestamp: String,
}

/// Hex SHA-256 over the canonical JSON of the prompt and the parameters
/// that change a reply. Endpoint URLs, timeouts and credentials are left
/// out so the same request hashes alike everywhere.
pub fn request_hash(prompt: &str, cfg: &ProviderConfig) -> String {
    let canonical = serde_json::json!({
        "max_tokens": cfg.max_tokens,
        "model": cfg.model,
        "prompt": prompt,
        "provider": cfg.provider,
        "temperature": cfg.temperature,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    path: PathBuf,
}

impl TranscriptStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TranscriptStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &TranscriptEntry) -> Result<(), LlmError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| LlmError::Transcript(e.to_string()))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", self.path.display())))?;
        let line = serde_json::to_string(entry).map_err(|e| LlmError::Transcript(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| LlmError::Transcript(e.to_string()))
    }

    /// All entries in file order; a missing file is an empty store.
    pub fn load(&self) -> Result<Vec<TranscriptEntry>, LlmError> {
        let file = match fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(LlmError::Transcript(format!("{}: {e}", self.path.display()))),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| LlmError::Transcript(format!("{} line {}: {e}", self.path.display(), n + 1)))?,
            );
        }
        Ok(out)
    }

    /// Hash -> reply; the first recorded reply for a hash wins.
    pub fn replies(&self) -> Result<HashMap<String, String>, LlmError> {
        let mut map = HashMap::new();
        for e in self.load()? {
            map.entry(e.request_hash).or_insert(e.reply);
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_parameter_sensitive() {
        let cfg = ProviderConfig::default();
        let a = request_hash("hello", &cfg);
        assert_eq!(a, request_hash("hello", &cfg));
        assert_eq!(a.len(), 64);
        assert_ne!(a, request_hash("hello!", &cfg));
        let warmer = ProviderConfig { temperature: 0.7, ..cfg.clone() };
        assert_ne!(a, request_hash("hello", &warmer));
        let other_url = ProviderConfig { base_url: "http://localhost:1".into(), ..cfg };
        assert_eq!(a, request_hash("hello", &other_url));
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path().join("t/transcript.jsonl"));
        assert!(store.load().unwrap().is_empty());
        for reply in ["one", "two"] {
            store
                .append(&TranscriptEntry {
                    request_hash: "h0".into(),
                    prompt: "p".into(),
                    reply: reply.to_string(),
                    provider: "x".into(),
                    model: "m".into(),
                    timestamp: String::new(),
                })
                .unwrap();
        }
        assert_eq!(store.load().unwrap().len(), 2);
        assert_eq!(store.replies().unwrap()["h0"], "one");
    }
}
