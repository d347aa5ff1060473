//! Record/replay cache: JSONL of `{fingerprint, request, reply}`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CompletionRequest;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("replay cache {path} line {line}: {reason}")]
    Invalid {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("fingerprint collision on {0}: two different requests hash identically")]
    Collision(String),
    #[error("replay cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay cache encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    fingerprint: String,
    request: CompletionRequest,
    reply: String,
}

#[derive(Default)]
pub struct ReplayCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, (CompletionRequest, String)>>,
    writer: Mutex<Option<File>>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads a cache file (missing file = empty cache). Each entry's stored
    /// fingerprint is recomputed from its stored request and must match.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut entries = HashMap::new();
        match fs::read_to_string(path) {
            Ok(text) => {
                for (idx, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let invalid = |reason: String| CacheError::Invalid {
                        path: path.display().to_string(),
                        line: idx + 1,
                        reason,
                    };
                    let e: Entry = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
                    if e.request.fingerprint() != e.fingerprint {
                        return Err(invalid("stored fingerprint does not match request".into()));
                    }
                    if let Some((prev, _)) = entries.get(&e.fingerprint) {
                        if *prev != e.request {
                            return Err(CacheError::Collision(e.fingerprint));
                        }
                        continue;
                    }
                    entries.insert(e.fingerprint, (e.request, e.reply));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn get(&self, req: &CompletionRequest) -> Result<Option<String>, CacheError> {
        let fp = req.fingerprint();
        let entries = self.entries.read().expect("cache lock poisoned");
        match entries.get(&fp) {
            Some((stored, _)) if stored != req => Err(CacheError::Collision(fp)),
            Some((_, reply)) => Ok(Some(reply.clone())),
            None => Ok(None),
        }
    }

    /// Stores a reply, appending it to the cache file when file-backed.
    pub fn insert(&self, req: &CompletionRequest, reply: &str) -> Result<(), CacheError> {
        let fp = req.fingerprint();
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        {
            let mut entries = self.entries.write().expect("cache lock poisoned");
            if let Some((stored, _)) = entries.get(&fp) {
                if stored != req {
                    return Err(CacheError::Collision(fp));
                }
                return Ok(());
            }
            entries.insert(fp.clone(), (req.clone(), reply.to_string()));
        }
        if let Some(path) = &self.path {
            if writer.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                *writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let line = serde_json::to_string(&Entry {
                fingerprint: fp,
                request: req.clone(),
                reply: reply.to_string(),
            })?;
            let file = writer.as_mut().unwrap();
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of cached requests for one template.
    pub fn count_template(&self, template_id: &str) -> usize {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .values()
            .filter(|(r, _)| r.template_id == template_id)
            .count()
    }
}
