//! Content-addressed artifact store: each blob lives at
//! `<root>/<first two hex digits>/<sha256>.json`.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("artifact {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact {hash}")]
    Json {
        hash: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("artifact {hash} is corrupt (content hash {actual})")]
    Corrupt { hash: String, actual: String },
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, hash: &str) -> PathBuf {
        self.root.join(&hash[..2.min(hash.len())]).join(format!("{hash}.json"))
    }

    /// Writes the blob if absent and returns its hash. Writes go through a
    /// temporary file and a rename, so a crash never leaves a partial blob.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = content_hash(bytes);
        let path = self.path_of(&hash);
        if path.exists() {
            return Ok(hash);
        }
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        let dir = path.parent().expect("artifact path has a parent");
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let tmp = dir.join(format!(".{hash}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))?;
        Ok(hash)
    }

    pub fn put<T: Serialize>(&self, value: &T) -> Result<String, StoreError> {
        let bytes = serde_json::to_vec(value).map_err(|source| StoreError::Json {
            hash: String::from("<new>"),
            source,
        })?;
        self.put_bytes(&bytes)
    }

    /// Reads a blob and checks it still matches its hash.
    pub fn get_bytes(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(hash);
        let bytes = std::fs::read(&path).map_err(|source| StoreError::Io { path, source })?;
        let actual = content_hash(&bytes);
        if actual != hash {
            return Err(StoreError::Corrupt {
                hash: hash.to_string(),
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn get<T: DeserializeOwned>(&self, hash: &str) -> Result<T, StoreError> {
        let bytes = self.get_bytes(hash)?;
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Json {
            hash: hash.to_string(),
            source,
        })
    }
}
