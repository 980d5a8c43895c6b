//! Content-addressed on-disk cache for models, score vectors, HPO results
//! and manifests.
//!
//! ```text
//! <root>/models/<hex>.bin     model record + SHA-256 trailer
//! <root>/scores/<hex>.bin     u64 length, f64 values (LE) + SHA-256 trailer
//! <root>/hpo/<hex>.json       HPO result
//! <root>/manifests/<name>.json
//! ```
//! Writes go to a temporary file in the target directory and are renamed
//! into place.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hpo::HpoResult;
use crate::models::{decode_model, encode_model, Model};

pub const STORE_ENV: &str = "MIAGRID_STORE";

/// Identity of a trained model: what it was trained on, how, and with which seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: [u8; 32],
    pub hypers: [u8; 32],
    pub arch: [u8; 32],
    pub seed: u64,
}

impl CellKey {
    pub fn digest(&self) -> [u8; 32] {
        Sha256::new()
            .chain_update(self.dataset)
            .chain_update(self.hypers)
            .chain_update(self.arch)
            .chain_update(self.seed.to_le_bytes())
            .finalize()
            .into()
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest())
    }
}

/// Digest of a dataset's sample ids, in order.
pub fn ids_digest(ids: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((ids.len() as u64).to_le_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Models,
    Scores,
    Hpo,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Models, ObjectKind::Scores, ObjectKind::Hpo];

    pub fn dir(self) -> &'static str {
        match self {
            ObjectKind::Models => "models",
            ObjectKind::Scores => "scores",
            ObjectKind::Hpo => "hpo",
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ObjectKind::Hpo => "json",
            _ => "bin",
        }
    }
}

/// Reference to a stored object, as recorded in manifests (`"models/<hex>"`).
pub fn object_ref(kind: ObjectKind, digest_hex: &str) -> String {
    format!("{}/{digest_hex}", kind.dir())
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for kind in ObjectKind::ALL {
            fs::create_dir_all(root.join(kind.dir()))?;
        }
        fs::create_dir_all(root.join("manifests"))?;
        Ok(Self { root })
    }

    /// Store at `$MIAGRID_STORE`, falling back to `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Result<Self> {
        match std::env::var_os(STORE_ENV) {
            Some(root) => Self::open(PathBuf::from(root)),
            None => Self::open(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: ObjectKind, hex: &str) -> PathBuf {
        self.root.join(kind.dir()).join(format!("{hex}.{}", kind.extension()))
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("object paths have a parent");
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    fn with_trailer(payload: &[u8]) -> Vec<u8> {
        let mut out = payload.to_vec();
        out.extend_from_slice(&Sha256::digest(payload));
        out
    }

    fn read_verified(path: &Path) -> Result<Option<Vec<u8>>> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let integrity = |detail: &str| Error::Integrity { path: path.to_path_buf(), detail: detail.into() };
        if bytes.len() < 32 {
            return Err(integrity("truncated object"));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != trailer {
            return Err(integrity("checksum mismatch"));
        }
        Ok(Some(payload.to_vec()))
    }

    fn put_payload(&self, kind: ObjectKind, hex: &str, payload: &[u8]) -> Result<()> {
        let path = self.path(kind, hex);
        if let Some(existing) = Self::read_verified(&path)? {
            if existing == payload {
                return Ok(());
            }
            return Err(Error::Integrity { path, detail: "different content already stored under this key".into() });
        }
        Self::write_atomic(&path, &Self::with_trailer(payload))
    }

    pub fn put_model(&self, key: &CellKey, model: &Model) -> Result<()> {
        self.put_payload(ObjectKind::Models, &key.hex(), &encode_model(model))
    }

    pub fn get_model(&self, key: &CellKey) -> Result<Option<Model>> {
        let path = self.path(ObjectKind::Models, &key.hex());
        match Self::read_verified(&path)? {
            Some(payload) => decode_model(&payload)
                .map(Some)
                .map_err(|e| Error::Integrity { path, detail: e.to_string() }),
            None => Ok(None),
        }
    }

    pub fn put_scores(&self, key: &CellKey, scores: &[f64]) -> Result<()> {
        let mut payload = Vec::with_capacity(8 + 8 * scores.len());
        payload.extend((scores.len() as u64).to_le_bytes());
        for s in scores {
            payload.extend(s.to_le_bytes());
        }
        self.put_payload(ObjectKind::Scores, &key.hex(), &payload)
    }

    pub fn get_scores(&self, key: &CellKey) -> Result<Option<Vec<f64>>> {
        let path = self.path(ObjectKind::Scores, &key.hex());
        let Some(payload) = Self::read_verified(&path)? else { return Ok(None) };
        let n = payload
            .get(..8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
            .filter(|&n| payload.len() == 8 + 8 * n)
            .ok_or_else(|| Error::Integrity { path, detail: "score vector length mismatch".into() })?;
        Ok(Some(
            payload[8..8 + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    /// HPO results are keyed like cells; `hypers` holds the search-space digest.
    pub fn put_hpo(&self, key: &CellKey, result: &HpoResult) -> Result<()> {
        self.put_payload(ObjectKind::Hpo, &key.hex(), serde_json::to_string(result)?.as_bytes())
    }

    pub fn get_hpo(&self, key: &CellKey) -> Result<Option<HpoResult>> {
        let path = self.path(ObjectKind::Hpo, &key.hex());
        match Self::read_verified(&path)? {
            Some(payload) => serde_json::from_slice(&payload)
                .map(Some)
                .map_err(|e| Error::Integrity { path, detail: e.to_string() }),
            None => Ok(None),
        }
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }

    /// Writes a manifest. Object references belong in a top-level `"objects"` array.
    pub fn put_manifest<T: Serialize>(&self, name: &str, manifest: &T) -> Result<()> {
        Self::write_atomic(&self.manifest_path(name), serde_json::to_string_pretty(manifest)?.as_bytes())
    }

    pub fn get_manifest<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Option<T>> {
        match fs::read(self.manifest_path(name)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Every stored object as `"<kind>/<hex>"`.
    pub fn list_objects(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for kind in ObjectKind::ALL {
            for entry in fs::read_dir(self.root.join(kind.dir()))? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some(kind.extension()) {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        out.insert(object_ref(kind, stem));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Objects not referenced by any manifest. Nothing is deleted.
    pub fn gc_candidates(&self) -> Result<Vec<String>> {
        let mut referenced = BTreeSet::new();
        for entry in fs::read_dir(self.root.join("manifests"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let value: serde_json::Value = serde_json::from_slice(&fs::read(&path)?)?;
            if let Some(objects) = value.get("objects").and_then(|o| o.as_array()) {
                referenced.extend(objects.iter().filter_map(|o| o.as_str().map(str::to_owned)));
            }
        }
        Ok(self.list_objects()?.into_iter().filter(|o| !referenced.contains(o)).collect())
    }
}
