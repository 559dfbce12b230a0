//! On-disk cache of cell-problem results keyed by a job fingerprint.
//!
//! Layout: `<root>/<fingerprint-hex>/{field.bin, result.json}`. `field.bin`
//! holds the minimizer as little-endian f64 values; `result.json` holds the
//! remaining result fields plus a description of the field layout.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gammacell_core::cell::{CellJob, CellResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Stable hex fingerprint of a job and its warm starts.
pub fn fingerprint(job: &CellJob, warm: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(job).expect("job serializes"));
    for w in warm {
        h.update((w.len() as u64).to_le_bytes());
        for v in w {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub n: usize,
    pub k: usize,
    pub res: usize,
    pub layout: String,
    pub len: usize,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    field: FieldMeta,
    result: CellResult,
}

pub struct Cache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache {
            root: root.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key.to_string()).or_default().clone()
    }

    /// Returns the cached result for `key`, or computes, stores and returns
    /// it. Concurrent callers with the same key compute once. Cache IO errors
    /// are reported through `on_io` and do not prevent the computation.
    pub fn get_or_compute<E>(
        &self,
        key: &str,
        job: &CellJob,
        compute: impl FnOnce() -> std::result::Result<CellResult, E>,
        mut on_io: impl FnMut(&Error),
    ) -> std::result::Result<(CellResult, bool), E> {
        let lock = self.lock(key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        match self.load(key) {
            Ok(Some(r)) => return Ok((r, true)),
            Ok(None) => {}
            Err(e) => on_io(&e),
        }
        let r = compute()?;
        if let Err(e) = self.store(key, job, &r) {
            on_io(&e);
        }
        Ok((r, false))
    }

    pub fn load(&self, key: &str) -> Result<Option<CellResult>> {
        let dir = self.root.join(key);
        let meta_path = dir.join("result.json");
        if !meta_path.exists() {
            return Ok(None);
        }
        let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let stored: Stored =
            serde_json::from_slice(&text).map_err(|e| Error::Report(format!("{}: {e}", meta_path.display())))?;
        let field_path = dir.join("field.bin");
        let bytes = fs::read(&field_path).map_err(|e| Error::io(&field_path, e))?;
        if bytes.len() != 8 * stored.field.len || stored.field.layout != "node-major" {
            return Err(Error::Report(format!("{}: field size mismatch", field_path.display())));
        }
        let mut result = stored.result;
        result.field = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(result))
    }

    pub fn store(&self, key: &str, job: &CellJob, r: &CellResult) -> Result<()> {
        let dir = self.root.join(key);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut bytes = Vec::with_capacity(8 * r.field.len());
        for v in &r.field {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&dir.join("field.bin"), &bytes)?;
        let stored = Stored {
            field: FieldMeta {
                n: job.spec.n,
                k: job.k,
                res: job.res,
                layout: "node-major".into(),
                len: r.field.len(),
            },
            result: CellResult {
                field: Vec::new(),
                ..r.clone()
            },
        };
        let text = serde_json::to_vec_pretty(&stored).expect("result serializes");
        // Written last: its presence marks a complete entry.
        write_atomic(&dir.join("result.json"), &text)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
