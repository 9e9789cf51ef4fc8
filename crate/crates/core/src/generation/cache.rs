//! Content-addressed image cache.
//!
//! Layout under the cache root:
//!
//! ```text
//! images/<sha256>.png   image bytes, named by their hash
//! index.jsonl           one GenerationRecord per line
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::warn;

use super::{GenerationError, GenerationRecord};
use crate::util::{file_sha256, sha256_hex, write_atomic};

pub struct ImageCache {
    root: PathBuf,
    index: Mutex<HashMap<String, GenerationRecord>>,
    index_file: Mutex<File>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ImageCache {
    pub fn open(root: &Path) -> Result<Self, GenerationError> {
        fs::create_dir_all(root.join("images"))?;
        let index_path = root.join("index.jsonl");
        let mut index = HashMap::new();
        if index_path.exists() {
            for (i, line) in BufReader::new(File::open(&index_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<GenerationRecord>(&line) {
                    Ok(r) => {
                        index.insert(r.cache_key.clone(), r);
                    }
                    Err(e) => warn!("skipping malformed cache index line {}: {e}", i + 1),
                }
            }
        }
        let index_file = OpenOptions::new().create(true).append(true).open(&index_path)?;
        Ok(Self {
            root: root.to_path_buf(),
            index: Mutex::new(index),
            index_file: Mutex::new(index_file),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, record: &GenerationRecord) -> PathBuf {
        self.root.join(&record.image_ref)
    }

    pub fn read_image(&self, record: &GenerationRecord) -> Result<Vec<u8>, GenerationError> {
        let bytes = fs::read(self.image_path(record))?;
        if sha256_hex(&bytes) != record.image_hash {
            return Err(GenerationError::CorruptCache(record.image_ref.clone()));
        }
        Ok(bytes)
    }

    /// Record for `key` if present and its image still matches its hash.
    pub fn lookup(&self, key: &str) -> Option<GenerationRecord> {
        let record = self.index.lock().unwrap().get(key).cloned()?;
        match self.read_image(&record) {
            Ok(_) => Some(record),
            Err(e) => {
                warn!("cache entry {key} unusable: {e}");
                None
            }
        }
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    /// Returns the cached record for `key`, or runs `produce` once (even
    /// under concurrent callers with the same key) and stores its output.
    pub fn get_or_insert_with<F>(
        &self,
        key: &str,
        produce: F,
    ) -> Result<(GenerationRecord, bool), GenerationError>
    where
        F: FnOnce() -> Result<(Vec<u8>, GenerationRecord), GenerationError>,
    {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        if let Some(hit) = self.lookup(key) {
            return Ok((hit, true));
        }
        let (bytes, mut record) = produce()?;
        record.image_hash = sha256_hex(&bytes);
        record.image_ref = format!("images/{}.png", record.image_hash);
        record.cache_key = key.to_string();
        let path = self.image_path(&record);
        if file_sha256(&path).ok().as_deref() != Some(record.image_hash.as_str()) {
            write_atomic(&path, &bytes)?;
        }
        {
            let mut file = self.index_file.lock().unwrap();
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.index.lock().unwrap().insert(key.to_string(), record.clone());
        Ok((record, false))
    }
}
