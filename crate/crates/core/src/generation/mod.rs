//! Image producers behind one interface, plus the generation cache.
//!
//! A [`Backend`] turns a prompt and a seed into PNG bytes. The
//! [`Generator`] wraps a backend with retries and a content-addressed
//! [`ImageCache`], so repeating a request never calls the backend again.

mod cache;
pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::ImageCache;

use crate::diagnostics::{AttentionTrace, EmbeddingSet};
use crate::registry::Concept;
use crate::suite::Prompt;
use crate::util::{canonical_json, sha256_hex};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend rejected prompt: {0}")]
    BackendRejectedPrompt(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("capability unsupported: {0}")]
    CapabilityUnsupported(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("corrupt cache entry {0}")]
    CorruptCache(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl GenerationError {
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            GenerationError::BackendUnavailable(_) | GenerationError::Timeout(_)
        )
    }
}

/// What a backend is asked to render.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a Prompt,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub params: &'a BTreeMap<String, String>,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    /// Whether identical requests yield identical bytes.
    fn deterministic(&self) -> bool {
        true
    }

    fn render(&self, request: &GenerationRequest<'_>) -> Result<Vec<u8>, GenerationError>;

    /// One head-averaged cross-attention trace per layer.
    fn capture_attention(
        &self,
        _prompt: &Prompt,
        _seed: u64,
    ) -> Result<Vec<AttentionTrace>, GenerationError> {
        Err(GenerationError::CapabilityUnsupported(format!(
            "{} does not expose attention maps",
            self.id()
        )))
    }

    /// Concept embeddings, one set per group present in `concepts`.
    fn concept_embeddings(&self, _concepts: &[Concept]) -> Result<Vec<EmbeddingSet>, GenerationError> {
        Err(GenerationError::CapabilityUnsupported(format!(
            "{} does not expose concept embeddings",
            self.id()
        )))
    }

    /// Number of render calls served so far.
    fn invocations(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub image_index: usize,
    pub image_ref: String,
    pub image_hash: String,
    pub backend_id: String,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub cache_key: String,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 100,
        }
    }
}

/// Parameters that pin sampling down. Backends that cannot honour them
/// report `deterministic() == false`.
pub fn deterministic_params() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sampler".to_string(), "deterministic".to_string()),
        ("temperature".to_string(), "0".to_string()),
    ])
}

pub fn cache_key(
    backend_id: &str,
    prompt_text: &str,
    seed: u64,
    width: u32,
    height: u32,
    params: &BTreeMap<String, String>,
) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        backend: &'a str,
        prompt: &'a str,
        seed: u64,
        width: u32,
        height: u32,
        params: &'a BTreeMap<String, String>,
    }
    sha256_hex(
        canonical_json(&Key {
            backend: backend_id,
            prompt: prompt_text,
            seed,
            width,
            height,
            params,
        })
        .as_bytes(),
    )
}

/// Seed of the `index`-th image of a request made with `seed`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub struct Generator {
    backend: Arc<dyn Backend>,
    cache: ImageCache,
    pub retry: RetryPolicy,
    pub width: u32,
    pub height: u32,
    pub params: BTreeMap<String, String>,
}

impl Generator {
    pub fn new(backend: Arc<dyn Backend>, cache_dir: &Path) -> Result<Self, GenerationError> {
        Ok(Self {
            backend,
            cache: ImageCache::open(cache_dir)?,
            retry: RetryPolicy::default(),
            width: 256,
            height: 256,
            params: deterministic_params(),
        })
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn cache(&self) -> &ImageCache {
        &self.cache
    }

    fn render_with_retry(&self, request: &GenerationRequest<'_>) -> Result<Vec<u8>, GenerationError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.backend.render(request) {
                Ok(bytes) => return Ok(bytes),
                Err(e) if e.is_retriable() && attempt < attempts => {
                    let wait = self.retry.base_backoff_ms << (attempt - 1);
                    warn!(
                        "{} attempt {attempt}/{attempts} failed: {e}; retrying in {wait} ms",
                        request.prompt.id
                    );
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Generates (or fetches from cache) one image.
    pub fn generate_one(
        &self,
        prompt: &Prompt,
        index: usize,
        seed: u64,
    ) -> Result<GenerationRecord, GenerationError> {
        let seed = image_seed(seed, index);
        let backend_id = self.backend.id();
        let key = cache_key(
            &backend_id,
            &prompt.text,
            seed,
            self.width,
            self.height,
            &self.params,
        );
        let (mut record, hit) = self.cache.get_or_insert_with(&key, || {
            let request = GenerationRequest {
                prompt,
                seed,
                width: self.width,
                height: self.height,
                params: &self.params,
            };
            let bytes = self.render_with_retry(&request)?;
            let created_at = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let record = GenerationRecord {
                prompt_id: prompt.id.clone(),
                image_index: index,
                image_ref: String::new(),
                image_hash: String::new(),
                backend_id: backend_id.clone(),
                seed,
                params: self.params.clone(),
                cache_key: String::new(),
                created_at,
            };
            Ok((bytes, record))
        })?;
        if hit {
            debug!("cache hit {} #{index}", prompt.id);
        }
        // A cached image may have been produced for another prompt with the
        // same text.
        record.prompt_id = prompt.id.clone();
        record.image_index = index;
        Ok(record)
    }

    /// `n` images for one prompt, image `j` rendered with seed `seed + j`.
    pub fn generate(
        &self,
        prompt: &Prompt,
        n: usize,
        seed: u64,
    ) -> Result<Vec<GenerationRecord>, GenerationError> {
        (0..n).map(|j| self.generate_one(prompt, j, seed)).collect()
    }

    /// Generates `n` images for every prompt with at most `workers` requests
    /// in flight. Results keep prompt order.
    pub fn generate_all(
        &self,
        prompts: &[&Prompt],
        n: usize,
        seed: u64,
        workers: usize,
    ) -> Vec<Result<Vec<GenerationRecord>, GenerationError>> {
        let jobs: Vec<(usize, usize)> = (0..prompts.len())
            .flat_map(|p| (0..n).map(move |j| (p, j)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        let results: Vec<Result<GenerationRecord, GenerationError>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(p, j)| self.generate_one(prompts[p], j, seed))
                .collect()
        });
        let mut grouped: Vec<Result<Vec<GenerationRecord>, GenerationError>> =
            (0..prompts.len()).map(|_| Ok(Vec::with_capacity(n))).collect();
        for ((p, _), r) in jobs.into_iter().zip(results) {
            match (&mut grouped[p], r) {
                (Ok(records), Ok(record)) => records.push(record),
                (slot @ Ok(_), Err(e)) => *slot = Err(e),
                (Err(_), _) => {}
            }
        }
        grouped
    }

    pub fn read_image(&self, record: &GenerationRecord) -> Result<Vec<u8>, GenerationError> {
        self.cache.read_image(record)
    }
}

/// Standalone form of [`Generator::generate`].
pub fn generate(
    generator: &Generator,
    prompt: &Prompt,
    n: usize,
    seed: u64,
) -> Result<Vec<GenerationRecord>, GenerationError> {
    generator.generate(prompt, n, seed)
}

/// Attention traces for one prompt from a capable backend.
pub fn capture_attention(
    backend: &dyn Backend,
    prompt: &Prompt,
    seed: u64,
) -> Result<Vec<AttentionTrace>, GenerationError> {
    backend.capture_attention(prompt, seed)
}
