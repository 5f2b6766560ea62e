//! Embedding-service client with a content-addressed on-disk cache.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::EmbeddingMatrix;
use crate::corpus::ItemCatalog;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "TEXTGCN_EMBED_API_KEY";
pub const URL_ENV: &str = "TEXTGCN_EMBED_URL";
pub const DEFAULT_BATCH_SIZE: usize = 256;

/// One embeddings call: a list of texts in, one vector per text out, in
/// input order.
pub trait EmbeddingTransport: Sync {
    fn embed(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
    index: usize,
}

/// Reorders response vectors by their `index` field.
fn decode_response(body: &str, expected: usize) -> Result<Vec<Vec<f32>>> {
    let resp: EmbedResponse = serde_json::from_str(body).map_err(|e| Error::BadResponse(e.to_string()))?;
    if resp.data.len() != expected {
        return Err(Error::BadResponse(format!(
            "expected {expected} embeddings, got {}",
            resp.data.len()
        )));
    }
    let mut out: Vec<Option<Vec<f32>>> = vec![None; expected];
    for d in resp.data {
        let slot = out
            .get_mut(d.index)
            .ok_or_else(|| Error::BadResponse(format!("index {} out of range", d.index)))?;
        if slot.replace(d.embedding).is_some() {
            return Err(Error::BadResponse(format!("index {} repeated", d.index)));
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// HTTP transport: POSTs `{"model", "input"}` JSON with a bearer token.
pub struct HttpTransport {
    url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        Self {
            url: url.into(),
            api_key: api_key.into(),
            agent,
        }
    }

    /// Reads the key from `TEXTGCN_EMBED_API_KEY`.
    pub fn from_env(url: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).ok_or(Error::MissingApiKey)?;
        Ok(Self::new(url, key))
    }
}

impl EmbeddingTransport for HttpTransport {
    fn embed(&self, model: &str, inputs: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = serde_json::to_string(&EmbedRequest { model, input: inputs })?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| Error::Network {
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Error::Network {
            attempts: 1,
            message: e.to_string(),
        })?;
        if !(200..300).contains(&status) {
            return Err(Error::Http { status, body: text });
        }
        decode_response(&text, inputs.len())
    }
}

/// Directory of per-key files named by the hex SHA-256 of (model, title),
/// each holding a one-row `TGE1` payload.
#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

pub fn cache_key(model: &str, title: &str) -> String {
    let mut h = Sha256::new();
    h.update((model.len() as u64).to_le_bytes());
    h.update(model.as_bytes());
    h.update(title.as_bytes());
    hex::encode(h.finalize())
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.tge"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<f32>> {
        let bytes = fs::read(self.path(key)).ok()?;
        match EmbeddingMatrix::from_bytes(&bytes) {
            Ok(m) if m.n_rows() == 1 => Some(m.into_vec()),
            _ => {
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    /// Writes via a temporary file and rename so readers never see partial entries.
    pub fn put(&self, key: &str, vector: &[f32]) -> Result<()> {
        let m = EmbeddingMatrix::from_vec(1, vector.len(), vector.to_vec())?;
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        fs::write(tmp.path(), m.to_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
        let target = self.path(key);
        tmp.persist(&target).map_err(|e| Error::io(&target, e.error))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FetchConfig {
    pub model: String,
    pub batch_size: usize,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    /// Batches in flight at once.
    pub concurrency: usize,
}

impl FetchConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            batch_size: DEFAULT_BATCH_SIZE,
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            concurrency: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FetchStats {
    pub cached: usize,
    pub fetched: usize,
    pub requests: usize,
}

/// Returns one vector per catalog item, in catalog order.
///
/// Titles already in the cache are not sent. The remaining distinct titles
/// are sent in batches of `batch_size`; each batch is retried up to
/// `max_attempts` times with exponential backoff. Fresh vectors are written
/// to the cache.
pub fn fetch_embeddings(
    catalog: &ItemCatalog,
    transport: &dyn EmbeddingTransport,
    cache: Option<&EmbeddingCache>,
    cfg: &FetchConfig,
) -> Result<(EmbeddingMatrix, FetchStats)> {
    if cfg.batch_size == 0 || cfg.max_attempts == 0 {
        return Err(Error::InvalidConfig("batch_size and max_attempts must be positive".into()));
    }
    let mut stats = FetchStats::default();
    let mut vectors: HashMap<String, Vec<f32>> = HashMap::new();
    let mut pending: Vec<String> = Vec::new();
    let mut queued: HashSet<&str> = HashSet::new();
    for title in catalog.titles() {
        if vectors.contains_key(title) || !queued.insert(title) {
            continue;
        }
        match cache.and_then(|c| c.get(&cache_key(&cfg.model, title))) {
            Some(v) => {
                stats.cached += 1;
                vectors.insert(title.clone(), v);
            }
            None => pending.push(title.clone()),
        }
    }

    let batches: Vec<&[String]> = pending.chunks(cfg.batch_size).collect();
    type BatchResult = (usize, Result<Vec<Vec<f32>>>);
    let results: Mutex<Vec<BatchResult>> = Mutex::new(Vec::new());
    let cache_lock = Mutex::new(());
    for wave in batches.chunks(cfg.concurrency.max(1)).enumerate() {
        let (wave_idx, wave) = wave;
        thread::scope(|s| {
            for (k, batch) in wave.iter().enumerate() {
                let idx = wave_idx * cfg.concurrency.max(1) + k;
                let results = &results;
                let cache_lock = &cache_lock;
                s.spawn(move || {
                    let r = with_retry(cfg, || transport.embed(&cfg.model, batch));
                    if let (Ok(vs), Some(c)) = (&r, cache) {
                        let _guard = cache_lock.lock().unwrap();
                        for (t, v) in batch.iter().zip(vs) {
                            if let Err(e) = c.put(&cache_key(&cfg.model, t), v) {
                                log::warn!("cache write failed: {e}");
                            }
                        }
                    }
                    results.lock().unwrap().push((idx, r));
                });
            }
        });
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    stats.requests = batches.len();
    for (idx, r) in results {
        let vs = r?;
        for (t, v) in batches[idx].iter().zip(vs) {
            stats.fetched += 1;
            vectors.insert(t.clone(), v);
        }
    }

    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    for title in catalog.titles() {
        let v = &vectors[title];
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::InconsistentEmbeddingDim {
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
        data.extend_from_slice(v);
    }
    let m = EmbeddingMatrix::from_vec(catalog.len(), dim.unwrap_or(0), data)?;
    Ok((m, stats))
}

fn with_retry<T>(cfg: &FetchConfig, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let mut last = None;
    for attempt in 0..cfg.max_attempts {
        if attempt > 0 {
            thread::sleep(cfg.backoff_base * 2u32.pow(attempt - 1));
        }
        match call() {
            Ok(v) => return Ok(v),
            // Client errors other than rate limiting will not improve on retry.
            Err(Error::Http { status, body }) if (400..500).contains(&status) && status != 429 => {
                return Err(Error::Http { status, body })
            }
            Err(e) => {
                log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    match last {
        Some(Error::Http { status, body }) => Err(Error::Http { status, body }),
        Some(e) => Err(Error::Network {
            attempts: cfg.max_attempts,
            message: e.to_string(),
        }),
        None => unreachable!("max_attempts > 0"),
    }
}
