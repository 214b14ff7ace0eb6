use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

use super::{cache_key, tile_url, TileError, TileImage, TileRequest};

pub const API_KEY_ENV: &str = "STATICMAP_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportError(pub String);

/// Blocking HTTP GET. Implementations must be shareable across fetch workers.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let mut resp = self.agent.get(url).call().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Attempts and backoff for transient failures (429, 5xx, transport errors).
#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(500) }
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub struct TileFetcher {
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    cache_dir: PathBuf,
    concurrency: usize,
}

impl fmt::Debug for TileFetcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TileFetcher")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("cache_dir", &self.cache_dir)
            .field("retry", &self.retry)
            .field("concurrency", &self.concurrency)
            .finish()
    }
}

impl TileFetcher {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        cache_dir: impl Into<PathBuf>,
        transport: Box<dyn Transport>,
    ) -> Result<Self, TileError> {
        let api_key = api_key.into();
        if api_key.is_empty() {
            return Err(TileError::EmptyApiKey);
        }
        Ok(Self {
            base_url: base_url.into(),
            api_key,
            transport,
            retry: RetryPolicy::default(),
            cache_dir: cache_dir.into(),
            concurrency: 4,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    pub fn cache_path(&self, req: &TileRequest) -> PathBuf {
        self.cache_dir.join(cache_key(req.zoom, req.lat, req.lon))
    }

    /// Cached GET: a cache hit is decoded from disk without touching the network.
    pub fn fetch(&self, req: &TileRequest) -> Result<TileImage, TileError> {
        let path = self.cache_path(req);
        if let Ok(bytes) = std::fs::read(&path) {
            return TileImage::decode_png(&bytes);
        }
        let url = tile_url(&self.base_url, &self.api_key, req)?;
        let bytes = self.get_with_retry(&url)?;
        let image = TileImage::decode_png(&bytes)?;
        // re-encode so the cache always holds 8-bit RGB without alpha
        write_atomic(&self.cache_dir, &path, &image.encode_png())?;
        Ok(image)
    }

    /// Fetch many tiles with at most `concurrency` requests in flight.
    /// Results are returned in request order.
    pub fn fetch_all(&self, reqs: &[TileRequest]) -> Vec<Result<TileImage, TileError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.concurrency)
            .build()
            .expect("thread pool");
        pool.install(|| reqs.par_iter().map(|r| self.fetch(r)).collect())
    }

    /// Transport messages may echo the request URL; strip the key from them.
    fn redact(&self, msg: &str) -> String {
        let encoded: String = url::form_urlencoded::byte_serialize(self.api_key.as_bytes()).collect();
        msg.replace(&encoded, "<redacted>").replace(&self.api_key, "<redacted>")
    }

    fn get_with_retry(&self, url: &str) -> Result<Vec<u8>, TileError> {
        let mut delay = self.retry.initial_backoff;
        let mut last = TileError::Transport("no attempts made".into());
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.transport.get(url) {
                Ok(resp) if resp.status == 200 => return Ok(resp.body),
                Ok(resp) if is_transient(resp.status) => last = TileError::HttpError(resp.status),
                Ok(resp) => return Err(TileError::HttpError(resp.status)),
                Err(TransportError(msg)) => last = TileError::Transport(self.redact(&msg)),
            }
            log::warn!("tile request attempt {} failed: {last}", attempt + 1);
        }
        Err(last)
    }
}

/// Write-then-rename so concurrent writers of one key leave a single valid file.
fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<(), TileError> {
    let wrap = |source| TileError::CacheWriteError { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}
