//! Random beacon from the latest Bitcoin block.
//!
//! The block header text and the decoded header hash are OR-ed byte by byte
//! and the result is run through a keyed hash, so only key holders learn the
//! beacon value. Block proof-of-work is not re-validated.
//!
//! The combine is a true bitwise OR. A widely copied script instead writes
//! `chr(ord(a) or ord(b))`, which is a logical `or` and always yields the
//! first byte; beacons from that script are not reproduced here.

use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime};

use log::{debug, info, warn};
use serde::Deserialize;
use serde_json::value::RawValue;
use thiserror::Error;

use crate::hash::{Digest, KeyedHash};

/// The block API queried when no URL is configured.
pub const DEFAULT_API_URL: &str = "https://chain.api.btc.com/v3/block/latest";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeaconError {
    #[error("{source_id}: network failure: {message}")]
    Network { source_id: String, message: String },
    #[error("{source_id}: malformed response: {message}")]
    Malformed { source_id: String, message: String },
    #[error("{source_id}: response lacks field `{field}`")]
    MissingField { source_id: String, field: &'static str },
    #[error("{source_id}: {message}")]
    Io { source_id: String, message: String },
    #[error("block header and header hash must be non-empty")]
    EmptyBlock,
}

/// Raw block data: header bytes `B_H` and header hash bytes `B_HH`.
#[derive(Clone, PartialEq, Eq)]
pub struct BlockInfo {
    header_bytes: Vec<u8>,
    header_hash_bytes: Vec<u8>,
    height: u64,
    fetched_at: SystemTime,
}

impl fmt::Debug for BlockInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockInfo")
            .field("height", &self.height)
            .field("header_len", &self.header_bytes.len())
            .field("header_hash", &hex::encode(&self.header_hash_bytes))
            .finish()
    }
}

impl BlockInfo {
    pub fn new(header_bytes: Vec<u8>, header_hash_bytes: Vec<u8>, height: u64) -> Result<Self, BeaconError> {
        if header_bytes.is_empty() || header_hash_bytes.is_empty() {
            return Err(BeaconError::EmptyBlock);
        }
        Ok(BlockInfo { header_bytes, header_hash_bytes, height, fetched_at: SystemTime::now() })
    }

    pub fn header_bytes(&self) -> &[u8] {
        &self.header_bytes
    }

    pub fn header_hash_bytes(&self) -> &[u8] {
        &self.header_hash_bytes
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn fetched_at(&self) -> SystemTime {
        self.fetched_at
    }

    /// Same block content, ignoring when it was fetched.
    pub fn same_block(&self, other: &BlockInfo) -> bool {
        self.height == other.height
            && self.header_hash_bytes == other.header_hash_bytes
            && self.header_bytes == other.header_bytes
    }
}

/// Keyed hash of a block: the shared private random value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaconValue {
    pub digest: Digest,
    pub source_height: u64,
    pub derived_at: SystemTime,
}

impl BeaconValue {
    /// Lowercase fixed-width hex; this text is what knock derivations hash.
    pub fn hex(&self) -> String {
        self.digest.to_hex()
    }
}

/// Bytewise OR of header and header hash, truncated to the shorter input.
pub fn combine_block(block: &BlockInfo) -> Vec<u8> {
    block
        .header_bytes
        .iter()
        .zip(&block.header_hash_bytes)
        .map(|(a, b)| a | b)
        .collect()
}

pub fn derive_beacon(block: &BlockInfo, hash: &dyn KeyedHash) -> BeaconValue {
    BeaconValue {
        digest: hash.hash(&combine_block(block)),
        source_height: block.height,
        derived_at: SystemTime::now(),
    }
}

#[derive(Deserialize)]
struct ApiEnvelope<'a> {
    #[serde(borrow)]
    data: Option<&'a RawValue>,
}

#[derive(Deserialize)]
struct ApiBlock {
    hash: Option<String>,
    height: Option<u64>,
}

/// Parses a block API response. `header_bytes` is the verbatim JSON text of
/// the `data` object; `header_hash_bytes` is its hex-decoded `hash` field.
pub fn parse_api_response(body: &str, source_id: &str) -> Result<BlockInfo, BeaconError> {
    let malformed = |e: serde_json::Error| BeaconError::Malformed {
        source_id: source_id.to_string(),
        message: e.to_string(),
    };
    let missing = |field| BeaconError::MissingField { source_id: source_id.to_string(), field };
    let envelope: ApiEnvelope = serde_json::from_str(body).map_err(malformed)?;
    let raw = envelope.data.ok_or_else(|| missing("data"))?;
    if raw.get() == "null" {
        return Err(missing("data"));
    }
    let block: ApiBlock = serde_json::from_str(raw.get()).map_err(malformed)?;
    let hash_hex = block.hash.ok_or_else(|| missing("hash"))?;
    let height = block.height.ok_or_else(|| missing("height"))?;
    let hash_bytes = hex::decode(&hash_hex).map_err(|e| BeaconError::Malformed {
        source_id: source_id.to_string(),
        message: format!("hash is not hex: {e}"),
    })?;
    BlockInfo::new(raw.get().as_bytes().to_vec(), hash_bytes, height).map_err(|_| BeaconError::Malformed {
        source_id: source_id.to_string(),
        message: "empty block data".into(),
    })
}

/// Where blocks come from. Consecutive fetches should return non-decreasing
/// heights; [`Poller`] ignores any that do not.
pub trait BeaconSource: Send {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError>;
    fn describe(&self) -> String;
}

impl<S: BeaconSource + ?Sized> BeaconSource for Box<S> {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        (**self).fetch_latest()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub fn fetch_latest(source: &mut dyn BeaconSource) -> Result<BlockInfo, BeaconError> {
    source.fetch_latest()
}

/// HTTPS GET against a block API.
pub struct HttpSource {
    url: String,
    agent: ureq::Agent,
}

impl HttpSource {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .new_agent();
        HttpSource { url: url.into(), agent }
    }
}

impl BeaconSource for HttpSource {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        let id = self.describe();
        let network = |e: ureq::Error| BeaconError::Network { source_id: id.clone(), message: e.to_string() };
        let mut response = self.agent.get(&self.url).call().map_err(network)?;
        let body = response.body_mut().read_to_string().map_err(network)?;
        parse_api_response(&body, &id)
    }

    fn describe(&self) -> String {
        format!("http source {}", self.url)
    }
}

/// Replays a saved API response body from disk, re-read on every fetch.
pub struct FileSource {
    path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileSource { path: path.into() }
    }
}

impl BeaconSource for FileSource {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        let id = self.describe();
        let body = std::fs::read_to_string(&self.path)
            .map_err(|e| BeaconError::Io { source_id: id.clone(), message: e.to_string() })?;
        parse_api_response(&body, &id)
    }

    fn describe(&self) -> String {
        format!("file source {}", self.path.display())
    }
}

/// Always returns the same block.
#[derive(Clone, Debug)]
pub struct FixedSource(pub BlockInfo);

impl BeaconSource for FixedSource {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        let mut b = self.0.clone();
        b.fetched_at = SystemTime::now();
        Ok(b)
    }

    fn describe(&self) -> String {
        format!("fixed source at height {}", self.0.height)
    }
}

/// Plays back a programmed sequence of results. Once exhausted it keeps
/// returning the last item.
#[derive(Clone, Debug)]
pub struct ScriptedSource {
    script: VecDeque<Result<BlockInfo, BeaconError>>,
}

impl ScriptedSource {
    pub fn new(script: impl IntoIterator<Item = Result<BlockInfo, BeaconError>>) -> Self {
        ScriptedSource { script: script.into_iter().collect() }
    }

    pub fn blocks(blocks: impl IntoIterator<Item = BlockInfo>) -> Self {
        Self::new(blocks.into_iter().map(Ok))
    }

    /// Shared handle whose script the caller can extend while a poller runs.
    pub fn shared(self) -> SharedScript {
        SharedScript(Arc::new(Mutex::new(self)))
    }
}

impl BeaconSource for ScriptedSource {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        let item = if self.script.len() > 1 { self.script.pop_front() } else { self.script.front().cloned() };
        item.unwrap_or_else(|| Err(BeaconError::Io { source_id: self.describe(), message: "empty script".into() }))
    }

    fn describe(&self) -> String {
        "scripted source".into()
    }
}

/// A [`ScriptedSource`] that tests can feed while a daemon polls it.
#[derive(Clone, Debug)]
pub struct SharedScript(Arc<Mutex<ScriptedSource>>);

impl SharedScript {
    pub fn push(&self, item: Result<BlockInfo, BeaconError>) {
        self.0.lock().unwrap().script.push_back(item);
    }
}

impl BeaconSource for SharedScript {
    fn fetch_latest(&mut self) -> Result<BlockInfo, BeaconError> {
        self.0.lock().unwrap().fetch_latest()
    }

    fn describe(&self) -> String {
        "shared scripted source".into()
    }
}

/// Wait after a new block (`long_wait`) and between unchanged polls or
/// errors (`short_wait`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PollSchedule {
    pub long_wait: Duration,
    pub short_wait: Duration,
}

impl Default for PollSchedule {
    fn default() -> Self {
        PollSchedule { long_wait: Duration::from_secs(240), short_wait: Duration::from_secs(30) }
    }
}

/// Outcome of one poll.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PollStep {
    Emitted(BeaconValue),
    Unchanged,
    /// Height went backwards; the block was ignored.
    Stale { height: u64, last: u64 },
    FetchFailed(BeaconError),
}

/// Change detector behind [`poll_loop`]; one [`Poller::tick`] per fetch.
pub struct Poller<S> {
    source: S,
    hash: Arc<dyn KeyedHash>,
    last: Option<BlockInfo>,
}

impl<S: BeaconSource> Poller<S> {
    pub fn new(source: S, hash: Arc<dyn KeyedHash>) -> Self {
        Poller { source, hash, last: None }
    }

    /// Treats `block` as already emitted, so polling starts from it.
    pub fn with_last(mut self, block: BlockInfo) -> Self {
        self.last = Some(block);
        self
    }

    pub fn tick(&mut self) -> PollStep {
        let block = match self.source.fetch_latest() {
            Ok(b) => b,
            Err(e) => {
                warn!("beacon fetch failed, retrying: {e}");
                return PollStep::FetchFailed(e);
            }
        };
        if let Some(last) = &self.last {
            if block.same_block(last) {
                debug!("beacon unchanged at height {}", block.height);
                return PollStep::Unchanged;
            }
            if block.height < last.height {
                warn!("ignoring block at height {} below last emitted {}", block.height, last.height);
                return PollStep::Stale { height: block.height, last: last.height };
            }
        }
        let value = derive_beacon(&block, self.hash.as_ref());
        info!("new beacon at height {}", block.height);
        self.last = Some(block);
        PollStep::Emitted(value)
    }

    pub fn wait_after(step: &PollStep, schedule: &PollSchedule) -> Duration {
        match step {
            PollStep::Emitted(_) => schedule.long_wait,
            _ => schedule.short_wait,
        }
    }
}

/// Cooperative stop flag with an interruptible sleep.
#[derive(Clone, Default)]
pub struct StopSignal(Arc<(Mutex<bool>, Condvar)>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        *self.0 .0.lock().unwrap() = true;
        self.0 .1.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.0 .0.lock().unwrap()
    }

    /// Sleeps up to `timeout`; returns true if stopped.
    pub fn wait(&self, timeout: Duration) -> bool {
        let guard = self.0 .0.lock().unwrap();
        let (guard, _) = self.0 .1.wait_timeout_while(guard, timeout, |stopped| !*stopped).unwrap();
        *guard
    }
}

/// Polls until `stop` fires, handing each new beacon to `sink` in order.
/// Fetch errors are logged and retried; they never end the loop. Returns
/// early only if the sink reports its consumer is gone.
pub fn poll_loop<S, F>(poller: &mut Poller<S>, schedule: PollSchedule, stop: &StopSignal, mut sink: F)
where
    S: BeaconSource,
    F: FnMut(BeaconValue) -> bool,
{
    while !stop.is_stopped() {
        let step = poller.tick();
        let wait = Poller::<S>::wait_after(&step, &schedule);
        if let PollStep::Emitted(value) = step {
            if !sink(value) {
                return;
            }
        }
        if stop.wait(wait) {
            return;
        }
    }
}
