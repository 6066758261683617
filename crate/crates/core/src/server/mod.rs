//! The knock daemon: beacon polling, table rebuilds, listener rebinding,
//! packet matching and command execution.
//!
//! Three threads cooperate by message passing: the beacon poller, the
//! engine (which alone owns the knock table and handles every packet the
//! listener delivers), and the executor. Commands run off the packet path
//! through a queue of depth [`EXEC_QUEUE_DEPTH`].

mod exec;
mod processor;

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU16, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender, TrySendError};
use log::{error, info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::beacon::{
    poll_loop, BeaconSource, BeaconValue, BlockInfo, FileSource, FixedSource, HttpSource, PollSchedule, PollStep,
    Poller, StopSignal,
};
use crate::crucible::{Profile, Scheme};
use crate::hash::thread_hash_calls;
use crate::transport::{listen, FilterSpec, KnockPacket, ListenerHandle, ListenerStats, Transport};

pub use exec::{execute_command, ExecutionRecord};
pub use processor::{AuthEvent, KnockProcessor, Outcome};

/// Authorized commands waiting for the executor before new ones are refused.
pub const EXEC_QUEUE_DEPTH: usize = 16;

pub(crate) fn unix_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bind error: {0}")]
    Bind(String),
    #[error("beacon bootstrap failed: {0}")]
    Bootstrap(String),
}

impl ServerError {
    /// Process exit code: 2 config, 3 bind, 4 beacon bootstrap.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServerError::Config(_) => 2,
            ServerError::Bind(_) => 3,
            ServerError::Bootstrap(_) => 4,
        }
    }
}

#[allow(clippy::large_enum_variant)]
pub enum ProfileSource {
    Path(PathBuf),
    Inline(Profile),
}

pub enum BeaconConfig {
    Url { url: String, timeout: Duration },
    File(PathBuf),
    Fixed(BlockInfo),
    /// Any other source, such as a scripted one in tests.
    Source(Box<dyn BeaconSource>),
}

impl BeaconConfig {
    fn into_source(self) -> Box<dyn BeaconSource> {
        match self {
            BeaconConfig::Url { url, timeout } => Box::new(HttpSource::new(url, timeout)),
            BeaconConfig::File(path) => Box::new(FileSource::new(path)),
            BeaconConfig::Fixed(block) => Box::new(FixedSource(block)),
            BeaconConfig::Source(s) => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Execute,
    /// Log authorizations without spawning anything.
    DryRun,
}

pub enum LogSink {
    Stdout,
    Stderr,
    File(PathBuf),
    Discard,
}

pub struct ServerConfig {
    pub profile: ProfileSource,
    /// If set, the profile must be of this scheme.
    pub scheme: Option<Scheme>,
    pub beacon: BeaconConfig,
    pub schedule: PollSchedule,
    pub mode: ExecMode,
    pub log: LogSink,
    /// Structured copy of every logged event.
    pub events: Option<Sender<ServerEvent>>,
    pub transport: Arc<dyn Transport>,
    /// How long to keep trying for the first beacon.
    pub startup_timeout: Duration,
}

/// One log line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ServerEvent {
    Auth(AuthEvent),
    Exec(ExecutionRecord),
    Beacon { timestamp: u64, height: u64, port: u16 },
    Listening { timestamp: u64, port: u16 },
    Error { timestamp: u64, message: String },
}

#[derive(Clone)]
struct EventLog {
    out: Option<Arc<Mutex<Box<dyn Write + Send>>>>,
    events: Option<Sender<ServerEvent>>,
}

impl EventLog {
    fn open(sink: LogSink, events: Option<Sender<ServerEvent>>) -> Result<Self, ServerError> {
        let out: Option<Box<dyn Write + Send>> = match sink {
            LogSink::Stdout => Some(Box::new(io::stdout())),
            LogSink::Stderr => Some(Box::new(io::stderr())),
            LogSink::File(path) => Some(Box::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| ServerError::Config(format!("log file {}: {e}", path.display())))?,
            )),
            LogSink::Discard => None,
        };
        Ok(EventLog { out: out.map(|w| Arc::new(Mutex::new(w))), events })
    }

    fn emit(&self, event: ServerEvent) {
        if let Some(out) = &self.out {
            let line = serde_json::to_string(&event).expect("events serialize");
            let mut w = out.lock().unwrap();
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                warn!("could not write log line");
            }
        }
        if let Some(tx) = &self.events {
            let _ = tx.send(event);
        }
    }

    fn error(&self, message: String) {
        error!("{message}");
        self.emit(ServerEvent::Error { timestamp: unix_millis(), message });
    }
}

/// Counters across the daemon's lifetime.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub packets: AtomicU64,
    pub authorized: AtomicU64,
    pub replayed: AtomicU64,
    pub no_match: AtomicU64,
    pub filtered: AtomicU64,
    pub beacons: AtomicU64,
    pub executed: AtomicU64,
    pub exec_refused: AtomicU64,
    /// Hash evaluations performed while handling packets.
    pub packet_path_hash_calls: AtomicU64,
}

impl ServerStats {
    fn count(&self, outcome: Outcome) {
        let c = match outcome {
            Outcome::Authorized => &self.authorized,
            Outcome::Replayed => &self.replayed,
            Outcome::NoMatch => &self.no_match,
            Outcome::Filtered => &self.filtered,
        };
        c.fetch_add(1, Ordering::SeqCst);
        self.packets.fetch_add(1, Ordering::SeqCst);
    }

    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::SeqCst)
    }
}

/// A running daemon.
pub struct ServerHandle {
    stop: StopSignal,
    threads: Vec<JoinHandle<()>>,
    port: Arc<AtomicU16>,
    stats: Arc<ServerStats>,
    listener_stats: Arc<ListenerStats>,
    scheme: Scheme,
}

impl ServerHandle {
    /// Port the listener is bound to right now.
    pub fn port(&self) -> u16 {
        self.port.load(Ordering::SeqCst)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        self.stats.clone()
    }

    pub fn listener_stats(&self) -> Arc<ListenerStats> {
        self.listener_stats.clone()
    }

    /// A signal that stops the daemon when fired, e.g. from a signal handler.
    pub fn stop_signal(&self) -> StopSignal {
        self.stop.clone()
    }

    /// Blocks until the daemon has stopped.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            if t.join().is_err() {
                error!("server thread panicked");
            }
        }
    }

    pub fn stop(self) {
        self.stop.stop();
        self.join();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.stop();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn load_profile(config: &ServerConfig) -> Result<Profile, ServerError> {
    let profile = match &config.profile {
        ProfileSource::Path(p) => Profile::load(p).map_err(|e| ServerError::Config(e.to_string()))?,
        ProfileSource::Inline(p) => p.clone(),
    };
    if let Some(s) = config.scheme {
        if s != profile.scheme() {
            return Err(ServerError::Config(format!(
                "profile is {} but scheme {} was requested",
                profile.scheme().as_str(),
                s.as_str()
            )));
        }
    }
    Ok(profile.server_view())
}

fn first_beacon(
    poller: &mut Poller<Box<dyn BeaconSource>>,
    schedule: &PollSchedule,
    timeout: Duration,
    stop: &StopSignal,
) -> Result<BeaconValue, ServerError> {
    let deadline = Instant::now() + timeout;
    let mut last_err: String;
    loop {
        match poller.tick() {
            PollStep::Emitted(b) => return Ok(b),
            PollStep::FetchFailed(e) => last_err = e.to_string(),
            other => last_err = format!("unexpected poll result {other:?}"),
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(ServerError::Bootstrap(last_err));
        }
        let wait = schedule.short_wait.min(deadline - now).max(Duration::from_millis(10));
        if stop.wait(wait) {
            return Err(ServerError::Bootstrap("stopped before the first beacon".into()));
        }
    }
}

/// Starts the daemon. Beacon schemes block here until the first beacon is
/// fetched (or `startup_timeout` passes); nothing listens before that.
pub fn run(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let profile = load_profile(&config)?;
    let scheme = profile.scheme();
    let log = EventLog::open(config.log, config.events)?;
    let mut processor = KnockProcessor::from_profile(profile);
    let stop = StopSignal::new();
    let stats = Arc::new(ServerStats::default());
    let schedule = config.schedule;

    let mut poller = processor.beacon_hash().map(|h| Poller::new(config.beacon.into_source(), h));
    if let Some(p) = poller.as_mut() {
        let beacon = first_beacon(p, &schedule, config.startup_timeout, &stop)?;
        let height = beacon.source_height;
        let port = processor
            .install_beacon(beacon)
            .map_err(|e| ServerError::Bootstrap(e.to_string()))?
            .expect("beacon schemes have a table port");
        stats.beacons.fetch_add(1, Ordering::SeqCst);
        log.emit(ServerEvent::Beacon { timestamp: unix_millis(), height, port });
    }
    let port = processor.current_port().ok_or_else(|| ServerError::Config("no knock port".into()))?;

    let (packet_tx, packet_rx) = unbounded::<KnockPacket>();
    let filter = FilterSpec { port, expected_len: processor.expected_len() };
    let listener = listen(filter, config.transport, move |p| {
        let _ = packet_tx.send(p);
    })
    .map_err(|e| ServerError::Bind(e.to_string()))?;
    let bound_port = Arc::new(AtomicU16::new(listener.port()));
    let listener_stats = listener.stats();
    info!("listening for {} knocks on port {}", scheme.as_str(), listener.port());
    log.emit(ServerEvent::Listening { timestamp: unix_millis(), port: listener.port() });

    let mut threads = Vec::new();
    let (exec_tx, exec_rx) = bounded::<AuthEvent>(EXEC_QUEUE_DEPTH);
    {
        let (log, stats) = (log.clone(), stats.clone());
        let mode = config.mode;
        threads.push(spawn("knock-exec", move || executor_loop(exec_rx, mode, &log, &stats))?);
    }

    let (beacon_tx, beacon_rx) = unbounded::<BeaconValue>();
    if let Some(mut poller) = poller {
        let stop = stop.clone();
        threads.push(spawn("knock-beacon", move || {
            if stop.wait(schedule.long_wait) {
                return;
            }
            poll_loop(&mut poller, schedule, &stop, |b| beacon_tx.send(b).is_ok());
        })?);
    } else {
        drop(beacon_tx);
    }

    {
        let engine = Engine {
            processor,
            listener,
            bound_port: bound_port.clone(),
            exec_tx,
            mode: config.mode,
            log,
            stats: stats.clone(),
            stop: stop.clone(),
        };
        threads.push(spawn("knock-engine", move || engine.run(beacon_rx, packet_rx))?);
    }

    Ok(ServerHandle { stop, threads, port: bound_port, stats, listener_stats, scheme })
}

fn spawn<F: FnOnce() + Send + 'static>(name: &str, f: F) -> Result<JoinHandle<()>, ServerError> {
    thread::Builder::new().name(name.into()).spawn(f).map_err(|e| ServerError::Config(format!("spawn {name}: {e}")))
}

struct Engine {
    processor: KnockProcessor,
    listener: ListenerHandle,
    bound_port: Arc<AtomicU16>,
    exec_tx: Sender<AuthEvent>,
    mode: ExecMode,
    log: EventLog,
    stats: Arc<ServerStats>,
    stop: StopSignal,
}

impl Engine {
    fn run(mut self, beacons: Receiver<BeaconValue>, packets: Receiver<KnockPacket>) {
        let tick = Duration::from_millis(25);
        let mut beacons = Some(beacons);
        loop {
            if self.stop.is_stopped() {
                break;
            }
            let never = crossbeam_channel::never();
            let beacon_rx = beacons.as_ref().unwrap_or(&never);
            select! {
                recv(beacon_rx) -> msg => match msg {
                    Ok(b) => self.new_beacon(b),
                    Err(_) => beacons = None,
                },
                recv(packets) -> msg => match msg {
                    Ok(p) => self.packet(p),
                    Err(_) => break,
                },
                default(tick) => {}
            }
        }
        self.listener.stop();
        // Packets the listener had already accepted still get an event.
        while let Ok(p) = packets.try_recv() {
            self.packet(p);
        }
    }

    fn new_beacon(&mut self, beacon: BeaconValue) {
        let height = beacon.source_height;
        let port = match self.processor.install_beacon(beacon) {
            Ok(Some(port)) => port,
            Ok(None) => return,
            Err(e) => {
                self.log.error(format!("knock table rebuild failed: {e}"));
                return;
            }
        };
        self.stats.beacons.fetch_add(1, Ordering::SeqCst);
        self.log.emit(ServerEvent::Beacon { timestamp: unix_millis(), height, port });
        if port != self.listener.port() {
            match self.listener.rebind(port) {
                Ok(()) => {
                    self.bound_port.store(port, Ordering::SeqCst);
                    self.log.emit(ServerEvent::Listening { timestamp: unix_millis(), port });
                }
                // Fail closed: packets on the old port are filtered until a
                // later beacon rebinds successfully.
                Err(e) => self.log.error(format!("cannot move listener to port {port}: {e}")),
            }
        }
    }

    fn packet(&mut self, packet: KnockPacket) {
        let before = thread_hash_calls();
        let event = self.processor.process(&packet);
        let hashed = thread_hash_calls() - before;
        self.stats.packet_path_hash_calls.fetch_add(hashed, Ordering::SeqCst);
        self.stats.count(event.outcome);
        let authorized = event.outcome == Outcome::Authorized;
        self.log.emit(ServerEvent::Auth(event.clone()));
        if authorized && self.mode == ExecMode::Execute {
            match self.exec_tx.try_send(event) {
                Ok(()) => {}
                Err(TrySendError::Full(e)) | Err(TrySendError::Disconnected(e)) => {
                    self.stats.exec_refused.fetch_add(1, Ordering::SeqCst);
                    self.log.error(format!(
                        "execution queue full, not running {:?}",
                        e.command_name.unwrap_or_default()
                    ));
                }
            }
        }
    }
}

fn executor_loop(jobs: Receiver<AuthEvent>, mode: ExecMode, log: &EventLog, stats: &ServerStats) {
    for job in jobs {
        if mode == ExecMode::DryRun {
            continue;
        }
        let (Some(name), Some(command)) = (job.command_name, job.command) else {
            continue;
        };
        let record = execute_command(&name, &command);
        stats.executed.fetch_add(1, Ordering::SeqCst);
        if let Some(err) = &record.error {
            warn!("command {name:?} failed to start: {err}");
        }
        log.emit(ServerEvent::Exec(record));
    }
}
