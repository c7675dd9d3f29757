//! Getting AIS lines in: a live TCP line feed, replay of a file, and the
//! date-partitioned JSONL store.
//!
//! Every source delivers [`StoredLine`]s (receiver time plus the raw NMEA
//! text) to a caller-supplied sink in receive order. Decoding happens
//! downstream, so replaying a stored capture is indistinguishable from
//! having received it live.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::parse_sentence;
use crate::validate::Outage;

/// Overrides the endpoint of a live source.
pub const ENDPOINT_ENV: &str = "AISPORT_ENDPOINT";
pub const DEFAULT_QUEUE: usize = 65_536;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input file not found: {0}")]
    MissingFile(PathBuf),
    #[error("cannot resolve endpoint {0}")]
    Unresolvable(String),
    #[error("invalid source {0:?}: expected tcp://host:port or file:path")]
    BadSource(String),
    #[error("sink failed: {0}")]
    Sink(io::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One received line. This is the on-disk record of the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredLine {
    pub rx_time: DateTime<Utc>,
    pub nmea: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Tcp(String),
    File(PathBuf),
}

impl FromStr for Source {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
                return Ok(Source::Tcp(addr.to_string()));
            }
        } else if let Some(path) = s.strip_prefix("file:") {
            if !path.is_empty() {
                return Ok(Source::File(PathBuf::from(path)));
            }
        }
        Err(IngestError::BadSource(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub source: Source,
    /// Replay time multiplier; 0 replays without sleeping.
    pub replay_speed: f64,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    pub queue_capacity: usize,
    /// Receiver time assigned to the first raw (untimed) replay line.
    pub raw_base: DateTime<Utc>,
    /// Spacing of synthetic receiver times for raw replay lines.
    pub raw_cadence: TimeDelta,
}

impl SourceConfig {
    pub fn new(source: Source) -> Self {
        Self {
            source,
            replay_speed: 0.0,
            backoff_initial: Duration::from_secs(1),
            backoff_max: Duration::from_secs(60),
            queue_capacity: DEFAULT_QUEUE,
            raw_base: DateTime::UNIX_EPOCH,
            raw_cadence: TimeDelta::seconds(1),
        }
    }

    /// Applies the endpoint environment override to a live source.
    pub fn with_env_override(mut self) -> Self {
        if let (Source::Tcp(_), Ok(ep)) = (&self.source, std::env::var(ENDPOINT_ENV)) {
            if !ep.is_empty() {
                self.source = Source::Tcp(ep.trim_start_matches("tcp://").to_string());
            }
        }
        self
    }
}

/// Full-jitter exponential backoff: uniform in [0, min(max, initial * 2^attempt)].
pub fn backoff_delay(initial: Duration, max: Duration, attempt: u32, rng: &mut impl Rng) -> Duration {
    let ceiling = initial.saturating_mul(1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX)).min(max);
    ceiling.mul_f64(rng.random_range(0.0..=1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub lines: u64,
    /// Lines of the stored format that failed to parse (replay), or partial
    /// lines cut off by a disconnect (live).
    pub malformed: u64,
    pub connections: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outages: Vec<Outage>,
}

fn classify_line(line: &str, index: u64, cfg: &SourceConfig) -> Option<Result<StoredLine, ()>> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return None;
    }
    if line.starts_with('{') {
        return Some(serde_json::from_str::<StoredLine>(line).map_err(|_| ()));
    }
    let synthetic = cfg.raw_base + cfg.raw_cadence * index.min(i32::MAX as u64) as i32;
    let rx_time = parse_sentence(line).ok().and_then(|s| s.tag_time).unwrap_or(synthetic);
    Some(Ok(StoredLine { rx_time, nmea: line.to_string() }))
}

/// Replays a stored JSONL capture or a raw NMEA file. Stored lines keep
/// their receiver time; raw lines take their tag-block time, else
/// `raw_base + i * raw_cadence` where i is the raw-line index. Stored lines
/// that do not parse are skipped and counted.
pub fn run_replay(cfg: &SourceConfig, sink: impl FnMut(StoredLine) -> io::Result<()>) -> Result<IngestSummary, IngestError> {
    let Source::File(path) = &cfg.source else {
        return Err(IngestError::BadSource(format!("{:?}", cfg.source)));
    };
    let file = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => IngestError::MissingFile(path.clone()),
        _ => IngestError::Io(e),
    })?;
    replay_reader(BufReader::new(file), cfg, sink)
}

/// [`run_replay`] over any line reader; `cfg.source` is ignored.
pub fn replay_reader(
    reader: impl BufRead,
    cfg: &SourceConfig,
    mut sink: impl FnMut(StoredLine) -> io::Result<()>,
) -> Result<IngestSummary, IngestError> {
    let mut summary = IngestSummary { connections: 1, ..Default::default() };
    let mut raw_index = 0u64;
    let mut previous: Option<DateTime<Utc>> = None;
    for line in reader.lines() {
        let line = line?;
        let is_raw = !line.starts_with('{');
        let Some(parsed) = classify_line(&line, raw_index, cfg) else { continue };
        if is_raw {
            raw_index += 1;
        }
        let Ok(stored) = parsed else {
            summary.malformed += 1;
            continue;
        };
        if cfg.replay_speed > 0.0 {
            if let Some(prev) = previous {
                if let Ok(wait) = (stored.rx_time - prev).to_std() {
                    thread::sleep(wait.div_f64(cfg.replay_speed));
                }
            }
            previous = Some(stored.rx_time);
        }
        summary.lines += 1;
        sink(stored).map_err(IngestError::Sink)?;
    }
    Ok(summary)
}

enum Feed {
    Line(StoredLine),
    Partial,
    Connected,
    Gap(DateTime<Utc>, DateTime<Utc>),
    Fatal(IngestError),
}

const POLL: Duration = Duration::from_millis(100);

/// Reads one connection until EOF, error or stop. Returns false if the
/// consumer went away.
fn pump(stream: TcpStream, tx: &std::sync::mpsc::SyncSender<Feed>, stop: &AtomicBool) -> bool {
    if stream.set_read_timeout(Some(POLL)).is_err() {
        return true;
    }
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        if stop.load(Ordering::Relaxed) {
            return true;
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.ends_with(b"\n") => {
                let text = String::from_utf8_lossy(&buf).trim_end_matches(['\r', '\n']).to_string();
                buf.clear();
                if text.is_empty() {
                    continue;
                }
                if tx.send(Feed::Line(StoredLine { rx_time: Utc::now(), nmea: text })).is_err() {
                    return false;
                }
            }
            Ok(_) => break,
            // Bytes read before the timeout stay in `buf`.
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => break,
        }
    }
    if !buf.is_empty() {
        return tx.send(Feed::Partial).is_ok();
    }
    true
}

fn reader_loop(addr: String, cfg: SourceConfig, tx: std::sync::mpsc::SyncSender<Feed>, stop: Arc<AtomicBool>) {
    let mut rng = rand::rng();
    let mut attempt = 0u32;
    let mut lost_at: Option<DateTime<Utc>> = None;
    while !stop.load(Ordering::Relaxed) {
        let addrs: Vec<_> = match addr.to_socket_addrs() {
            Ok(a) => a.collect(),
            Err(_) => Vec::new(),
        };
        if addrs.is_empty() {
            let _ = tx.send(Feed::Fatal(IngestError::Unresolvable(addr.clone())));
            return;
        }
        match addrs.iter().find_map(|a| TcpStream::connect_timeout(a, Duration::from_secs(10)).ok()) {
            Some(stream) => {
                attempt = 0;
                if let Some(from) = lost_at.take() {
                    if tx.send(Feed::Gap(from, Utc::now())).is_err() {
                        return;
                    }
                }
                if tx.send(Feed::Connected).is_err() || !pump(stream, &tx, &stop) {
                    return;
                }
                lost_at = Some(Utc::now());
            }
            None => {
                lost_at.get_or_insert_with(Utc::now);
                let wait = backoff_delay(cfg.backoff_initial, cfg.backoff_max, attempt, &mut rng);
                attempt = attempt.saturating_add(1);
                let deadline = std::time::Instant::now() + wait;
                while std::time::Instant::now() < deadline && !stop.load(Ordering::Relaxed) {
                    thread::sleep(POLL.min(deadline.saturating_duration_since(std::time::Instant::now())));
                }
            }
        }
        if lost_at.is_some() && !stop.load(Ordering::Relaxed) {
            // Reconnect after a server-side close also waits, so a server
            // that accepts and closes immediately is not hammered.
            thread::sleep(cfg.backoff_initial.min(cfg.backoff_max).mul_f64(rng.random_range(0.0..=1.0)));
        }
    }
}

/// Follows a TCP line feed until `stop` is set, reconnecting with
/// full-jitter exponential backoff. Lines pass through a bounded queue, so a
/// slow sink stalls the reader instead of losing lines. Time spent
/// disconnected is reported as global outages.
pub fn run_live(
    cfg: &SourceConfig,
    mut sink: impl FnMut(StoredLine) -> io::Result<()>,
    stop: Arc<AtomicBool>,
) -> Result<IngestSummary, IngestError> {
    let Source::Tcp(addr) = &cfg.source else {
        return Err(IngestError::BadSource(format!("{:?}", cfg.source)));
    };
    let (tx, rx) = sync_channel(cfg.queue_capacity.max(1));
    let reader = {
        let (addr, cfg, stop) = (addr.clone(), cfg.clone(), stop.clone());
        thread::spawn(move || reader_loop(addr, cfg, tx, stop))
    };
    let mut summary = IngestSummary::default();
    let mut result = Ok(());
    loop {
        let item = match rx.recv_timeout(POLL) {
            Ok(item) => item,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        match item {
            Feed::Line(l) => {
                summary.lines += 1;
                if let Err(e) = sink(l) {
                    result = Err(IngestError::Sink(e));
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            }
            Feed::Partial => summary.malformed += 1,
            Feed::Connected => summary.connections += 1,
            Feed::Gap(from, to) => summary.outages.push(Outage::global(from, to)),
            Feed::Fatal(e) => {
                result = Err(e);
                break;
            }
        }
    }
    drop(rx);
    let _ = reader.join();
    result.map(|()| summary)
}

fn store_file(root: &Path, date: NaiveDate) -> PathBuf {
    root.join(format!("ais-{}.jsonl", date.format("%Y-%m-%d")))
}

/// Append-only JSONL store, one file per UTC receive date.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    open: Option<(NaiveDate, BufWriter<File>)>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, open: None })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append(&mut self, line: &StoredLine) -> io::Result<()> {
        let date = line.rx_time.date_naive();
        if self.open.as_ref().is_none_or(|(d, _)| *d != date) {
            self.flush()?;
            let f = OpenOptions::new().create(true).append(true).open(store_file(&self.root, date))?;
            self.open = Some((date, BufWriter::new(f)));
        }
        let (_, w) = self.open.as_mut().expect("opened above");
        serde_json::to_writer(&mut *w, line)?;
        w.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match &mut self.open {
            Some((_, w)) => w.flush(),
            None => Ok(()),
        }
    }

    /// Date files in the store, oldest first.
    pub fn files(root: &Path) -> io::Result<Vec<PathBuf>> {
        let mut files: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("ais-")?.strip_suffix(".jsonl"))
                    .is_some_and(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").is_ok())
            })
            .collect();
        files.sort();
        Ok(files)
    }

    /// Every stored line, date files in order.
    pub fn load(root: &Path) -> io::Result<Vec<StoredLine>> {
        let mut out = Vec::new();
        for f in Self::files(root)? {
            out.extend(read_jsonl::<StoredLine>(BufReader::new(File::open(f)?))?);
        }
        Ok(out)
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Writes one JSON document per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(mut w: impl Write, items: impl IntoIterator<Item = &'a T>) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads one JSON document per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| io::Error::new(ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}
