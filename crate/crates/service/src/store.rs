//! On-disk layout:
//!
//! ```text
//! <root>/sessions/<id>/events.jsonl   append-only, one event per line
//! <root>/sessions/<id>/snapshot.json  {last_seq, state_hash, session}
//! <root>/agents/<id>.json             {agent_id, history, brier}
//! ```
//!
//! Appends take an exclusive lock on the log file, so writers in different processes
//! serialize; a writer whose view of the log is out of date gets `StaleSequence`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use faf_core::lifecycle::{state_hash, Lifecycle, LifecycleError, LifecycleEvent};
use faf_core::model::ForecastingSession;
use faf_core::AgentRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("stale sequence: writer expected the log to end at {expected}, it ends at {actual}")]
    StaleSequence { expected: u64, actual: u64 },
    #[error("{}:{line}: corrupt event line: {message}", path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("events must continue the log at seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("snapshot of `{session}` is at seq {snapshot} but its log ends at {log}")]
    SnapshotAhead { session: String, snapshot: u64, log: u64 },
    #[error("rebuilding `{session}`: {source}")]
    Replay {
        session: String,
        #[source]
        source: LifecycleError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Session and agent ids become path components, so they are restricted to a safe set.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_id(id: &str) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_seq: u64,
    pub state_hash: String,
    pub session: ForecastingSession,
}

#[derive(Deserialize)]
struct SeqOnly {
    seq: u64,
}

/// Complete lines of a log and the byte length they span; anything after the last
/// newline is a torn write that was never acknowledged.
fn complete_prefix(bytes: &[u8]) -> &[u8] {
    match bytes.iter().rposition(|b| *b == b'\n') {
        Some(i) => &bytes[..=i],
        None => &[],
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join("sessions"), root.join("agents")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::read_dir(&root).map_err(io_err(&root))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("events.jsonl")
    }

    pub fn snapshot_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("snapshot.json")
    }

    fn agent_path(&self, id: &str) -> PathBuf {
        self.root.join("agents").join(format!("{id}.json"))
    }

    /// Ids of every session with a directory in the store.
    pub fn session_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(name) = entry.file_name().to_str().filter(|n| valid_id(n)) {
                if entry.path().is_dir() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Appends `events`, which must continue a log currently ending at `expected_last`.
    /// Durable (fsynced) on return. Returns the new last sequence number.
    pub fn append(&self, session: &str, expected_last: u64, events: &[LifecycleEvent]) -> Result<u64> {
        check_id(session)?;
        for (i, e) in events.iter().enumerate() {
            let expected = expected_last + 1 + i as u64;
            if e.seq != expected {
                return Err(StoreError::OutOfOrder { expected, got: e.seq });
            }
        }
        let dir = self.session_dir(session);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = self.events_path(session);
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path).map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;

        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(&path))?;
        let complete = complete_prefix(&bytes).len();
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "discarding torn tail of event log");
            file.set_len(complete as u64).map_err(io_err(&path))?;
        }
        let actual = last_seq_of(&path, &bytes[..complete])?;
        if actual != expected_last {
            return Err(StoreError::StaleSequence { expected: expected_last, actual });
        }
        if events.is_empty() {
            return Ok(actual);
        }
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).map_err(|source| StoreError::Json { path: path.clone(), source })?;
            buf.push(b'\n');
        }
        file.seek(SeekFrom::Start(complete as u64)).map_err(io_err(&path))?;
        file.write_all(&buf).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        if actual == 0 {
            // First write creates the directory entry; make that durable too.
            if let Ok(d) = File::open(&dir) {
                let _ = d.sync_all();
            }
        }
        Ok(events.last().map_or(actual, |e| e.seq))
    }

    /// Every acknowledged event of the session, in order. A torn final line is ignored;
    /// any other unparsable line is an error naming its line number.
    pub fn events(&self, session: &str) -> Result<Vec<LifecycleEvent>> {
        check_id(session)?;
        let path = self.events_path(session);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        parse_lines(&path, complete_prefix(&bytes))
    }

    pub fn events_since(&self, session: &str, since: u64) -> Result<Vec<LifecycleEvent>> {
        Ok(self.events(session)?.into_iter().filter(|e| e.seq > since).collect())
    }

    pub fn snapshot(&self, session: &str) -> Result<Option<Snapshot>> {
        check_id(session)?;
        let path = self.snapshot_path(session);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|source| StoreError::Json { path, source }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Atomically replaces the session's snapshot with `lifecycle`'s state.
    pub fn write_snapshot(&self, lifecycle: &Lifecycle) -> Result<()> {
        let session = lifecycle.session();
        check_id(&session.id)?;
        let snapshot = Snapshot {
            last_seq: lifecycle.last_seq(),
            state_hash: lifecycle.state_hash(),
            session: session.clone(),
        };
        let path = self.snapshot_path(&session.id);
        let bytes = serde_json::to_vec_pretty(&snapshot).map_err(|source| StoreError::Json { path: path.clone(), source })?;
        write_atomic(&path, &bytes)
    }

    /// Snapshot plus the events after it; a missing, unreadable or inconsistent snapshot
    /// falls back to replaying the whole log.
    pub fn load(&self, session: &str) -> Result<Lifecycle> {
        let events = self.events(session)?;
        let snapshot = match self.snapshot(session) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(session, error = %e, "ignoring unreadable snapshot");
                None
            }
        };
        let log_end = events.last().map_or(0, |e| e.seq);
        let replay_err = |source| StoreError::Replay { session: session.to_string(), source };
        match snapshot {
            None if events.is_empty() => Err(StoreError::UnknownSession(session.to_string())),
            None => Lifecycle::replay(&events).map_err(replay_err),
            Some(s) if s.last_seq > log_end => {
                Err(StoreError::SnapshotAhead { session: session.to_string(), snapshot: s.last_seq, log: log_end })
            }
            Some(s) if state_hash(&s.session) != s.state_hash => {
                tracing::warn!(session, "snapshot hash mismatch; replaying the full log");
                Lifecycle::replay(&events).map_err(replay_err)
            }
            Some(s) => {
                let mut lc = Lifecycle::from_snapshot(s.session, s.last_seq);
                for e in events.iter().filter(|e| e.seq > s.last_seq) {
                    lc.apply(e).map_err(replay_err)?;
                }
                Ok(lc)
            }
        }
    }

    pub fn record(&self, agent: &str) -> Result<Option<AgentRecord>> {
        check_id(agent)?;
        let path = self.agent_path(agent);
        match fs::read(&path) {
            Ok(bytes) => {
                let mut r: AgentRecord =
                    serde_json::from_slice(&bytes).map_err(|source| StoreError::Json { path, source })?;
                r.refresh();
                Ok(Some(r))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn records(&self) -> Result<BTreeMap<String, AgentRecord>> {
        let dir = self.root.join("agents");
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            if !valid_id(id) {
                continue;
            }
            if let Some(r) = self.record(id)? {
                out.insert(r.agent_id.clone(), r);
            }
        }
        Ok(out)
    }

    /// Read-modify-write of agent records under an exclusive store-wide lock. `f` returns
    /// the agents whose records it changed; only those files are rewritten.
    pub fn update_records<F>(&self, f: F) -> Result<Vec<String>>
    where
        F: FnOnce(&mut BTreeMap<String, AgentRecord>) -> Vec<String>,
    {
        let lock_path = self.root.join("agents").join(".lock");
        let lock = OpenOptions::new().write(true).create(true).truncate(false).open(&lock_path).map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;
        let mut records = self.records()?;
        let changed = f(&mut records);
        for id in &changed {
            check_id(id)?;
            let path = self.agent_path(id);
            let bytes = serde_json::to_vec_pretty(&records[id]).map_err(|source| StoreError::Json { path: path.clone(), source })?;
            write_atomic(&path, &bytes)?;
        }
        Ok(changed)
    }
}

fn parse_lines(path: &Path, bytes: &[u8]) -> Result<Vec<LifecycleEvent>> {
    let text = std::str::from_utf8(bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1,
        message: e.to_string(),
    })?;
    let mut out: Vec<LifecycleEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: LifecycleEvent = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let expected = out.last().map_or(1, |p| p.seq + 1);
        if event.seq != expected {
            return Err(StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected seq {expected}, found {}", event.seq),
            });
        }
        out.push(event);
    }
    Ok(out)
}

fn last_seq_of(path: &Path, complete: &[u8]) -> Result<u64> {
    let text = String::from_utf8_lossy(complete);
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    match lines.last() {
        None => Ok(0),
        Some(line) => serde_json::from_str::<SeqOnly>(line).map(|s| s.seq).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: lines.len(),
            message: e.to_string(),
        }),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.write_all(b"\n").map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
