//! Sessions kept in memory and persisted as one append-only JSON-lines log
//! per session (`<dir>/<session_id>.jsonl`), replayed on open.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;
use crate::session::{Judgment, ReviewReport, ReviewSession};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Created { session: ReviewSession },
    Judged { item_id: String, judgment: Judgment },
    Finalized,
}

/// Session plus its log path; the mutex serializes writers of one session.
#[derive(Debug)]
pub struct Entry {
    pub session: ReviewSession,
    path: PathBuf,
}

impl Entry {
    fn append(&self, event: &LogEvent) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| ReviewError::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| ReviewError::io(&self.path, e))?;
        f.sync_data().map_err(|e| ReviewError::io(&self.path, e))
    }
}

#[derive(Debug)]
pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

fn replay(path: &Path) -> Result<ReviewSession, ReviewError> {
    let text = fs::read_to_string(path).map_err(|e| ReviewError::io(path, e))?;
    let corrupt = |line: usize, reason: String| ReviewError::CorruptLog {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut session: Option<ReviewSession> = None;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event: LogEvent = serde_json::from_str(line).map_err(|e| corrupt(n + 1, e.to_string()))?;
        match (event, session.as_mut()) {
            (LogEvent::Created { session: s }, None) => session = Some(s),
            (LogEvent::Judged { item_id, judgment }, Some(s)) => {
                s.record(&item_id, judgment).map_err(|e| corrupt(n + 1, e.to_string()))?
            }
            (LogEvent::Finalized, Some(s)) => {
                s.finalize().map_err(|e| corrupt(n + 1, e.to_string()))?;
            }
            (_, _) => return Err(corrupt(n + 1, "event out of order".into())),
        }
    }
    session.ok_or_else(|| corrupt(0, "empty log".into()))
}

impl SessionStore {
    /// Opens (creating if needed) a log directory and replays every session in it.
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        fs::create_dir_all(dir).map_err(|e| ReviewError::io(dir, e))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(dir).map_err(|e| ReviewError::io(dir, e))? {
            let path = entry.map_err(|e| ReviewError::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let session = replay(&path)?;
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(Entry { session, path })));
        }
        Ok(SessionStore {
            dir: dir.to_path_buf(),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, session: ReviewSession) -> Result<(), ReviewError> {
        let id = session.session_id.clone();
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ReviewError::Invalid(format!("bad session id {id:?}")));
        }
        let mut map = self.sessions.write();
        if map.contains_key(&id) {
            return Err(ReviewError::Invalid(format!("session {id} exists")));
        }
        let entry = Entry {
            path: self.dir.join(format!("{id}.jsonl")),
            session,
        };
        entry.append(&LogEvent::Created {
            session: entry.session.clone(),
        })?;
        map.insert(id, Arc::new(Mutex::new(entry)));
        Ok(())
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ReviewError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::UnknownSession(id.to_string()))
    }

    /// Runs `f` with the session locked.
    pub fn with<R>(&self, id: &str, f: impl FnOnce(&ReviewSession) -> R) -> Result<R, ReviewError> {
        let e = self.entry(id)?;
        let guard = e.lock();
        Ok(f(&guard.session))
    }

    /// Validates, logs, then applies one judgment.
    pub fn record(&self, id: &str, item_id: &str, judgment: Judgment) -> Result<(usize, usize), ReviewError> {
        let e = self.entry(id)?;
        let mut guard = e.lock();
        guard.session.validate(item_id, &judgment)?;
        guard.append(&LogEvent::Judged {
            item_id: item_id.to_string(),
            judgment: judgment.clone(),
        })?;
        guard.session.record(item_id, judgment)?;
        Ok((guard.session.judgments.len(), guard.session.items.len()))
    }

    /// Idempotent; only the first call is logged.
    pub fn finalize(&self, id: &str) -> Result<ReviewReport, ReviewError> {
        let e = self.entry(id)?;
        let mut guard = e.lock();
        let report = guard.session.report()?;
        if !guard.session.finalized {
            guard.append(&LogEvent::Finalized)?;
            guard.session.finalized = true;
        }
        Ok(report)
    }

    pub fn report(&self, id: &str) -> Result<ReviewReport, ReviewError> {
        let e = self.entry(id)?;
        let guard = e.lock();
        if !guard.session.finalized {
            return Err(ReviewError::NotFinalized);
        }
        guard.session.report()
    }
}
