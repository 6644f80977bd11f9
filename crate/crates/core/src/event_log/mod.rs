//! Append-only, multi-topic event store.
//!
//! Topics are created on first append. A log opened on a data directory keeps
//! one subdirectory per topic holding a single framed record file; the
//! offset → file-position index is rebuilt from that file on open. Events are
//! also cached in memory so reads never touch the disk.

mod query;
mod storage;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::payload::{Payload, PayloadError};

pub use query::{utc_date, KeyAverage};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid topic name `{0}`")]
    InvalidTopic(String),
    #[error("rejected payload: {0}")]
    Payload(#[from] PayloadError),
    #[error("topic `{0}` not found")]
    NotFound(String),
    #[error("topic `{0}` is empty")]
    EmptyTopic(String),
    #[error("topic `{topic}` offset {offset}: field `{field}` missing or of the wrong type")]
    Schema {
        topic: String,
        offset: u64,
        field: String,
    },
    #[error("no event in `{topic}` has `{field}` >= {threshold}")]
    NotReached {
        topic: String,
        field: String,
        threshold: f64,
    },
    #[error("no event in `{topic}` has `{field}` >= {t}")]
    PastEnd {
        topic: String,
        field: String,
        t: f64,
    },
    #[error("query window is inverted")]
    InvalidRange,
    #[error("topic `{topic}` is corrupt at byte {position}: {reason}")]
    Corrupt {
        topic: String,
        position: u64,
        reason: String,
    },
}

pub type Result<T, E = LogError> = std::result::Result<T, E>;

/// One stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub topic: String,
    pub offset: u64,
    pub payload: Payload,
}

struct Topic {
    name: String,
    events: RwLock<Vec<Event>>,
    writer: Mutex<TopicWriter>,
    // Published length, used to wake tailing readers.
    len: Mutex<u64>,
    grown: Condvar,
}

struct TopicWriter {
    file: Option<storage::Writer>,
    positions: Vec<u64>,
}

impl Topic {
    fn new(
        name: &str,
        events: Vec<Event>,
        file: Option<storage::Writer>,
        positions: Vec<u64>,
    ) -> Self {
        let len = events.len() as u64;
        Self {
            name: name.to_owned(),
            events: RwLock::new(events),
            writer: Mutex::new(TopicWriter { file, positions }),
            len: Mutex::new(len),
            grown: Condvar::new(),
        }
    }

    fn append(&self, payload: Payload) -> Result<u64> {
        let mut writer = self.writer.lock().expect("topic writer poisoned");
        if let Some(file) = writer.file.as_mut() {
            let pos = file.append(&storage::encode_frame(&payload))?;
            writer.positions.push(pos);
        }
        let offset = {
            let mut events = self.events.write().expect("topic events poisoned");
            let offset = events.len() as u64;
            events.push(Event {
                topic: self.name.clone(),
                offset,
                payload,
            });
            offset
        };
        drop(writer);
        *self.len.lock().expect("topic len poisoned") = offset + 1;
        self.grown.notify_all();
        Ok(offset)
    }
}

/// Handle to the event store. Cheap to clone; all clones share state.
#[derive(Clone)]
pub struct EventLog {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: Option<PathBuf>,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("data_dir", &self.inner.data_dir)
            .finish_non_exhaustive()
    }
}

pub fn validate_topic_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.len() <= 200
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(LogError::InvalidTopic(name.to_owned()))
    }
}

impl EventLog {
    /// A log whose topics live only in memory.
    pub fn in_memory() -> Self {
        Self {
            inner: Arc::new(Inner {
                data_dir: None,
                topics: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Opens (or creates) a persistent log rooted at `dir`, recovering every
    /// topic found there.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut topics = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
                continue;
            };
            if validate_topic_name(&name).is_err() {
                log::warn!("ignoring directory {:?} in data dir", entry.path());
                continue;
            }
            let path = storage::topic_file(&dir, &name);
            if !path.exists() {
                continue;
            }
            let recovered = storage::recover(&path, &name)?;
            let events = recovered
                .payloads
                .into_iter()
                .enumerate()
                .map(|(i, payload)| Event {
                    topic: name.clone(),
                    offset: i as u64,
                    payload,
                })
                .collect();
            let writer = storage::Writer::open(&path, recovered.end)?;
            topics.insert(
                name.clone(),
                Arc::new(Topic::new(&name, events, Some(writer), recovered.positions)),
            );
        }
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir: Some(dir),
                topics: RwLock::new(topics),
            }),
        })
    }

    pub fn is_persistent(&self) -> bool {
        self.inner.data_dir.is_some()
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.inner.data_dir.as_deref()
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>> {
        self.inner
            .topics
            .read()
            .expect("topic map poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| LogError::NotFound(name.to_owned()))
    }

    /// Returns the topic, creating an empty one if needed.
    fn topic_or_create(&self, name: &str) -> Result<Arc<Topic>> {
        if let Ok(topic) = self.topic(name) {
            return Ok(topic);
        }
        validate_topic_name(name)?;
        let mut topics = self.inner.topics.write().expect("topic map poisoned");
        if let Some(topic) = topics.get(name) {
            return Ok(topic.clone());
        }
        let writer = match &self.inner.data_dir {
            Some(dir) => {
                let path = storage::topic_file(dir, name);
                fs::create_dir_all(path.parent().expect("topic file has a parent"))?;
                Some(storage::Writer::open(&path, 0)?)
            }
            None => None,
        };
        let topic = Arc::new(Topic::new(name, Vec::new(), writer, Vec::new()));
        topics.insert(name.to_owned(), topic.clone());
        Ok(topic)
    }

    /// Ensures `name` exists, empty if new.
    pub fn create_topic(&self, name: &str) -> Result<()> {
        self.topic_or_create(name).map(|_| ())
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topic(name).is_ok()
    }

    /// Sorted topic names.
    pub fn topics(&self) -> Vec<String> {
        let mut names: Vec<_> = self
            .inner
            .topics
            .read()
            .expect("topic map poisoned")
            .keys()
            .cloned()
            .collect();
        names.sort();
        names
    }

    /// Appends one event and returns its offset. Appends to one topic are
    /// totally ordered.
    pub fn append(&self, topic: &str, payload: Payload) -> Result<u64> {
        payload.validate()?;
        self.topic_or_create(topic)?.append(payload)
    }

    /// Events with offset `>= start`, at most `max_count`, in offset order.
    pub fn read_from(&self, topic: &str, start: u64, max_count: usize) -> Result<Vec<Event>> {
        let topic = self.topic(topic)?;
        let events = topic.events.read().expect("topic events poisoned");
        let start = usize::try_from(start)
            .unwrap_or(usize::MAX)
            .min(events.len());
        let end = start.saturating_add(max_count).min(events.len());
        Ok(events[start..end].to_vec())
    }

    /// Runs `f` over the topic's events under its read lock, without copying.
    pub fn scan<R>(&self, topic: &str, f: impl FnOnce(&[Event]) -> R) -> Result<R> {
        let topic = self.topic(topic)?;
        let events = topic.events.read().expect("topic events poisoned");
        Ok(f(&events))
    }

    pub fn read_all(&self, topic: &str) -> Result<Vec<Event>> {
        self.read_from(topic, 0, usize::MAX)
    }

    /// Number of events in `topic`, i.e. the next offset to be assigned.
    pub fn len(&self, topic: &str) -> Result<u64> {
        Ok(self
            .topic(topic)?
            .events
            .read()
            .expect("topic events poisoned")
            .len() as u64)
    }

    /// File position of the record at `offset`, for persistent topics.
    pub fn file_position(&self, topic: &str, offset: u64) -> Result<Option<u64>> {
        let topic = self.topic(topic)?;
        let writer = topic.writer.lock().expect("topic writer poisoned");
        Ok(writer.positions.get(offset as usize).copied())
    }

    /// Blocks until `topic` holds an event at `offset` or the timeout passes.
    /// Returns whether the event is available.
    pub fn wait_for(&self, topic: &str, offset: u64, timeout: Duration) -> Result<bool> {
        let topic = self.topic_or_create(topic)?;
        let deadline = Instant::now() + timeout;
        let mut len = topic.len.lock().expect("topic len poisoned");
        while *len <= offset {
            let now = Instant::now();
            if now >= deadline {
                return Ok(false);
            }
            len = topic
                .grown
                .wait_timeout(len, deadline - now)
                .expect("topic len poisoned")
                .0;
        }
        Ok(true)
    }

    /// Deletes a topic and its file. Used to regenerate derived topics such
    /// as simulation traces; offsets restart at zero afterwards.
    pub fn drop_topic(&self, name: &str) -> Result<()> {
        let removed = self
            .inner
            .topics
            .write()
            .expect("topic map poisoned")
            .remove(name);
        if removed.is_some() {
            if let Some(dir) = &self.inner.data_dir {
                let sub = dir.join(name);
                if sub.exists() {
                    fs::remove_dir_all(sub)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq_msg(power: f64) -> Payload {
        Payload::new()
            .with("equipment", "Dish.")
            .with("power", power)
            .with("time", 1451624400_i64)
    }

    #[test]
    fn first_append_is_offset_zero_then_one() {
        let log = EventLog::in_memory();
        assert_eq!(log.append("equipment", eq_msg(3.33)).unwrap(), 0);
        assert_eq!(log.append("equipment", eq_msg(0.0)).unwrap(), 1);
    }

    #[test]
    fn rejects_empty_payload_and_bad_topic() {
        let log = EventLog::in_memory();
        assert!(matches!(
            log.append("t", Payload::new()),
            Err(LogError::Payload(PayloadError::Empty))
        ));
        assert!(matches!(
            log.append("../x", eq_msg(1.0)),
            Err(LogError::InvalidTopic(_))
        ));
        assert!(matches!(
            log.append("", eq_msg(1.0)),
            Err(LogError::InvalidTopic(_))
        ));
        assert!(!log.has_topic("t"));
    }

    #[test]
    fn read_from_windows() {
        let log = EventLog::in_memory();
        for p in [1.0, 2.0, 3.0] {
            log.append("t", eq_msg(p)).unwrap();
        }
        let evs = log.read_from("t", 1, 10).unwrap();
        assert_eq!(evs.iter().map(|e| e.offset).collect::<Vec<_>>(), vec![1, 2]);
        assert!(log.read_from("t", 999, 10).unwrap().is_empty());
        assert_eq!(log.read_from("t", 0, 2).unwrap().len(), 2);
        assert!(matches!(
            log.read_from("missing", 0, 1),
            Err(LogError::NotFound(_))
        ));
    }

    #[test]
    fn persistent_topic_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = EventLog::open(dir.path()).unwrap();
            log.append("a", eq_msg(1.0)).unwrap();
            log.append("a", eq_msg(2.5)).unwrap();
            log.append("b.dlq", Payload::new().with("raw", "x"))
                .unwrap();
            let first = 4 + eq_msg(1.0).to_canonical().len() as u64;
            assert_eq!(log.file_position("a", 1).unwrap(), Some(first));
        }
        let log = EventLog::open(dir.path()).unwrap();
        assert_eq!(log.topics(), vec!["a".to_owned(), "b.dlq".to_owned()]);
        let evs = log.read_all("a").unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[1].payload, eq_msg(2.5));
        assert_eq!(log.append("a", eq_msg(4.0)).unwrap(), 2);
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = EventLog::open(dir.path()).unwrap();
            log.append("a", eq_msg(1.0)).unwrap();
        }
        let path = storage::topic_file(dir.path(), "a");
        let mut bytes = fs::read(&path).unwrap();
        let good = bytes.len();
        bytes.extend_from_slice(&[0, 0, 0, 40, b'{']);
        fs::write(&path, &bytes).unwrap();
        let log = EventLog::open(dir.path()).unwrap();
        assert_eq!(log.len("a").unwrap(), 1);
        assert_eq!(fs::metadata(&path).unwrap().len(), good as u64);
        assert_eq!(log.append("a", eq_msg(2.0)).unwrap(), 1);
    }

    #[test]
    fn corrupt_body_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a")).unwrap();
        let mut bytes = vec![0, 0, 0, 3];
        bytes.extend_from_slice(b"xyz");
        fs::write(storage::topic_file(dir.path(), "a"), bytes).unwrap();
        assert!(matches!(
            EventLog::open(dir.path()),
            Err(LogError::Corrupt { position: 0, .. })
        ));
    }

    #[test]
    fn wait_for_wakes_on_append() {
        let log = EventLog::in_memory();
        let writer = log.clone();
        let handle = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            writer.append("t", eq_msg(1.0)).unwrap();
        });
        assert!(log.wait_for("t", 0, Duration::from_secs(5)).unwrap());
        handle.join().unwrap();
        assert!(!log.wait_for("t", 1, Duration::from_millis(10)).unwrap());
    }

    #[test]
    fn drop_topic_removes_file() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::open(dir.path()).unwrap();
        log.append("trace", eq_msg(1.0)).unwrap();
        log.drop_topic("trace").unwrap();
        assert!(!log.has_topic("trace"));
        assert!(!dir.path().join("trace").exists());
        assert_eq!(log.append("trace", eq_msg(1.0)).unwrap(), 0);
    }
}
