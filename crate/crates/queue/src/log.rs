use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{IoContext, QueueError, Result};
use crate::topic::{RecoveryReport, Topic, TopicOptions, TopicRecord};

/// Checks a topic name against `[a-z0-9-]{1,64}`.
pub fn validate_topic_name(name: &str) -> Result<()> {
    let ok = (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(QueueError::InvalidTopicName(name.to_string()))
    }
}

/// The multi-topic log rooted at `<data_root>/queue/`.
///
/// Topics are opened lazily and kept open (holding their writer locks) for
/// the lifetime of the `QueueLog`.
#[derive(Debug)]
pub struct QueueLog {
    root: PathBuf,
    options: TopicOptions,
    topics: Mutex<HashMap<String, Arc<Topic>>>,
}

impl QueueLog {
    pub fn open(data_root: impl AsRef<Path>) -> Result<Self> {
        Self::with_options(data_root, TopicOptions::default())
    }

    pub fn with_options(data_root: impl AsRef<Path>, options: TopicOptions) -> Result<Self> {
        let root = data_root.as_ref().join("queue");
        fs::create_dir_all(&root).at(&root)?;
        Ok(Self {
            root,
            options,
            topics: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Returns the open topic, creating it when `create` is set.
    pub fn topic(&self, name: &str, create: bool) -> Result<Arc<Topic>> {
        validate_topic_name(name)?;
        let mut topics = self.topics.lock().unwrap();
        if let Some(t) = topics.get(name) {
            return Ok(t.clone());
        }
        let dir = self.root.join(name);
        if !create && !dir.is_dir() {
            return Err(QueueError::UnknownTopic(name.to_string()));
        }
        let topic = Arc::new(Topic::open(dir, name, self.options)?);
        topics.insert(name.to_string(), topic.clone());
        Ok(topic)
    }

    /// Names of every topic present on disk, sorted.
    pub fn topic_names(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = fs::read_dir(&self.root)
            .at(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| validate_topic_name(n).is_ok())
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn append(&self, topic: &str, key: &[u8], payload: &[u8]) -> Result<u64> {
        self.topic(topic, true)?.append(key, payload)
    }

    pub fn read(&self, topic: &str, from: u64, max: usize) -> Result<Vec<TopicRecord>> {
        self.topic(topic, false)?.read(from, max)
    }

    pub fn commit(&self, consumer: &str, topic: &str, offset: u64) -> Result<()> {
        self.topic(topic, false)?.commit(consumer, offset)
    }

    pub fn resume(&self, consumer: &str, topic: &str) -> Result<u64> {
        match self.topic(topic, false) {
            Ok(t) => t.resume(consumer),
            Err(QueueError::UnknownTopic(_)) => Ok(0),
            Err(e) => Err(e),
        }
    }

    pub fn next_offset(&self, topic: &str) -> Result<u64> {
        Ok(self.topic(topic, false)?.next_offset())
    }

    pub fn recover(&self, topic: &str) -> Result<u64> {
        self.topic(topic, false)?.recover()
    }

    pub fn recover_with_report(&self, topic: &str) -> Result<RecoveryReport> {
        self.topic(topic, false)?.recover_with_report()
    }
}
