use std::collections::HashMap;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{BufReader, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::cursor;
use crate::error::{IoContext, QueueError, Result};
use crate::frame::{self, Decoded, BODY_HEADER_LEN, MIN_BODY_LEN, PREFIX_LEN};

/// Largest payload accepted by [`Topic::append`].
pub const MAX_PAYLOAD_BYTES: usize = 16 * 1024 * 1024;

/// Segment size at which the writer rolls over to a new file.
pub const DEFAULT_SEGMENT_BYTES: u64 = 1 << 30;

const LOCK_FILE: &str = ".lock";
const CURSOR_DIR: &str = "cursors";

/// One durable entry of a topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRecord {
    pub topic: String,
    pub offset: u64,
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
    pub checksum: u32,
    pub written_at_ms: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TopicOptions {
    pub max_segment_bytes: u64,
}

impl Default for TopicOptions {
    fn default() -> Self {
        Self {
            max_segment_bytes: DEFAULT_SEGMENT_BYTES,
        }
    }
}

/// What a recovery pass found and did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryReport {
    pub next_offset: u64,
    /// Bytes removed from the end of the final segment.
    pub truncated_bytes: u64,
}

#[derive(Debug, Clone)]
struct Location {
    segment: usize,
    position: u64,
    len: u32,
}

#[derive(Debug)]
struct Segment {
    id: u64,
    path: PathBuf,
    file: Arc<File>,
}

#[derive(Debug, Default)]
struct Index {
    segments: Vec<Segment>,
    locations: Vec<Location>,
    corruption: Option<(u64, PathBuf, u64)>,
}

#[derive(Debug)]
struct Writer {
    file: Option<File>,
    segment_len: u64,
}

/// A single topic directory: numbered segment files plus consumer cursors.
///
/// Appends are serialized through the writer mutex and flushed with
/// `sync_data` before returning. Readers only take the index lock and read
/// with positional I/O, so they never wait on an fsync.
#[derive(Debug)]
pub struct Topic {
    name: String,
    dir: PathBuf,
    options: TopicOptions,
    _lock: File,
    writer: Mutex<Writer>,
    index: RwLock<Index>,
    cursors: Mutex<HashMap<String, Option<u64>>>,
}

fn segment_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("segment-{id}.log"))
}

fn parse_segment_id(name: &str) -> Option<u64> {
    name.strip_prefix("segment-")?.strip_suffix(".log")?.parse().ok()
}

pub(crate) fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).at(dir)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

enum SegmentEnd {
    Clean,
    /// Invalid bytes start at this position and may be cut off.
    Torn(u64),
    Corrupt(u64),
}

struct ScannedSegment {
    locations: Vec<(u64, u32)>,
    len: u64,
    end: SegmentEnd,
}

fn all_zero(reader: &mut impl Read) -> std::io::Result<bool> {
    let mut buf = [0u8; 8192];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            return Ok(true);
        }
        if buf[..n].iter().any(|&b| b != 0) {
            return Ok(false);
        }
    }
}

/// Walks one segment frame by frame. `first_offset` is the offset the first
/// frame must carry.
fn scan_segment(path: &Path, first_offset: u64, is_last: bool) -> Result<ScannedSegment> {
    let file = File::open(path).at(path)?;
    let len = file.metadata().at(path)?.len();
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut locations = Vec::new();
    let mut pos = 0u64;
    let mut expected = first_offset;
    let mut prefix = [0u8; PREFIX_LEN];
    let mut body = Vec::new();

    let classify = |pos: u64, frame_end: Option<u64>| {
        if !is_last {
            return Ok(SegmentEnd::Corrupt(pos));
        }
        // The final frame may be cut short or carry a bad checksum; a
        // zero-filled remainder is the same crash artefact.
        if frame_end.is_none_or(|end| end >= len) {
            return Ok(SegmentEnd::Torn(pos));
        }
        let mut rest = File::open(path).at(path)?;
        std::io::Seek::seek(&mut rest, std::io::SeekFrom::Start(pos)).at(path)?;
        if all_zero(&mut rest).at(path)? {
            Ok(SegmentEnd::Torn(pos))
        } else {
            Ok(SegmentEnd::Corrupt(pos))
        }
    };

    loop {
        if pos == len {
            return Ok(ScannedSegment {
                locations,
                len,
                end: SegmentEnd::Clean,
            });
        }
        let remaining = len - pos;
        if remaining < PREFIX_LEN as u64 {
            let end = classify(pos, None)?;
            return Ok(ScannedSegment { locations, len, end });
        }
        reader.read_exact(&mut prefix).at(path)?;
        let body_len = u32::from_le_bytes(prefix[0..4].try_into().unwrap()) as u64;
        if body_len < MIN_BODY_LEN as u64 {
            let end = classify(pos, Some(pos + PREFIX_LEN as u64))?;
            return Ok(ScannedSegment { locations, len, end });
        }
        let frame_end = pos + PREFIX_LEN as u64 + body_len;
        if frame_end > len {
            let end = classify(pos, None)?;
            return Ok(ScannedSegment { locations, len, end });
        }
        body.resize(body_len as usize, 0);
        reader.read_exact(&mut body).at(path)?;
        let stored = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
        let key_len = u16::from_le_bytes(body[16..18].try_into().unwrap()) as u64;
        let offset = u64::from_le_bytes(body[0..8].try_into().unwrap());
        let valid = crc32fast::hash(&body) == stored
            && BODY_HEADER_LEN as u64 + key_len <= body_len
            && offset == expected;
        if !valid {
            let end = classify(pos, Some(frame_end))?;
            return Ok(ScannedSegment { locations, len, end });
        }
        locations.push((pos, (frame_end - pos) as u32));
        expected += 1;
        pos = frame_end;
    }
}

impl Topic {
    /// Opens (creating if needed) the topic stored in `dir`, taking the
    /// directory's writer lock and running recovery.
    ///
    /// Corruption before the tail does not fail the open: the topic comes up
    /// read-only and [`Topic::recover`] reports the violation.
    pub fn open(dir: impl Into<PathBuf>, name: &str, options: TopicOptions) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(CURSOR_DIR)).at(&dir)?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .at(&lock_path)?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(QueueError::Locked(name.to_string())),
            Err(TryLockError::Error(e)) => return Err(e).at(&lock_path),
        }
        let topic = Topic {
            name: name.to_string(),
            dir,
            options,
            _lock: lock,
            writer: Mutex::new(Writer {
                file: None,
                segment_len: 0,
            }),
            index: RwLock::new(Index::default()),
            cursors: Mutex::new(HashMap::new()),
        };
        match topic.recover() {
            Ok(_) | Err(QueueError::Corruption { .. }) => Ok(topic),
            Err(e) => Err(e),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn next_offset(&self) -> u64 {
        self.index.read().unwrap().locations.len() as u64
    }

    pub fn is_read_only(&self) -> bool {
        self.index.read().unwrap().corruption.is_some()
    }

    fn corruption_error(&self, (offset, segment, position): &(u64, PathBuf, u64)) -> QueueError {
        QueueError::Corruption {
            topic: self.name.clone(),
            offset: *offset,
            segment: segment.clone(),
            position: *position,
        }
    }

    /// Rescans every segment from disk, cutting off at most one torn frame
    /// at the end of the final segment.
    pub fn recover(&self) -> Result<u64> {
        self.recover_with_report().map(|r| r.next_offset)
    }

    pub fn recover_with_report(&self) -> Result<RecoveryReport> {
        let mut writer = self.writer.lock().unwrap();

        let mut ids: Vec<u64> = fs::read_dir(&self.dir)
            .at(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_segment_id(e.file_name().to_str()?))
            .collect();
        ids.sort_unstable();
        if ids.is_empty() {
            let path = segment_path(&self.dir, 0);
            File::create(&path).at(&path)?;
            sync_dir(&self.dir)?;
            ids.push(0);
        }

        let mut index = Index::default();
        let mut truncated_bytes = 0;
        let mut last_len = 0;
        for (i, &id) in ids.iter().enumerate() {
            let path = segment_path(&self.dir, id);
            let is_last = i + 1 == ids.len();
            let first_offset = index.locations.len() as u64;
            let scanned = scan_segment(&path, first_offset, is_last)?;
            let seg_idx = index.segments.len();
            index.locations.extend(scanned.locations.iter().map(|&(position, len)| Location {
                segment: seg_idx,
                position,
                len,
            }));
            let file = File::open(&path).at(&path)?;
            index.segments.push(Segment {
                id,
                path: path.clone(),
                file: Arc::new(file),
            });
            last_len = scanned.len;
            match scanned.end {
                SegmentEnd::Clean => {}
                SegmentEnd::Torn(at) => {
                    let f = OpenOptions::new().write(true).open(&path).at(&path)?;
                    f.set_len(at).at(&path)?;
                    f.sync_all().at(&path)?;
                    truncated_bytes = scanned.len - at;
                    last_len = at;
                    tracing::warn!(topic = %self.name, position = at, bytes = truncated_bytes, "truncated torn tail");
                }
                SegmentEnd::Corrupt(at) => {
                    index.corruption = Some((index.locations.len() as u64, path.clone(), at));
                    break;
                }
            }
        }

        let corruption = index.corruption.clone();
        if corruption.is_none() {
            let last = index.segments.last().expect("at least one segment");
            let file = OpenOptions::new().append(true).open(&last.path).at(&last.path)?;
            writer.file = Some(file);
            writer.segment_len = last_len;
        } else {
            writer.file = None;
        }
        let next_offset = index.locations.len() as u64;
        *self.index.write().unwrap() = index;

        match corruption {
            Some(c) => Err(self.corruption_error(&c)),
            None => Ok(RecoveryReport {
                next_offset,
                truncated_bytes,
            }),
        }
    }

    /// Appends one record and returns its offset once it is on stable storage.
    pub fn append(&self, key: &[u8], payload: &[u8]) -> Result<u64> {
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(QueueError::PayloadTooLarge {
                size: payload.len(),
                limit: MAX_PAYLOAD_BYTES,
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(QueueError::KeyTooLarge(key.len()));
        }
        let mut writer = self.writer.lock().unwrap();
        if writer.file.is_none() {
            return Err(QueueError::ReadOnly(self.name.clone()));
        }

        let offset = self.next_offset();
        let bytes = frame::encode(offset, now_ms(), key, payload);
        let needed = bytes.len() as u64;

        if writer.segment_len > 0 && writer.segment_len + needed > self.options.max_segment_bytes {
            self.roll(&mut writer)?;
        }

        let (seg_idx, path) = {
            let index = self.index.read().unwrap();
            let last = index.segments.len() - 1;
            (last, index.segments[last].path.clone())
        };
        let position = writer.segment_len;
        let file = writer.file.as_mut().unwrap();
        let written = file.write_all(&bytes).and_then(|_| file.sync_data());
        if let Err(e) = written {
            // Leave nothing past the last valid frame.
            let _ = file.set_len(position);
            let _ = file.sync_data();
            return Err(e).at(path);
        }
        writer.segment_len += needed;

        self.index.write().unwrap().locations.push(Location {
            segment: seg_idx,
            position,
            len: needed as u32,
        });
        Ok(offset)
    }

    fn roll(&self, writer: &mut Writer) -> Result<()> {
        let mut index = self.index.write().unwrap();
        let next_id = index.segments.last().map_or(0, |s| s.id + 1);
        let path = segment_path(&self.dir, next_id);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .at(&path)?;
        sync_dir(&self.dir)?;
        let reader = File::open(&path).at(&path)?;
        index.segments.push(Segment {
            id: next_id,
            path,
            file: Arc::new(reader),
        });
        writer.file = Some(file);
        writer.segment_len = 0;
        Ok(())
    }

    /// Reads up to `max` records starting at `from`. Reading at or past the
    /// end yields an empty list.
    pub fn read(&self, from: u64, max: usize) -> Result<Vec<TopicRecord>> {
        let wanted: Vec<(Location, Arc<File>, PathBuf)> = {
            let index = self.index.read().unwrap();
            let end = index.locations.len() as u64;
            if from >= end {
                return Ok(Vec::new());
            }
            let stop = end.min(from.saturating_add(max as u64));
            (from..stop)
                .map(|o| {
                    let loc = index.locations[o as usize].clone();
                    let seg = &index.segments[loc.segment];
                    (loc, seg.file.clone(), seg.path.clone())
                })
                .collect()
        };

        let mut out = Vec::with_capacity(wanted.len());
        let mut buf = Vec::new();
        for (i, (loc, file, path)) in wanted.into_iter().enumerate() {
            let expected = from + i as u64;
            buf.resize(loc.len as usize, 0);
            file.read_exact_at(&mut buf, loc.position).at(&path)?;
            match frame::decode(&buf) {
                Decoded::Valid { frame, .. } if frame.offset == expected => out.push(TopicRecord {
                    topic: self.name.clone(),
                    offset: frame.offset,
                    key: frame.key.to_vec(),
                    payload: frame.payload.to_vec(),
                    checksum: frame.checksum,
                    written_at_ms: frame.timestamp_ms,
                }),
                _ => {
                    let info = (expected, path, loc.position);
                    let err = self.corruption_error(&info);
                    self.index.write().unwrap().corruption = Some(info);
                    self.writer.lock().unwrap().file = None;
                    return Err(err);
                }
            }
        }
        Ok(out)
    }

    /// Durably records that `consumer` has processed everything up to and
    /// including `offset`.
    pub fn commit(&self, consumer: &str, offset: u64) -> Result<()> {
        cursor::validate_consumer_id(consumer)?;
        let next = self.next_offset();
        if offset >= next {
            return Err(QueueError::OffsetBeyondEnd {
                topic: self.name.clone(),
                offset,
                next,
            });
        }
        let mut cursors = self.cursors.lock().unwrap();
        let current = match cursors.get(consumer) {
            Some(c) => *c,
            None => cursor::load(&self.cursor_dir(), consumer)?,
        };
        if let Some(committed) = current {
            if offset < committed {
                return Err(QueueError::CursorRegression {
                    consumer: consumer.to_string(),
                    topic: self.name.clone(),
                    committed,
                    requested: offset,
                });
            }
        }
        cursor::store(&self.cursor_dir(), consumer, offset)?;
        cursors.insert(consumer.to_string(), Some(offset));
        Ok(())
    }

    pub fn committed(&self, consumer: &str) -> Result<Option<u64>> {
        cursor::validate_consumer_id(consumer)?;
        let mut cursors = self.cursors.lock().unwrap();
        if let Some(c) = cursors.get(consumer) {
            return Ok(*c);
        }
        let loaded = cursor::load(&self.cursor_dir(), consumer)?;
        if let Some(c) = loaded {
            let next = self.next_offset();
            if c >= next {
                return Err(QueueError::OffsetBeyondEnd {
                    topic: self.name.clone(),
                    offset: c,
                    next,
                });
            }
        }
        cursors.insert(consumer.to_string(), loaded);
        Ok(loaded)
    }

    /// Next offset `consumer` should read.
    pub fn resume(&self, consumer: &str) -> Result<u64> {
        Ok(self.committed(consumer)?.map_or(0, |c| c + 1))
    }

    fn cursor_dir(&self) -> PathBuf {
        self.dir.join(CURSOR_DIR)
    }

    /// Segment files currently backing the topic, oldest first.
    pub fn segment_paths(&self) -> Vec<PathBuf> {
        self.index
            .read()
            .unwrap()
            .segments
            .iter()
            .map(|s| s.path.clone())
            .collect()
    }
}
