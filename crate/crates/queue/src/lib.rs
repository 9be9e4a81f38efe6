//! Crash-durable, append-only, multi-topic message log.
//!
//! Each topic is a directory of segment files holding length-prefixed,
//! CRC-checked frames with dense offsets starting at zero, plus one cursor
//! file per consumer. Every append is flushed before it is acknowledged, and
//! reopening a topic cuts off at most one torn frame at the end of the final
//! segment. Damage anywhere else leaves the topic read-only.
//!
//! Delivery to consumers is at-least-once: a consumer commits its cursor
//! after processing, so a crash between the two replays the record.

pub mod cursor;
mod error;
pub mod frame;
mod log;
mod topic;

pub use error::{QueueError, Result};
pub use log::{validate_topic_name, QueueLog};
pub use topic::{
    RecoveryReport, Topic, TopicOptions, TopicRecord, DEFAULT_SEGMENT_BYTES, MAX_PAYLOAD_BYTES,
};
