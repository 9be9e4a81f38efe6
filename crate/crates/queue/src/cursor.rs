//! Consumer cursor files: 8-byte little-endian committed offset followed by
//! the CRC32 of those 8 bytes.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{IoContext, QueueError, Result};
use crate::topic::sync_dir;

pub(crate) fn validate_consumer_id(id: &str) -> Result<()> {
    let ok = (1..=64).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(QueueError::InvalidConsumerId(id.to_string()))
    }
}

fn cursor_path(dir: &Path, consumer: &str) -> PathBuf {
    dir.join(format!("{consumer}.cur"))
}

pub fn encode(offset: u64) -> [u8; 12] {
    let mut out = [0u8; 12];
    out[..8].copy_from_slice(&offset.to_le_bytes());
    let crc = crc32fast::hash(&out[..8]);
    out[8..].copy_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn load(dir: &Path, consumer: &str) -> Result<Option<u64>> {
    let path = cursor_path(dir, consumer);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e).at(&path),
    };
    if bytes.len() != 12 {
        return Err(QueueError::CorruptCursor(path));
    }
    let crc = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if crc32fast::hash(&bytes[..8]) != crc {
        return Err(QueueError::CorruptCursor(path));
    }
    Ok(Some(u64::from_le_bytes(bytes[..8].try_into().unwrap())))
}

/// Write-to-temp, fsync, rename, fsync directory.
pub(crate) fn store(dir: &Path, consumer: &str, offset: u64) -> Result<()> {
    let path = cursor_path(dir, consumer);
    let tmp = dir.join(format!("{consumer}.cur.tmp"));
    let mut f = File::create(&tmp).at(&tmp)?;
    f.write_all(&encode(offset)).at(&tmp)?;
    f.sync_all().at(&tmp)?;
    fs::rename(&tmp, &path).at(&path)?;
    sync_dir(dir)
}
