use std::collections::BTreeSet;
use std::io;

use bytes::Bytes;

use super::{normalize_path, BlobRef, FsError, SharedBlobStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    Read,
    Write,
    Append,
}

/// Path-oriented view over a blob store bucket.
#[derive(Clone)]
pub struct ObjectFs {
    blobs: SharedBlobStore,
}

impl ObjectFs {
    pub fn new(blobs: SharedBlobStore) -> Self {
        ObjectFs { blobs }
    }

    pub fn blobs(&self) -> &SharedBlobStore {
        &self.blobs
    }

    pub fn open(&self, path: &str, mode: OpenMode) -> Result<FileLike, FsError> {
        let path = normalize_path(path)?;
        let (snapshot, buffer) = match mode {
            OpenMode::Read => {
                let blob = self.blobs.get(&path)?.ok_or_else(|| FsError::NotFound(path.clone()))?;
                (blob.data, Vec::new())
            }
            OpenMode::Write => (Bytes::new(), Vec::new()),
            OpenMode::Append => {
                let existing = self.blobs.get(&path)?.map(|b| b.data.to_vec()).unwrap_or_default();
                (Bytes::new(), existing)
            }
        };
        Ok(FileLike { blobs: self.blobs.clone(), path, mode, snapshot, pos: 0, buffer, closed: false })
    }

    pub fn exists(&self, path: &str) -> Result<bool, FsError> {
        match normalize_path(path) {
            Ok(p) => self.blobs.exists(&p),
            Err(_) => Ok(false),
        }
    }

    /// Immediate children of a directory prefix. Sub-directories are
    /// reported once, without a trailing slash.
    pub fn listdir(&self, prefix: &str) -> Result<Vec<String>, FsError> {
        let dir = match normalize_path(prefix) {
            Ok(p) => format!("{p}/"),
            Err(_) if prefix.trim_matches('/').is_empty() => String::new(),
            Err(e) => return Err(e),
        };
        let names: BTreeSet<String> = self
            .blobs
            .list(&dir)?
            .into_iter()
            .filter_map(|k| k[dir.len()..].split('/').next().map(str::to_owned))
            .filter(|n| !n.is_empty())
            .collect();
        Ok(names.into_iter().collect())
    }

    pub fn remove(&self, path: &str) -> Result<bool, FsError> {
        self.blobs.delete(&normalize_path(path)?)
    }

    /// Read a whole object.
    pub fn read_all(&self, path: &str) -> Result<Bytes, FsError> {
        let mut f = self.open(path, OpenMode::Read)?;
        f.read_bytes(None)
    }

    /// Write a whole object in one commit.
    pub fn write_all(&self, path: &str, data: &[u8]) -> Result<BlobRef, FsError> {
        let mut f = self.open(path, OpenMode::Write)?;
        f.write_bytes(data)?;
        f.close()
    }
}

/// An open object. Reads come from the snapshot taken at open time;
/// writes stay in a local buffer until [`close`](FileLike::close).
pub struct FileLike {
    blobs: SharedBlobStore,
    path: String,
    mode: OpenMode,
    snapshot: Bytes,
    pos: usize,
    buffer: Vec<u8>,
    closed: bool,
}

impl FileLike {
    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn mode(&self) -> OpenMode {
        self.mode
    }

    /// Read up to `n` bytes, or everything left with `None`.
    pub fn read_bytes(&mut self, n: Option<usize>) -> Result<Bytes, FsError> {
        if self.closed {
            return Err(FsError::Closed);
        }
        if self.mode != OpenMode::Read {
            return Err(FsError::WrongMode("reading"));
        }
        let remaining = self.snapshot.len() - self.pos;
        let take = n.map_or(remaining, |n| n.min(remaining));
        let out = self.snapshot.slice(self.pos..self.pos + take);
        self.pos += take;
        Ok(out)
    }

    pub fn write_bytes(&mut self, data: &[u8]) -> Result<usize, FsError> {
        if self.closed {
            return Err(FsError::Closed);
        }
        if self.mode == OpenMode::Read {
            return Err(FsError::WrongMode("writing"));
        }
        self.buffer.extend_from_slice(data);
        Ok(data.len())
    }

    /// Commit buffered content as the new object. On failure the buffer is
    /// kept and `close` may be retried.
    pub fn close(&mut self) -> Result<BlobRef, FsError> {
        if self.closed {
            return Err(FsError::Closed);
        }
        if self.mode == OpenMode::Read {
            self.closed = true;
            return Ok(BlobRef {
                bucket: self.blobs.bucket().to_owned(),
                key: self.path.clone(),
                size: self.snapshot.len() as u64,
                etag: super::etag_of(&self.snapshot),
            });
        }
        let data = Bytes::copy_from_slice(&self.buffer);
        let r = self.blobs.put(&self.path, data).map_err(|e| match e {
            FsError::CommitFailed { .. } => e,
            other => FsError::CommitFailed { path: self.path.clone(), reason: other.to_string() },
        })?;
        self.buffer = Vec::new();
        self.closed = true;
        Ok(r)
    }
}

impl Drop for FileLike {
    fn drop(&mut self) {
        if !self.closed && self.mode != OpenMode::Read {
            if let Err(e) = self.close() {
                log::warn!("dropping unclosed file {}: {e}", self.path);
            }
        }
    }
}

fn to_io(e: FsError) -> io::Error {
    io::Error::other(e)
}

impl io::Read for FileLike {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let chunk = self.read_bytes(Some(buf.len())).map_err(to_io)?;
        buf[..chunk.len()].copy_from_slice(&chunk);
        Ok(chunk.len())
    }
}

impl io::Write for FileLike {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.write_bytes(buf).map_err(to_io)
    }

    /// Flushing does not commit; objects become visible on close only.
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
