//! File-like access to an immutable blob store.
//!
//! Objects are whole-object immutable: reads fetch a snapshot when the file
//! is opened, writes are buffered locally and committed as one new object
//! version on [`FileLike::close`]. Nothing written is visible to other
//! readers before that commit.

mod blob;
mod file;

pub use blob::{etag_of, Blob, BlobRef, BlobStore, MemoryBlobStore, SharedBlobStore, StoreBlobStore};
pub use file::{FileLike, ObjectFs, OpenMode};

use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FsError {
    #[error("no such object: {0}")]
    NotFound(String),
    #[error("invalid path: {0:?}")]
    InvalidPath(String),
    #[error("commit of {path} failed: {reason}")]
    CommitFailed { path: String, reason: String },
    #[error("file not opened for {0}")]
    WrongMode(&'static str),
    #[error("file already closed")]
    Closed,
    #[error("stored object {0} is corrupt")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Normalize a slash-separated path: drops empty and `.` components and
/// rejects `..`.
pub fn normalize_path(path: &str) -> Result<String, FsError> {
    let mut parts = Vec::new();
    for comp in path.split('/') {
        match comp {
            "" | "." => {}
            ".." => return Err(FsError::InvalidPath(path.to_owned())),
            c => parts.push(c),
        }
    }
    if parts.is_empty() {
        return Err(FsError::InvalidPath(path.to_owned()));
    }
    Ok(parts.join("/"))
}
