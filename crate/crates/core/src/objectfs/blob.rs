use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use bytes::Bytes;
use sha2::{Digest, Sha256};

use super::FsError;
use crate::store::{Command, SharedStore, StoreExt, Throttle};

/// Hex SHA-256 of the content.
pub fn etag_of(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub data: Bytes,
    pub etag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobRef {
    pub bucket: String,
    pub key: String,
    pub size: u64,
    pub etag: String,
}

/// Immutable object storage keyed by normalized path.
pub trait BlobStore: Send + Sync {
    fn bucket(&self) -> &str;
    fn get(&self, key: &str) -> Result<Option<Blob>, FsError>;
    /// Replace the object at `key` atomically.
    fn put(&self, key: &str, data: Bytes) -> Result<BlobRef, FsError>;
    fn delete(&self, key: &str) -> Result<bool, FsError>;
    fn exists(&self, key: &str) -> Result<bool, FsError>;
    /// Full keys starting with `prefix`, sorted.
    fn list(&self, prefix: &str) -> Result<Vec<String>, FsError>;
}

pub type SharedBlobStore = Arc<dyn BlobStore>;

/// In-process blob store with optional bandwidth caps.
pub struct MemoryBlobStore {
    bucket: String,
    objects: RwLock<BTreeMap<String, Arc<Blob>>>,
    throttle: Throttle,
}

impl MemoryBlobStore {
    pub fn new(bucket: impl Into<String>) -> Self {
        Self::with_throttle(bucket, Throttle::unlimited())
    }

    pub fn with_throttle(bucket: impl Into<String>, throttle: Throttle) -> Self {
        MemoryBlobStore { bucket: bucket.into(), objects: RwLock::new(BTreeMap::new()), throttle }
    }
}

impl BlobStore for MemoryBlobStore {
    fn bucket(&self) -> &str {
        &self.bucket
    }

    fn get(&self, key: &str) -> Result<Option<Blob>, FsError> {
        let blob = self.objects.read().unwrap().get(key).cloned();
        if let Some(b) = &blob {
            self.throttle.transfer(b.data.len());
        }
        Ok(blob.map(|b| (*b).clone()))
    }

    fn put(&self, key: &str, data: Bytes) -> Result<BlobRef, FsError> {
        self.throttle.transfer(data.len());
        let etag = etag_of(&data);
        let r = BlobRef { bucket: self.bucket.clone(), key: key.to_owned(), size: data.len() as u64, etag: etag.clone() };
        self.objects.write().unwrap().insert(key.to_owned(), Arc::new(Blob { data, etag }));
        Ok(r)
    }

    fn delete(&self, key: &str) -> Result<bool, FsError> {
        Ok(self.objects.write().unwrap().remove(key).is_some())
    }

    fn exists(&self, key: &str) -> Result<bool, FsError> {
        Ok(self.objects.read().unwrap().contains_key(key))
    }

    fn list(&self, prefix: &str) -> Result<Vec<String>, FsError> {
        let objects = self.objects.read().unwrap();
        Ok(objects.range(prefix.to_owned()..).take_while(|(k, _)| k.starts_with(prefix)).map(|(k, _)| k.clone()).collect())
    }
}

const ETAG_LEN: usize = 64;

/// Blob store living inside a [`Store`](crate::store::Store), reachable by
/// every process that can reach the store. Each object is one hash field
/// holding `etag || data`, so a replace is a single atomic command.
pub struct StoreBlobStore {
    bucket: String,
    store: SharedStore,
    throttle: Throttle,
}

impl StoreBlobStore {
    pub fn new(store: SharedStore, bucket: impl Into<String>) -> Self {
        Self::with_throttle(store, bucket, Throttle::unlimited())
    }

    pub fn with_throttle(store: SharedStore, bucket: impl Into<String>, throttle: Throttle) -> Self {
        StoreBlobStore { bucket: bucket.into(), store, throttle }
    }

    fn object_key(&self, key: &str) -> String {
        format!("blob/{}/o/{}", self.bucket, key)
    }

    fn index_key(&self) -> String {
        format!("blob/{}/index", self.bucket)
    }
}

impl BlobStore for StoreBlobStore {
    fn bucket(&self) -> &str {
        &self.bucket
    }

    fn get(&self, key: &str) -> Result<Option<Blob>, FsError> {
        let Some(raw) = self.store.hash_get(&self.object_key(key), "obj")? else { return Ok(None) };
        if raw.len() < ETAG_LEN {
            return Err(FsError::Corrupt(key.to_owned()));
        }
        self.throttle.transfer(raw.len() - ETAG_LEN);
        let etag = String::from_utf8(raw[..ETAG_LEN].to_vec()).map_err(|_| FsError::Corrupt(key.to_owned()))?;
        Ok(Some(Blob { data: raw.slice(ETAG_LEN..), etag }))
    }

    fn put(&self, key: &str, data: Bytes) -> Result<BlobRef, FsError> {
        self.throttle.transfer(data.len());
        let etag = etag_of(&data);
        let mut raw = Vec::with_capacity(ETAG_LEN + data.len());
        raw.extend_from_slice(etag.as_bytes());
        raw.extend_from_slice(&data);
        let size = data.len() as u64;
        let results = self.store.pipeline(vec![
            Command::HashSet { key: self.object_key(key), field: "obj".into(), value: raw.into() },
            Command::HashSet { key: self.index_key(), field: key.to_owned(), value: size.to_string().into() },
        ]);
        for r in results {
            r.map_err(|e| FsError::CommitFailed { path: key.to_owned(), reason: e.to_string() })?;
        }
        Ok(BlobRef { bucket: self.bucket.clone(), key: key.to_owned(), size, etag })
    }

    fn delete(&self, key: &str) -> Result<bool, FsError> {
        let existed = self.store.key_delete(&self.object_key(key))?;
        self.store.hash_del(&self.index_key(), key)?;
        Ok(existed)
    }

    fn exists(&self, key: &str) -> Result<bool, FsError> {
        Ok(self.store.key_exists(&self.object_key(key))?)
    }

    fn list(&self, prefix: &str) -> Result<Vec<String>, FsError> {
        let index = self.store.hash_get_all(&self.index_key())?;
        Ok(index.into_keys().filter(|k| k.starts_with(prefix)).collect())
    }
}
