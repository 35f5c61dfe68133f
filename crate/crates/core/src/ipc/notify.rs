use std::time::Duration;

use bytes::Bytes;
use uuid::Uuid;

use super::{IpcResult, ResourceHandle};
use crate::store::{StoreError, StoreExt};

/// Registry of per-waiter notification lists.
///
/// A waiter registers a fresh list key and parks on it. A notifier pops
/// registrations oldest first and pushes one token to each. A waiter whose
/// deadline passes races the notifier for a claim field in a hash; the
/// `hash_set` that creates the field wins, so each registration is either
/// woken or timed out, never both.
pub(super) struct NotificationSet<'a> {
    handle: &'a ResourceHandle,
}

const TOKEN: &[u8] = b"n";

impl<'a> NotificationSet<'a> {
    pub(super) fn new(handle: &'a ResourceHandle) -> Self {
        NotificationSet { handle }
    }

    fn registry(&self) -> String {
        self.handle.key("waiters")
    }

    fn claims(&self) -> String {
        self.handle.key("claims")
    }

    fn list(&self, wid: &str) -> String {
        self.handle.key(&format!("notify/{wid}"))
    }

    pub(super) fn register(&self) -> IpcResult<String> {
        let wid = Uuid::new_v4().simple().to_string();
        self.handle.push_armed(&self.registry(), vec![Bytes::from(wid.clone())])?;
        Ok(wid)
    }

    /// Park until notified or until `timeout` elapses.
    pub(super) fn wait(&self, wid: &str, timeout: Option<Duration>) -> IpcResult<()> {
        let store = self.handle.store();
        match store.pop_head(&self.list(wid), timeout) {
            Ok(_) => {
                store.hash_del(&self.claims(), wid)?;
                Ok(())
            }
            Err(StoreError::Timeout) => {
                if self.cancel(wid)? {
                    Err(self.handle.timeout_or_dropped())
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Withdraw a registration. Returns false when a notifier got there
    /// first, in which case its token has been consumed.
    pub(super) fn cancel(&self, wid: &str) -> IpcResult<bool> {
        let store = self.handle.store();
        if store.hash_set(&self.claims(), wid, "t")? {
            store.key_expire(&self.claims(), self.handle.ttl())?;
            return Ok(true);
        }
        store.pop_head(&self.list(wid), None)?;
        store.hash_del(&self.claims(), wid)?;
        Ok(false)
    }

    /// Wake up to `n` of the oldest registrations.
    pub(super) fn notify(&self, n: usize) -> IpcResult<usize> {
        let store = self.handle.store();
        let mut woken = 0;
        while woken < n {
            let Some(wid) = store.try_pop_head(&self.registry())? else { break };
            let wid = String::from_utf8_lossy(&wid).into_owned();
            if store.hash_set(&self.claims(), &wid, "n")? {
                store.key_expire(&self.claims(), self.handle.ttl())?;
                self.handle.push_armed(&self.list(&wid), vec![Bytes::from_static(TOKEN)])?;
                woken += 1;
            } else {
                // The waiter already timed out; drop its claim.
                store.hash_del(&self.claims(), &wid)?;
            }
        }
        Ok(woken)
    }

    pub(super) fn registered(&self) -> IpcResult<i64> {
        Ok(self.handle.store().list_len(&self.registry())?)
    }
}

