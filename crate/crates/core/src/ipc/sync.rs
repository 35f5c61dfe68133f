use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use bytes::Bytes;

use super::notify::NotificationSet;
use super::{expect_spec_count, Ipc, IpcError, IpcResult, KindSpec, Resource, ResourceHandle, ResourceKind};
use crate::store::{Command, StoreError, StoreExt};

const TOKEN: &[u8] = b"t";

fn tokens(handle: &ResourceHandle, n: u32) -> Vec<Command> {
    vec![Command::PushTail { key: handle.key("tokens"), values: vec![Bytes::from_static(TOKEN); n as usize] }]
}

/// Counting semaphore: a list holding one token per free unit.
pub struct Semaphore {
    handle: ResourceHandle,
}

impl Semaphore {
    pub(super) fn create(ipc: &Ipc, n: u32) -> IpcResult<Self> {
        if n == 0 {
            return Err(IpcError::InvalidArgument("semaphore needs at least one token".into()));
        }
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::Semaphore, KindSpec::Count(n), ipc.ttl(), 1, |h| {
                tokens(h, n)
            })?;
        Ok(Semaphore { handle })
    }

    pub fn acquire(&self, timeout: Option<Duration>) -> IpcResult<()> {
        acquire_token(&self.handle, timeout)
    }

    pub fn release(&self) -> IpcResult<()> {
        release_token(&self.handle)
    }

    pub fn capacity(&self) -> u32 {
        expect_spec_count(&self.handle).unwrap_or(0)
    }
}

fn acquire_token(handle: &ResourceHandle, timeout: Option<Duration>) -> IpcResult<()> {
    handle.ensure_live()?;
    match handle.store().pop_head(&handle.key("tokens"), timeout) {
        Ok(_) => Ok(()),
        Err(StoreError::Timeout) => Err(handle.timeout_or_dropped()),
        Err(e) => Err(e.into()),
    }
}

fn release_token(handle: &ResourceHandle) -> IpcResult<()> {
    handle.ensure_live()?;
    handle.push_armed(&handle.key("tokens"), vec![Bytes::from_static(TOKEN)])?;
    Ok(())
}

impl Resource for Semaphore {
    const KIND: ResourceKind = ResourceKind::Semaphore;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        expect_spec_count(&handle)?;
        Ok(Semaphore { handle })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

/// A one-token semaphore. Ownership is tracked per handle, so releasing a
/// lock this handle does not hold is an error rather than a second token.
pub struct Lock {
    handle: ResourceHandle,
    held: AtomicBool,
}

impl Lock {
    pub(super) fn create(ipc: &Ipc) -> IpcResult<Self> {
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::Lock, KindSpec::Count(1), ipc.ttl(), 1, |h| {
                tokens(h, 1)
            })?;
        Ok(Lock { handle, held: AtomicBool::new(false) })
    }

    pub fn acquire(&self, timeout: Option<Duration>) -> IpcResult<()> {
        acquire_token(&self.handle, timeout)?;
        self.held.store(true, Ordering::SeqCst);
        Ok(())
    }

    pub fn release(&self) -> IpcResult<()> {
        if !self.held.swap(false, Ordering::SeqCst) {
            return Err(IpcError::LockNotHeld);
        }
        release_token(&self.handle)
    }

    pub fn is_held(&self) -> bool {
        self.held.load(Ordering::SeqCst)
    }

    /// Acquire and release again when the guard drops.
    pub fn guard(&self, timeout: Option<Duration>) -> IpcResult<LockGuard<'_>> {
        self.acquire(timeout)?;
        Ok(LockGuard { lock: self })
    }
}

impl Resource for Lock {
    const KIND: ResourceKind = ResourceKind::Lock;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(Lock { handle, held: AtomicBool::new(false) })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

pub struct LockGuard<'a> {
    lock: &'a Lock,
}

impl Drop for LockGuard<'_> {
    fn drop(&mut self) {
        if let Err(e) = self.lock.release() {
            log::warn!("lock release failed: {e}");
        }
    }
}

/// Condition variable following the monitor contract: `wait` releases the
/// lock while parked and holds it again on return.
pub struct Condition {
    handle: ResourceHandle,
}

impl Condition {
    pub(super) fn create(ipc: &Ipc) -> IpcResult<Self> {
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::Condition, KindSpec::None, ipc.ttl(), 1, |_| {
                vec![]
            })?;
        Ok(Condition { handle })
    }

    pub fn wait(&self, lock: &Lock, timeout: Option<Duration>) -> IpcResult<()> {
        self.handle.ensure_live()?;
        if !lock.is_held() {
            return Err(IpcError::LockNotHeld);
        }
        let set = NotificationSet::new(&self.handle);
        let wid = set.register()?;
        lock.release()?;
        let outcome = set.wait(&wid, timeout);
        lock.acquire(None)?;
        outcome
    }

    /// Wake the `n` oldest waiters; returns how many were woken.
    pub fn notify(&self, n: usize) -> IpcResult<usize> {
        self.handle.ensure_live()?;
        NotificationSet::new(&self.handle).notify(n)
    }

    pub fn notify_all(&self) -> IpcResult<usize> {
        self.notify(usize::MAX)
    }

    /// Registrations not yet woken or withdrawn.
    pub fn waiting(&self) -> IpcResult<i64> {
        NotificationSet::new(&self.handle).registered()
    }
}

impl Resource for Condition {
    const KIND: ResourceKind = ResourceKind::Condition;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(Condition { handle })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BarrierWait {
    /// Arrival position within the generation, 0-based.
    pub index: u32,
    pub generation: u64,
}

/// Reusable barrier. Arrival numbers come from one counter; arrival `k`
/// belongs to generation `k / n`, and the last arrival of a generation
/// opens that generation's gate list for the others.
pub struct Barrier {
    handle: ResourceHandle,
    parties: u32,
}

const GO: &[u8] = b"go";
const BROKEN: &[u8] = b"broken";

impl Barrier {
    pub(super) fn create(ipc: &Ipc, parties: u32) -> IpcResult<Self> {
        if parties == 0 {
            return Err(IpcError::InvalidArgument("barrier needs at least one party".into()));
        }
        let handle = ResourceHandle::create(
            ipc.store().clone(),
            ResourceKind::Barrier,
            KindSpec::Count(parties),
            ipc.ttl(),
            1,
            |_| vec![],
        )?;
        Ok(Barrier { handle, parties })
    }

    pub fn parties(&self) -> u32 {
        self.parties
    }

    fn gate(&self, generation: u64) -> String {
        self.handle.key(&format!("gate/{generation}"))
    }

    pub fn is_broken(&self) -> IpcResult<bool> {
        Ok(self.handle.store().hash_get(&self.handle.key("state"), "broken")?.is_some())
    }

    pub fn wait(&self, timeout: Option<Duration>) -> IpcResult<BarrierWait> {
        self.handle.ensure_live()?;
        if self.is_broken()? {
            return Err(IpcError::BrokenBarrier);
        }
        let store = self.handle.store();
        let k = store.counter_add(&self.handle.key("arrivals"), 1)? - 1;
        let n = self.parties as i64;
        let generation = (k / n) as u64;
        let index = (k % n) as u32;
        let gate = self.gate(generation);
        if index + 1 == self.parties {
            if self.parties > 1 {
                self.handle.push_armed(&gate, vec![Bytes::from_static(GO); self.parties as usize - 1])?;
            }
            return Ok(BarrierWait { index, generation });
        }
        match store.pop_head(&gate, timeout) {
            Ok(t) if t == GO => Ok(BarrierWait { index, generation }),
            Ok(_) => Err(IpcError::BrokenBarrier),
            Err(StoreError::Timeout) => {
                self.break_generation(generation)?;
                Err(IpcError::BrokenBarrier)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Mark the barrier broken and release everyone parked on `generation`.
    fn break_generation(&self, generation: u64) -> IpcResult<()> {
        let state = self.handle.key("state");
        self.handle.store().hash_set(&state, "broken", generation.to_string())?;
        self.handle.store().key_expire(&state, self.handle.ttl())?;
        let parked = self.parties as usize;
        self.handle.push_armed(&self.gate(generation), vec![Bytes::from_static(BROKEN); parked])?;
        Ok(())
    }
}

impl Resource for Barrier {
    const KIND: ResourceKind = ResourceKind::Barrier;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        let parties = expect_spec_count(&handle)?;
        Ok(Barrier { handle, parties })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

/// Persistent flag with waiters released when it is set.
pub struct Event {
    handle: ResourceHandle,
}

impl Event {
    pub(super) fn create(ipc: &Ipc) -> IpcResult<Self> {
        let handle =
            ResourceHandle::create(ipc.store().clone(), ResourceKind::Event, KindSpec::None, ipc.ttl(), 1, |_| vec![])?;
        Ok(Event { handle })
    }

    fn state(&self) -> String {
        self.handle.key("state")
    }

    pub fn set(&self) -> IpcResult<()> {
        self.handle.ensure_live()?;
        self.handle.store().hash_set(&self.state(), "flag", "1")?;
        self.handle.store().key_expire(&self.state(), self.handle.ttl())?;
        NotificationSet::new(&self.handle).notify(usize::MAX)?;
        Ok(())
    }

    pub fn clear(&self) -> IpcResult<()> {
        self.handle.ensure_live()?;
        self.handle.store().hash_del(&self.state(), "flag")?;
        Ok(())
    }

    pub fn is_set(&self) -> IpcResult<bool> {
        self.handle.ensure_live()?;
        Ok(self.handle.store().hash_get(&self.state(), "flag")?.is_some())
    }

    pub fn wait(&self, timeout: Option<Duration>) -> IpcResult<()> {
        if self.is_set()? {
            return Ok(());
        }
        let set = NotificationSet::new(&self.handle);
        let wid = set.register()?;
        // A set between the check and the registration would be missed.
        if self.is_set()? {
            set.cancel(&wid)?;
            return Ok(());
        }
        set.wait(&wid, timeout)
    }
}

impl Resource for Event {
    const KIND: ResourceKind = ResourceKind::Event;

    fn from_handle(handle: ResourceHandle, _: &Ipc) -> IpcResult<Self> {
        Ok(Event { handle })
    }

    fn handle(&self) -> &ResourceHandle {
        &self.handle
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;
    use std::thread;
    use std::time::Instant;

    use super::*;
    use crate::ipc::{Scalar, Value};
    use crate::store::Engine;

    const SHORT: Option<Duration> = Some(Duration::from_millis(10));

    fn ipc() -> Ipc {
        Ipc::new(Arc::new(Engine::new()))
    }

    #[test]
    fn semaphore_counts_tokens() {
        let s = ipc().semaphore(3).unwrap();
        for _ in 0..3 {
            s.acquire(SHORT).unwrap();
        }
        assert_eq!(s.acquire(SHORT), Err(IpcError::Timeout));
        s.release().unwrap();
        s.acquire(SHORT).unwrap();
    }

    #[test]
    fn zero_semaphore_rejected() {
        assert!(matches!(ipc().semaphore(0), Err(IpcError::InvalidArgument(_))));
    }

    #[test]
    fn lock_excludes_and_tracks_holder() {
        let ipc = ipc();
        let l = ipc.lock().unwrap();
        assert_eq!(l.release(), Err(IpcError::LockNotHeld));
        l.acquire(None).unwrap();
        let other: Lock = ipc.adopt(&l.share().unwrap()).unwrap();
        assert_eq!(other.acquire(SHORT), Err(IpcError::Timeout));
        assert_eq!(other.release(), Err(IpcError::LockNotHeld));
        l.release().unwrap();
        other.acquire(SHORT).unwrap();
    }

    #[test]
    fn lock_guarded_increments_do_not_lose_updates() {
        let ipc = ipc();
        let lock = ipc.lock().unwrap();
        let value = ipc.value(Scalar::Int64(0)).unwrap();
        let workers: Vec<_> = (0..4)
            .map(|_| {
                let (lb, vb) = (lock.share().unwrap(), value.share().unwrap());
                let ipc = ipc.clone();
                thread::spawn(move || {
                    let l: Lock = ipc.adopt(&lb).unwrap();
                    let v: Value = ipc.adopt(&vb).unwrap();
                    for _ in 0..200 {
                        let _g = l.guard(None).unwrap();
                        let cur = v.get().unwrap().as_i64().unwrap();
                        v.set(Scalar::Int64(cur + 1)).unwrap();
                    }
                })
            })
            .collect();
        workers.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(value.get().unwrap(), Scalar::Int64(800));
    }

    #[test]
    fn condition_notify_wakes_holding_lock() {
        let ipc = ipc();
        let lock = ipc.lock().unwrap();
        let cond = ipc.condition().unwrap();
        assert_eq!(cond.notify(1).unwrap(), 0);
        assert!(ipc.store().key_scan(&cond.handle().key("notify")).unwrap().is_empty());
        let (lb, cb) = (lock.share().unwrap(), cond.share().unwrap());
        let ipc2 = ipc.clone();
        let waiter = thread::spawn(move || {
            let l: Lock = ipc2.adopt(&lb).unwrap();
            let c: Condition = ipc2.adopt(&cb).unwrap();
            l.acquire(None).unwrap();
            c.wait(&l, None).unwrap();
            assert!(l.is_held());
            l.release().unwrap();
        });
        while cond.waiting().unwrap() == 0 {
            thread::sleep(Duration::from_millis(1));
        }
        lock.acquire(None).unwrap();
        assert_eq!(cond.notify(1).unwrap(), 1);
        lock.release().unwrap();
        waiter.join().unwrap();
    }

    #[test]
    fn condition_wait_requires_lock_and_times_out() {
        let ipc = ipc();
        let lock = ipc.lock().unwrap();
        let cond = ipc.condition().unwrap();
        assert_eq!(cond.wait(&lock, SHORT), Err(IpcError::LockNotHeld));
        lock.acquire(None).unwrap();
        assert_eq!(cond.wait(&lock, SHORT), Err(IpcError::Timeout));
        assert!(lock.is_held());
        // The timed-out registration must not count as a wake.
        assert_eq!(cond.notify_all().unwrap(), 0);
    }

    #[test]
    fn notify_all_wakes_every_waiter_once() {
        let ipc = ipc();
        let lock = ipc.lock().unwrap();
        let cond = ipc.condition().unwrap();
        let woke = ipc.store().clone();
        let handles: Vec<_> = (0..5)
            .map(|_| {
                let (lb, cb) = (lock.share().unwrap(), cond.share().unwrap());
                let ipc = ipc.clone();
                let woke = woke.clone();
                thread::spawn(move || {
                    let l: Lock = ipc.adopt(&lb).unwrap();
                    let c: Condition = ipc.adopt(&cb).unwrap();
                    l.acquire(None).unwrap();
                    c.wait(&l, None).unwrap();
                    woke.counter_add("woke", 1).unwrap();
                    l.release().unwrap();
                })
            })
            .collect();
        while cond.waiting().unwrap() < 5 {
            thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(cond.notify_all().unwrap(), 5);
        handles.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(woke.counter_add("woke", 0).unwrap(), 5);
        assert_eq!(cond.waiting().unwrap(), 0);
    }

    #[test]
    fn barrier_generations() {
        let ipc = ipc();
        let b = ipc.barrier(4).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let bytes = b.share().unwrap();
                let ipc = ipc.clone();
                thread::spawn(move || {
                    let b: Barrier = ipc.adopt(&bytes).unwrap();
                    (0..10).map(|_| b.wait(None).unwrap()).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut per_generation = vec![BTreeSet::new(); 10];
        for h in handles {
            let waits = h.join().unwrap();
            assert!(waits.windows(2).all(|w| w[0].generation < w[1].generation));
            for w in waits {
                per_generation[w.generation as usize].insert(w.index);
            }
        }
        assert!(per_generation.iter().all(|s| *s == BTreeSet::from([0, 1, 2, 3])));
    }

    #[test]
    fn barrier_timeout_breaks() {
        let ipc = ipc();
        let b = ipc.barrier(2).unwrap();
        assert_eq!(b.wait(SHORT), Err(IpcError::BrokenBarrier));
        assert!(b.is_broken().unwrap());
        assert_eq!(b.wait(None), Err(IpcError::BrokenBarrier));
    }

    #[test]
    fn event_set_wait_clear() {
        let ipc = ipc();
        let e = ipc.event().unwrap();
        assert!(!e.is_set().unwrap());
        assert_eq!(e.wait(SHORT), Err(IpcError::Timeout));
        let bytes = e.share().unwrap();
        let ipc2 = ipc.clone();
        let waiter = thread::spawn(move || {
            let e: Event = ipc2.adopt(&bytes).unwrap();
            e.wait(None).unwrap();
        });
        thread::sleep(Duration::from_millis(20));
        e.set().unwrap();
        waiter.join().unwrap();
        let t = Instant::now();
        e.wait(None).unwrap();
        assert!(t.elapsed() < Duration::from_millis(50));
        e.clear().unwrap();
        assert!(!e.is_set().unwrap());
    }
}
