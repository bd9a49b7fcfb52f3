//! Byte-bounded LRU of decoded cuboid buffers, keyed by encoded cuboid key.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use crate::store::key::project_prefix;

/// Decoded voxels, or `None` for a cuboid known to be absent (all zero).
pub type CachedCuboid = Option<Arc<Vec<u8>>>;

const ABSENT_COST: usize = 64;

struct Inner {
    lru: LruCache<Vec<u8>, CachedCuboid>,
    bytes: usize,
    capacity: usize,
    /// Bumped on every writer insert; readers only fill entries when no
    /// write happened since they started their backend read.
    epoch: u64,
}

pub struct CuboidCache {
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn cost(key: &[u8], v: &CachedCuboid) -> usize {
    key.len() + v.as_ref().map_or(ABSENT_COST, |b| b.len())
}

impl CuboidCache {
    pub fn new(capacity: usize) -> Self {
        CuboidCache {
            inner: Mutex::new(Inner { lru: LruCache::unbounded(), bytes: 0, capacity, epoch: 0 }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.inner.lock().capacity
    }

    pub fn enabled(&self) -> bool {
        self.capacity() > 0
    }

    pub fn set_capacity(&self, capacity: usize) {
        let mut inner = self.inner.lock();
        inner.capacity = capacity;
        evict(&mut inner);
    }

    pub fn bytes(&self) -> usize {
        self.inner.lock().bytes
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn get(&self, key: &[u8]) -> Option<CachedCuboid> {
        let mut inner = self.inner.lock();
        if inner.capacity == 0 {
            return None;
        }
        match inner.lru.get(key) {
            Some(v) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(v.clone())
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn epoch(&self) -> u64 {
        self.inner.lock().epoch
    }

    /// Reader fill: skipped if any write landed since `epoch` was taken.
    pub fn fill(&self, key: Vec<u8>, value: CachedCuboid, epoch: u64) {
        let mut inner = self.inner.lock();
        if inner.epoch == epoch {
            put(&mut inner, key, value);
        }
    }

    /// Writer insert, after the backend write.
    pub fn insert(&self, key: Vec<u8>, value: CachedCuboid) {
        let mut inner = self.inner.lock();
        inner.epoch += 1;
        put(&mut inner, key, value);
    }

    pub fn invalidate(&self, key: &[u8]) {
        let mut inner = self.inner.lock();
        inner.epoch += 1;
        if let Some(old) = inner.lru.pop(key) {
            inner.bytes -= cost(key, &old);
        }
    }

    pub fn invalidate_project(&self, project: &str) {
        let prefix = project_prefix(project);
        let mut inner = self.inner.lock();
        inner.epoch += 1;
        let doomed: Vec<Vec<u8>> = inner.lru.iter().filter(|(k, _)| k.starts_with(&prefix)).map(|(k, _)| k.clone()).collect();
        for k in doomed {
            if let Some(old) = inner.lru.pop(&k) {
                inner.bytes -= cost(&k, &old);
            }
        }
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock();
        inner.epoch += 1;
        inner.lru.clear();
        inner.bytes = 0;
    }
}

fn put(inner: &mut Inner, key: Vec<u8>, value: CachedCuboid) {
    if inner.capacity == 0 {
        return;
    }
    let c = cost(&key, &value);
    if c > inner.capacity {
        if let Some(old) = inner.lru.pop(&key) {
            inner.bytes -= cost(&key, &old);
        }
        return;
    }
    if let Some(old) = inner.lru.put(key.clone(), value) {
        inner.bytes -= cost(&key, &old);
    }
    inner.bytes += c;
    evict(inner);
}

fn evict(inner: &mut Inner) {
    while inner.bytes > inner.capacity {
        match inner.lru.pop_lru() {
            Some((k, v)) => inner.bytes -= cost(&k, &v),
            None => break,
        }
    }
}
