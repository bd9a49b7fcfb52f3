//! Ordered key/value backends.
//!
//! The engine needs an ordered, durable byte map with atomic single-key
//! writes, atomic multi-key batches and range scans. [`RedbBackend`] persists
//! to a file; [`MemoryBackend`] keeps everything in a `BTreeMap`. Either can be
//! wrapped in [`Instrumented`] to count and log traffic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};
use redb::{ReadableDatabase, TableDefinition};

use crate::error::{Error, Result};

/// One atomic group of puts and deletes.
#[derive(Clone, Debug, Default)]
pub struct WriteBatch {
    ops: Vec<(Vec<u8>, Option<Vec<u8>>)>,
}

impl WriteBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: Vec<u8>, value: Vec<u8>) {
        self.ops.push((key, Some(value)));
    }

    pub fn delete(&mut self, key: Vec<u8>) {
        self.ops.push((key, None));
    }

    pub fn extend(&mut self, other: WriteBatch) {
        self.ops.extend(other.ops);
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[(Vec<u8>, Option<Vec<u8>>)] {
        &self.ops
    }

    pub fn into_ops(self) -> Vec<(Vec<u8>, Option<Vec<u8>>)> {
        self.ops
    }
}

pub type KvPair = (Vec<u8>, Vec<u8>);

pub trait Backend: Send + Sync + fmt::Debug {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>>;

    /// Fetch several keys in one round trip, in the given order.
    fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<Option<Vec<u8>>>> {
        keys.iter().map(|k| self.get(k)).collect()
    }

    /// Every pair with `lo <= key < hi`, ascending.
    fn scan(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<KvPair>>;

    fn write(&self, batch: WriteBatch) -> Result<()>;

    fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        let mut b = WriteBatch::new();
        b.put(key.to_vec(), value.to_vec());
        self.write(b)
    }

    fn delete(&self, key: &[u8]) -> Result<()> {
        let mut b = WriteBatch::new();
        b.delete(key.to_vec());
        self.write(b)
    }

    /// Keys only; backends may override to avoid copying values.
    fn scan_keys(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<Vec<u8>>> {
        Ok(self.scan(lo, hi)?.into_iter().map(|(k, _)| k).collect())
    }
}

#[derive(Default)]
pub struct MemoryBackend {
    map: RwLock<BTreeMap<Vec<u8>, Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.read().is_empty()
    }
}

impl fmt::Debug for MemoryBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryBackend").field("keys", &self.len()).finish()
    }
}

impl Backend for MemoryBackend {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.map.read().get(key).cloned())
    }

    fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<Option<Vec<u8>>>> {
        let map = self.map.read();
        Ok(keys.iter().map(|k| map.get(k).cloned()).collect())
    }

    fn scan(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<KvPair>> {
        if lo >= hi {
            return Ok(Vec::new());
        }
        let map = self.map.read();
        Ok(map.range(lo.to_vec()..hi.to_vec()).map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    fn scan_keys(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<Vec<u8>>> {
        if lo >= hi {
            return Ok(Vec::new());
        }
        let map = self.map.read();
        Ok(map.range(lo.to_vec()..hi.to_vec()).map(|(k, _)| k.clone()).collect())
    }

    fn write(&self, batch: WriteBatch) -> Result<()> {
        let mut map = self.map.write();
        for (k, v) in batch.into_ops() {
            match v {
                Some(v) => {
                    map.insert(k, v);
                }
                None => {
                    map.remove(&k);
                }
            }
        }
        Ok(())
    }
}

const TABLE: TableDefinition<&[u8], &[u8]> = TableDefinition::new("kv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Durability {
    /// fsync on every commit.
    #[default]
    Immediate,
    /// Commits become durable with the next immediate commit or a clean close.
    Deferred,
}

/// File-backed backend on top of redb.
pub struct RedbBackend {
    db: redb::Database,
    path: PathBuf,
    durability: Durability,
    dirty: AtomicBool,
}

impl RedbBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, Durability::Immediate, 128 << 20)
    }

    pub fn open_with(path: impl AsRef<Path>, durability: Durability, cache_bytes: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let db = redb::Database::builder()
            .set_cache_size(cache_bytes)
            .create(&path)
            .map_err(Error::storage)?;
        let txn = db.begin_write().map_err(Error::storage)?;
        txn.open_table(TABLE).map_err(Error::storage)?;
        txn.commit().map_err(Error::storage)?;
        Ok(RedbBackend { db, path, durability, dirty: AtomicBool::new(false) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Make every deferred commit durable.
    pub fn sync(&self) -> Result<()> {
        if self.dirty.swap(false, Ordering::AcqRel) {
            let txn = self.db.begin_write().map_err(Error::storage)?;
            txn.commit().map_err(Error::storage)?;
        }
        Ok(())
    }
}

impl Drop for RedbBackend {
    fn drop(&mut self) {
        if let Err(e) = self.sync() {
            log::warn!("final sync of {} failed: {e}", self.path.display());
        }
    }
}

impl fmt::Debug for RedbBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RedbBackend").field("path", &self.path).finish()
    }
}

impl Backend for RedbBackend {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let txn = self.db.begin_read().map_err(Error::storage)?;
        let table = txn.open_table(TABLE).map_err(Error::storage)?;
        Ok(table.get(key).map_err(Error::storage)?.map(|v| v.value().to_vec()))
    }

    fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<Option<Vec<u8>>>> {
        let txn = self.db.begin_read().map_err(Error::storage)?;
        let table = txn.open_table(TABLE).map_err(Error::storage)?;
        keys.iter()
            .map(|k| Ok(table.get(k.as_slice()).map_err(Error::storage)?.map(|v| v.value().to_vec())))
            .collect()
    }

    fn scan(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<KvPair>> {
        if lo >= hi {
            return Ok(Vec::new());
        }
        let txn = self.db.begin_read().map_err(Error::storage)?;
        let table = txn.open_table(TABLE).map_err(Error::storage)?;
        let mut out = Vec::new();
        for item in table.range(lo..hi).map_err(Error::storage)? {
            let (k, v) = item.map_err(Error::storage)?;
            out.push((k.value().to_vec(), v.value().to_vec()));
        }
        Ok(out)
    }

    fn scan_keys(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<Vec<u8>>> {
        if lo >= hi {
            return Ok(Vec::new());
        }
        let txn = self.db.begin_read().map_err(Error::storage)?;
        let table = txn.open_table(TABLE).map_err(Error::storage)?;
        let mut out = Vec::new();
        for item in table.range(lo..hi).map_err(Error::storage)? {
            let (k, _) = item.map_err(Error::storage)?;
            out.push(k.value().to_vec());
        }
        Ok(out)
    }

    fn write(&self, batch: WriteBatch) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut txn = self.db.begin_write().map_err(Error::storage)?;
        if self.durability == Durability::Deferred {
            txn.set_durability(redb::Durability::None).map_err(Error::storage)?;
        }
        {
            let mut table = txn.open_table(TABLE).map_err(Error::storage)?;
            for (k, v) in batch.ops() {
                match v {
                    Some(v) => {
                        table.insert(k.as_slice(), v.as_slice()).map_err(Error::storage)?;
                    }
                    None => {
                        table.remove(k.as_slice()).map_err(Error::storage)?;
                    }
                }
            }
        }
        txn.commit().map_err(Error::storage)?;
        if self.durability == Durability::Deferred {
            self.dirty.store(true, Ordering::Release);
        }
        Ok(())
    }
}

/// One observed backend operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Get(Vec<u8>),
    Scan(Vec<u8>, Vec<u8>),
    Write(Vec<Vec<u8>>),
}

#[derive(Debug, Default)]
pub struct BackendStats {
    pub keys_read: AtomicU64,
    pub read_calls: AtomicU64,
    pub bytes_read: AtomicU64,
    pub scans: AtomicU64,
    pub write_calls: AtomicU64,
    pub keys_written: AtomicU64,
    pub bytes_written: AtomicU64,
}

/// Plain-number copy of [`BackendStats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub keys_read: u64,
    pub read_calls: u64,
    pub bytes_read: u64,
    pub scans: u64,
    pub write_calls: u64,
    pub keys_written: u64,
    pub bytes_written: u64,
}

impl std::ops::Sub for StatsSnapshot {
    type Output = StatsSnapshot;

    fn sub(self, o: StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            keys_read: self.keys_read - o.keys_read,
            read_calls: self.read_calls - o.read_calls,
            bytes_read: self.bytes_read - o.bytes_read,
            scans: self.scans - o.scans,
            write_calls: self.write_calls - o.write_calls,
            keys_written: self.keys_written - o.keys_written,
            bytes_written: self.bytes_written - o.bytes_written,
        }
    }
}

impl std::ops::Add for StatsSnapshot {
    type Output = StatsSnapshot;

    fn add(self, o: StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            keys_read: self.keys_read + o.keys_read,
            read_calls: self.read_calls + o.read_calls,
            bytes_read: self.bytes_read + o.bytes_read,
            scans: self.scans + o.scans,
            write_calls: self.write_calls + o.write_calls,
            keys_written: self.keys_written + o.keys_written,
            bytes_written: self.bytes_written + o.bytes_written,
        }
    }
}

/// Counting wrapper. The op log is off until [`Instrumented::set_logging`].
pub struct Instrumented<B> {
    inner: B,
    stats: BackendStats,
    logging: AtomicBool,
    log: Mutex<Vec<Op>>,
}

impl<B: Backend> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Instrumented {
            inner,
            stats: BackendStats::default(),
            logging: AtomicBool::new(false),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn set_logging(&self, on: bool) {
        self.logging.store(on, Ordering::Release);
    }

    pub fn take_log(&self) -> Vec<Op> {
        std::mem::take(&mut *self.log.lock())
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let s = &self.stats;
        StatsSnapshot {
            keys_read: s.keys_read.load(Ordering::Relaxed),
            read_calls: s.read_calls.load(Ordering::Relaxed),
            bytes_read: s.bytes_read.load(Ordering::Relaxed),
            scans: s.scans.load(Ordering::Relaxed),
            write_calls: s.write_calls.load(Ordering::Relaxed),
            keys_written: s.keys_written.load(Ordering::Relaxed),
            bytes_written: s.bytes_written.load(Ordering::Relaxed),
        }
    }

    fn record(&self, op: impl FnOnce() -> Op) {
        if self.logging.load(Ordering::Acquire) {
            self.log.lock().push(op());
        }
    }

    fn count_read(&self, keys: u64, bytes: u64) {
        self.stats.read_calls.fetch_add(1, Ordering::Relaxed);
        self.stats.keys_read.fetch_add(keys, Ordering::Relaxed);
        self.stats.bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }
}

impl<B: Backend> fmt::Debug for Instrumented<B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instrumented").field("inner", &self.inner).field("stats", &self.snapshot()).finish()
    }
}

impl<B: Backend> Backend for Instrumented<B> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.record(|| Op::Get(key.to_vec()));
        let v = self.inner.get(key)?;
        self.count_read(1, v.as_ref().map_or(0, |v| v.len() as u64));
        Ok(v)
    }

    fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<Option<Vec<u8>>>> {
        if self.logging.load(Ordering::Acquire) {
            let mut log = self.log.lock();
            log.extend(keys.iter().map(|k| Op::Get(k.clone())));
        }
        let vals = self.inner.get_many(keys)?;
        let bytes = vals.iter().flatten().map(|v| v.len() as u64).sum();
        self.count_read(keys.len() as u64, bytes);
        Ok(vals)
    }

    fn scan(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<KvPair>> {
        self.record(|| Op::Scan(lo.to_vec(), hi.to_vec()));
        let out = self.inner.scan(lo, hi)?;
        self.stats.scans.fetch_add(1, Ordering::Relaxed);
        let bytes = out.iter().map(|(_, v)| v.len() as u64).sum();
        self.count_read(out.len() as u64, bytes);
        Ok(out)
    }

    fn scan_keys(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<Vec<u8>>> {
        self.record(|| Op::Scan(lo.to_vec(), hi.to_vec()));
        self.stats.scans.fetch_add(1, Ordering::Relaxed);
        self.inner.scan_keys(lo, hi)
    }

    fn write(&self, batch: WriteBatch) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        self.record(|| Op::Write(batch.ops().iter().map(|(k, _)| k.clone()).collect()));
        self.stats.write_calls.fetch_add(1, Ordering::Relaxed);
        self.stats.keys_written.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let bytes: u64 = batch.ops().iter().filter_map(|(_, v)| v.as_ref()).map(|v| v.len() as u64).sum();
        self.stats.bytes_written.fetch_add(bytes, Ordering::Relaxed);
        self.inner.write(batch)
    }
}

/// A backend the router can hand out: instrumented, type-erased.
pub type SharedBackend = std::sync::Arc<Instrumented<Box<dyn Backend>>>;

impl Backend for Box<dyn Backend> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        (**self).get(key)
    }
    fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<Option<Vec<u8>>>> {
        (**self).get_many(keys)
    }
    fn scan(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<KvPair>> {
        (**self).scan(lo, hi)
    }
    fn scan_keys(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<Vec<u8>>> {
        (**self).scan_keys(lo, hi)
    }
    fn write(&self, batch: WriteBatch) -> Result<()> {
        (**self).write(batch)
    }
}

pub fn shared(backend: impl Backend + 'static) -> SharedBackend {
    std::sync::Arc::new(Instrumented::new(Box::new(backend) as Box<dyn Backend>))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(b: &dyn Backend) {
        assert!(b.scan(b"", b"\xff").unwrap().is_empty());
        for k in [0u8, 5, 9] {
            b.put(&[k], &[k, k]).unwrap();
        }
        let keys: Vec<u8> = b.scan(&[0], &[10]).unwrap().into_iter().map(|(k, _)| k[0]).collect();
        assert_eq!(keys, vec![0, 5, 9]);
        let keys: Vec<u8> = b.scan(&[1], &[9]).unwrap().into_iter().map(|(k, _)| k[0]).collect();
        assert_eq!(keys, vec![5]);
        assert_eq!(b.get(&[5]).unwrap(), Some(vec![5, 5]));
        assert_eq!(b.get(&[6]).unwrap(), None);
        let mut batch = WriteBatch::new();
        batch.delete(vec![5]);
        batch.put(vec![7], vec![1]);
        b.write(batch).unwrap();
        assert_eq!(b.get_many(&[vec![5], vec![7]]).unwrap(), vec![None, Some(vec![1])]);
        assert_eq!(b.scan_keys(&[0], &[10]).unwrap(), vec![vec![0], vec![7], vec![9]]);
    }

    #[test]
    fn memory_backend_contract() {
        exercise(&MemoryBackend::new());
    }

    #[test]
    fn redb_backend_contract_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.redb");
        {
            let b = RedbBackend::open(&path).unwrap();
            exercise(&b);
        }
        let b = RedbBackend::open(&path).unwrap();
        assert_eq!(b.get(&[9]).unwrap(), Some(vec![9, 9]));
    }

    #[test]
    fn deferred_durability_survives_clean_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.redb");
        {
            let b = RedbBackend::open_with(&path, Durability::Deferred, 1 << 20).unwrap();
            b.put(b"k", b"v").unwrap();
        }
        let b = RedbBackend::open(&path).unwrap();
        assert_eq!(b.get(b"k").unwrap(), Some(b"v".to_vec()));
    }

    #[test]
    fn instrumented_counts_and_logs() {
        let b = Instrumented::new(MemoryBackend::new());
        b.set_logging(true);
        b.put(b"a", b"xyz").unwrap();
        b.get(b"a").unwrap();
        b.get_many(&[b"a".to_vec(), b"b".to_vec()]).unwrap();
        let s = b.snapshot();
        assert_eq!(s.write_calls, 1);
        assert_eq!(s.keys_read, 3);
        assert_eq!(s.read_calls, 2);
        assert_eq!(s.bytes_read, 6);
        let log = b.take_log();
        assert_eq!(log.len(), 4);
        assert_eq!(log[0], Op::Write(vec![b"a".to_vec()]));
    }
}
