//! Sparse object index: for each (object id, level) the ascending list of
//! Morton keys of cuboids holding at least one voxel of the object, either as
//! primary label or as an exception.

use std::collections::{BTreeMap, BTreeSet};

use crate::annotations::exceptions::ExceptionList;
use crate::error::{Error, Result};
use crate::store::backend::{Backend, WriteBatch};
use crate::store::key::{decode_index_key, index_key, index_level_range};
use crate::store::{Project, Store};

/// Distinct nonzero ids in a label cuboid and its exceptions.
pub(crate) fn ids_in_cuboid(voxels: &[u8], exceptions: &ExceptionList) -> BTreeSet<u32> {
    let mut ids = BTreeSet::new();
    let mut last = 0u32;
    for chunk in voxels.chunks_exact(4) {
        let v = u32::from_le_bytes(chunk.try_into().unwrap());
        if v != last {
            last = v;
            if v != 0 {
                ids.insert(v);
            }
        }
    }
    ids.extend(exceptions.ids());
    ids
}

/// Pending index changes: per (level, id), cuboid keys to add (`true`) or
/// drop (`false`). Later records override earlier ones.
#[derive(Debug, Default)]
pub(crate) struct IndexDelta {
    changes: BTreeMap<(u8, u32), BTreeMap<u64, bool>>,
}

impl IndexDelta {
    pub fn record(&mut self, level: u8, morton: u64, before: &BTreeSet<u32>, after: &BTreeSet<u32>) {
        for id in after.difference(before) {
            self.changes.entry((level, *id)).or_default().insert(morton, true);
        }
        for id in before.difference(after) {
            self.changes.entry((level, *id)).or_default().insert(morton, false);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

pub(crate) fn encode_list(keys: &BTreeSet<u64>) -> Vec<u8> {
    keys.iter().flat_map(|k| k.to_be_bytes()).collect()
}

pub(crate) fn decode_list(bytes: &[u8]) -> Result<Vec<u64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Integrity(format!("index entry of {} bytes", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| u64::from_be_bytes(c.try_into().unwrap())).collect())
}

/// Merge `delta` into the stored lists and write them, plus `extra`, in one
/// batch on the project's home backend. Callers hold the project index guard.
pub(crate) fn apply_delta(store: &Store, p: &Project, delta: &IndexDelta, mut extra: WriteBatch) -> Result<()> {
    let home = store.router().home(p.token())?;
    let keys: Vec<Vec<u8>> = delta.changes.keys().map(|(level, id)| index_key(p.token(), *level, *id)).collect();
    let current = if keys.is_empty() { Vec::new() } else { home.get_many(&keys)? };
    let mut batch = WriteBatch::new();
    for ((_, changes), (key, stored)) in delta.changes.iter().zip(keys.into_iter().zip(current)) {
        let mut list: BTreeSet<u64> = match stored {
            Some(bytes) => decode_list(&bytes)?.into_iter().collect(),
            None => BTreeSet::new(),
        };
        for (&m, &present) in changes {
            if present {
                list.insert(m);
            } else {
                list.remove(&m);
            }
        }
        if list.is_empty() {
            batch.delete(key);
        } else {
            batch.put(key, encode_list(&list));
        }
    }
    batch.extend(std::mem::take(&mut extra));
    home.write(batch)
}

/// Cuboid keys of `id` at `level`, ascending.
pub(crate) fn read_index(store: &Store, p: &Project, level: u8, id: u32) -> Result<Vec<u64>> {
    match store.router().home(p.token())?.get(&index_key(p.token(), level, id))? {
        Some(bytes) => decode_list(&bytes),
        None => Ok(Vec::new()),
    }
}

/// Index entries of `id` at every level of the hierarchy, in one read.
pub(crate) fn read_index_all_levels(store: &Store, p: &Project, id: u32) -> Result<Vec<(u8, Vec<u64>)>> {
    let keys: Vec<Vec<u8>> = (0..p.dataset.levels).map(|r| index_key(p.token(), r, id)).collect();
    let vals = store.router().home(p.token())?.get_many(&keys)?;
    let mut out = Vec::new();
    for (r, v) in (0..p.dataset.levels).zip(vals) {
        if let Some(bytes) = v {
            out.push((r, decode_list(&bytes)?));
        }
    }
    Ok(out)
}

/// Replace the whole index of one level with a fresh one derived from the
/// stored cuboids.
pub(crate) fn rebuild_level(store: &Store, p: &Project, level: u8) -> Result<()> {
    let home = store.router().home(p.token())?;
    let mut fresh: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
    for (m, cuboid) in store.scan_cuboids(p.token(), level, 0)? {
        let exc = cuboid.exceptions.unwrap_or_default();
        for id in ids_in_cuboid(&cuboid.data, &exc) {
            fresh.entry(id).or_default().insert(m);
        }
    }
    let _guard = p.index_guard();
    let (lo, hi) = index_level_range(p.token(), level);
    let mut batch = WriteBatch::new();
    for k in home.scan_keys(&lo, &hi)? {
        batch.delete(k);
    }
    for (id, keys) in &fresh {
        batch.put(index_key(p.token(), level, *id), encode_list(keys));
    }
    home.write(batch)
}

impl Store {
    /// The stored index of one level: id → ascending cuboid keys.
    pub fn index_entries(&self, token: &str, level: u8) -> Result<BTreeMap<u32, Vec<u64>>> {
        let p = self.project(token)?;
        p.level(level)?;
        let (lo, hi) = index_level_range(token, level);
        let mut out = BTreeMap::new();
        for (k, v) in self.router().home(token)?.scan(&lo, &hi)? {
            if let Some((_, id)) = decode_index_key(&k) {
                out.insert(id, decode_list(&v)?);
            }
        }
        Ok(out)
    }

    /// Index entries recomputed from a full scan of the stored cuboids.
    pub fn index_from_scan(&self, token: &str, level: u8) -> Result<BTreeMap<u32, Vec<u64>>> {
        let mut out: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for (m, cuboid) in self.scan_cuboids(token, level, 0)? {
            let exc = cuboid.exceptions.unwrap_or_default();
            for id in ids_in_cuboid(&cuboid.data, &exc) {
                out.entry(id).or_default().push(m);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_ids_include_exceptions() {
        let labels: Vec<u8> = [0u32, 3, 3, 0, 8, 3].iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut exc = ExceptionList::new();
        exc.add(1, 11);
        assert_eq!(ids_in_cuboid(&labels, &exc), BTreeSet::from([3, 8, 11]));
    }

    #[test]
    fn delta_records_both_directions() {
        let mut d = IndexDelta::default();
        d.record(0, 7, &BTreeSet::from([1, 2]), &BTreeSet::from([2, 3]));
        assert_eq!(d.changes[&(0, 1)][&7], false);
        assert_eq!(d.changes[&(0, 3)][&7], true);
        assert!(!d.changes.contains_key(&(0, 2)));
    }

    #[test]
    fn list_encoding() {
        let s = BTreeSet::from([1u64, 9, 300]);
        assert_eq!(decode_list(&encode_list(&s)).unwrap(), vec![1, 9, 300]);
        assert!(decode_list(&[0; 5]).is_err());
    }
}
