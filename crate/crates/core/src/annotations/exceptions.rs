use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Extra labels of multiply-labeled voxels in one cuboid, keyed by
/// intra-cuboid voxel offset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExceptionList {
    entries: BTreeMap<u32, Vec<u32>>,
}

impl ExceptionList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn get(&self, offset: u32) -> &[u32] {
        self.entries.get(&offset).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, offset: u32, id: u32) -> bool {
        self.get(offset).contains(&id)
    }

    /// Returns false when `id` was already listed.
    pub fn add(&mut self, offset: u32, id: u32) -> bool {
        let list = self.entries.entry(offset).or_default();
        if list.contains(&id) {
            return false;
        }
        list.push(id);
        true
    }

    pub fn remove(&mut self, offset: u32, id: u32) -> bool {
        let Some(list) = self.entries.get_mut(&offset) else {
            return false;
        };
        let before = list.len();
        list.retain(|&x| x != id);
        let removed = list.len() != before;
        if list.is_empty() {
            self.entries.remove(&offset);
        }
        removed
    }

    /// Remove and return the whole list at `offset`.
    pub fn take(&mut self, offset: u32) -> Vec<u32> {
        self.entries.remove(&offset).unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[u32])> {
        self.entries.iter().map(|(&o, l)| (o, l.as_slice()))
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.entries.values().flatten().copied().collect()
    }

    /// Drop `id` from every list.
    pub fn remove_everywhere(&mut self, id: u32) -> bool {
        let mut changed = false;
        self.entries.retain(|_, list| {
            let before = list.len();
            list.retain(|&x| x != id);
            changed |= list.len() != before;
            !list.is_empty()
        });
        changed
    }

    /// u32 entry count, then per entry: offset, id count, ids (all LE).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.entries.len() * 12);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (off, ids) in &self.entries {
            out.extend_from_slice(&off.to_le_bytes());
            out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
            for id in ids {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()));
        let bad = || Error::Integrity("malformed exception record".into());
        if bytes.len() % 4 != 0 {
            return Err(bad());
        }
        let n = words.next().ok_or_else(bad)?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let off = words.next().ok_or_else(bad)?;
            let count = words.next().ok_or_else(bad)?;
            let mut ids = Vec::with_capacity(count as usize);
            for _ in 0..count {
                ids.push(words.next().ok_or_else(bad)?);
            }
            if ids.is_empty() {
                return Err(bad());
            }
            entries.insert(off, ids);
        }
        if words.next().is_some() {
            return Err(bad());
        }
        Ok(ExceptionList { entries })
    }
}
