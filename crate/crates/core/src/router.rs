//! Application-level data distribution.
//!
//! Every project has a [`Placement`]: the backends ("nodes") holding its
//! cuboids, how many Morton-range shards it is split into, and, for annotation
//! projects under active write, a dedicated write backend. Placements and
//! backend definitions live in a TOML placement file:
//!
//! ```toml
//! [[backends]]
//! id = "bulk"
//! kind = "redb"            # or "memory"
//! path = "bulk.redb"       # relative to the placement file
//! durability = "immediate" # or "deferred"
//!
//! [projects.bock11]
//! type = "image"
//! shard_count = 2
//! backends = ["bulk", "bulk2"]
//!
//! [projects.synapses]
//! type = "annotation"
//! shard_count = 1
//! backends = ["bulk"]
//! active_write = true
//! write_backend = "ssd"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::shard_of;
use crate::error::{Error, Result};
use crate::store::backend::{self, Backend, Durability, MemoryBackend, RedbBackend, SharedBackend, StatsSnapshot, WriteBatch};
use crate::store::config::ProjectKind;
use crate::store::key::{project_range, CuboidKey};
use crate::store::Store;

pub type BackendId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Memory,
    Redb,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub id: BackendId,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub durability: Durability,
    #[serde(default = "default_cache_mb")]
    pub cache_mb: usize,
}

fn default_cache_mb() -> usize {
    128
}

impl BackendSpec {
    pub fn memory(id: impl Into<String>) -> Self {
        BackendSpec { id: id.into(), kind: BackendKind::Memory, path: None, durability: Durability::Immediate, cache_mb: 0 }
    }

    pub fn redb(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        BackendSpec {
            id: id.into(),
            kind: BackendKind::Redb,
            path: Some(path.into()),
            durability: Durability::Immediate,
            cache_mb: default_cache_mb(),
        }
    }

    fn open(&self, base: &Path) -> Result<SharedBackend> {
        Ok(match self.kind {
            BackendKind::Memory => backend::shared(MemoryBackend::new()),
            BackendKind::Redb => {
                let rel = self
                    .path
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(format!("{}.redb", self.id)));
                let path = if rel.is_absolute() { rel } else { base.join(rel) };
                backend::shared(RedbBackend::open_with(path, self.durability, self.cache_mb << 20)?)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    #[serde(rename = "type")]
    pub kind: ProjectKind,
    #[serde(default = "one")]
    pub shard_count: usize,
    pub backends: Vec<BackendId>,
    #[serde(default)]
    pub active_write: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_backend: Option<BackendId>,
}

fn one() -> usize {
    1
}

impl Placement {
    pub fn single(kind: ProjectKind, backend: impl Into<String>) -> Self {
        Placement { kind, shard_count: 1, backends: vec![backend.into()], active_write: false, write_backend: None }
    }

    pub fn sharded(kind: ProjectKind, backends: Vec<BackendId>) -> Self {
        Placement { kind, shard_count: backends.len(), backends, active_write: false, write_backend: None }
    }

    pub fn with_active_write(mut self, backend: impl Into<String>) -> Self {
        self.active_write = true;
        self.write_backend = Some(backend.into());
        self
    }

    fn write_target(&self) -> Option<&BackendId> {
        if self.active_write {
            self.write_backend.as_ref()
        } else {
            None
        }
    }

    /// Backend holding metadata, indexes and counters.
    pub fn home(&self) -> &BackendId {
        self.write_target().unwrap_or(&self.backends[0])
    }

    pub fn uses(&self, id: &str) -> bool {
        self.write_target().map_or(false, |w| w == id) || (!self.active_write && self.backends.iter().any(|b| b == id))
    }

    /// Backend ids actually holding data, without duplicates.
    pub fn live_backends(&self) -> Vec<BackendId> {
        if let Some(w) = self.write_target() {
            return vec![w.clone()];
        }
        let mut out: Vec<BackendId> = Vec::new();
        for b in &self.backends {
            if !out.contains(b) {
                out.push(b.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.shard_count == 0 || self.backends.len() != self.shard_count {
            return Err(Error::Config(format!(
                "placement lists {} backends for {} shards",
                self.backends.len(),
                self.shard_count
            )));
        }
        if self.active_write {
            if self.kind != ProjectKind::Annotation {
                return Err(Error::Config("active-write placement is for annotation projects".into()));
            }
            if self.write_backend.is_none() {
                return Err(Error::Config("active-write placement without a write backend".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementFile {
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub projects: BTreeMap<String, Placement>,
}

impl PlacementFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("placement tables serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BackendUsage {
    pub backend: BackendId,
    pub keys: u64,
    pub bytes: u64,
}

type PlacementTable = BTreeMap<String, Arc<Placement>>;

pub struct Router {
    specs: Vec<BackendSpec>,
    backends: BTreeMap<BackendId, SharedBackend>,
    placements: RwLock<Arc<PlacementTable>>,
    writer: Mutex<()>,
    file: Option<PathBuf>,
}

impl std::fmt::Debug for Router {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Router")
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .field("projects", &self.placements.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Router {
    /// Router over already-open backends, with no placement file.
    pub fn new(backends: Vec<(BackendId, SharedBackend)>) -> Self {
        let specs = backends.iter().map(|(id, _)| BackendSpec::memory(id.clone())).collect();
        Router {
            specs,
            backends: backends.into_iter().collect(),
            placements: RwLock::new(Arc::new(BTreeMap::new())),
            writer: Mutex::new(()),
            file: None,
        }
    }

    pub fn in_memory(ids: &[&str]) -> Self {
        Router::new(ids.iter().map(|id| (id.to_string(), backend::shared(MemoryBackend::new()))).collect())
    }

    /// Open every backend named in a placement file. A missing file is
    /// created with one redb backend next to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = if path.exists() {
            PlacementFile::load(path)?
        } else {
            let f = PlacementFile { backends: vec![BackendSpec::redb("default", "default.redb")], projects: BTreeMap::new() };
            std::fs::create_dir_all(&base)?;
            write_atomic(path, f.to_toml().as_bytes())?;
            f
        };
        Self::from_file(file, &base, Some(path.to_path_buf()))
    }

    pub fn from_file(file: PlacementFile, base: &Path, persist_to: Option<PathBuf>) -> Result<Self> {
        if file.backends.is_empty() {
            return Err(Error::Config("placement file defines no backends".into()));
        }
        let mut backends = BTreeMap::new();
        for spec in &file.backends {
            if backends.insert(spec.id.clone(), spec.open(base)?).is_some() {
                return Err(Error::Config(format!("backend {} defined twice", spec.id)));
            }
        }
        let router = Router {
            specs: file.backends.clone(),
            backends,
            placements: RwLock::new(Arc::new(BTreeMap::new())),
            writer: Mutex::new(()),
            file: persist_to,
        };
        let mut table = BTreeMap::new();
        for (token, placement) in file.projects {
            router.check_placement(&placement)?;
            table.insert(token, Arc::new(placement));
        }
        *router.placements.write() = Arc::new(table);
        Ok(router)
    }

    pub fn backend_ids(&self) -> Vec<BackendId> {
        self.backends.keys().cloned().collect()
    }

    pub fn default_backend(&self) -> &BackendId {
        &self.specs[0].id
    }

    pub fn backend(&self, id: &str) -> Result<&SharedBackend> {
        self.backends.get(id).ok_or_else(|| Error::NotFound(format!("backend {id}")))
    }

    pub fn backend_stats(&self, id: &str) -> Result<StatsSnapshot> {
        Ok(self.backend(id)?.snapshot())
    }

    pub fn total_stats(&self) -> StatsSnapshot {
        self.backends.values().map(|b| b.snapshot()).fold(StatsSnapshot::default(), |a, b| a + b)
    }

    pub fn set_logging(&self, on: bool) {
        for b in self.backends.values() {
            b.set_logging(on);
        }
    }

    fn check_placement(&self, p: &Placement) -> Result<()> {
        p.validate()?;
        for id in p.backends.iter().chain(p.write_backend.iter()) {
            self.backend(id)?;
        }
        Ok(())
    }

    /// Lock-free (snapshot) view of the placement table.
    pub fn snapshot(&self) -> Arc<PlacementTable> {
        self.placements.read().clone()
    }

    pub fn placement(&self, project: &str) -> Result<Arc<Placement>> {
        self.snapshot()
            .get(project)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no placement for project {project}")))
    }

    pub fn set_placement(&self, project: &str, placement: Placement) -> Result<()> {
        self.check_placement(&placement)?;
        let _w = self.writer.lock();
        let mut table = (*self.snapshot()).clone();
        table.insert(project.to_owned(), Arc::new(placement));
        self.persist(&table)?;
        *self.placements.write() = Arc::new(table);
        Ok(())
    }

    pub fn remove_placement(&self, project: &str) -> Result<()> {
        let _w = self.writer.lock();
        let mut table = (*self.snapshot()).clone();
        table.remove(project);
        self.persist(&table)?;
        *self.placements.write() = Arc::new(table);
        Ok(())
    }

    fn persist(&self, table: &PlacementTable) -> Result<()> {
        if let Some(path) = &self.file {
            let file = PlacementFile {
                backends: self.specs.clone(),
                projects: table.iter().map(|(k, v)| (k.clone(), (**v).clone())).collect(),
            };
            write_atomic(path, file.to_toml().as_bytes())?;
        }
        Ok(())
    }

    /// Backend id owning a cuboid. `key_space` is the level's key-space size.
    pub fn route_id(&self, placement: &Placement, key: &CuboidKey, key_space: u64) -> BackendId {
        if let Some(w) = placement.write_target() {
            return w.clone();
        }
        let shard = shard_of(key.morton, placement.shard_count, key_space);
        placement.backends[shard].clone()
    }

    pub fn route(&self, project: &str, key: &CuboidKey, key_space: u64) -> Result<&SharedBackend> {
        let placement = self.placement(project)?;
        self.backend(&self.route_id(&placement, key, key_space))
    }

    pub fn home(&self, project: &str) -> Result<&SharedBackend> {
        let placement = self.placement(project)?;
        self.backend(placement.home())
    }

    /// Key and byte totals of a project on each backend of its placement.
    pub fn placement_report(&self, project: &str) -> Result<Vec<BackendUsage>> {
        let placement = self.placement(project)?;
        let (lo, hi) = project_range(project);
        let mut ids = placement.backends.clone();
        ids.extend(placement.write_backend.iter().cloned());
        ids.dedup();
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for id in ids {
            if seen.contains(&id) {
                continue;
            }
            seen.push(id.clone());
            let pairs = self.backend(&id)?.inner().scan(&lo, &hi)?;
            out.push(BackendUsage {
                backend: id,
                keys: pairs.len() as u64,
                bytes: pairs.iter().map(|(_, v)| v.len() as u64).sum(),
            });
        }
        Ok(out)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Points at which a migration can be interrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MigrationStage {
    Copied,
    Verified,
    Switched,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MigrationReport {
    pub keys: u64,
    pub bytes: u64,
    pub checksum: [u8; 32],
}

const MIGRATION_CHUNK: usize = 256;

impl Store {
    pub fn migrate(&self, project: &str, from: &str, to: &str) -> Result<MigrationReport> {
        self.migrate_with(project, from, to, |_| Ok(()))
    }

    /// Move every key of `project` stored on `from` to `to`. `hook` runs at
    /// each [`MigrationStage`]; an error before the switch aborts and leaves
    /// the source authoritative.
    pub fn migrate_with(
        &self,
        project: &str,
        from: &str,
        to: &str,
        mut hook: impl FnMut(MigrationStage) -> Result<()>,
    ) -> Result<MigrationReport> {
        let router = self.router();
        let placement = router.placement(project)?;
        if from == to {
            return Err(Error::BadRequest("source and destination backends are the same".into()));
        }
        if !placement.uses(from) {
            return Err(Error::BadRequest(format!("project {project} has no data on backend {from}")));
        }
        let src = router.backend(from)?;
        let dst = router.backend(to)?;
        let next = migrated_placement(&placement, from, to)?;
        router.check_placement(&next)?;

        let _quiesced = self.lock_project(project)?;
        let (lo, hi) = project_range(project);
        let keys = src.scan_keys(&lo, &hi)?;

        let mut source_digest = Sha256::new();
        let mut bytes = 0u64;
        let copy = (|| -> Result<()> {
            for chunk in keys.chunks(MIGRATION_CHUNK) {
                let vals = src.get_many(chunk)?;
                let mut batch = WriteBatch::new();
                for (k, v) in chunk.iter().zip(vals) {
                    let v = v.ok_or_else(|| Error::Migration(format!("key vanished from {from} during copy")))?;
                    digest_pair(&mut source_digest, k, &v);
                    bytes += v.len() as u64;
                    batch.put(k.clone(), v);
                }
                dst.write(batch)?;
            }
            hook(MigrationStage::Copied)?;

            let mut copy_digest = Sha256::new();
            let mut copied = 0u64;
            for chunk in keys.chunks(MIGRATION_CHUNK) {
                for (k, v) in chunk.iter().zip(dst.get_many(chunk)?) {
                    if let Some(v) = v {
                        digest_pair(&mut copy_digest, k, &v);
                        copied += 1;
                    }
                }
            }
            if copied != keys.len() as u64 || copy_digest.finalize() != source_digest.clone().finalize() {
                return Err(Error::Migration(format!(
                    "verification failed: {copied} of {} keys match on {to}",
                    keys.len()
                )));
            }
            hook(MigrationStage::Verified)
        })();

        if let Err(e) = copy {
            for chunk in keys.chunks(MIGRATION_CHUNK) {
                let mut batch = WriteBatch::new();
                for k in chunk {
                    batch.delete(k.clone());
                }
                if let Err(cleanup) = dst.write(batch) {
                    log::warn!("cleanup of partial copy on {to} failed: {cleanup}");
                }
            }
            return Err(match e {
                Error::Migration(m) => Error::Migration(m),
                other => Error::Migration(other.to_string()),
            });
        }

        router.set_placement(project, next)?;
        self.cache().invalidate_project(project);
        let switched = hook(MigrationStage::Switched);

        for chunk in keys.chunks(MIGRATION_CHUNK) {
            let mut batch = WriteBatch::new();
            for k in chunk {
                batch.delete(k.clone());
            }
            src.write(batch)?;
        }
        switched?;
        Ok(MigrationReport { keys: keys.len() as u64, bytes, checksum: source_digest.finalize().into() })
    }
}

fn digest_pair(d: &mut Sha256, k: &[u8], v: &[u8]) {
    d.update((k.len() as u32).to_le_bytes());
    d.update(k);
    d.update((v.len() as u64).to_le_bytes());
    d.update(v);
}

fn migrated_placement(p: &Placement, from: &str, to: &str) -> Result<Placement> {
    let mut next = p.clone();
    if p.write_target().map_or(false, |w| w == from) {
        // leaving the write backend ends the active-write phase
        if p.shard_count != 1 {
            return Err(Error::BadRequest(
                "an active-write project must have one shard to leave its write backend".into(),
            ));
        }
        next.active_write = false;
        next.write_backend = None;
        next.backends = vec![to.to_owned()];
        return Ok(next);
    }
    for b in next.backends.iter_mut() {
        if b == from {
            *b = to.to_owned();
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_file_round_trips() {
        let mut file = PlacementFile { backends: vec![BackendSpec::memory("a"), BackendSpec::redb("b", "b.redb")], ..Default::default() };
        file.projects.insert("img".into(), Placement::sharded(ProjectKind::Image, vec!["a".into(), "b".into()]));
        file.projects.insert(
            "ann".into(),
            Placement::single(ProjectKind::Annotation, "a").with_active_write("b"),
        );
        let text = file.to_toml();
        let back: PlacementFile = toml::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert!(text.contains("shard_count = 2"));
        assert!(text.contains("active_write = true"));
    }

    #[test]
    fn routing_examples() {
        let r = Router::in_memory(&["n0", "n1", "n2", "n3", "ssd"]);
        r.set_placement("one", Placement::single(ProjectKind::Image, "n2")).unwrap();
        r.set_placement(
            "four",
            Placement::sharded(ProjectKind::Image, vec!["n0".into(), "n1".into(), "n2".into(), "n3".into()]),
        )
        .unwrap();
        r.set_placement("ann", Placement::single(ProjectKind::Annotation, "n0").with_active_write("ssd"))
            .unwrap();

        let p = r.placement("one").unwrap();
        for m in [0, 5, 1000] {
            assert_eq!(r.route_id(&p, &CuboidKey::new("one", 0, 0, m), 16), "n2");
        }
        let p = r.placement("four").unwrap();
        assert_eq!(r.route_id(&p, &CuboidKey::new("four", 0, 0, 5), 16), "n1");
        assert_eq!(r.route_id(&p, &CuboidKey::new("four", 0, 0, 15), 16), "n3");
        let p = r.placement("ann").unwrap();
        assert_eq!(r.route_id(&p, &CuboidKey::new("ann", 0, 0, 15), 16), "ssd");
        assert!(matches!(r.placement("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn invalid_placements_are_rejected() {
        let r = Router::in_memory(&["a"]);
        let mut p = Placement::single(ProjectKind::Image, "a");
        p.shard_count = 2;
        assert!(r.set_placement("x", p).is_err());
        assert!(r.set_placement("x", Placement::single(ProjectKind::Image, "zz")).is_err());
        assert!(r
            .set_placement("x", Placement::single(ProjectKind::Image, "a").with_active_write("a"))
            .is_err());
    }

    #[test]
    fn placement_file_is_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("placement.toml");
        {
            let r = Router::open(&path).unwrap();
            r.set_placement("p", Placement::single(ProjectKind::Image, "default")).unwrap();
        }
        let r = Router::open(&path).unwrap();
        assert_eq!(r.placement("p").unwrap().backends, vec!["default".to_string()]);
    }
}
