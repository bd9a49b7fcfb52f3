//! Cuboid-chunked dense array storage.
//!
//! A [`Store`] owns the catalog of datasets and projects, the [`Router`] that
//! places cuboids on backends, and an optional LRU of decoded cuboids. Cuboids
//! are allocated lazily: a cuboid absent from its backend reads as zeros, and
//! writing an all-zero cuboid deletes its key.

pub mod backend;
pub mod cache;
pub mod compress;
pub mod config;
pub mod key;
pub mod volume;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard, RwLock};
use serde::{Deserialize, Serialize};

use crate::annotations::exceptions::ExceptionList;
use crate::annotations::index::{self, IndexDelta};
use crate::curve::{cuboids_for_region, morton_decode, MortonKey, VoxelBox, VoxelRegion};
use crate::error::{Error, Result};
use crate::router::{write_atomic, Placement, Router};

use backend::{Backend, WriteBatch};
use cache::{CachedCuboid, CuboidCache};
use compress::{compress, decompress, Codec};
pub use config::{DatasetConfig, ProjectConfig, ProjectKind, ResolutionLevel, VoxelType};
use key::CuboidKey;
pub use volume::DenseVolume;

/// Cuboids locked and committed together by one read-modify-write step.
pub const WRITE_CHUNK: usize = 64;

const LOCK_STRIPES: usize = 1024;

/// One chunk of voxels plus its exceptions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cuboid {
    pub voxel_type: VoxelType,
    pub shape: [u64; 4],
    pub data: Vec<u8>,
    pub exceptions: Option<ExceptionList>,
}

impl Cuboid {
    pub fn zeros(voxel_type: VoxelType, shape: [u64; 4]) -> Self {
        let n = shape.iter().product::<u64>() as usize * voxel_type.width();
        Cuboid { voxel_type, shape, data: vec![0; n], exceptions: None }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&b| b == 0) && self.exceptions.as_ref().map_or(true, ExceptionList::is_empty)
    }
}

#[derive(Debug, Default)]
struct ProjectRuntime {
    locked: AtomicBool,
    /// Serializes index read-modify-write and id assignment.
    index: Mutex<()>,
    /// Next unassigned object id, loaded from the backend on first use.
    next_id: Mutex<Option<u32>>,
}

/// A project together with its dataset geometry.
#[derive(Debug)]
pub struct Project {
    pub config: ProjectConfig,
    pub dataset: DatasetConfig,
    runtime: Arc<ProjectRuntime>,
}

impl Project {
    pub fn token(&self) -> &str {
        &self.config.token
    }

    pub fn level(&self, r: u8) -> Result<ResolutionLevel> {
        self.dataset.level(r)
    }

    pub fn is_locked(&self) -> bool {
        self.runtime.locked.load(Ordering::Acquire)
    }

    pub fn check_writable(&self) -> Result<()> {
        if self.config.read_only {
            return Err(Error::Permission(format!("project {} is read-only", self.config.token)));
        }
        if self.is_locked() {
            return Err(Error::Locked(self.config.token.clone()));
        }
        Ok(())
    }

    fn codec(&self) -> Codec {
        if self.config.compress {
            Codec::Deflate
        } else {
            Codec::None
        }
    }

    pub(crate) fn index_guard(&self) -> MutexGuard<'_, ()> {
        self.runtime.index.lock()
    }

    pub(crate) fn id_counter(&self) -> MutexGuard<'_, Option<u32>> {
        self.runtime.next_id.lock()
    }
}

/// Held while a batch job (propagation, migration) owns a project.
#[derive(Debug)]
pub struct ProjectLock {
    runtime: Arc<ProjectRuntime>,
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        self.runtime.locked.store(false, Ordering::Release);
    }
}

#[derive(Default)]
struct Catalog {
    datasets: BTreeMap<String, DatasetConfig>,
    projects: BTreeMap<String, Arc<Project>>,
}

#[derive(Default, Serialize, Deserialize)]
struct CatalogFile {
    datasets: Vec<DatasetConfig>,
    projects: Vec<ProjectConfig>,
}

/// Mutable view of one cuboid inside [`Store::mutate_cuboids`].
pub(crate) struct CuboidMut<'a> {
    pub morton: u64,
    pub cell: VoxelBox,
    pub voxels: &'a mut [u8],
    pub exceptions: &'a mut ExceptionList,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MutationSummary {
    pub cuboids_written: usize,
    pub index_writes: usize,
}

impl std::ops::AddAssign for MutationSummary {
    fn add_assign(&mut self, o: Self) {
        self.cuboids_written += o.cuboids_written;
        self.index_writes += o.index_writes;
    }
}

struct Stripes(Vec<Mutex<()>>);

impl Stripes {
    fn new(n: usize) -> Self {
        Stripes((0..n).map(|_| Mutex::new(())).collect())
    }

    fn lock(&self, hashes: impl Iterator<Item = u64>) -> Vec<MutexGuard<'_, ()>> {
        let n = self.0.len() as u64;
        let idx: BTreeSet<usize> = hashes.map(|h| (h % n) as usize).collect();
        idx.into_iter().map(|i| self.0[i].lock()).collect()
    }
}

fn hash_of(v: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

pub struct Store {
    catalog: RwLock<Catalog>,
    catalog_path: Option<PathBuf>,
    router: Router,
    cache: CuboidCache,
    cuboid_locks: Stripes,
    object_locks: Stripes,
    index_writes: AtomicU64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("router", &self.router).field("catalog", &self.catalog_path).finish()
    }
}

impl Store {
    pub fn new(router: Router) -> Self {
        Store {
            catalog: RwLock::new(Catalog::default()),
            catalog_path: None,
            router,
            cache: CuboidCache::new(0),
            cuboid_locks: Stripes::new(LOCK_STRIPES),
            object_locks: Stripes::new(LOCK_STRIPES),
            index_writes: AtomicU64::new(0),
        }
    }

    /// Single in-memory backend named `memory`.
    pub fn in_memory() -> Self {
        Store::new(Router::in_memory(&["memory"]))
    }

    /// Open (or create) a data directory holding `catalog.json` and, unless
    /// another path is given, `placement.toml`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, None::<PathBuf>)
    }

    pub fn open_with(dir: impl AsRef<Path>, placement: Option<impl AsRef<Path>>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let placement = placement.map_or_else(|| dir.join("placement.toml"), |p| p.as_ref().to_path_buf());
        let mut store = Store::new(Router::open(placement)?);
        let path = dir.join("catalog.json");
        if path.exists() {
            let file: CatalogFile = serde_json::from_slice(&std::fs::read(&path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut cat = store.catalog.write();
            for ds in file.datasets {
                cat.datasets.insert(ds.name.clone(), ds);
            }
            for pc in file.projects {
                let ds = cat
                    .datasets
                    .get(&pc.dataset)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("project {} names unknown dataset", pc.token)))?;
                cat.projects.insert(pc.token.clone(), Arc::new(Project { config: pc, dataset: ds, runtime: Default::default() }));
            }
        }
        store.catalog_path = Some(path);
        Ok(store)
    }

    pub fn with_cache_bytes(self, bytes: usize) -> Self {
        self.cache.set_capacity(bytes);
        self
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn cache(&self) -> &CuboidCache {
        &self.cache
    }

    /// Object-index write batches issued since the store was opened.
    pub fn index_write_count(&self) -> u64 {
        self.index_writes.load(Ordering::Relaxed)
    }

    fn save_catalog(&self, cat: &Catalog) -> Result<()> {
        if let Some(path) = &self.catalog_path {
            let file = CatalogFile {
                datasets: cat.datasets.values().cloned().collect(),
                projects: cat.projects.values().map(|p| p.config.clone()).collect(),
            };
            write_atomic(path, &serde_json::to_vec_pretty(&file).expect("catalog serializes"))?;
        }
        Ok(())
    }

    pub fn create_dataset(&self, cfg: DatasetConfig) -> Result<()> {
        cfg.validate()?;
        let mut cat = self.catalog.write();
        if cat.datasets.contains_key(&cfg.name) {
            return Err(Error::Conflict(format!("dataset {} exists", cfg.name)));
        }
        cat.datasets.insert(cfg.name.clone(), cfg);
        self.save_catalog(&cat)
    }

    pub fn dataset(&self, name: &str) -> Result<DatasetConfig> {
        self.catalog
            .read()
            .datasets
            .get(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("dataset {name}")))
    }

    pub fn datasets(&self) -> Vec<String> {
        self.catalog.read().datasets.keys().cloned().collect()
    }

    /// Create a project on the router's default backend.
    pub fn create_project(&self, cfg: ProjectConfig) -> Result<Arc<Project>> {
        let placement = Placement::single(cfg.kind, self.router.default_backend().clone());
        self.create_project_with(cfg, placement)
    }

    pub fn create_project_with(&self, cfg: ProjectConfig, mut placement: Placement) -> Result<Arc<Project>> {
        let mut cat = self.catalog.write();
        let ds = cat
            .datasets
            .get(&cfg.dataset)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("dataset {}", cfg.dataset)))?;
        cfg.validate(&ds)?;
        if cat.projects.contains_key(&cfg.token) {
            return Err(Error::Conflict(format!("project {} exists", cfg.token)));
        }
        placement.kind = cfg.kind;
        self.router.set_placement(&cfg.token, placement)?;
        let project = Arc::new(Project { config: cfg, dataset: ds, runtime: Default::default() });
        cat.projects.insert(project.config.token.clone(), project.clone());
        self.save_catalog(&cat)?;
        Ok(project)
    }

    pub fn project(&self, token: &str) -> Result<Arc<Project>> {
        self.catalog
            .read()
            .projects
            .get(token)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("project {token}")))
    }

    pub fn projects(&self) -> Vec<String> {
        self.catalog.read().projects.keys().cloned().collect()
    }

    /// Take a project away from foreground writers. Fails with
    /// [`Error::Locked`] if a batch job already holds it.
    pub fn lock_project(&self, token: &str) -> Result<ProjectLock> {
        let p = self.project(token)?;
        if p.runtime.locked.swap(true, Ordering::AcqRel) {
            return Err(Error::Locked(token.to_owned()));
        }
        Ok(ProjectLock { runtime: p.runtime.clone() })
    }

    /// Serialize writers of one object; ids are locked in ascending order.
    pub(crate) fn lock_objects(&self, token: &str, ids: &[u32]) -> Vec<MutexGuard<'_, ()>> {
        self.object_locks.lock(ids.iter().map(|id| hash_of((token, *id))))
    }

    fn lock_cuboids(&self, token: &str, level: u8, channel: u32, mortons: &[u64]) -> Vec<MutexGuard<'_, ()>> {
        self.cuboid_locks.lock(mortons.iter().map(|m| hash_of((token, level, channel, *m))))
    }

    /// Clip `bounds` to the level; fully outside or empty is a bounds error.
    pub fn clip(&self, lvl: &ResolutionLevel, bounds: &VoxelBox) -> Result<VoxelBox> {
        if bounds.is_empty() {
            return Err(Error::Bounds(format!("{bounds:?} is empty")));
        }
        let clipped = bounds.intersect(&lvl.bounds());
        if clipped.is_empty() {
            return Err(Error::Bounds(format!("{bounds:?} lies outside level {} extent {:?}", lvl.index, lvl.extent)));
        }
        Ok(clipped)
    }

    fn check_channels(p: &Project, channels: &[u32]) -> Result<()> {
        if channels.is_empty() {
            return Err(Error::BadRequest("no channels requested".into()));
        }
        if let Some(c) = channels.iter().find(|&&c| c >= p.dataset.channels) {
            return Err(Error::NotFound(format!("channel {c} (dataset has {})", p.dataset.channels)));
        }
        Ok(())
    }

    /// Assemble a dense sub-volume. The region is clipped to the level extent.
    pub fn read_cutout(&self, token: &str, level: u8, region: &VoxelRegion) -> Result<DenseVolume> {
        let p = self.project(token)?;
        let lvl = p.level(level)?;
        Self::check_channels(&p, &region.channels)?;
        let bounds = self.clip(&lvl, &region.bounds)?;
        let mut vol = DenseVolume::zeros_with(p.config.voxel_type, bounds, region.channels.clone());
        vol.ndim = lvl.dims() as u8;
        for (i, &ch) in region.channels.iter().enumerate() {
            self.read_into(&p, &lvl, ch, &bounds, vol.channel_mut(i))?;
        }
        Ok(vol)
    }

    /// Copy `bounds` of one channel into `out`, laid out over `bounds`.
    pub(crate) fn read_into(&self, p: &Project, lvl: &ResolutionLevel, channel: u32, bounds: &VoxelBox, out: &mut [u8]) -> Result<()> {
        let width = p.config.voxel_type.width();
        let pieces = cuboids_for_region(bounds, lvl);
        let mortons: Vec<u64> = pieces.iter().map(|c| c.key.value).collect();
        let bufs = self.fetch_voxels(p, lvl, channel, &mortons)?;
        for (piece, buf) in pieces.iter().zip(bufs) {
            if let Some(buf) = buf {
                volume::copy_region(&buf, &lvl.cuboid_box(&piece.grid), out, bounds, &piece.overlap, width);
            }
        }
        Ok(())
    }

    fn decode_voxels(p: &Project, lvl: &ResolutionLevel, stored: &[u8]) -> Result<Vec<u8>> {
        let raw = decompress(stored)?;
        let want = lvl.cuboid_voxels() * p.config.voxel_type.width();
        if raw.len() != want {
            return Err(Error::Integrity(format!("cuboid holds {} bytes, expected {want}", raw.len())));
        }
        Ok(raw)
    }

    /// Decoded voxel buffers for `mortons` (ascending), `None` where absent.
    /// Misses are fetched with one `get_many` per run of keys on the same
    /// backend, so backend reads ascend in key order.
    pub(crate) fn fetch_voxels(&self, p: &Project, lvl: &ResolutionLevel, channel: u32, mortons: &[u64]) -> Result<Vec<CachedCuboid>> {
        let placement = self.router.placement(p.token())?;
        let key_space = lvl.key_space();
        let epoch = self.cache.epoch();
        let mut out: Vec<CachedCuboid> = vec![None; mortons.len()];
        let mut misses: Vec<(usize, CuboidKey, Vec<u8>)> = Vec::new();
        for (i, &m) in mortons.iter().enumerate() {
            let key = CuboidKey::new(p.token(), lvl.index, channel, m);
            let bytes = key.encode();
            match self.cache.get(&bytes) {
                Some(hit) => out[i] = hit,
                None => misses.push((i, key, bytes)),
            }
        }
        let mut start = 0;
        while start < misses.len() {
            let backend_id = self.router.route_id(&placement, &misses[start].1, key_space);
            let mut end = start + 1;
            while end < misses.len() && self.router.route_id(&placement, &misses[end].1, key_space) == backend_id {
                end += 1;
            }
            let run = &misses[start..end];
            let keys: Vec<Vec<u8>> = run.iter().map(|(_, _, b)| b.clone()).collect();
            let vals = self.router.backend(&backend_id)?.get_many(&keys)?;
            for ((i, _, bytes), val) in run.iter().zip(vals) {
                let decoded = match val {
                    Some(stored) => Some(Arc::new(Self::decode_voxels(p, lvl, &stored)?)),
                    None => None,
                };
                self.cache.fill(bytes.clone(), decoded.clone(), epoch);
                out[*i] = decoded;
            }
            start = end;
        }
        Ok(out)
    }

    /// Voxels and exception records read together: each cuboid key is
    /// followed by its `/exc` key, in one ascending pass per backend run.
    pub(crate) fn fetch_with_exceptions(
        &self,
        p: &Project,
        lvl: &ResolutionLevel,
        channel: u32,
        mortons: &[u64],
    ) -> Result<Vec<(CachedCuboid, Option<ExceptionList>)>> {
        if !p.config.exceptions {
            return Ok(self.fetch_voxels(p, lvl, channel, mortons)?.into_iter().map(|v| (v, None)).collect());
        }
        let placement = self.router.placement(p.token())?;
        let key_space = lvl.key_space();
        let mut out = Vec::with_capacity(mortons.len());
        let keys: Vec<CuboidKey> = mortons.iter().map(|&m| CuboidKey::new(p.token(), lvl.index, channel, m)).collect();
        let mut start = 0;
        while start < keys.len() {
            let backend_id = self.router.route_id(&placement, &keys[start], key_space);
            let mut end = start + 1;
            while end < keys.len() && self.router.route_id(&placement, &keys[end], key_space) == backend_id {
                end += 1;
            }
            let mut wanted = Vec::with_capacity(2 * (end - start));
            for k in &keys[start..end] {
                wanted.push(k.encode());
                wanted.push(k.exception_key());
            }
            let vals = self.router.backend(&backend_id)?.get_many(&wanted)?;
            for pair in vals.chunks(2) {
                let voxels = match &pair[0] {
                    Some(stored) => Some(Arc::new(Self::decode_voxels(p, lvl, stored)?)),
                    None => None,
                };
                let exc = match &pair[1] {
                    Some(stored) => Some(ExceptionList::decode(&decompress(stored)?)?),
                    None => None,
                };
                out.push((voxels, exc));
            }
            start = end;
        }
        Ok(out)
    }

    /// Fetch one cuboid; an absent key yields the zero cuboid.
    pub fn get_cuboid(&self, key: &CuboidKey) -> Result<Cuboid> {
        let p = self.project(&key.project)?;
        let lvl = p.level(key.level)?;
        Self::check_channels(&p, &[key.channel])?;
        let (voxels, exc) = self
            .fetch_with_exceptions(&p, &lvl, key.channel, &[key.morton])?
            .pop()
            .expect("one result per key");
        Ok(Cuboid {
            voxel_type: p.config.voxel_type,
            shape: lvl.cuboid,
            data: voxels.map_or_else(|| vec![0; lvl.cuboid_voxels() * p.config.voxel_type.width()], |v| (*v).clone()),
            exceptions: if p.config.exceptions { Some(exc.unwrap_or_default()) } else { None },
        })
    }

    /// Replace one cuboid. Annotation indexes are kept in step.
    pub fn put_cuboid(&self, key: &CuboidKey, cuboid: &Cuboid) -> Result<()> {
        let p = self.project(&key.project)?;
        p.check_writable()?;
        let lvl = p.level(key.level)?;
        Self::check_channels(&p, &[key.channel])?;
        if cuboid.voxel_type != p.config.voxel_type || cuboid.shape != lvl.cuboid {
            return Err(Error::BadRequest(format!(
                "cuboid {:?} {:?} does not match level {} ({:?} {:?})",
                cuboid.voxel_type, cuboid.shape, key.level, p.config.voxel_type, lvl.cuboid
            )));
        }
        if cuboid.data.len() != lvl.cuboid_voxels() * p.config.voxel_type.width() {
            return Err(Error::BadRequest("cuboid buffer length does not match its shape".into()));
        }
        let has_exc = cuboid.exceptions.as_ref().is_some_and(|e| !e.is_empty());
        if has_exc && !p.config.exceptions {
            return Err(Error::Config(format!("project {} does not record exceptions", p.token())));
        }
        let grid = morton_decode(MortonKey::new(key.morton, lvl.dims()))?;
        let g = grid.padded();
        let ge = lvl.grid_extent();
        if (0..lvl.dims()).any(|d| g[d] >= ge[d]) {
            return Err(Error::Bounds(format!("cuboid {:?} outside level {} grid", grid.coords(), key.level)));
        }
        self.mutate_cuboids(&p, &lvl, key.channel, &[key.morton], None, |c| {
            c.voxels.copy_from_slice(&cuboid.data);
            *c.exceptions = cuboid.exceptions.clone().unwrap_or_default();
            Ok(())
        })?;
        Ok(())
    }

    /// Write a dense volume at its own bounds. Image projects overwrite; on
    /// annotation projects the written labels replace both primary labels and
    /// exception entries of every covered voxel.
    pub fn write_cutout(&self, token: &str, level: u8, volume: &DenseVolume) -> Result<MutationSummary> {
        let p = self.project(token)?;
        p.check_writable()?;
        self.write_volume(&p, level, volume)
    }

    pub(crate) fn write_volume(&self, p: &Project, level: u8, volume: &DenseVolume) -> Result<MutationSummary> {
        let lvl = p.level(level)?;
        volume.check()?;
        if volume.voxel_type != p.config.voxel_type {
            return Err(Error::BadRequest(format!(
                "volume holds {:?}, project {} stores {:?}",
                volume.voxel_type,
                p.token(),
                p.config.voxel_type
            )));
        }
        Self::check_channels(p, &volume.channels)?;
        let bounds = volume.bounds;
        if bounds.is_empty() || !lvl.bounds().contains_box(&bounds) {
            return Err(Error::Bounds(format!("{bounds:?} outside level {level} extent {:?}", lvl.extent)));
        }
        let width = p.config.voxel_type.width();
        let pieces = cuboids_for_region(&bounds, &lvl);
        let overlaps: BTreeMap<u64, VoxelBox> = pieces.iter().map(|c| (c.key.value, c.overlap)).collect();
        let mortons: Vec<u64> = overlaps.keys().copied().collect();
        let mut summary = MutationSummary::default();
        for (i, &ch) in volume.channels.iter().enumerate() {
            let src = volume.channel(i);
            summary += self.mutate_cuboids(p, &lvl, ch, &mortons, None, |c| {
                let overlap = overlaps[&c.morton];
                volume::copy_region(src, &bounds, c.voxels, &c.cell, &overlap, width);
                if !c.exceptions.is_empty() {
                    for t in overlap.lo[3]..overlap.hi[3] {
                        for z in overlap.lo[2]..overlap.hi[2] {
                            for y in overlap.lo[1]..overlap.hi[1] {
                                for x in overlap.lo[0]..overlap.hi[0] {
                                    c.exceptions.take(lvl.intra_offset([x, y, z, t]) as u32);
                                }
                            }
                        }
                    }
                }
                Ok(())
            })?;
        }
        Ok(summary)
    }

    /// Locked read-modify-write of `mortons` (ascending) in chunks of
    /// [`WRITE_CHUNK`]. On annotation projects each chunk's index changes are
    /// applied in one batch before its locks are released; `tail` is appended
    /// to the last such batch (or written alone).
    pub(crate) fn mutate_cuboids<F>(
        &self,
        p: &Project,
        lvl: &ResolutionLevel,
        channel: u32,
        mortons: &[u64],
        mut tail: Option<WriteBatch>,
        mut f: F,
    ) -> Result<MutationSummary>
    where
        F: FnMut(&mut CuboidMut<'_>) -> Result<()>,
    {
        debug_assert!(mortons.windows(2).all(|w| w[0] < w[1]));
        let track = p.config.is_annotation();
        let mut summary = MutationSummary::default();
        let chunks: Vec<&[u64]> = mortons.chunks(WRITE_CHUNK).collect();
        let last = chunks.len().saturating_sub(1);
        for (ci, chunk) in chunks.into_iter().enumerate() {
            let _guards = self.lock_cuboids(p.token(), lvl.index, channel, chunk);
            let current = self.fetch_with_exceptions(p, lvl, channel, chunk)?;
            let mut updates = Vec::new();
            let mut delta = IndexDelta::default();
            for (&m, (old_vox, old_exc)) in chunk.iter().zip(current) {
                let grid = morton_decode(MortonKey::new(m, lvl.dims()))?;
                let mut voxels = old_vox
                    .as_ref()
                    .map_or_else(|| vec![0; lvl.cuboid_voxels() * p.config.voxel_type.width()], |v| (**v).clone());
                let mut exceptions = old_exc.clone().unwrap_or_default();
                let before = if track { index::ids_in_cuboid(&voxels, &exceptions) } else { BTreeSet::new() };
                f(&mut CuboidMut {
                    morton: m,
                    cell: lvl.cuboid_box(&grid),
                    voxels: &mut voxels,
                    exceptions: &mut exceptions,
                })?;
                let vox_changed = match &old_vox {
                    Some(old) => **old != voxels,
                    None => voxels.iter().any(|&b| b != 0),
                };
                let exc_changed = old_exc.unwrap_or_default() != exceptions;
                if !vox_changed && !exc_changed {
                    continue;
                }
                if track {
                    delta.record(lvl.index, m, &before, &index::ids_in_cuboid(&voxels, &exceptions));
                }
                updates.push((m, voxels, exc_changed.then_some(exceptions)));
            }
            summary.cuboids_written += updates.len();
            self.commit(p, lvl, channel, updates)?;
            let extra = if ci == last { tail.take() } else { None };
            if track && (!delta.is_empty() || extra.is_some()) {
                let _index = p.index_guard();
                index::apply_delta(self, p, &delta, extra.unwrap_or_default())?;
                summary.index_writes += 1;
                self.index_writes.fetch_add(1, Ordering::Relaxed);
            }
        }
        if let Some(batch) = tail {
            if !batch.is_empty() {
                let _index = p.index_guard();
                self.router.home(p.token())?.write(batch)?;
                summary.index_writes += 1;
                self.index_writes.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(summary)
    }

    /// Store new cuboid contents, one write batch per backend. All-zero
    /// cuboids are deleted; `Some(list)` replaces the exception record.
    pub(crate) fn commit(
        &self,
        p: &Project,
        lvl: &ResolutionLevel,
        channel: u32,
        updates: Vec<(u64, Vec<u8>, Option<ExceptionList>)>,
    ) -> Result<()> {
        if updates.is_empty() {
            return Ok(());
        }
        let placement = self.router.placement(p.token())?;
        let key_space = lvl.key_space();
        let codec = p.codec();
        let mut batches: BTreeMap<String, WriteBatch> = BTreeMap::new();
        let mut cached = Vec::with_capacity(updates.len());
        for (m, voxels, exc) in updates {
            let key = CuboidKey::new(p.token(), lvl.index, channel, m);
            let batch = batches.entry(self.router.route_id(&placement, &key, key_space)).or_default();
            let bytes = key.encode();
            let zero = voxels.iter().all(|&b| b == 0);
            if zero {
                batch.delete(bytes.clone());
            } else {
                batch.put(bytes.clone(), compress(&voxels, codec));
            }
            if let Some(exc) = exc {
                if exc.is_empty() {
                    batch.delete(key.exception_key());
                } else {
                    batch.put(key.exception_key(), compress(&exc.encode(), Codec::Deflate));
                }
            }
            cached.push((bytes, if zero { None } else { Some(Arc::new(voxels)) }));
        }
        for (id, batch) in batches {
            self.router.backend(&id)?.write(batch)?;
        }
        for (k, v) in cached {
            self.cache.insert(k, v);
        }
        Ok(())
    }

    /// Every stored cuboid of a level and channel, ascending, via one ordered
    /// scan per backend holding the project.
    pub fn scan_cuboids(&self, token: &str, level: u8, channel: u32) -> Result<Vec<(u64, Cuboid)>> {
        let p = self.project(token)?;
        let lvl = p.level(level)?;
        let placement = self.router.placement(token)?;
        let (lo, hi) = key::cuboid_range(token, level, channel);
        let mut found: BTreeMap<u64, Cuboid> = BTreeMap::new();
        for id in placement.live_backends() {
            for (k, v) in self.router.backend(&id)?.scan(&lo, &hi)? {
                let Some((ck, is_exc)) = CuboidKey::decode(&k) else { continue };
                let entry = found.entry(ck.morton).or_insert_with(|| Cuboid::zeros(p.config.voxel_type, lvl.cuboid));
                if is_exc {
                    entry.exceptions = Some(ExceptionList::decode(&decompress(&v)?)?);
                } else {
                    entry.data = Self::decode_voxels(&p, &lvl, &v)?;
                }
            }
        }
        Ok(found.into_iter().collect())
    }

    /// Remove every cuboid of one level (all channels).
    pub(crate) fn clear_level(&self, p: &Project, level: u8) -> Result<()> {
        let placement = self.router.placement(p.token())?;
        let (lo, hi) = key::level_range(p.token(), level);
        for id in placement.live_backends() {
            let b = self.router.backend(&id)?;
            let keys = b.scan_keys(&lo, &hi)?;
            for chunk in keys.chunks(1024) {
                let mut batch = WriteBatch::new();
                for k in chunk {
                    batch.delete(k.clone());
                }
                b.write(batch)?;
            }
        }
        self.cache.invalidate_project(p.token());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::backend::Op;

    fn store() -> Store {
        let s = Store::in_memory();
        s.create_dataset(DatasetConfig::new("ds", [300, 300, 40]).with_levels(3)).unwrap();
        s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
        s
    }

    #[test]
    fn unwritten_space_reads_zero() {
        let s = store();
        let v = s.read_cutout("img", 0, &VoxelBox::xyz((0, 10), (0, 10), (0, 10)).into()).unwrap();
        assert!(v.is_zero());
        assert_eq!(v.data.len(), 1000);
    }

    #[test]
    fn one_voxel_round_trip() {
        let s = store();
        let b = VoxelBox::xyz((0, 1), (0, 1), (0, 1));
        s.write_cutout("img", 0, &DenseVolume::from_u8(b, vec![7]).unwrap()).unwrap();
        assert_eq!(s.read_cutout("img", 0, &b.into()).unwrap().data, vec![7]);
    }

    #[test]
    fn clipping_and_bounds() {
        let s = store();
        let v = s.read_cutout("img", 1, &VoxelBox::xyz((140, 200), (0, 1), (0, 1)).into()).unwrap();
        assert_eq!(v.bounds, VoxelBox::xyz((140, 150), (0, 1), (0, 1)));
        let outside = s.read_cutout("img", 0, &VoxelBox::xyz((300, 301), (0, 1), (0, 1)).into());
        assert!(matches!(outside, Err(Error::Bounds(_))));
        assert!(matches!(s.read_cutout("img", 3, &VoxelBox::xyz((0, 1), (0, 1), (0, 1)).into()), Err(Error::NotFound(_))));
        assert!(matches!(s.read_cutout("nope", 0, &VoxelBox::xyz((0, 1), (0, 1), (0, 1)).into()), Err(Error::NotFound(_))));
    }

    #[test]
    fn zero_writes_are_elided_and_reads_ascend() {
        let s = store();
        let b = VoxelBox::xyz((0, 300), (0, 300), (0, 40));
        s.write_cutout("img", 0, &DenseVolume::zeros(VoxelType::Uint8, b)).unwrap();
        assert_eq!(s.router().placement_report("img").unwrap()[0].keys, 0);

        let mut v = DenseVolume::zeros(VoxelType::Uint8, b);
        v.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i % 251) as u8);
        s.write_cutout("img", 0, &v).unwrap();
        let backend = s.router().backend("memory").unwrap();
        backend.set_logging(true);
        let back = s.read_cutout("img", 0, &b.into()).unwrap();
        assert_eq!(back.data, v.data);
        let reads: Vec<Vec<u8>> = backend
            .take_log()
            .into_iter()
            .filter_map(|op| if let Op::Get(k) = op { Some(k) } else { None })
            .collect();
        assert_eq!(reads.len(), 3 * 3 * 3);
        assert!(reads.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn read_only_projects_refuse_writes() {
        let s = store();
        s.create_project(ProjectConfig::image("ro", "ds", VoxelType::Uint8).read_only(true)).unwrap();
        let b = VoxelBox::xyz((0, 1), (0, 1), (0, 1));
        let r = s.write_cutout("ro", 0, &DenseVolume::from_u8(b, vec![1]).unwrap());
        assert!(matches!(r, Err(Error::Permission(_))));
    }

    #[test]
    fn locked_projects_refuse_writes() {
        let s = store();
        let b = VoxelBox::xyz((0, 1), (0, 1), (0, 1));
        let lock = s.lock_project("img").unwrap();
        assert!(matches!(s.lock_project("img"), Err(Error::Locked(_))));
        assert!(matches!(s.write_cutout("img", 0, &DenseVolume::from_u8(b, vec![1]).unwrap()), Err(Error::Locked(_))));
        drop(lock);
        s.write_cutout("img", 0, &DenseVolume::from_u8(b, vec![1]).unwrap()).unwrap();
    }

    #[test]
    fn cuboid_get_put() {
        let s = store();
        let key = CuboidKey::new("img", 0, 0, 3);
        let zero = s.get_cuboid(&key).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.data.len(), 1 << 18);
        let mut c = zero.clone();
        c.data[17] = 9;
        s.put_cuboid(&key, &c).unwrap();
        assert_eq!(s.get_cuboid(&key).unwrap(), c);
        s.put_cuboid(&key, &zero).unwrap();
        assert_eq!(s.get_cuboid(&key).unwrap(), zero);
    }

    #[test]
    fn cache_serves_repeat_reads() {
        let s = store().with_cache_bytes(64 << 20);
        let b = VoxelBox::xyz((0, 200), (0, 200), (0, 20));
        let mut v = DenseVolume::zeros(VoxelType::Uint8, b);
        v.data.iter_mut().for_each(|x| *x = 3);
        s.write_cutout("img", 0, &v).unwrap();
        let before = s.router().total_stats();
        assert_eq!(s.read_cutout("img", 0, &b.into()).unwrap().data, v.data);
        assert_eq!(s.router().total_stats().keys_read, before.keys_read);
    }

    #[test]
    fn catalog_persists() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            s.create_dataset(DatasetConfig::new("ds", [64, 64, 16])).unwrap();
            s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
            let b = VoxelBox::xyz((5, 6), (5, 6), (5, 6));
            s.write_cutout("img", 0, &DenseVolume::from_u8(b, vec![42]).unwrap()).unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        let b = VoxelBox::xyz((5, 6), (5, 6), (5, 6));
        assert_eq!(s.read_cutout("img", 0, &b.into()).unwrap().data, vec![42]);
        assert!(matches!(s.create_dataset(DatasetConfig::new("ds", [1, 1, 1])), Err(Error::Conflict(_))));
    }
}
