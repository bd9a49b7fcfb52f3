//! Labeled volumes: object metadata, write disciplines, exceptions, the sparse
//! object index, object-centric reads and metadata queries.

pub mod exceptions;
pub mod index;
pub mod query;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curve::{cuboids_for_region, VoxelBox};
use crate::error::{Error, Result};
use crate::store::backend::{Backend, WriteBatch};
use crate::store::key::{counter_key, meta_key};
use crate::store::volume::{label_at, set_label};
use crate::store::{DenseVolume, MutationSummary, Project, Store, VoxelType};

pub use exceptions::ExceptionList;
pub use query::{FloatOp, Predicate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectType {
    Seed,
    Synapse,
    Segment,
    Neuron,
    Organelle,
    #[default]
    Generic,
}

impl ObjectType {
    pub const ALL: [ObjectType; 6] = [
        ObjectType::Seed,
        ObjectType::Synapse,
        ObjectType::Segment,
        ObjectType::Neuron,
        ObjectType::Organelle,
        ObjectType::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectType::Seed => "seed",
            ObjectType::Synapse => "synapse",
            ObjectType::Segment => "segment",
            ObjectType::Neuron => "neuron",
            ObjectType::Organelle => "organelle",
            ObjectType::Generic => "generic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metadata of one annotation object. Id 0 means "assign one".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationObject {
    #[serde(default)]
    pub id: u32,
    #[serde(rename = "type", default)]
    pub kind: ObjectType,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub status: i32,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub kv: BTreeMap<String, String>,
}

impl AnnotationObject {
    pub fn new(kind: ObjectType) -> Self {
        AnnotationObject { kind, confidence: 1.0, ..Default::default() }
    }

    pub fn with_id(mut self, id: u32) -> Self {
        self.id = id;
        self
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = c;
        self
    }

    pub fn with_status(mut self, s: i32) -> Self {
        self.status = s;
        self
    }

    pub fn with_author(mut self, a: impl Into<String>) -> Self {
        self.author = a.into();
        self
    }

    pub fn with_kv(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.kv.insert(k.into(), v.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::BadRequest(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        let strings = std::iter::once(&self.author).chain(self.kv.iter().flat_map(|(k, v)| [k, v]));
        for s in strings {
            if s.contains('\0') {
                return Err(Error::BadRequest("metadata strings may not contain NUL".into()));
            }
        }
        if self.kv.keys().any(String::is_empty) {
            return Err(Error::BadRequest("empty key in user key/value pairs".into()));
        }
        Ok(())
    }

    /// UTF-8 JSON with sorted keys and no whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self).expect("metadata serializes").to_string()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Discipline {
    #[default]
    Overwrite,
    Preserve,
    Exception,
}

impl Discipline {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "overwrite" => Discipline::Overwrite,
            "preserve" => Discipline::Preserve,
            "exception" => Discipline::Exception,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Discipline::Overwrite => "overwrite",
            Discipline::Preserve => "preserve",
            Discipline::Exception => "exception",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteOptions {
    pub discipline: Discipline,
    /// The id must already exist.
    pub update: bool,
    /// Leave metadata untouched (a new id still gets a default record).
    pub dataonly: bool,
    /// Level to write at; the project's annotation level when `None`.
    pub level: Option<u8>,
}

impl WriteOptions {
    pub fn new(discipline: Discipline) -> Self {
        WriteOptions { discipline, ..Default::default() }
    }
}

/// Voxels of one object in a write.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Payload {
    #[default]
    None,
    /// Absolute (x, y, z, t) positions at the write level.
    Voxels(Vec<[u64; 4]>),
    /// Every nonzero voxel of the volume belongs to the object.
    Dense(DenseVolume),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteOutcome {
    pub ids: Vec<u32>,
    pub summary: MutationSummary,
}

fn apply_discipline(c: &mut crate::store::CuboidMut<'_>, off: usize, id: u32, d: Discipline) {
    let cur = label_at(c.voxels, off);
    if cur == id {
        return;
    }
    let o = off as u32;
    if cur == 0 {
        set_label(c.voxels, off, id);
        c.exceptions.remove(o, id);
        return;
    }
    match d {
        Discipline::Overwrite => {
            set_label(c.voxels, off, id);
            c.exceptions.remove(o, id);
        }
        Discipline::Preserve => {}
        Discipline::Exception => {
            c.exceptions.add(o, id);
        }
    }
}

impl Store {
    fn annotation_project(&self, token: &str) -> Result<std::sync::Arc<Project>> {
        let p = self.project(token)?;
        if !p.config.is_annotation() {
            return Err(Error::BadRequest(format!("project {token} holds no annotations")));
        }
        Ok(p)
    }

    pub fn write_annotation(&self, token: &str, object: AnnotationObject, payload: Payload, opts: WriteOptions) -> Result<u32> {
        Ok(self.batch_write(token, vec![(object, payload)], opts)?[0])
    }

    pub fn batch_write(&self, token: &str, items: Vec<(AnnotationObject, Payload)>, opts: WriteOptions) -> Result<Vec<u32>> {
        Ok(self.batch_write_detailed(token, items, opts)?.ids)
    }

    /// Write several objects as if one after another, with one index batch
    /// per chunk of touched cuboids instead of one per object. Every member is
    /// validated before anything is written.
    pub fn batch_write_detailed(
        &self,
        token: &str,
        mut items: Vec<(AnnotationObject, Payload)>,
        opts: WriteOptions,
    ) -> Result<WriteOutcome> {
        let p = self.annotation_project(token)?;
        p.check_writable()?;
        if opts.discipline == Discipline::Exception && !p.config.exceptions {
            return Err(Error::Config(format!("project {token} does not record exceptions")));
        }
        let level = opts.level.unwrap_or(p.config.annotation_level);
        let lvl = p.level(level)?;
        let extent = lvl.bounds();
        for (obj, payload) in &items {
            obj.validate()?;
            if opts.update && obj.id == 0 {
                return Err(Error::BadRequest("update needs an object id".into()));
            }
            match payload {
                Payload::None => {}
                Payload::Voxels(vs) => {
                    if let Some(v) = vs.iter().find(|v| !extent.contains(**v)) {
                        return Err(Error::Bounds(format!("voxel {v:?} outside level {level} extent {:?}", lvl.extent)));
                    }
                }
                Payload::Dense(vol) => {
                    vol.check()?;
                    if vol.channels.len() != 1 {
                        return Err(Error::BadRequest("annotation volumes have one channel".into()));
                    }
                    if !extent.contains_box(&vol.bounds) {
                        return Err(Error::Bounds(format!("{:?} outside level {level} extent {:?}", vol.bounds, lvl.extent)));
                    }
                }
            }
        }

        let home = self.router().home(token)?;
        let given: Vec<u32> = items.iter().map(|(o, _)| o.id).filter(|&id| id != 0).collect();
        let existing = if given.is_empty() {
            Vec::new()
        } else {
            home.get_many(&given.iter().map(|&id| meta_key(token, id)).collect::<Vec<_>>())?
        };
        let mut meta: BTreeMap<u32, AnnotationObject> = BTreeMap::new();
        for (id, stored) in given.iter().zip(existing) {
            match stored {
                Some(bytes) => {
                    meta.insert(*id, AnnotationObject::from_json(&bytes)?);
                }
                None if opts.update => return Err(Error::NotFound(format!("object {id}"))),
                None => {}
            }
        }

        self.assign_ids(&p, &mut items)?;
        let ids: Vec<u32> = items.iter().map(|(o, _)| o.id).collect();
        let mut lock_ids = ids.clone();
        lock_ids.sort_unstable();
        lock_ids.dedup();
        let _objects = self.lock_objects(token, &lock_ids);

        let mut tail = WriteBatch::new();
        for (obj, _) in &items {
            let old = meta.get(&obj.id).cloned();
            if opts.dataonly && old.is_some() {
                continue;
            }
            query::put_metadata(token, old.as_ref(), obj, &mut tail);
            meta.insert(obj.id, obj.clone());
        }

        // morton → [(member, intra-cuboid offsets)] in batch order
        let mut work: BTreeMap<u64, Vec<(u32, Vec<usize>)>> = BTreeMap::new();
        for (obj, payload) in &items {
            let mut per_cuboid: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            match payload {
                Payload::None => {}
                Payload::Voxels(vs) => {
                    for &v in vs {
                        let key = crate::curve::morton_encode(&lvl.grid_of(v)).value;
                        per_cuboid.entry(key).or_default().push(lvl.intra_offset(v));
                    }
                }
                Payload::Dense(vol) => {
                    for piece in cuboids_for_region(&vol.bounds, &lvl) {
                        let o = piece.overlap;
                        let mut offs = Vec::new();
                        for t in o.lo[3]..o.hi[3] {
                            for z in o.lo[2]..o.hi[2] {
                                for y in o.lo[1]..o.hi[1] {
                                    for x in o.lo[0]..o.hi[0] {
                                        let pt = [x, y, z, t];
                                        if vol.get(pt) != Some(0) {
                                            offs.push(lvl.intra_offset(pt));
                                        }
                                    }
                                }
                            }
                        }
                        if !offs.is_empty() {
                            per_cuboid.insert(piece.key.value, offs);
                        }
                    }
                }
            }
            for (m, offs) in per_cuboid {
                work.entry(m).or_default().push((obj.id, offs));
            }
        }

        let mortons: Vec<u64> = work.keys().copied().collect();
        let discipline = opts.discipline;
        let summary = self.mutate_cuboids(&p, &lvl, 0, &mortons, Some(tail), |c| {
            for (id, offs) in &work[&c.morton] {
                for &off in offs {
                    apply_discipline(c, off, *id, discipline);
                }
            }
            Ok(())
        })?;
        Ok(WriteOutcome { ids, summary })
    }

    /// Fill in id 0 members from the project counter and advance the counter
    /// past any explicit id; the counter is persisted before returning.
    fn assign_ids(&self, p: &Project, items: &mut [(AnnotationObject, Payload)]) -> Result<()> {
        let home = self.router().home(p.token())?;
        let mut next = p.id_counter();
        let mut n = match *next {
            Some(n) => n,
            None => match home.get(&counter_key(p.token()))? {
                Some(b) if b.len() == 4 => u32::from_le_bytes(b[..4].try_into().unwrap()),
                Some(_) => return Err(Error::Integrity("malformed id counter".into())),
                None => 1,
            },
        };
        let start = n;
        for (obj, _) in items.iter_mut() {
            if obj.id == 0 {
                obj.id = n;
                n = n.checked_add(1).ok_or_else(|| Error::Conflict("object ids exhausted".into()))?;
            } else if obj.id >= n {
                n = obj.id.checked_add(1).ok_or_else(|| Error::Conflict("object ids exhausted".into()))?;
            }
        }
        if n != start || next.is_none() {
            home.put(&counter_key(p.token()), &n.to_le_bytes())?;
        }
        *next = Some(n);
        Ok(())
    }

    pub fn get_object(&self, token: &str, id: u32) -> Result<AnnotationObject> {
        self.annotation_project(token)?;
        match self.router().home(token)?.get(&meta_key(token, id))? {
            Some(bytes) => AnnotationObject::from_json(&bytes),
            None => Err(Error::NotFound(format!("object {id}"))),
        }
    }

    /// Metadata of several objects in request order; any unknown id fails
    /// the whole read.
    pub fn batch_read(&self, token: &str, ids: &[u32]) -> Result<Vec<AnnotationObject>> {
        self.annotation_project(token)?;
        let keys: Vec<Vec<u8>> = ids.iter().map(|&id| meta_key(token, id)).collect();
        let vals = self.router().home(token)?.get_many(&keys)?;
        ids.iter()
            .zip(vals)
            .map(|(id, v)| match v {
                Some(bytes) => AnnotationObject::from_json(&bytes),
                None => Err(Error::NotFound(format!("object {id}"))),
            })
            .collect()
    }

    /// Every voxel carrying `id` as primary label or exception, sorted by
    /// (z, y, x, t). Reads the index and then the listed cuboids in one
    /// ascending pass.
    pub fn object_voxels(&self, token: &str, id: u32, level: u8) -> Result<Vec<[u64; 4]>> {
        let p = self.annotation_project(token)?;
        let lvl = p.level(level)?;
        let keys = index::read_index(self, &p, level, id)?;
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (&m, (voxels, exc)) in keys.iter().zip(self.fetch_with_exceptions(&p, &lvl, 0, &keys)?) {
            let grid = crate::curve::morton_decode(crate::curve::MortonKey::new(m, lvl.dims()))?;
            if let Some(buf) = voxels {
                for (off, chunk) in buf.chunks_exact(4).enumerate() {
                    if u32::from_le_bytes(chunk.try_into().unwrap()) == id {
                        out.push(lvl.voxel_at(&grid, off));
                    }
                }
            }
            if let Some(exc) = exc {
                for (off, ids) in exc.iter() {
                    if ids.contains(&id) {
                        out.push(lvl.voxel_at(&grid, off as usize));
                    }
                }
            }
        }
        out.sort_unstable_by_key(|v| (v[2], v[1], v[0], v[3]));
        out.dedup();
        Ok(out)
    }

    /// Cuboid-granularity bounding box from the index alone, clipped to the
    /// level extent. No voxel data is read.
    pub fn object_bounding_box(&self, token: &str, id: u32, level: u8) -> Result<VoxelBox> {
        let p = self.annotation_project(token)?;
        let lvl = p.level(level)?;
        let keys = index::read_index(self, &p, level, id)?;
        let mut bbox: Option<VoxelBox> = None;
        for m in keys {
            let grid = crate::curve::morton_decode(crate::curve::MortonKey::new(m, lvl.dims()))?;
            let cell = lvl.cuboid_box(&grid);
            bbox = Some(bbox.map_or(cell, |b| b.union(&cell)));
        }
        bbox.map(|b| b.intersect(&lvl.bounds()))
            .ok_or_else(|| Error::NotFound(format!("object {id} has no voxels at level {level}")))
    }

    /// Dense cutout of one object: its voxels (primary or exception) carry
    /// `id`, everything else is 0. The region defaults to the bounding box.
    pub fn object_cutout(&self, token: &str, id: u32, level: u8, region: Option<VoxelBox>) -> Result<DenseVolume> {
        let p = self.annotation_project(token)?;
        let lvl = p.level(level)?;
        let keys = index::read_index(self, &p, level, id)?;
        let bounds = match region {
            Some(r) => self.clip(&lvl, &r)?,
            None => self.object_bounding_box(token, id, level)?,
        };
        if keys.is_empty() && self.router().home(token)?.get(&meta_key(token, id))?.is_none() {
            return Err(Error::NotFound(format!("object {id}")));
        }
        let mut vol = DenseVolume::zeros(VoxelType::Label32, bounds);
        vol.ndim = lvl.dims() as u8;
        let mut wanted = Vec::new();
        let mut cells = Vec::new();
        for m in keys {
            let grid = crate::curve::morton_decode(crate::curve::MortonKey::new(m, lvl.dims()))?;
            let overlap = lvl.cuboid_box(&grid).intersect(&bounds);
            if !overlap.is_empty() {
                wanted.push(m);
                cells.push(overlap);
            }
        }
        let fetched = self.fetch_with_exceptions(&p, &lvl, 0, &wanted)?;
        for (overlap, (voxels, exc)) in cells.into_iter().zip(fetched) {
            let exc = exc.unwrap_or_default();
            for t in overlap.lo[3]..overlap.hi[3] {
                for z in overlap.lo[2]..overlap.hi[2] {
                    for y in overlap.lo[1]..overlap.hi[1] {
                        for x in overlap.lo[0]..overlap.hi[0] {
                            let pt = [x, y, z, t];
                            let off = lvl.intra_offset(pt);
                            let hit = voxels.as_ref().is_some_and(|b| label_at(b, off) == id)
                                || exc.contains(off as u32, id);
                            if hit {
                                vol.set(pt, id);
                            }
                        }
                    }
                }
            }
        }
        Ok(vol)
    }

    /// Distinct nonzero primary labels and exception ids inside a region.
    pub fn ids_in_region(&self, token: &str, level: u8, region: &VoxelBox) -> Result<BTreeSet<u32>> {
        let p = self.annotation_project(token)?;
        let lvl = p.level(level)?;
        let bounds = self.clip(&lvl, region)?;
        let pieces = cuboids_for_region(&bounds, &lvl);
        let mortons: Vec<u64> = pieces.iter().map(|c| c.key.value).collect();
        let mut ids = BTreeSet::new();
        for (piece, (voxels, exc)) in pieces.iter().zip(self.fetch_with_exceptions(&p, &lvl, 0, &mortons)?) {
            let cell = lvl.cuboid_box(&piece.grid);
            let o = piece.overlap;
            if let Some(buf) = voxels {
                let whole = o == cell;
                if whole {
                    ids.extend(index::ids_in_cuboid(&buf, &ExceptionList::new()));
                } else {
                    let mut last = 0;
                    for t in o.lo[3]..o.hi[3] {
                        for z in o.lo[2]..o.hi[2] {
                            for y in o.lo[1]..o.hi[1] {
                                for x in o.lo[0]..o.hi[0] {
                                    let v = label_at(&buf, lvl.intra_offset([x, y, z, t]));
                                    if v != last && v != 0 {
                                        ids.insert(v);
                                    }
                                    last = v;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(exc) = exc {
                for (off, list) in exc.iter() {
                    if o.contains(lvl.voxel_at(&piece.grid, off as usize)) {
                        ids.extend(list.iter().copied());
                    }
                }
            }
        }
        Ok(ids)
    }

    /// Cutout with every primary label not in `keep` zeroed.
    pub fn filter_cutout(&self, token: &str, level: u8, region: &VoxelBox, keep: &BTreeSet<u32>) -> Result<DenseVolume> {
        self.annotation_project(token)?;
        let mut vol = self.read_cutout(token, level, &(*region).into())?;
        for chunk in vol.data.chunks_exact_mut(4) {
            let v = u32::from_le_bytes(chunk.try_into().unwrap());
            if v != 0 && !keep.contains(&v) {
                chunk.copy_from_slice(&[0; 4]);
            }
        }
        Ok(vol)
    }

    /// Remove an object: its voxels at every level (an exception takes over a
    /// vacated primary label), its exception entries, index and metadata.
    pub fn delete_annotation(&self, token: &str, id: u32) -> Result<()> {
        let p = self.annotation_project(token)?;
        p.check_writable()?;
        let _object = self.lock_objects(token, &[id]);
        let home = self.router().home(token)?;
        let old = home.get(&meta_key(token, id))?.map(|b| AnnotationObject::from_json(&b)).transpose()?;
        let levels = index::read_index_all_levels(self, &p, id)?;
        if old.is_none() && levels.is_empty() {
            return Err(Error::NotFound(format!("object {id}")));
        }
        let mut tail = WriteBatch::new();
        if let Some(old) = &old {
            query::remove_metadata(token, old, &mut tail);
        }
        let mut tail = Some(tail);
        let count = levels.len();
        for (i, (level, keys)) in levels.into_iter().enumerate() {
            let lvl = p.level(level)?;
            let t = if i + 1 == count { tail.take() } else { None };
            self.mutate_cuboids(&p, &lvl, 0, &keys, t, |c| {
                let n = c.voxels.len() / 4;
                for off in 0..n {
                    if label_at(c.voxels, off) == id {
                        let mut rest = c.exceptions.take(off as u32);
                        rest.retain(|&x| x != id);
                        let promoted = if rest.is_empty() { 0 } else { rest.remove(0) };
                        set_label(c.voxels, off, promoted);
                        for other in rest {
                            c.exceptions.add(off as u32, other);
                        }
                    }
                }
                c.exceptions.remove_everywhere(id);
                Ok(())
            })?;
        }
        if let Some(batch) = tail {
            let _index = p.index_guard();
            home.write(batch)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DatasetConfig, ProjectConfig};

    fn store(exceptions: bool) -> Store {
        let s = Store::in_memory();
        s.create_dataset(DatasetConfig::new("ds", [256, 256, 32]).with_levels(2)).unwrap();
        s.create_project(ProjectConfig::annotation("ann", "ds").with_exceptions(exceptions)).unwrap();
        s
    }

    fn vox(v: &[[u64; 3]]) -> Payload {
        Payload::Voxels(v.iter().map(|p| [p[0], p[1], p[2], 0]).collect())
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let o = AnnotationObject::new(ObjectType::Synapse).with_id(3).with_kv("b", "2").with_kv("a", "1");
        assert_eq!(
            o.to_canonical_json(),
            r#"{"author":"","confidence":1.0,"id":3,"kv":{"a":"1","b":"2"},"status":0,"type":"synapse"}"#
        );
        assert_eq!(AnnotationObject::from_json(o.to_canonical_json().as_bytes()).unwrap(), o);
    }

    #[test]
    fn disciplines() {
        let s = store(true);
        let at = [[10, 10, 10]];
        let five = s.write_annotation("ann", AnnotationObject::new(ObjectType::Synapse), vox(&at), WriteOptions::default()).unwrap();
        let nine = s
            .write_annotation("ann", AnnotationObject::new(ObjectType::Seed), vox(&at), WriteOptions::new(Discipline::Preserve))
            .unwrap();
        let b = VoxelBox::xyz((10, 11), (10, 11), (10, 11));
        assert_eq!(s.read_cutout("ann", 0, &b.into()).unwrap().values(), vec![five]);
        assert!(s.object_voxels("ann", nine, 0).unwrap().is_empty());

        s.write_annotation(
            "ann",
            AnnotationObject::new(ObjectType::Seed).with_id(nine),
            vox(&at),
            WriteOptions::new(Discipline::Exception),
        )
        .unwrap();
        assert_eq!(s.read_cutout("ann", 0, &b.into()).unwrap().values(), vec![five]);
        assert_eq!(s.object_voxels("ann", nine, 0).unwrap(), vec![[10, 10, 10, 0]]);
        assert_eq!(s.ids_in_region("ann", 0, &b).unwrap(), BTreeSet::from([five, nine]));

        s.write_annotation("ann", AnnotationObject::new(ObjectType::Seed).with_id(nine), vox(&at), WriteOptions::default())
            .unwrap();
        assert_eq!(s.read_cutout("ann", 0, &b.into()).unwrap().values(), vec![nine]);
        assert!(s.object_voxels("ann", five, 0).unwrap().is_empty());
        assert_eq!(s.index_entries("ann", 0).unwrap(), s.index_from_scan("ann", 0).unwrap());
    }

    #[test]
    fn exception_needs_enabled_project() {
        let s = store(false);
        let r = s.write_annotation("ann", AnnotationObject::default(), vox(&[[1, 1, 1]]), WriteOptions::new(Discipline::Exception));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn update_unknown_id_is_not_found() {
        let s = store(false);
        let opts = WriteOptions { update: true, ..Default::default() };
        let r = s.write_annotation("ann", AnnotationObject::default().with_id(77), Payload::None, opts);
        assert!(matches!(r, Err(Error::NotFound(_))));
    }

    #[test]
    fn ids_are_never_reused() {
        let s = store(false);
        let a = s.write_annotation("ann", AnnotationObject::default(), vox(&[[0, 0, 0]]), WriteOptions::default()).unwrap();
        let b = s.write_annotation("ann", AnnotationObject::default().with_id(40), Payload::None, WriteOptions::default()).unwrap();
        assert_eq!((a, b), (1, 40));
        s.delete_annotation("ann", 40).unwrap();
        let c = s.write_annotation("ann", AnnotationObject::default(), Payload::None, WriteOptions::default()).unwrap();
        assert_eq!(c, 41);
    }

    #[test]
    fn bounding_box_is_cuboid_granular() {
        let s = store(false);
        let id = s
            .write_annotation("ann", AnnotationObject::default(), vox(&[[5, 5, 5], [130, 7, 3]]), WriteOptions::default())
            .unwrap();
        assert_eq!(s.object_bounding_box("ann", id, 0).unwrap(), VoxelBox::xyz((0, 256), (0, 128), (0, 16)));
        assert!(matches!(s.object_bounding_box("ann", 999, 0), Err(Error::NotFound(_))));
    }

    #[test]
    fn delete_promotes_exceptions() {
        let s = store(true);
        let at = [[3, 3, 3]];
        let a = s.write_annotation("ann", AnnotationObject::default(), vox(&at), WriteOptions::default()).unwrap();
        let b = s.write_annotation("ann", AnnotationObject::default(), vox(&at), WriteOptions::new(Discipline::Exception)).unwrap();
        s.delete_annotation("ann", a).unwrap();
        let v = s.read_cutout("ann", 0, &VoxelBox::xyz((3, 4), (3, 4), (3, 4)).into()).unwrap();
        assert_eq!(v.values(), vec![b]);
        assert!(matches!(s.get_object("ann", a), Err(Error::NotFound(_))));
        assert!(matches!(s.delete_annotation("ann", a), Err(Error::NotFound(_))));
        assert_eq!(s.index_entries("ann", 0).unwrap(), s.index_from_scan("ann", 0).unwrap());
    }

    #[test]
    fn queries() {
        let s = store(false);
        let w = |o: AnnotationObject| s.write_annotation("ann", o, Payload::None, WriteOptions::default()).unwrap();
        let s1 = w(AnnotationObject::new(ObjectType::Synapse).with_confidence(0.995));
        let s2 = w(AnnotationObject::new(ObjectType::Synapse).with_confidence(0.5).with_kv("lab", "x"));
        let _seed = w(AnnotationObject::new(ObjectType::Seed));
        assert_eq!(s.query_objects("ann", &[Predicate::eq("type", "synapse")]).unwrap(), vec![s1, s2]);
        let hi = [Predicate::eq("type", "synapse"), Predicate::float("confidence", FloatOp::Geq, 0.99)];
        assert_eq!(s.query_objects("ann", &hi).unwrap(), vec![s1]);
        assert_eq!(s.query_objects("ann", &[Predicate::kv("lab", "x")]).unwrap(), vec![s2]);
        assert!(s.query_objects("ann", &[Predicate::eq("type", "neuron")]).unwrap().is_empty());
        assert!(matches!(s.query_objects("ann", &[Predicate::eq("color", "red")]), Err(Error::BadRequest(_))));
        let lt = [Predicate::float("confidence", FloatOp::Lt, 0.5)];
        assert_eq!(s.query_objects("ann", &lt).unwrap().len(), 0);
        let leq = [Predicate::float("confidence", FloatOp::Leq, 0.5)];
        assert_eq!(s.query_objects("ann", &leq).unwrap(), vec![s2]);
    }
}
