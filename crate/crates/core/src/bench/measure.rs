//! Throughput harness. Clients are threads issuing requests to an
//! in-process [`Service`]; the only shared state is the result collection.
//! Wall-clock rates are reported, instrumented counts are what tests assert.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::annotations::Payload;
use crate::bench::synth::{synth_objects, SynthSpec};
use crate::curve::{VoxelBox, VoxelRegion};
use crate::error::{Error, Result};
use crate::service::ocpb::{self, Record, WireCodec};
use crate::service::{Ranges, Request, Route, Service};
use crate::store::config::ResolutionLevel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutoutMode {
    /// Cuboid-aligned region, cuboid cache off.
    Aligned,
    /// Region shifted by half a cuboid in every dimension, cache off.
    Unaligned,
    /// Aligned region served from a warm cuboid cache.
    Cached,
}

impl CutoutMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "aligned" => Some(CutoutMode::Aligned),
            "unaligned" => Some(CutoutMode::Unaligned),
            "cached" => Some(CutoutMode::Cached),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CutoutMode::Aligned => "aligned",
            CutoutMode::Unaligned => "unaligned",
            CutoutMode::Cached => "cached",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutoutSpec {
    pub level: u8,
    /// Cutout sizes in MiB.
    pub sizes_mb: Vec<u64>,
    pub parallel: Vec<usize>,
    pub mode: CutoutMode,
    pub requests_per_client: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoutRow {
    pub mode: &'static str,
    pub size: u64,
    pub parallel: usize,
    pub mb_per_s: f64,
    /// Backend cuboid reads per request.
    pub cuboids_read: u64,
}

/// A region of `size_mb` MiB: up to 64 voxels deep, square in XY, with its
/// origin at 0 or shifted by half a cuboid.
pub fn cutout_box(lvl: &ResolutionLevel, width: usize, size_mb: u64, aligned: bool) -> Result<VoxelBox> {
    let voxels = (size_mb << 20) / width as u64;
    let shift: [u64; 3] = if aligned { [0; 3] } else { std::array::from_fn(|d| lvl.cuboid[d] / 2) };
    let depth = 64.min(lvl.extent[2] - shift[2]);
    let side = ((voxels / depth) as f64).sqrt().round() as u64;
    let b = VoxelBox::xyz((shift[0], shift[0] + side), (shift[1], shift[1] + side), (shift[2], shift[2] + depth));
    if side == 0 || !lvl.bounds().contains_box(&b) {
        return Err(Error::Bounds(format!("a {size_mb} MiB cutout {b:?} does not fit level {} extent {:?}", lvl.index, lvl.extent)));
    }
    Ok(b)
}

/// Run `clients` threads, each calling `work(client)`; returns results in
/// client order and the elapsed seconds.
fn run_clients<T: Send>(clients: usize, work: impl Fn(usize) -> T + Sync) -> (Vec<T>, f64) {
    let start = Instant::now();
    let out = std::thread::scope(|s| {
        let handles: Vec<_> = (0..clients).map(|c| s.spawn({ let w = &work; move || w(c) })).collect();
        handles.into_iter().map(|h| h.join().expect("client thread")).collect()
    });
    (out, start.elapsed().as_secs_f64().max(1e-9))
}

pub fn measure_cutout(service: &Service, token: &str, spec: &CutoutSpec) -> Result<Vec<CutoutRow>> {
    let store = service.store();
    let p = store.project(token)?;
    let lvl = p.level(spec.level)?;
    let width = p.config.voxel_type.width();
    let cache_before = store.cache().capacity();
    let mut rows = Vec::new();
    let result = (|| {
        for &size in &spec.sizes_mb {
            let b = cutout_box(&lvl, width, size, spec.mode != CutoutMode::Unaligned)?;
            let route = Route::Cutout {
                token: token.to_owned(),
                legacy: false,
                res: spec.level,
                ranges: Ranges::from_box(&b, false),
            };
            let path = route.render();
            let expected = ocpb::encode_volume(&store.read_cutout(token, spec.level, &VoxelRegion::new(b))?, WireCodec::None)?;
            for &parallel in &spec.parallel {
                store.cache().clear();
                if spec.mode == CutoutMode::Cached {
                    store.cache().set_capacity(cache_before.max((size as usize) << 21));
                    let warm = service.handle(&Request::get(&path));
                    if warm.status != 200 {
                        return Err(Error::Integrity(format!("warmup {path}: {}", warm.text())));
                    }
                } else {
                    store.cache().set_capacity(0);
                }
                let reads_before = store.router().total_stats().keys_read;
                let (results, secs) = run_clients(parallel, |_| {
                    let mut bad = 0usize;
                    for _ in 0..spec.requests_per_client {
                        let resp = service.handle(&Request::get(&path));
                        if resp.status != 200 || resp.body != expected {
                            bad += 1;
                        }
                    }
                    bad
                });
                let failures: usize = results.iter().sum();
                if failures > 0 {
                    return Err(Error::Integrity(format!("{failures} cutout responses differ from the stored data")));
                }
                let requests = (parallel * spec.requests_per_client) as u64;
                let reads = store.router().total_stats().keys_read - reads_before;
                rows.push(CutoutRow {
                    mode: spec.mode.as_str(),
                    size,
                    parallel,
                    mb_per_s: (requests * (expected.len() as u64)) as f64 / (1 << 20) as f64 / secs,
                    cuboids_read: reads / requests.max(1),
                });
            }
        }
        Ok(())
    })();
    store.cache().clear();
    store.cache().set_capacity(cache_before);
    result.map(|_| rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriteSpec {
    pub batch: usize,
    pub parallel: usize,
    pub objects: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WriteRow {
    pub batch: usize,
    pub parallel: usize,
    pub objects: usize,
    pub objects_per_s: f64,
    pub index_writes: u64,
    pub index_writes_per_object: f64,
}

/// Write `objects` small synapse objects at random positions through the
/// service, `batch` per request, from `parallel` clients.
pub fn measure_write(service: &Service, token: &str, spec: WriteSpec) -> Result<WriteRow> {
    if spec.batch == 0 || spec.parallel == 0 {
        return Err(Error::BadRequest("batch and parallel must be positive".into()));
    }
    let store = service.store();
    let p = store.project(token)?;
    let lvl = p.level(p.config.annotation_level)?;
    let items = synth_objects(lvl.extent, SynthSpec { synapses: spec.objects, dendrites: 0, seed: spec.seed })?;
    let bodies: Vec<Vec<Vec<u8>>> = (0..spec.parallel)
        .map(|c| {
            let mine: Vec<Record> = items
                .iter()
                .skip(c)
                .step_by(spec.parallel)
                .map(|(o, pl)| Record { object: o.clone(), payload: pl.clone() })
                .collect();
            mine.chunks(spec.batch).map(|ch| ocpb::encode_records(ch, WireCodec::None)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let path = Route::Write { token: token.to_owned(), discipline: None, update: false, dataonly: false }.render();
    let index_before = store.index_write_count();
    let (results, secs) = run_clients(spec.parallel, |c| -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for body in &bodies[c] {
            let resp = service.handle(&Request::put(&path, body.clone()));
            if resp.status != 200 {
                return Err(Error::Integrity(format!("write failed with {}: {}", resp.status, resp.text())));
            }
            ids.extend(serde_json::from_slice::<Vec<u32>>(&resp.body)?);
        }
        Ok(ids)
    });
    let index_writes = store.index_write_count() - index_before;
    let mut written = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        let ids = r?;
        let mine: Vec<_> = items.iter().skip(c).step_by(spec.parallel).collect();
        written.extend(ids.into_iter().zip(mine));
    }
    // round trip: metadata as sent, voxels a subset of what was sent
    for (id, (obj, payload)) in &written {
        let got = store.get_object(token, *id)?;
        if got.with_id(0) != *obj {
            return Err(Error::Integrity(format!("object {id} metadata changed in transit")));
        }
        let Payload::Voxels(sent) = payload else { continue };
        let sent: BTreeSet<[u64; 4]> = sent.iter().copied().collect();
        if let Some(v) = store.object_voxels(token, *id, lvl.index)?.iter().find(|v| !sent.contains(*v)) {
            return Err(Error::Integrity(format!("object {id} holds voxel {v:?} it never wrote")));
        }
    }
    super::verify_index(store, token)?;
    Ok(WriteRow {
        batch: spec.batch,
        parallel: spec.parallel,
        objects: written.len(),
        objects_per_s: written.len() as f64 / secs,
        index_writes,
        index_writes_per_object: index_writes as f64 / written.len().max(1) as f64,
    })
}
