//! Shared test fixtures and independent oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use voxeldb::annotations::{AnnotationObject, Discipline, ObjectType, Payload, WriteOptions};
use voxeldb::service::{Request, Service};
use voxeldb::{DatasetConfig, DenseVolume, ProjectConfig, Store, VoxelBox, VoxelType};

/// Bit-by-bit Morton interleave, written without the library's tables.
pub fn morton_oracle(coords: &[u64]) -> u64 {
    let dims = coords.len();
    let bits = 64 / dims;
    let mut key = 0u64;
    for i in 0..bits {
        for (k, &c) in coords.iter().enumerate() {
            if (c >> i) & 1 == 1 {
                key |= 1 << (i * dims + k);
            }
        }
    }
    key
}

/// Row-major (x fastest) index of `p` inside `b`.
pub fn linear(b: &VoxelBox, p: [u64; 4]) -> usize {
    let d = b.dims();
    let r: Vec<u64> = (0..4).map(|k| p[k] - b.lo[k]).collect();
    (((r[3] * d[2] + r[2]) * d[1] + r[1]) * d[0] + r[0]) as usize
}

pub fn points(b: &VoxelBox) -> impl Iterator<Item = [u64; 4]> + '_ {
    (b.lo[3]..b.hi[3]).flat_map(move |t| {
        (b.lo[2]..b.hi[2]).flat_map(move |z| {
            (b.lo[1]..b.hi[1]).flat_map(move |y| (b.lo[0]..b.hi[0]).map(move |x| [x, y, z, t]))
        })
    })
}

/// Brute-force model of an annotation project: primary label and exception
/// ids per voxel.
#[derive(Default, Clone, Debug)]
pub struct LabelOracle {
    pub primary: BTreeMap<[u64; 4], u32>,
    pub exceptions: BTreeMap<[u64; 4], BTreeSet<u32>>,
    pub exceptions_on: bool,
}

impl LabelOracle {
    pub fn new(exceptions_on: bool) -> Self {
        LabelOracle { exceptions_on, ..Default::default() }
    }

    pub fn write(&mut self, id: u32, voxels: &[[u64; 4]], d: Discipline) {
        for &v in voxels {
            let cur = self.primary.get(&v).copied().unwrap_or(0);
            if cur == id {
                continue;
            }
            let take = cur == 0 || d == Discipline::Overwrite;
            if take {
                self.primary.insert(v, id);
                if let Some(e) = self.exceptions.get_mut(&v) {
                    e.remove(&id);
                    if e.is_empty() {
                        self.exceptions.remove(&v);
                    }
                }
            } else if d == Discipline::Exception {
                self.exceptions.entry(v).or_default().insert(id);
            }
        }
    }

    pub fn voxels_of(&self, id: u32) -> BTreeSet<[u64; 4]> {
        let mut out: BTreeSet<[u64; 4]> = self.primary.iter().filter(|(_, &l)| l == id).map(|(p, _)| *p).collect();
        out.extend(self.exceptions.iter().filter(|(_, e)| e.contains(&id)).map(|(p, _)| *p));
        out
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        let mut ids: BTreeSet<u32> = self.primary.values().copied().collect();
        ids.extend(self.exceptions.values().flatten().copied());
        ids
    }
}

/// Sort voxels the way the wire format does: by (z, y, x, t).
pub fn wire_sorted(voxels: impl IntoIterator<Item = [u64; 4]>) -> Vec<[u64; 4]> {
    let mut v: Vec<[u64; 4]> = voxels.into_iter().collect();
    v.sort_by_key(|p| (p[2], p[1], p[0], p[3]));
    v
}

pub fn request(service: &Service, method: &str, target: &str, body: Vec<u8>) -> voxeldb::service::Response {
    service.handle(&Request::with(method, target, body))
}

/// The protocol fixture: a large sparse image dataset with an 8-bit project
/// `bock11`, annotation projects `annoproj` and `annproj`, and a small
/// deterministic image project `small` used for golden bodies.
pub fn protocol_fixture() -> Service {
    let store = Arc::new(Store::in_memory());
    store
        .create_dataset(DatasetConfig::new("bock", [16384, 16384, 1024]).with_levels(5))
        .unwrap();
    store.create_dataset(DatasetConfig::new("tiny", [64, 64, 16])).unwrap();
    store.create_project(ProjectConfig::image("bock11", "bock", VoxelType::Uint8)).unwrap();
    store.create_project(ProjectConfig::annotation("annoproj", "bock").with_exceptions(true)).unwrap();
    store.create_project(ProjectConfig::annotation("annproj", "bock")).unwrap();
    store.create_project(ProjectConfig::image("small", "tiny", VoxelType::Uint8)).unwrap();
    store.create_project(ProjectConfig::annotation("smallann", "tiny")).unwrap();

    let b = VoxelBox::xyz((512 * 16, 512 * 16 + 256), (512 * 16, 512 * 16 + 256), (512, 528));
    let data: Vec<u8> = (0..b.volume()).map(|i| (i % 241) as u8).collect();
    store.write_cutout("bock11", 0, &DenseVolume::from_u8(b, data).unwrap()).unwrap();
    store.build_image_pyramid("bock11").unwrap();

    let tb = VoxelBox::xyz((0, 64), (0, 64), (0, 16));
    let tdata: Vec<u8> = (0..tb.volume()).map(|i| (i * 13 % 256) as u8).collect();
    store.write_cutout("small", 0, &DenseVolume::from_u8(tb, tdata).unwrap()).unwrap();

    let synapse = |id: u32, conf: f64| AnnotationObject::new(ObjectType::Synapse).with_id(id).with_confidence(conf).with_author("fixture");
    let blob = |x: u64, y: u64, z: u64| -> Vec<[u64; 4]> {
        let mut v = Vec::new();
        for dz in 0..3 {
            for dy in 0..5 {
                for dx in 0..5 {
                    v.push([x + dx, y + dy, z + dz, 0]);
                }
            }
        }
        v
    };
    let opts = WriteOptions::default();
    for token in ["annoproj", "annproj"] {
        let items = vec![
            (synapse(75, 0.995), Payload::Voxels(blob(6000, 6000, 12))),
            (synapse(1000, 0.5), Payload::Voxels(blob(4100, 4200, 15))),
            (synapse(1001, 0.999), Payload::Voxels(blob(4120, 4210, 16))),
            (AnnotationObject::new(ObjectType::Seed).with_id(1002).with_kv("tracer", "x"), Payload::Voxels(blob(7000, 7100, 18))),
        ];
        store.batch_write(token, items, opts).unwrap();
        store.propagate_annotations(token).unwrap();
    }
    let small_items = vec![
        (synapse(7, 0.25), Payload::Voxels(blob(3, 4, 2))),
        (AnnotationObject::new(ObjectType::Neuron).with_id(9).with_kv("name", "n9"), Payload::Voxels(blob(10, 20, 5))),
    ];
    store.batch_write("smallann", small_items, opts).unwrap();
    Service::new(store)
}

/// Deterministic protocol bodies pinned by the golden files.
pub fn golden_bodies(service: &Service) -> Vec<(&'static str, Vec<u8>)> {
    let get = |path: &str| {
        let r = service.handle(&Request::get(path));
        assert_eq!(r.status, 200, "{path}: {}", r.text());
        r.body
    };
    vec![
        ("cutout_u8.ocpb", get("/small/cutout/0/3,19/5,13/2,6/")),
        ("cutout_u8_deflate.ocpb", get("/small/cutout/0/0,64/0,64/0,16/?codec=deflate")),
        ("object_voxels.ocpb", get("/smallann/9/voxels/")),
        ("object_cutout.ocpb", get("/smallann/7/cutout/0/0,12/0,12/0,6/")),
        ("batch_read.ocpr", get("/smallann/7,9/")),
        ("metadata.json", get("/smallann/9/")),
        ("ids.json", get("/smallann/ids/0/0,64/0,64/0,16/")),
    ]
}
