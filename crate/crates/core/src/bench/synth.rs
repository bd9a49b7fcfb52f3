//! Synthetic annotation workloads: compact synapse blobs and thin,
//! elongated dendrite segments.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::annotations::{AnnotationObject, ObjectType, Payload, WriteOptions};
use crate::curve::VoxelBox;
use crate::error::{Error, Result};
use crate::store::Store;

/// Objects per write request, the batch size used for bulk annotation.
pub const SYNTH_BATCH: usize = 40;

/// Longest dendrite segment; the shortest is [`MIN_DENDRITE`].
pub const MAX_DENDRITE: u64 = 96;
/// A diagonal run of `n` voxels fills `1/n^2` of its box; 16 keeps that
/// under 0.4%.
pub const MIN_DENDRITE: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub synapses: usize,
    pub dendrites: usize,
    pub seed: u64,
}

/// Voxels within radius 2 of `center`: a 33-voxel blob.
pub fn synapse_voxels(center: [u64; 3]) -> Vec<[u64; 4]> {
    let mut out = Vec::new();
    for dz in -2i64..=2 {
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                if dx * dx + dy * dy + dz * dz <= 4 {
                    let p = [center[0] as i64 + dx, center[1] as i64 + dy, center[2] as i64 + dz];
                    if p.iter().all(|&c| c >= 0) {
                        out.push([p[0] as u64, p[1] as u64, p[2] as u64, 0]);
                    }
                }
            }
        }
    }
    out
}

/// A one-voxel-thick diagonal run of `len` voxels from `start`, stepping
/// +1 in X, Y and Z.
pub fn dendrite_voxels(start: [u64; 3], len: u64) -> Vec<[u64; 4]> {
    (0..len).map(|i| [start[0] + i, start[1] + i, start[2] + i, 0]).collect()
}

/// Fraction of the voxel bounding box occupied by `voxels`.
pub fn fill_fraction(voxels: &[[u64; 4]]) -> f64 {
    let Some(first) = voxels.first() else { return 0.0 };
    let mut b = VoxelBox::new(*first, first.map(|c| c + 1));
    for v in voxels {
        b = b.union(&VoxelBox::new(*v, v.map(|c| c + 1)));
    }
    voxels.len() as f64 / b.volume() as f64
}

/// Generate the objects without writing them.
pub fn synth_objects(extent: [u64; 4], spec: SynthSpec) -> Result<Vec<(AnnotationObject, Payload)>> {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.synapses + spec.dendrites);
    if spec.synapses > 0 && extent[..3].iter().any(|&e| e < 5) {
        return Err(Error::BadRequest("volume too small for synapse blobs".into()));
    }
    for i in 0..spec.synapses {
        let c = [2 + rng.random_range(0..extent[0] - 4), 2 + rng.random_range(0..extent[1] - 4), 2 + rng.random_range(0..extent[2] - 4)];
        let obj = AnnotationObject::new(ObjectType::Synapse)
            .with_confidence(rng.random_range(0..=100) as f64 / 100.0)
            .with_author("synth")
            .with_kv("batch", (i / SYNTH_BATCH).to_string());
        out.push((obj, Payload::Voxels(synapse_voxels(c))));
    }
    let room = extent[..3].iter().copied().min().unwrap_or(0);
    if spec.dendrites > 0 && room < MIN_DENDRITE {
        return Err(Error::BadRequest(format!("volume too small for {MIN_DENDRITE}-voxel dendrites")));
    }
    for _ in 0..spec.dendrites {
        let len = rng.random_range(MIN_DENDRITE..=MAX_DENDRITE.min(room));
        let start = [
            rng.random_range(0..=extent[0] - len),
            rng.random_range(0..=extent[1] - len),
            rng.random_range(0..=extent[2] - len),
        ];
        let obj = AnnotationObject::new(ObjectType::Segment).with_confidence(0.5).with_author("synth");
        out.push((obj, Payload::Voxels(dendrite_voxels(start, len))));
    }
    Ok(out)
}

/// Write synthetic objects in batches of [`SYNTH_BATCH`]; returns their ids.
pub fn synth_annotations(store: &Store, token: &str, spec: SynthSpec) -> Result<Vec<u32>> {
    let p = store.project(token)?;
    let lvl = p.level(p.config.annotation_level)?;
    let mut items = synth_objects(lvl.extent, spec)?;
    let mut ids = Vec::with_capacity(items.len());
    while !items.is_empty() {
        let rest = items.split_off(items.len().min(SYNTH_BATCH));
        ids.extend(store.batch_write(token, items, WriteOptions::default())?);
        items = rest;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(synapse_voxels([10, 10, 10]).len(), 33);
        for len in MIN_DENDRITE..=MAX_DENDRITE {
            assert!(fill_fraction(&dendrite_voxels([0, 0, 0], len)) <= 0.004);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SynthSpec { synapses: 5, dendrites: 3, seed: 9 };
        let a = synth_objects([200, 200, 100, 1], spec).unwrap();
        assert_eq!(a, synth_objects([200, 200, 100, 1], spec).unwrap());
        assert_eq!(a.len(), 8);
        assert!(synth_objects([200, 200, 100, 1], SynthSpec { synapses: 0, dendrites: 0, seed: 1 }).unwrap().is_empty());
    }
}
