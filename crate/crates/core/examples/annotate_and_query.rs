//! Label objects under the three write disciplines, then read them back by
//! id, by region and by metadata predicate.

use voxeldb::annotations::FloatOp;
use voxeldb::{AnnotationObject, DatasetConfig, Discipline, ObjectType, Payload, Predicate, ProjectConfig, Store, VoxelBox, WriteOptions};

fn cube(lo: u64, side: u64) -> Vec<[u64; 4]> {
    let mut v = Vec::new();
    for z in lo..lo + side {
        for y in lo..lo + side {
            for x in lo..lo + side {
                v.push([x, y, z, 0]);
            }
        }
    }
    v
}

fn main() -> voxeldb::Result<()> {
    let store = Store::in_memory();
    store.create_dataset(DatasetConfig::new("kasthuri", [512, 512, 64]))?;
    store.create_project(ProjectConfig::annotation("ann", "kasthuri").with_exceptions(true))?;

    let syn = AnnotationObject::new(ObjectType::Synapse).with_confidence(0.995).with_author("alice");
    let a = store.write_annotation("ann", syn, Payload::Voxels(cube(10, 4)), WriteOptions::default())?;
    let seed = AnnotationObject::new(ObjectType::Seed).with_kv("source", "tracer");
    let b = store.write_annotation("ann", seed, Payload::Voxels(cube(12, 4)), WriteOptions::new(Discipline::Preserve))?;
    let weak = AnnotationObject::new(ObjectType::Synapse).with_confidence(0.4);
    let c = store.write_annotation("ann", weak, Payload::Voxels(cube(11, 2)), WriteOptions::new(Discipline::Exception))?;

    println!("ids {a} {b} {c}");
    println!("object {b} keeps {} of 64 voxels under preserve", store.object_voxels("ann", b, 0)?.len());
    println!("object {c} still has {} voxels, all as exceptions", store.object_voxels("ann", c, 0)?.len());
    println!("bounding box of {a}: {:?}", store.object_bounding_box("ann", a, 0)?);
    println!("ids in [0,16)^3: {:?}", store.ids_in_region("ann", 0, &VoxelBox::xyz((0, 16), (0, 16), (0, 16)))?);

    let strong = store.query_objects(
        "ann",
        &[Predicate::eq("type", "synapse"), Predicate::float("confidence", FloatOp::Geq, 0.99)],
    )?;
    println!("synapses with confidence >= 0.99: {strong:?}");
    println!("metadata of {b}: {}", store.get_object("ann", b)?.to_canonical_json());
    Ok(())
}
