//! Downsample an image into a resolution hierarchy and push labels from
//! their annotation level to every other level.

use voxeldb::{AnnotationObject, DatasetConfig, DenseVolume, ObjectType, Payload, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType, WriteOptions};

fn main() -> voxeldb::Result<()> {
    let store = Store::in_memory();
    store.create_dataset(DatasetConfig::new("ds", [512, 512, 16]).with_levels(4))?;
    store.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8))?;

    let b = VoxelBox::xyz((0, 512), (0, 512), (0, 16));
    let data: Vec<u8> = (0..b.volume()).map(|i| ((i % 512) / 2) as u8).collect();
    store.write_cutout("img", 0, &DenseVolume::from_u8(b, data)?)?;
    store.build_image_pyramid("img")?;
    for r in 0..4 {
        let row = store.read_cutout("img", r, &VoxelRegion::new(VoxelBox::xyz((0, 8), (0, 1), (0, 1))))?;
        println!("level {r} first row: {:?}", row.data);
    }

    let mut ann = ProjectConfig::annotation("ann", "ds");
    ann.annotation_level = 1;
    store.create_project(ann)?;
    let voxels: Vec<[u64; 4]> = (40..60).map(|x| [x, 30, 3, 0]).collect();
    let id = store.write_annotation("ann", AnnotationObject::new(ObjectType::Neuron), Payload::Voxels(voxels), WriteOptions::default())?;
    store.propagate_annotations("ann")?;
    for r in 0..4 {
        println!("level {r}: object {id} has {} voxels, box {:?}", store.object_voxels("ann", id, r)?.len(), store.object_bounding_box("ann", id, r)?);
    }
    Ok(())
}
