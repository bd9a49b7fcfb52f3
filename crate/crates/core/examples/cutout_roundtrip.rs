//! Write a dense sub-volume, read overlapping cutouts back and watch which
//! cuboids the backend actually touched.

use voxeldb::store::backend::Op;
use voxeldb::{DatasetConfig, DenseVolume, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType};

fn main() -> voxeldb::Result<()> {
    let store = Store::in_memory();
    store.create_dataset(DatasetConfig::new("bock", [1024, 1024, 128]))?;
    store.create_project(ProjectConfig::image("em", "bock", VoxelType::Uint8))?;

    let region = VoxelBox::xyz((100, 300), (50, 250), (10, 40));
    let data: Vec<u8> = (0..region.volume()).map(|i| (i * 7 % 251) as u8).collect();
    let summary = store.write_cutout("em", 0, &DenseVolume::from_u8(region, data.clone())?)?;
    println!("wrote {} cuboids", summary.cuboids_written);

    let back = store.read_cutout("em", 0, &VoxelRegion::new(region))?;
    assert_eq!(back.data, data);
    println!("read back {} bytes, identical", back.data.len());

    let backend = store.router().backend("memory")?;
    backend.set_logging(true);
    let aligned = VoxelBox::xyz((0, 256), (0, 256), (0, 32));
    let vol = store.read_cutout("em", 0, &VoxelRegion::new(aligned))?;
    let gets = backend.take_log().into_iter().filter(|op| matches!(op, Op::Get(_))).count();
    println!("aligned 256x256x32 cutout: {gets} cuboid reads, {} nonzero voxels", vol.data.iter().filter(|&&b| b != 0).count());
    Ok(())
}
