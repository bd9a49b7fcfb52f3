//! Spread a project over two backends by Morton range, then migrate all of
//! it onto a third backend with checksum verification.

use voxeldb::router::{MigrationStage, Placement, Router};
use voxeldb::store::ProjectKind;
use voxeldb::{DatasetConfig, DenseVolume, Error, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType};

fn main() -> voxeldb::Result<()> {
    let store = Store::new(Router::in_memory(&["a", "b", "c"]));
    store.create_dataset(DatasetConfig::new("ds", [1024, 1024, 64]))?;
    let placement = Placement::sharded(ProjectKind::Image, vec!["a".into(), "b".into()]);
    store.create_project_with(ProjectConfig::image("em", "ds", VoxelType::Uint8), placement)?;

    let b = VoxelBox::xyz((0, 1024), (0, 1024), (0, 32));
    let data: Vec<u8> = (0..b.volume()).map(|i| (i % 253) as u8 | 1).collect();
    store.write_cutout("em", 0, &DenseVolume::from_u8(b, data.clone())?)?;
    for u in store.router().placement_report("em")? {
        println!("before: backend {} holds {} keys", u.backend, u.keys);
    }

    // a failure after copying leaves the original placement in charge
    let aborted = store.migrate_with("em", "a", "c", |stage| match stage {
        MigrationStage::Copied => Err(Error::Storage("simulated crash".into())),
        _ => Ok(()),
    });
    println!("injected failure: {}", aborted.unwrap_err());

    for from in ["a", "b"] {
        let r = store.migrate("em", from, "c")?;
        println!("moved {} keys ({} bytes) from {from}", r.keys, r.bytes);
    }
    for u in store.router().placement_report("em")? {
        println!("after: backend {} holds {} keys", u.backend, u.keys);
    }
    assert_eq!(store.read_cutout("em", 0, &VoxelRegion::new(b))?.data, data);
    println!("data intact");
    Ok(())
}
