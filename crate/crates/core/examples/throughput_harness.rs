//! A small run of the measurement harness on a persistent store: cutout
//! throughput by mode and concurrency, and annotation writes by batch size.
//! Rates depend on the machine; cuboid and index-write counts do not.

use std::sync::Arc;

use voxeldb::bench::{self, CutoutMode, CutoutSpec, WriteSpec};
use voxeldb::service::Service;
use voxeldb::{DatasetConfig, DenseVolume, ProjectConfig, Store, VoxelBox, VoxelType};

fn main() -> voxeldb::Result<()> {
    let dir = std::env::temp_dir().join(format!("voxeldb-bench-{}", std::process::id()));
    let store = Arc::new(Store::open(&dir)?);
    store.create_dataset(DatasetConfig::new("ds", [640, 640, 48]))?;
    store.create_project(ProjectConfig::image("em", "ds", VoxelType::Uint8))?;
    store.create_project(ProjectConfig::annotation("ann", "ds"))?;
    let b = VoxelBox::xyz((0, 640), (0, 640), (0, 48));
    let data: Vec<u8> = (0..b.volume()).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
    store.write_cutout("em", 0, &DenseVolume::from_u8(b, data)?)?;

    let service = Service::new(store.clone());
    let mut rows = Vec::new();
    for mode in [CutoutMode::Cached, CutoutMode::Aligned, CutoutMode::Unaligned] {
        let spec = CutoutSpec { level: 0, sizes_mb: vec![4, 8], parallel: vec![1, 4], mode, requests_per_client: 2 };
        rows.extend(bench::measure_cutout(&service, "em", &spec)?);
    }
    bench::write_csv(&rows, std::io::stdout())?;

    let mut writes = Vec::new();
    for (batch, seed) in [(1, 1), (40, 2)] {
        writes.push(bench::measure_write(&service, "ann", WriteSpec { batch, parallel: 2, objects: 200, seed })?);
    }
    bench::write_csv(&writes, std::io::stdout())?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
