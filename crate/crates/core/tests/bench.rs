use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, Luma};
use voxeldb::bench::{self, CutoutMode, CutoutSpec, SynthSpec, WriteSpec};
use voxeldb::service::Service;
use voxeldb::{DatasetConfig, Error, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType};

const W: u32 = 150;
const H: u32 = 90;

fn pixel(x: u32, y: u32, z: u64) -> u8 {
    ((x * 7 + y * 3) as u64 + z * 11) as u8
}

fn write_slices(dir: &Path, zs: impl Iterator<Item = u64>) {
    for z in zs {
        let img = GrayImage::from_fn(W, H, |x, y| Luma([pixel(x, y, z)]));
        img.save(dir.join(format!("{z:03}.png"))).unwrap();
    }
}

fn image_store() -> Arc<Store> {
    let s = Arc::new(Store::in_memory());
    s.create_dataset(DatasetConfig::new("ds", [W as u64, H as u64, 40]).with_levels(2)).unwrap();
    s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
    s
}

#[test]
fn ingest_loads_every_slice() {
    let dir = tempfile::tempdir().unwrap();
    write_slices(dir.path(), 2..37);
    let s = image_store();
    let r = bench::ingest(&s, "img", dir.path()).unwrap();
    assert_eq!((r.slices, r.width, r.height, r.z_range), (35, W as u64, H as u64, (2, 37)));
    let b = VoxelBox::xyz((0, W as u64), (0, H as u64), (0, 40));
    let vol = s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap();
    for z in 0..40u64 {
        for (y, x) in [(0, 0), (89, 149), (45, 17)] {
            let want = if (2..37).contains(&z) { pixel(x, y, z) as u32 } else { 0 };
            assert_eq!(vol.get([x as u64, y as u64, z, 0]).unwrap(), want, "{x},{y},{z}");
        }
    }
    // ingest again: same contents, nothing rewritten
    let again = bench::ingest(&s, "img", dir.path()).unwrap();
    assert_eq!(again, bench::IngestReport { cuboids_written: 0, ..r });
    assert_eq!(s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap(), vol);
    // the hierarchy was built
    let low = s.read_cutout("img", 1, &VoxelRegion::new(VoxelBox::xyz((0, 75), (0, 45), (10, 11)))).unwrap();
    assert!(low.data.iter().any(|&v| v != 0));
}

#[test]
fn ingest_names_the_missing_slice() {
    let dir = tempfile::tempdir().unwrap();
    write_slices(dir.path(), (0..10).filter(|&z| z != 6));
    match bench::ingest(&image_store(), "img", dir.path()) {
        Err(Error::NotFound(m)) => assert!(m.contains("006.png"), "{m}"),
        other => panic!("expected NotFound, got {other:?}"),
    }
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(bench::ingest(&image_store(), "img", empty.path()), Err(Error::NotFound(_))));
}

#[test]
fn ingest_rejects_mismatched_slices() {
    let dir = tempfile::tempdir().unwrap();
    write_slices(dir.path(), 0..3);
    GrayImage::new(W + 1, H).save(dir.path().join("003.png")).unwrap();
    assert!(matches!(bench::ingest(&image_store(), "img", dir.path()), Err(Error::BadRequest(_))));
}

fn annotation_service() -> Service {
    let s = Arc::new(Store::in_memory());
    s.create_dataset(DatasetConfig::new("ds", [512, 512, 64]).with_levels(3)).unwrap();
    s.create_project(ProjectConfig::annotation("ann", "ds")).unwrap();
    Service::new(s)
}

#[test]
fn synthetic_annotations_keep_the_index_sound() {
    let svc = annotation_service();
    let spec = SynthSpec { synapses: 90, dendrites: 12, seed: 3 };
    let ids = bench::synth_annotations(svc.store(), "ann", spec).unwrap();
    assert_eq!(ids.len(), 102);
    svc.store().propagate_annotations("ann").unwrap();
    bench::verify_index(svc.store(), "ann").unwrap();
    let a = bench::synth::synth_objects([512, 512, 64, 1], spec).unwrap();
    assert_eq!(a, bench::synth::synth_objects([512, 512, 64, 1], spec).unwrap());
    assert_ne!(a, bench::synth::synth_objects([512, 512, 64, 1], SynthSpec { seed: 4, ..spec }).unwrap());
}

#[test]
fn batching_divides_index_writes() {
    let svc = annotation_service();
    let one = bench::measure_write(&svc, "ann", WriteSpec { batch: 1, parallel: 2, objects: 40, seed: 1 }).unwrap();
    let svc = annotation_service();
    let forty = bench::measure_write(&svc, "ann", WriteSpec { batch: 40, parallel: 1, objects: 40, seed: 1 }).unwrap();
    assert_eq!((one.objects, forty.objects), (40, 40));
    assert!(forty.index_writes * 10 <= one.index_writes, "{} vs {}", forty.index_writes, one.index_writes);
    assert!(bench::measure_write(&svc, "ann", WriteSpec { batch: 0, parallel: 1, objects: 1, seed: 1 }).is_err());
}

#[test]
fn cutout_measurement_and_csv() {
    let s = Arc::new(Store::in_memory());
    s.create_dataset(DatasetConfig::new("ds", [512, 512, 64])).unwrap();
    s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
    let svc = Service::new(s);
    let mut rows = Vec::new();
    for mode in [CutoutMode::Aligned, CutoutMode::Unaligned, CutoutMode::Cached] {
        let spec = CutoutSpec { level: 0, sizes_mb: vec![1], parallel: vec![1, 2], mode, requests_per_client: 1 };
        rows.extend(bench::measure_cutout(&svc, "img", &spec).unwrap());
    }
    assert_eq!(rows.len(), 6);
    let reads = |m: &str| rows.iter().find(|r| r.mode == m).unwrap().cuboids_read;
    assert!(reads("aligned") < reads("unaligned"));
    assert_eq!(reads("cached"), 0);
    let mut out = Vec::new();
    bench::write_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "mode,size,parallel,mb_per_s,cuboids_read");
    assert_eq!(text.lines().count(), 7);
    let too_big = CutoutSpec { level: 0, sizes_mb: vec![64], parallel: vec![1], mode: CutoutMode::Aligned, requests_per_client: 1 };
    assert!(matches!(bench::measure_cutout(&svc, "img", &too_big), Err(Error::Bounds(_))));
}
