mod common;

use common::{linear, points};
use proptest::prelude::*;
use voxeldb::store::backend::Backend;
use voxeldb::store::key::cuboid_range;
use voxeldb::{DatasetConfig, DenseVolume, Error, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType};

fn store() -> Store {
    let s = Store::in_memory();
    s.create_dataset(DatasetConfig::new("ds", [300, 300, 40]).with_levels(2)).unwrap();
    s.create_dataset(DatasetConfig::new("rgb", [200, 200, 20]).with_channels(3)).unwrap();
    s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint16)).unwrap();
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn overlapping_writes_keep_the_last_value(
        boxes in proptest::collection::vec((0u64..250, 0u64..250, 0u64..30, 1u64..50, 1u64..50, 1u64..10), 1..4)
    ) {
        let s = store();
        let mut model = vec![0u16; 300 * 300 * 40];
        let all = VoxelBox::xyz((0, 300), (0, 300), (0, 40));
        for (i, (x, y, z, w, h, d)) in boxes.into_iter().enumerate() {
            let b = VoxelBox::xyz((x, x + w), (y, y + h), (z, z + d));
            let vals: Vec<u16> = (0..b.volume()).map(|k| (k as u16).wrapping_mul(7) ^ (i as u16 + 1)).collect();
            s.write_cutout("img", 0, &DenseVolume::from_u16(b, &vals).unwrap()).unwrap();
            for p in points(&b) {
                model[linear(&all, p)] = vals[linear(&b, p)];
            }
        }
        let got = s.read_cutout("img", 0, &VoxelRegion::new(all)).unwrap();
        let got: Vec<u16> = got.data.chunks(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        prop_assert!(got == model);
    }
}

#[test]
fn multi_channel_reads_select_channels() {
    let s = store();
    s.create_project(ProjectConfig::image("col", "rgb", VoxelType::Uint8)).unwrap();
    let b = VoxelBox::xyz((10, 20), (10, 20), (0, 2));
    let mut vol = DenseVolume::zeros_with(VoxelType::Uint8, b, vec![0, 1, 2]);
    let n = b.volume() as usize;
    for c in 0..3 {
        vol.channel_mut(c).iter_mut().for_each(|v| *v = 10 * (c as u8 + 1));
    }
    s.write_cutout("col", 0, &vol).unwrap();
    let got = s.read_cutout("col", 0, &VoxelRegion::with_channels(b, vec![2, 0])).unwrap();
    assert_eq!(got.channels, vec![2, 0]);
    assert_eq!(&got.data[..n], &vec![30; n][..]);
    assert_eq!(&got.data[n..], &vec![10; n][..]);
}

#[test]
fn errors_map_to_kinds() {
    let s = store();
    // the library clips partial overlaps; only fully outside regions fail
    let b = VoxelBox::xyz((290, 310), (0, 1), (0, 1));
    assert_eq!(s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap().bounds, VoxelBox::xyz((290, 300), (0, 1), (0, 1)));
    let outside = VoxelBox::xyz((300, 310), (0, 1), (0, 1));
    assert!(matches!(s.read_cutout("img", 0, &VoxelRegion::new(outside)), Err(Error::Bounds(_))));
    assert!(matches!(s.read_cutout("nope", 0, &VoxelRegion::new(b)), Err(Error::NotFound(_))));
    assert!(matches!(s.read_cutout("img", 5, &VoxelRegion::new(b)), Err(Error::NotFound(_))));
    s.create_project(ProjectConfig::image("ro", "ds", VoxelType::Uint8).read_only(true)).unwrap();
    let v = DenseVolume::from_u8(VoxelBox::xyz((0, 1), (0, 1), (0, 1)), vec![1]).unwrap();
    assert!(matches!(s.write_cutout("ro", 0, &v), Err(Error::Permission(_))));
    assert!(matches!(s.write_cutout("img", 0, &v), Err(Error::BadRequest(_))));
    assert!(matches!(s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)), Err(Error::Conflict(_))));
}

#[test]
fn compression_is_per_project() {
    let s = store();
    s.create_project(ProjectConfig::image("raw", "ds", VoxelType::Uint8).with_compression(false)).unwrap();
    s.create_project(ProjectConfig::image("zip", "ds", VoxelType::Uint8)).unwrap();
    let b = VoxelBox::xyz((0, 128), (0, 128), (0, 16));
    let v = DenseVolume::from_u8(b, (0..b.volume()).map(|i| (i / 64) as u8).collect()).unwrap();
    let mut sizes = Vec::new();
    for t in ["raw", "zip"] {
        s.write_cutout(t, 0, &v).unwrap();
        assert_eq!(s.read_cutout(t, 0, &VoxelRegion::new(b)).unwrap(), v);
        let (lo, hi) = cuboid_range(t, 0, 0);
        let stored = s.router().backend("memory").unwrap().scan(&lo, &hi).unwrap();
        sizes.push(stored.iter().map(|(_, v)| v.len()).sum::<usize>());
    }
    assert!(sizes[0] > 1 << 18 && sizes[1] < sizes[0] / 10, "{sizes:?}");
}

#[test]
fn cache_never_serves_stale_cuboids() {
    let s = store().with_cache_bytes(8 << 20);
    let b = VoxelBox::xyz((0, 64), (0, 64), (0, 8));
    for round in 1..=3u16 {
        let v = DenseVolume::from_u16(b, &vec![round; b.volume() as usize]).unwrap();
        s.write_cutout("img", 0, &v).unwrap();
        assert_eq!(s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap(), v);
        assert_eq!(s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap(), v);
    }
    assert!(s.cache().hits() > 0);
}

#[test]
fn redb_store_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let b = VoxelBox::xyz((5, 40), (5, 40), (3, 9));
    let v = DenseVolume::from_u8(b, (0..b.volume()).map(|i| i as u8).collect()).unwrap();
    {
        let s = Store::open(dir.path()).unwrap();
        s.create_dataset(DatasetConfig::new("ds", [128, 128, 16])).unwrap();
        s.create_project(ProjectConfig::image("img", "ds", VoxelType::Uint8)).unwrap();
        s.write_cutout("img", 0, &v).unwrap();
    }
    let s = Store::open(dir.path()).unwrap();
    assert_eq!(s.read_cutout("img", 0, &VoxelRegion::new(b)).unwrap(), v);
    assert_eq!(s.projects(), vec!["img".to_string()]);
}
