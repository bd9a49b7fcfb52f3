use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use voxeldb::service::{Request, Service};
use voxeldb::tiles::{false_color, Plane, TileAddress};
use voxeldb::{AnnotationObject, DatasetConfig, DenseVolume, ObjectType, Payload, ProjectConfig, Store, VoxelBox, VoxelRegion, VoxelType, WriteOptions};

const EXTENT: [u64; 3] = [700, 600, 20];

fn fixture() -> (Arc<Store>, Vec<u16>) {
    let s = Arc::new(Store::in_memory());
    s.create_dataset(DatasetConfig::new("ds", EXTENT).with_levels(2)).unwrap();
    let mut img = ProjectConfig::image("img", "ds", VoxelType::Uint16);
    img.tile_size = 256;
    s.create_project(img).unwrap();
    let b = VoxelBox::xyz((0, EXTENT[0]), (0, EXTENT[1]), (0, EXTENT[2]));
    let mut rng = StdRng::seed_from_u64(7);
    let vals: Vec<u16> = (0..b.volume()).map(|_| rng.random()).collect();
    s.write_cutout("img", 0, &DenseVolume::from_u16(b, &vals).unwrap()).unwrap();
    (s, vals)
}

/// Expected gray pixel at (col, row) of a tile, straight from the source array.
fn expected(vals: &[u16], plane: Plane, slice: u64, c: u64, r: u64) -> u8 {
    let [x, y, z] = match plane {
        Plane::Xy => [c, r, slice],
        Plane::Xz => [c, slice, r],
        Plane::Yz => [slice, c, r],
    };
    if x >= EXTENT[0] || y >= EXTENT[1] || z >= EXTENT[2] {
        return 0;
    }
    (vals[((z * EXTENT[1] + y) * EXTENT[0] + x) as usize] >> 8) as u8
}

#[test]
fn tiles_match_the_source_volume_in_every_plane() {
    let (s, vals) = fixture();
    let cases = [(Plane::Xy, 7, 1, 2), (Plane::Xy, 0, 0, 0), (Plane::Xz, 599, 0, 1), (Plane::Yz, 350, 0, 2), (Plane::Xz, 3, 0, 2)];
    for (plane, slice, row, col) in cases {
        let tile = s.tile("img", TileAddress { res: 0, slice, row, col, plane }).unwrap();
        assert_eq!((tile.size, tile.channels), (256, 1));
        for r in 0..256 {
            for c in 0..256 {
                let want = expected(&vals, plane, slice, col * 256 + c, row * 256 + r);
                assert_eq!(tile.pixels[(r * 256 + c) as usize], want, "{plane:?} slice {slice} tile {row}_{col} at {c},{r}");
            }
        }
    }
    let outside = TileAddress { res: 0, slice: 20, row: 0, col: 0, plane: Plane::Xy };
    assert!(s.tile("img", outside).is_err());
    assert!(s.tile("img", TileAddress { slice: 0, col: 3, ..outside }).is_err());
}

#[test]
fn served_png_decodes_to_the_tile() {
    let (s, _) = fixture();
    s.build_image_pyramid("img").unwrap();
    let svc = Service::new(s.clone());
    for (path, addr) in [
        ("/tiles/img/1/4/0_1.png", TileAddress { res: 1, slice: 4, row: 0, col: 1, plane: Plane::Xy }),
        ("/tiles/img/0/10/0_0.png?plane=yz", TileAddress { res: 0, slice: 10, row: 0, col: 0, plane: Plane::Yz }),
    ] {
        let r = svc.handle(&Request::get(path));
        assert_eq!(r.status, 200, "{path}: {}", r.text());
        let png = image::load_from_memory(&r.body).unwrap().into_luma8();
        assert_eq!(png.into_raw(), s.tile("img", addr).unwrap().pixels);
    }
}

#[test]
fn label_tiles_are_false_colored() {
    let (s, _) = fixture();
    s.create_project(ProjectConfig::annotation("ann", "ds")).unwrap();
    let voxels: Vec<[u64; 4]> = (0..50).map(|i| [10 + i, 20, 5, 0]).collect();
    let id = s.write_annotation("ann", AnnotationObject::new(ObjectType::Segment), Payload::Voxels(voxels), WriteOptions::default()).unwrap();
    let tile = s.tile("ann", TileAddress { res: 0, slice: 5, row: 0, col: 0, plane: Plane::Xy }).unwrap();
    assert_eq!(tile.channels, 4);
    let labels = s.read_cutout("ann", 0, &VoxelRegion::new(VoxelBox::xyz((0, 512), (0, 512), (5, 6)))).unwrap();
    for (i, px) in tile.pixels.chunks(4).enumerate() {
        let (c, r) = ((i % 512) as u64, (i / 512) as u64);
        assert_eq!(px, false_color(labels.get([c, r, 5, 0]).unwrap()));
    }
    assert_eq!(tile.pixels.chunks(4).filter(|p| *p == false_color(id)).count(), 50);
}
