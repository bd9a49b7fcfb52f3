//! Render viewer tiles straight from cuboids: a grayscale XY tile, an
//! orthogonal XZ tile and a false-colored label overlay, written as PNGs.

use voxeldb::tiles::{false_color, Plane, TileAddress};
use voxeldb::{AnnotationObject, DatasetConfig, DenseVolume, ObjectType, Payload, ProjectConfig, Store, VoxelBox, VoxelType, WriteOptions};

fn main() -> voxeldb::Result<()> {
    let store = Store::in_memory();
    store.create_dataset(DatasetConfig::new("ds", [600, 600, 32]))?;
    store.create_project(ProjectConfig::image("em", "ds", VoxelType::Uint8))?;
    store.create_project(ProjectConfig::annotation("ann", "ds"))?;

    let b = VoxelBox::xyz((0, 600), (0, 600), (0, 32));
    let data: Vec<u8> = (0..b.volume()).map(|i| ((i % 600) ^ (i / 600 % 600)) as u8).collect();
    store.write_cutout("em", 0, &DenseVolume::from_u8(b, data)?)?;
    let disk: Vec<[u64; 4]> = (0..600u64 * 600)
        .map(|i| [i % 600, i / 600, 5, 0])
        .filter(|p| (p[0] as i64 - 300).pow(2) + (p[1] as i64 - 300).pow(2) < 100 * 100)
        .collect();
    let id = store.write_annotation("ann", AnnotationObject::new(ObjectType::Organelle), Payload::Voxels(disk), WriteOptions::default())?;

    let out = std::env::temp_dir().join("voxeldb-tiles");
    std::fs::create_dir_all(&out)?;
    let tiles = [
        ("em", TileAddress { res: 0, slice: 5, row: 0, col: 0, plane: Plane::Xy }, "em_xy_0_5_0_0.png"),
        ("em", TileAddress { res: 0, slice: 100, row: 0, col: 1, plane: Plane::Xz }, "em_xz_0_100_0_1.png"),
        ("ann", TileAddress { res: 0, slice: 5, row: 0, col: 0, plane: Plane::Xy }, "ann_xy_0_5_0_0.png"),
    ];
    for (token, addr, name) in tiles {
        let png = store.tile_png(token, addr)?;
        std::fs::write(out.join(name), &png)?;
        println!("{name}: {} bytes", png.len());
    }
    println!("object {id} is drawn as {:?}", false_color(id));
    println!("tiles in {}", out.display());
    Ok(())
}
