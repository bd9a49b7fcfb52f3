//! Morton keys of a few cuboid grid positions, and the key range an aligned
//! block of cuboids occupies.

use voxeldb::curve::{grid_block_key_range, morton_decode, morton_encode, GridCoord};

fn main() -> voxeldb::Result<()> {
    for coords in [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [3, 5, 7]] {
        let key = morton_encode(&GridCoord::new(&coords)?);
        let back = morton_decode(key)?;
        println!("{coords:?} -> {:>4} -> {:?}", key.value, back.coords());
    }
    // a 4x4x4 block at a multiple of 4 is one contiguous stretch of keys
    let (lo, hi) = grid_block_key_range(&GridCoord::new(&[4, 0, 4])?, 4)?;
    println!("block at (4,0,4), side 4: keys {}..={} ({} cuboids)", lo.value, hi.value, hi.value - lo.value + 1);
    Ok(())
}
