mod common;

use common::morton_oracle;
use proptest::prelude::*;
use voxeldb::curve::{aligned_block_key_range, bits_per_dim, cuboids_for_region, shard_of};
use voxeldb::{morton_decode, morton_encode, DatasetConfig, Error, GridCoord, VoxelBox};

proptest! {
    #[test]
    fn encode_matches_bitwise_oracle(x in 0u64..1 << 21, y in 0u64..1 << 21, z in 0u64..1 << 21) {
        let key = morton_encode(&GridCoord::new(&[x, y, z]).unwrap());
        prop_assert_eq!(key.value, morton_oracle(&[x, y, z]));
        let back = morton_decode(key).unwrap();
        prop_assert_eq!(back.coords(), &[x, y, z][..]);
    }

    #[test]
    fn four_d_round_trip(c in proptest::array::uniform4(0u64..1 << 16)) {
        let key = morton_encode(&GridCoord::new(&c).unwrap());
        prop_assert_eq!(key.value, morton_oracle(&c));
        let back = morton_decode(key).unwrap();
        prop_assert_eq!(back.coords(), &c[..]);
    }

    #[test]
    fn region_pieces_partition_the_region(
        x in 0u64..900, y in 0u64..900, z in 0u64..100,
        w in 1u64..300, h in 1u64..300, d in 1u64..40,
    ) {
        let lvl = DatasetConfig::new("d", [1200, 1200, 140]).level(0).unwrap();
        let region = VoxelBox::xyz((x, x + w), (y, y + h), (z, z + d));
        let pieces = cuboids_for_region(&region, &lvl);
        prop_assert_eq!(pieces.iter().map(|p| p.overlap.volume()).sum::<u64>(), region.volume());
        for p in &pieces {
            prop_assert!(region.contains_box(&p.overlap));
            prop_assert!(lvl.cuboid_box(&p.grid).contains_box(&p.overlap));
            prop_assert_eq!(p.key, morton_encode(&p.grid));
        }
        prop_assert!(pieces.windows(2).all(|w| w[0].key < w[1].key));
    }
}

#[test]
fn bit_budget_is_enforced() {
    assert_eq!(bits_per_dim(3), 21);
    assert!(GridCoord::new(&[1 << 21, 0, 0]).is_err());
    assert!(GridCoord::new(&[1, 2]).is_ok());
}

#[test]
fn aligned_blocks_in_voxels() {
    let lvl = DatasetConfig::new("d", [2048, 2048, 256]).level(0).unwrap();
    let (lo, hi) = aligned_block_key_range(&VoxelBox::xyz((256, 512), (0, 256), (32, 64)), &lvl).unwrap();
    assert_eq!(lo.value, morton_oracle(&[2, 0, 2]));
    assert_eq!(hi.value - lo.value + 1, 8);
    assert!(matches!(aligned_block_key_range(&VoxelBox::xyz((0, 100), (0, 128), (0, 16)), &lvl), Err(Error::Alignment(_))));
    assert!(matches!(aligned_block_key_range(&VoxelBox::xyz((0, 256), (0, 128), (0, 16)), &lvl), Err(Error::Alignment(_))));
}

#[test]
fn shards_are_contiguous_and_balanced() {
    let n = 1000u64;
    let owners: Vec<usize> = (0..n).map(|k| shard_of(k, 3, n)).collect();
    assert!(owners.windows(2).all(|w| w[0] <= w[1]));
    let counts: Vec<usize> = (0..3).map(|s| owners.iter().filter(|&&o| o == s).count()).collect();
    assert_eq!(counts, [334, 334, 332]);
}
