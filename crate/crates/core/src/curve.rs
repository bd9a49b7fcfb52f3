//! Morton (z-order) curve over the cuboid grid.
//!
//! Bit `i` of coordinate `k` lands on key bit `i * dims + k`; X is the least
//! significant lane, followed by Y, Z and time. Each dimension gets
//! `64 / dims` bits (32 for 2-d, 21 for 3-d, 16 for 4-d). Channels never
//! participate in the curve.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::config::ResolutionLevel;

pub const MAX_DIMS: usize = 4;

pub const fn bits_per_dim(dims: usize) -> u32 {
    (64 / dims) as u32
}

/// A position on the cuboid grid, in cuboid units.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoord {
    dims: u8,
    coords: [u64; MAX_DIMS],
}

impl GridCoord {
    pub fn new(coords: &[u64]) -> Result<Self> {
        let dims = coords.len();
        if !(2..=MAX_DIMS).contains(&dims) {
            return Err(Error::OutOfRange(format!("{dims} dimensions; expected 2, 3 or 4")));
        }
        let limit = 1u64 << bits_per_dim(dims);
        let mut out = [0u64; MAX_DIMS];
        for (k, &c) in coords.iter().enumerate() {
            if c >= limit {
                return Err(Error::OutOfRange(format!(
                    "coordinate {c} in dimension {k} exceeds the {}-bit budget",
                    bits_per_dim(dims)
                )));
            }
            out[k] = c;
        }
        Ok(GridCoord { dims: dims as u8, coords: out })
    }

    pub fn dims(&self) -> usize {
        self.dims as usize
    }

    pub fn coords(&self) -> &[u64] {
        &self.coords[..self.dims()]
    }

    pub fn get(&self, k: usize) -> u64 {
        self.coords[k]
    }

    /// Coordinates padded to four lanes; absent dimensions read as zero.
    pub fn padded(&self) -> [u64; MAX_DIMS] {
        self.coords
    }
}

impl fmt::Debug for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridCoord{:?}", self.coords())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MortonKey {
    pub value: u64,
    pub dims: u8,
}

impl MortonKey {
    pub fn new(value: u64, dims: usize) -> Self {
        MortonKey { value, dims: dims as u8 }
    }
}

fn spread2(x: u64) -> u64 {
    let mut x = x & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    (x | (x << 1)) & 0x5555_5555_5555_5555
}

fn compact2(x: u64) -> u64 {
    let mut x = x & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    (x | (x >> 16)) & 0xffff_ffff
}

fn spread3(x: u64) -> u64 {
    let mut x = x & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    (x | (x << 2)) & 0x1249_2492_4924_9249
}

fn compact3(x: u64) -> u64 {
    let mut x = x & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    (x | (x >> 32)) & 0x1f_ffff
}

fn spread4(x: u64) -> u64 {
    let mut x = x & 0xffff;
    x = (x | (x << 24)) & 0x0000_00ff_0000_00ff;
    x = (x | (x << 12)) & 0x000f_000f_000f_000f;
    x = (x | (x << 6)) & 0x0303_0303_0303_0303;
    (x | (x << 3)) & 0x1111_1111_1111_1111
}

fn compact4(x: u64) -> u64 {
    let mut x = x & 0x1111_1111_1111_1111;
    x = (x | (x >> 3)) & 0x0303_0303_0303_0303;
    x = (x | (x >> 6)) & 0x000f_000f_000f_000f;
    x = (x | (x >> 12)) & 0x0000_00ff_0000_00ff;
    (x | (x >> 24)) & 0xffff
}

pub fn morton_encode(coord: &GridCoord) -> MortonKey {
    let c = &coord.coords;
    let value = match coord.dims {
        2 => spread2(c[0]) | (spread2(c[1]) << 1),
        3 => spread3(c[0]) | (spread3(c[1]) << 1) | (spread3(c[2]) << 2),
        _ => spread4(c[0]) | (spread4(c[1]) << 1) | (spread4(c[2]) << 2) | (spread4(c[3]) << 3),
    };
    MortonKey { value, dims: coord.dims }
}

pub fn morton_decode(key: MortonKey) -> Result<GridCoord> {
    let v = key.value;
    let coords = match key.dims {
        2 => [compact2(v), compact2(v >> 1), 0, 0],
        3 => {
            if v >> 63 != 0 {
                return Err(Error::OutOfRange(format!("key {v:#x} uses bit 63 in 3-d")));
            }
            [compact3(v), compact3(v >> 1), compact3(v >> 2), 0]
        }
        4 => [compact4(v), compact4(v >> 1), compact4(v >> 2), compact4(v >> 3)],
        d => return Err(Error::OutOfRange(format!("key encoded under {d} dimensions"))),
    };
    Ok(GridCoord { dims: key.dims, coords })
}

/// Half-open voxel box over (x, y, z, t). Datasets without time use `[0, 1)`
/// on the time axis.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [u64; 4],
    pub hi: [u64; 4],
}

impl VoxelBox {
    pub fn new(lo: [u64; 4], hi: [u64; 4]) -> Self {
        VoxelBox { lo, hi }
    }

    pub fn xyz(x: (u64, u64), y: (u64, u64), z: (u64, u64)) -> Self {
        VoxelBox { lo: [x.0, y.0, z.0, 0], hi: [x.1, y.1, z.1, 1] }
    }

    pub fn with_time(mut self, t: (u64, u64)) -> Self {
        self.lo[3] = t.0;
        self.hi[3] = t.1;
        self
    }

    pub fn from_extent(extent: [u64; 4]) -> Self {
        VoxelBox { lo: [0; 4], hi: extent }
    }

    pub fn is_empty(&self) -> bool {
        (0..4).any(|d| self.lo[d] >= self.hi[d])
    }

    pub fn dims(&self) -> [u64; 4] {
        std::array::from_fn(|d| self.hi[d].saturating_sub(self.lo[d]))
    }

    pub fn volume(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            self.dims().iter().product()
        }
    }

    pub fn intersect(&self, other: &VoxelBox) -> VoxelBox {
        VoxelBox {
            lo: std::array::from_fn(|d| self.lo[d].max(other.lo[d])),
            hi: std::array::from_fn(|d| self.hi[d].min(other.hi[d])),
        }
    }

    pub fn union(&self, other: &VoxelBox) -> VoxelBox {
        VoxelBox {
            lo: std::array::from_fn(|d| self.lo[d].min(other.lo[d])),
            hi: std::array::from_fn(|d| self.hi[d].max(other.hi[d])),
        }
    }

    pub fn contains_box(&self, other: &VoxelBox) -> bool {
        (0..4).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn contains(&self, p: [u64; 4]) -> bool {
        (0..4).all(|d| self.lo[d] <= p[d] && p[d] < self.hi[d])
    }
}

impl fmt::Debug for VoxelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{})x[{},{})x[{},{})x[{},{})",
            self.lo[0], self.hi[0], self.lo[1], self.hi[1], self.lo[2], self.hi[2], self.lo[3], self.hi[3]
        )
    }
}

/// A cutout request: a voxel box plus the channels to read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelRegion {
    pub bounds: VoxelBox,
    pub channels: Vec<u32>,
}

impl VoxelRegion {
    pub fn new(bounds: VoxelBox) -> Self {
        VoxelRegion { bounds, channels: vec![0] }
    }

    pub fn with_channels(bounds: VoxelBox, channels: Vec<u32>) -> Self {
        VoxelRegion { bounds, channels }
    }
}

impl From<VoxelBox> for VoxelRegion {
    fn from(bounds: VoxelBox) -> Self {
        VoxelRegion::new(bounds)
    }
}

/// One cuboid touched by a region, with the part of the region it holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CuboidPiece {
    pub key: MortonKey,
    pub grid: GridCoord,
    pub overlap: VoxelBox,
}

/// Every cuboid intersecting `region`, ascending by key. The overlap boxes
/// partition `region` exactly.
pub fn cuboids_for_region(region: &VoxelBox, level: &ResolutionLevel) -> Vec<CuboidPiece> {
    if region.is_empty() {
        return Vec::new();
    }
    let dims = level.dims();
    let shape = level.cuboid;
    let glo: [u64; 4] = std::array::from_fn(|d| region.lo[d] / shape[d]);
    let ghi: [u64; 4] = std::array::from_fn(|d| region.hi[d].div_ceil(shape[d]));
    let count: u64 = (0..4).map(|d| ghi[d] - glo[d]).product();
    let mut pieces = Vec::with_capacity(count as usize);
    for gt in glo[3]..ghi[3] {
        for gz in glo[2]..ghi[2] {
            for gy in glo[1]..ghi[1] {
                for gx in glo[0]..ghi[0] {
                    let g = [gx, gy, gz, gt];
                    let grid = GridCoord { dims: dims as u8, coords: g };
                    let cell = level.cuboid_box(&grid);
                    pieces.push(CuboidPiece {
                        key: morton_encode(&grid),
                        grid,
                        overlap: cell.intersect(region),
                    });
                }
            }
        }
    }
    pieces.sort_unstable_by_key(|p| p.key.value);
    pieces
}

/// Key interval of a power-of-two aligned cube of cuboids given in grid
/// units: `side` cells along every curve dimension starting at `origin`.
pub fn grid_block_key_range(origin: &GridCoord, side: u64) -> Result<(MortonKey, MortonKey)> {
    if side == 0 || !side.is_power_of_two() {
        return Err(Error::Alignment(format!("side {side} is not a power of two")));
    }
    if let Some(d) = origin.coords().iter().position(|c| c % side != 0) {
        return Err(Error::Alignment(format!(
            "origin {:?} is not a multiple of {side} in dimension {d}",
            origin.coords()
        )));
    }
    let lo = morton_encode(origin);
    let span = side.pow(origin.dims() as u32);
    Ok((lo, MortonKey { value: lo.value + span - 1, dims: lo.dims }))
}

/// Same as [`grid_block_key_range`] with the block given in voxels.
pub fn aligned_block_key_range(block: &VoxelBox, level: &ResolutionLevel) -> Result<(MortonKey, MortonKey)> {
    let dims = level.dims();
    let shape = level.cuboid;
    let mut side = None;
    let mut origin = [0u64; 4];
    for d in 0..dims {
        if block.lo[d] % shape[d] != 0 || block.hi[d] % shape[d] != 0 || block.is_empty() {
            return Err(Error::Alignment(format!("{block:?} is not on cuboid boundaries")));
        }
        let s = (block.hi[d] - block.lo[d]) / shape[d];
        match side {
            None => side = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::Alignment(format!("{block:?} is not a cube in grid units")));
            }
            _ => {}
        }
        origin[d] = block.lo[d] / shape[d];
    }
    let origin = GridCoord::new(&origin[..dims])?;
    grid_block_key_range(&origin, side.unwrap_or(1))
}

/// Contiguous range partitioning of `[0, cell_count)` over `shard_count`
/// shards: shard `i` owns `[i * c, (i + 1) * c)` with `c = ceil(N / S)`.
pub fn shard_of(key: u64, shard_count: usize, cell_count: u64) -> usize {
    let shards = shard_count.max(1) as u64;
    let per_shard = cell_count.max(1).div_ceil(shards);
    ((key / per_shard).min(shards - 1)) as usize
}
