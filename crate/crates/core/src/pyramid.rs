//! Resolution hierarchy construction.
//!
//! Each level halves X and Y of the level below it; Z and time are never
//! scaled. Images downsample by the rounded-half-up mean of each 2x2 block.
//! Labels downsample by the most frequent nonzero label (smallest id on ties)
//! and upsample by replication; exceptions only travel upward in resolution.

use std::collections::BTreeSet;

use crate::annotations::exceptions::ExceptionList;
use crate::annotations::index;
use crate::curve::{cuboids_for_region, morton_decode, MortonKey, VoxelBox};
use crate::error::{Error, Result};
use crate::store::backend::Backend;
use crate::store::key::{cuboid_range, CuboidKey};
use crate::store::volume::{copy_region, read_value, write_value};
use crate::store::{Project, ResolutionLevel, Store, VoxelType, WRITE_CHUNK};

/// Rounded-half-up mean of the nonempty part of a 2x2 block.
pub fn mean_half_up(values: &[u32]) -> u32 {
    let n = values.len() as u64;
    if n == 0 {
        return 0;
    }
    let sum: u64 = values.iter().map(|&v| v as u64).sum();
    ((sum + n / 2) / n) as u32
}

/// Most frequent nonzero label; ties go to the smallest id; all zero gives 0.
pub fn mode_nonzero(values: &[u32]) -> u32 {
    let mut best = (0usize, 0u32);
    for &v in values {
        if v == 0 {
            continue;
        }
        let count = values.iter().filter(|&&w| w == v).count();
        if count > best.0 || (count == best.0 && v < best.1) {
            best = (count, v);
        }
    }
    best.1
}

fn rgba_mean(values: &[u32]) -> u32 {
    let mut out = 0u32;
    for shift in [0, 8, 16, 24] {
        let lane: Vec<u32> = values.iter().map(|v| (v >> shift) & 0xff).collect();
        out |= mean_half_up(&lane) << shift;
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Filter {
    Mean,
    Rgba,
    Mode,
}

/// Target-level cuboid keys whose XY-halved (`down`) or doubled footprint
/// covers some stored cuboid of the source level.
fn target_cells(store: &Store, p: &Project, src: &ResolutionLevel, dst: &ResolutionLevel, channel: u32, down: bool) -> Result<Vec<u64>> {
    let placement = store.router().placement(p.token())?;
    let (lo, hi) = cuboid_range(p.token(), src.index, channel);
    let mut stored = BTreeSet::new();
    for id in placement.live_backends() {
        for k in store.router().backend(&id)?.scan_keys(&lo, &hi)? {
            if let Some((ck, _)) = CuboidKey::decode(&k) {
                stored.insert(ck.morton);
            }
        }
    }
    let mut out = BTreeSet::new();
    for m in stored {
        let cell = src.cuboid_box(&morton_decode(MortonKey::new(m, src.dims()))?).intersect(&src.bounds());
        let mut mapped = cell;
        for d in 0..2 {
            if down {
                mapped.lo[d] = cell.lo[d] / 2;
                mapped.hi[d] = cell.hi[d].div_ceil(2);
            } else {
                mapped.lo[d] = cell.lo[d] * 2;
                mapped.hi[d] = cell.hi[d] * 2;
            }
        }
        let mapped = mapped.intersect(&dst.bounds());
        out.extend(cuboids_for_region(&mapped, dst).into_iter().map(|c| c.key.value));
    }
    Ok(out.into_iter().collect())
}

fn source_box(cell: &VoxelBox, src: &ResolutionLevel, down: bool) -> VoxelBox {
    let mut b = *cell;
    for d in 0..2 {
        if down {
            b.lo[d] = cell.lo[d] * 2;
            b.hi[d] = cell.hi[d] * 2;
        } else {
            b.lo[d] = cell.lo[d] / 2;
            b.hi[d] = cell.hi[d].div_ceil(2);
        }
    }
    b.intersect(&src.bounds())
}

fn downsample_level(store: &Store, p: &Project, src: &ResolutionLevel, dst: &ResolutionLevel, channel: u32, filter: Filter) -> Result<()> {
    let vt = p.config.voxel_type;
    let w = vt.width();
    let cells = target_cells(store, p, src, dst, channel, true)?;
    for chunk in cells.chunks(WRITE_CHUNK) {
        let mut updates = Vec::with_capacity(chunk.len());
        for &m in chunk {
            let cell = dst.cuboid_box(&morton_decode(MortonKey::new(m, dst.dims()))?);
            let sbox = source_box(&cell, src, true);
            let mut sbuf = vec![0u8; sbox.volume() as usize * w];
            if !sbox.is_empty() {
                store.read_into(p, src, channel, &sbox, &mut sbuf)?;
            }
            let sd = sbox.dims();
            let mut out = vec![0u8; dst.cuboid_voxels() * w];
            let live = cell.intersect(&dst.bounds());
            let mut block = Vec::with_capacity(4);
            for t in live.lo[3]..live.hi[3] {
                for z in live.lo[2]..live.hi[2] {
                    for y in live.lo[1]..live.hi[1] {
                        for x in live.lo[0]..live.hi[0] {
                            block.clear();
                            for sy in 2 * y..2 * y + 2 {
                                for sx in 2 * x..2 * x + 2 {
                                    let sp = [sx, sy, z, t];
                                    if !sbox.contains(sp) {
                                        continue;
                                    }
                                    let i = (((t - sbox.lo[3]) * sd[2] + (z - sbox.lo[2])) * sd[1] + (sy - sbox.lo[1])) * sd[0]
                                        + (sx - sbox.lo[0]);
                                    block.push(read_value(vt, &sbuf, i as usize));
                                }
                            }
                            let v = match filter {
                                Filter::Mean => mean_half_up(&block),
                                Filter::Rgba => rgba_mean(&block),
                                Filter::Mode => mode_nonzero(&block),
                            };
                            write_value(vt, &mut out, dst.intra_offset([x, y, z, t]), v);
                        }
                    }
                }
            }
            if out.iter().any(|&b| b != 0) {
                updates.push((m, out, None));
            }
        }
        store.commit(p, dst, channel, updates)?;
    }
    Ok(())
}

fn upsample_labels(store: &Store, p: &Project, src: &ResolutionLevel, dst: &ResolutionLevel) -> Result<()> {
    let cells = target_cells(store, p, src, dst, 0, false)?;
    for chunk in cells.chunks(WRITE_CHUNK) {
        let mut updates = Vec::with_capacity(chunk.len());
        for &m in chunk {
            let grid = morton_decode(MortonKey::new(m, dst.dims()))?;
            let cell = dst.cuboid_box(&grid);
            let sbox = source_box(&cell, src, false);
            let mut sbuf = vec![0u8; sbox.volume() as usize * 4];
            let mut exc = ExceptionList::new();
            let live = cell.intersect(&dst.bounds());
            if !sbox.is_empty() {
                let pieces = cuboids_for_region(&sbox, src);
                let mortons: Vec<u64> = pieces.iter().map(|c| c.key.value).collect();
                for (piece, (voxels, sexc)) in pieces.iter().zip(store.fetch_with_exceptions(p, src, 0, &mortons)?) {
                    if let Some(buf) = voxels {
                        copy_region(&buf, &src.cuboid_box(&piece.grid), &mut sbuf, &sbox, &piece.overlap, 4);
                    }
                    for (off, ids) in sexc.iter().flat_map(|e| e.iter()) {
                        let sp = src.voxel_at(&piece.grid, off as usize);
                        for cy in 2 * sp[1]..2 * sp[1] + 2 {
                            for cx in 2 * sp[0]..2 * sp[0] + 2 {
                                let cp = [cx, cy, sp[2], sp[3]];
                                if live.contains(cp) {
                                    for &id in ids {
                                        exc.add(dst.intra_offset(cp) as u32, id);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let sd = sbox.dims();
            let mut out = vec![0u8; dst.cuboid_voxels() * 4];
            for t in live.lo[3]..live.hi[3] {
                for z in live.lo[2]..live.hi[2] {
                    for y in live.lo[1]..live.hi[1] {
                        for x in live.lo[0]..live.hi[0] {
                            let (sx, sy) = (x / 2, y / 2);
                            let i = (((t - sbox.lo[3]) * sd[2] + (z - sbox.lo[2])) * sd[1] + (sy - sbox.lo[1])) * sd[0]
                                + (sx - sbox.lo[0]);
                            let v = read_value(VoxelType::Label32, &sbuf, i as usize);
                            write_value(VoxelType::Label32, &mut out, dst.intra_offset([x, y, z, t]), v);
                        }
                    }
                }
            }
            if out.iter().any(|&b| b != 0) || !exc.is_empty() {
                let exc = if p.config.exceptions { Some(exc) } else { None };
                updates.push((m, out, exc));
            }
        }
        store.commit(p, dst, 0, updates)?;
    }
    Ok(())
}

impl Store {
    /// Rebuild levels 1.. of an image project from level 0.
    pub fn build_image_pyramid(&self, token: &str) -> Result<()> {
        let p = self.project(token)?;
        if p.config.is_annotation() {
            return Err(Error::BadRequest(format!("project {token} holds annotations; propagate it instead")));
        }
        if p.config.read_only {
            return Err(Error::Permission(format!("project {token} is read-only")));
        }
        let _lock = self.lock_project(token)?;
        let filter = match p.config.voxel_type {
            VoxelType::Uint8 | VoxelType::Uint16 => Filter::Mean,
            VoxelType::Rgba32 => Filter::Rgba,
            VoxelType::Label32 => Filter::Mode,
        };
        for r in 1..p.dataset.levels {
            self.clear_level(&p, r)?;
            let (src, dst) = (p.level(r - 1)?, p.level(r)?);
            for ch in 0..p.dataset.channels {
                downsample_level(self, &p, &src, &dst, ch, filter)?;
            }
        }
        Ok(())
    }

    /// Push annotations from the project's annotation level to every other
    /// level and rebuild the object index everywhere. Foreground writes fail
    /// with [`Error::Locked`] while this runs.
    pub fn propagate_annotations(&self, token: &str) -> Result<()> {
        let p = self.project(token)?;
        if !p.config.is_annotation() {
            return Err(Error::BadRequest(format!("project {token} holds no annotations")));
        }
        if p.config.read_only {
            return Err(Error::Permission(format!("project {token} is read-only")));
        }
        let _lock = self.lock_project(token)?;
        let home_level = p.config.annotation_level;
        for r in home_level + 1..p.dataset.levels {
            self.clear_level(&p, r)?;
            downsample_level(self, &p, &p.level(r - 1)?, &p.level(r)?, 0, Filter::Mode)?;
        }
        for r in (0..home_level).rev() {
            self.clear_level(&p, r)?;
            upsample_labels(self, &p, &p.level(r + 1)?, &p.level(r)?)?;
        }
        for r in 0..p.dataset.levels {
            index::rebuild_level(self, &p, r)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_rules() {
        assert_eq!(mean_half_up(&[0, 0, 255, 255]), 128);
        assert_eq!(mean_half_up(&[1, 2]), 2);
        assert_eq!(mean_half_up(&[9]), 9);
        assert_eq!(mode_nonzero(&[5, 5, 5, 0]), 5);
        assert_eq!(mode_nonzero(&[5, 5, 9, 9]), 5);
        assert_eq!(mode_nonzero(&[9, 9, 5, 5]), 5);
        assert_eq!(mode_nonzero(&[0, 0, 0, 7]), 7);
        assert_eq!(mode_nonzero(&[0, 0, 0, 0]), 0);
        assert_eq!(rgba_mean(&[0xff00_00ff, 0x0000_0001]), 0x8000_0080);
    }
}
