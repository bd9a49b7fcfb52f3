//! Dynamic tiles for pan-and-zoom viewers, laid out as `r/z/y_x.png`.
//!
//! A tile is cut from the store on demand, nothing is precomputed. In the XY
//! plane tile `(x, y)` of slice `z` at resolution `r` is the cutout
//! `[x*s, (x+1)*s) x [y*s, (y+1)*s)` at depth `z`, `s` being the project's
//! tile size. The orthogonal planes reuse the same path: for XZ the slice
//! index is a Y coordinate and tile rows walk Z; for YZ the slice is an X
//! coordinate, columns walk Y and rows walk Z. Z is never resampled.
//!
//! Grayscale projects render as 8-bit gray (16-bit data keeps its high byte),
//! RGBA projects pass through and label projects are false-colored.

use std::io::Cursor;

use image::{ExtendedColorType, ImageEncoder};

use crate::curve::{VoxelBox, VoxelRegion};
use crate::error::{Error, Result};
use crate::store::volume::read_value;
use crate::store::{Store, VoxelType};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Plane {
    #[default]
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Xz => "xz",
            Plane::Yz => "yz",
        }
    }

    /// Volume axes of (slice, column, row).
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Xy => (2, 0, 1),
            Plane::Xz => (1, 0, 2),
            Plane::Yz => (0, 1, 2),
        }
    }
}

/// Address of one tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileAddress {
    pub res: u8,
    pub slice: u64,
    pub row: u64,
    pub col: u64,
    pub plane: Plane,
}

/// A decoded tile before PNG encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub size: u32,
    /// 1 for grayscale, 4 for RGBA.
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Tile {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let color = if self.channels == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgba8 };
        image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
            .write_image(&self.pixels, self.size, self.size, color)
            .map_err(|e| Error::Storage(format!("png encoding: {e}")))?;
        Ok(out)
    }
}

/// Opaque color of an annotation id; id 0 is fully transparent.
///
/// The 24 low bits of the id go through an invertible mix (odd multiply and
/// xorshift modulo 2^24), so distinct ids below 2^24 get distinct colors.
pub fn false_color(id: u32) -> [u8; 4] {
    if id == 0 {
        return [0; 4];
    }
    const MASK: u32 = 0xff_ffff;
    let mut h = id & MASK;
    h = h.wrapping_mul(0x9e_3779) & MASK;
    h ^= h >> 12;
    h = h.wrapping_mul(0x85_ebcb) & MASK;
    h ^= h >> 11;
    [(h >> 16) as u8, (h >> 8) as u8, h as u8, 255]
}

fn pixel(vt: VoxelType, buf: &[u8], i: usize, out: &mut Vec<u8>) {
    let v = read_value(vt, buf, i);
    match vt {
        VoxelType::Uint8 => out.push(v as u8),
        VoxelType::Uint16 => out.push((v >> 8) as u8),
        VoxelType::Rgba32 => out.extend_from_slice(&v.to_le_bytes()),
        VoxelType::Label32 => out.extend_from_slice(&false_color(v)),
    }
}

impl Store {
    /// Materialize one tile from a cutout of the intersecting slab.
    pub fn tile(&self, token: &str, addr: TileAddress) -> Result<Tile> {
        let p = self.project(token)?;
        let lvl = p.level(addr.res)?;
        let size = p.config.tile_size as u64;
        let (slice_axis, col_axis, row_axis) = addr.plane.axes();
        if addr.slice >= lvl.extent[slice_axis] {
            return Err(Error::BadRequest(format!("slice {} outside extent {}", addr.slice, lvl.extent[slice_axis])));
        }
        let (c0, r0) = (addr.col * size, addr.row * size);
        if c0 >= lvl.extent[col_axis] || r0 >= lvl.extent[row_axis] {
            return Err(Error::BadRequest(format!("tile {}_{} outside the level", addr.row, addr.col)));
        }
        let mut lo = [0u64; 4];
        let mut hi = [0, 0, 0, 1];
        lo[slice_axis] = addr.slice;
        hi[slice_axis] = addr.slice + 1;
        lo[col_axis] = c0;
        hi[col_axis] = (c0 + size).min(lvl.extent[col_axis]);
        lo[row_axis] = r0;
        hi[row_axis] = (r0 + size).min(lvl.extent[row_axis]);
        let vol = self.read_cutout(token, addr.res, &VoxelRegion::new(VoxelBox { lo, hi }))?;
        let vt = p.config.voxel_type;
        let channels = if vt.width() == 4 { 4 } else { 1 };
        let mut pixels = Vec::with_capacity((size * size) as usize * channels);
        let buf = vol.channel(0);
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                let mut pt = lo;
                pt[col_axis] = c;
                pt[row_axis] = r;
                match vol.index_of(pt) {
                    Some(i) => pixel(vt, buf, i, &mut pixels),
                    None => pixels.extend(std::iter::repeat_n(0, channels)),
                }
            }
        }
        Ok(Tile { size: size as u32, channels: channels as u8, pixels })
    }

    pub fn tile_png(&self, token: &str, addr: TileAddress) -> Result<Vec<u8>> {
        self.tile(token, addr)?.to_png()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_transparent() {
        assert_eq!(false_color(0), [0, 0, 0, 0]);
        assert_eq!(false_color(7)[3], 255);
        assert_eq!(false_color(7), false_color(7));
    }

    #[test]
    fn colors_distinct_below_a_million() {
        let mut seen = vec![false; 1 << 24];
        for id in 1..1_000_000u32 {
            let [r, g, b, a] = false_color(id);
            assert_eq!(a, 255);
            let k = (r as usize) << 16 | (g as usize) << 8 | b as usize;
            assert!(!seen[k], "id {id} collides");
            seen[k] = true;
        }
    }

    #[test]
    fn png_decodes_to_same_pixels() {
        let t = Tile { size: 2, channels: 1, pixels: vec![1, 2, 3, 4] };
        let img = image::load_from_memory(&t.to_png().unwrap()).unwrap();
        assert_eq!(img.to_luma8().into_raw(), vec![1, 2, 3, 4]);
    }
}
