//! Loading a stack of 2-d grayscale slices into level 0.
//!
//! Slices are PNG files named by their Z index (`7.png`, `0007.png`). The
//! stack must be contiguous from its lowest to its highest index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::curve::VoxelBox;
use crate::error::{Error, Result};
use crate::store::{DenseVolume, Store, VoxelType};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestReport {
    pub slices: usize,
    pub width: u64,
    pub height: u64,
    pub z_range: (u64, u64),
    pub cuboids_written: usize,
}

/// Slice files by Z index. A gap is reported by the name it should have had.
pub fn slice_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = BTreeMap::new();
    let mut pad = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let z: u64 = stem.parse().map_err(|_| Error::BadRequest(format!("slice name {stem:?}")))?;
        if stem.len() > 1 && stem.starts_with('0') {
            pad = Some(stem.len());
        }
        found.insert(z, path);
    }
    let (Some(&lo), Some(&hi)) = (found.keys().next(), found.keys().next_back()) else {
        return Err(Error::NotFound(format!("no <z>.png slices in {}", dir.display())));
    };
    for z in lo..=hi {
        if !found.contains_key(&z) {
            let name = match pad {
                Some(w) => format!("{z:0w$}.png"),
                None => format!("{z}.png"),
            };
            return Err(Error::NotFound(format!("missing slice file {}", dir.join(name).display())));
        }
    }
    Ok(found.into_iter().collect())
}

fn load_slice(path: &Path, vt: VoxelType) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| Error::BadRequest(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width(), img.height());
    let data = match vt {
        VoxelType::Uint8 => img.into_luma8().into_raw(),
        VoxelType::Uint16 => img.into_luma16().into_raw().iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::BadRequest(format!("slices cannot fill a {other:?} project"))),
    };
    Ok((w, h, data))
}

/// Write the slices of `dir` into level 0 of `token`, one cuboid-deep slab
/// at a time, then rebuild the resolution hierarchy.
pub fn ingest(store: &Store, token: &str, dir: &Path) -> Result<IngestReport> {
    let p = store.project(token)?;
    let vt = p.config.voxel_type;
    let lvl = p.level(0)?;
    let files = slice_files(dir)?;
    let depth = lvl.cuboid[2] as usize;
    let mut report = IngestReport {
        slices: files.len(),
        width: 0,
        height: 0,
        z_range: (files[0].0, files[files.len() - 1].0 + 1),
        cuboids_written: 0,
    };
    // slabs follow the cuboid grid in Z so no cuboid is rewritten
    let mut slab: Vec<(u64, PathBuf)> = Vec::new();
    let flush = |slab: &mut Vec<(u64, PathBuf)>, report: &mut IngestReport| -> Result<()> {
        if slab.is_empty() {
            return Ok(());
        }
        let z0 = slab[0].0;
        let mut data = Vec::new();
        for (_, path) in slab.iter() {
            let (w, h, bytes) = load_slice(path, vt)?;
            if report.width == 0 {
                report.width = w as u64;
                report.height = h as u64;
            } else if (w as u64, h as u64) != (report.width, report.height) {
                return Err(Error::BadRequest(format!(
                    "{} is {w}x{h}, earlier slices are {}x{}",
                    path.display(),
                    report.width,
                    report.height
                )));
            }
            data.extend_from_slice(&bytes);
        }
        let b = VoxelBox::xyz((0, report.width), (0, report.height), (z0, z0 + slab.len() as u64));
        if !lvl.bounds().contains_box(&b) {
            return Err(Error::Bounds(format!("slices cover {b:?}, level 0 extent is {:?}", lvl.extent)));
        }
        let vol = DenseVolume::from_bytes(vt, b, data)?;
        report.cuboids_written += store.write_cutout(token, 0, &vol)?.cuboids_written;
        slab.clear();
        Ok(())
    };
    for (z, path) in files {
        if slab.first().is_some_and(|(z0, _)| z0 / depth as u64 != z / depth as u64) {
            flush(&mut slab, &mut report)?;
        }
        slab.push((z, path));
    }
    flush(&mut slab, &mut report)?;
    if p.dataset.levels > 1 {
        store.build_image_pyramid(token)?;
    }
    log::info!("ingested {} slices into {token}", report.slices);
    Ok(report)
}
