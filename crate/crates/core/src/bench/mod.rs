//! Ingestion, synthetic workloads and the measurement harness behind the
//! `voxeldb` command line.

pub mod ingest;
pub mod measure;
pub mod synth;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::Store;

pub use ingest::{ingest, IngestReport};
pub use measure::{cutout_box, measure_cutout, measure_write, CutoutMode, CutoutRow, CutoutSpec, WriteRow, WriteSpec};
pub use synth::{synth_annotations, SynthSpec};

/// Index soundness at every level: the stored index equals a brute-force
/// scan of the stored cuboids. No-op for image projects.
pub fn verify_index(store: &Store, token: &str) -> Result<()> {
    let p = store.project(token)?;
    if !p.config.is_annotation() {
        return Ok(());
    }
    for r in 0..p.dataset.levels {
        let stored = store.index_entries(token, r)?;
        let scanned = store.index_from_scan(token, r)?;
        if stored != scanned {
            let bad = stored
                .keys()
                .chain(scanned.keys())
                .find(|id| stored.get(id) != scanned.get(id))
                .copied()
                .unwrap_or_default();
            return Err(Error::Integrity(format!("level {r} index disagrees with the cuboids for object {bad}")));
        }
    }
    Ok(())
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Storage(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
