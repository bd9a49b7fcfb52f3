//! A spatial database for large volumetric images and their annotations.
//!
//! Volumes are cut into fixed-size cuboids addressed by a Morton curve
//! ([`curve`]), stored compressed in ordered key/value backends ([`store`]),
//! spread over backends by key range ([`router`]), labeled with annotation
//! objects that keep a sparse per-object index ([`annotations`]), downsampled
//! into a resolution hierarchy ([`pyramid`]) and served over HTTP
//! ([`service`], [`tiles`]). [`bench`] holds ingestion, workload generation
//! and the measurement harness.

pub mod annotations;
pub mod bench;
pub mod curve;
pub mod error;
pub mod pyramid;
pub mod router;
pub mod service;
pub mod store;
pub mod tiles;

pub use annotations::{AnnotationObject, Discipline, ObjectType, Payload, Predicate, WriteOptions};
pub use curve::{morton_decode, morton_encode, GridCoord, MortonKey, VoxelBox, VoxelRegion};
pub use error::{Error, Result};
pub use router::{Placement, Router};
pub use store::{DatasetConfig, DenseVolume, ProjectConfig, ProjectKind, Store, VoxelType};
