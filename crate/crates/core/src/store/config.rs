use serde::{Deserialize, Serialize};

use crate::curve::{morton_encode, GridCoord, VoxelBox};
use crate::error::{Error, Result};

/// Every cuboid holds exactly this many voxels, whatever its shape.
pub const CUBOID_VOXELS: u64 = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelType {
    Uint8,
    Uint16,
    Label32,
    Rgba32,
}

impl VoxelType {
    pub fn width(self) -> usize {
        match self {
            VoxelType::Uint8 => 1,
            VoxelType::Uint16 => 2,
            VoxelType::Label32 | VoxelType::Rgba32 => 4,
        }
    }

    /// Wire code used by the interchange container.
    pub fn code(self) -> u8 {
        match self {
            VoxelType::Uint8 => 1,
            VoxelType::Uint16 => 2,
            VoxelType::Label32 => 3,
            VoxelType::Rgba32 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => VoxelType::Uint8,
            2 => VoxelType::Uint16,
            3 => VoxelType::Label32,
            4 => VoxelType::Rgba32,
            _ => return None,
        })
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uint8" | "u8" => VoxelType::Uint8,
            "uint16" | "u16" => VoxelType::Uint16,
            "label32" | "u32" => VoxelType::Label32,
            "rgba32" | "rgba" => VoxelType::Rgba32,
            _ => return None,
        })
    }
}

/// Cuboid shape used from `from_level` upward until the next stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeStage {
    pub from_level: u8,
    pub shape: [u64; 4],
}

/// Flat 128x128x16 cuboids for the finest four levels, 64^3 cubes beyond.
pub fn anisotropic_schedule() -> Vec<ShapeStage> {
    vec![
        ShapeStage { from_level: 0, shape: [128, 128, 16, 1] },
        ShapeStage { from_level: 4, shape: [64, 64, 64, 1] },
    ]
}

pub fn time_series_schedule() -> Vec<ShapeStage> {
    vec![ShapeStage { from_level: 0, shape: [64, 64, 8, 8] }]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// Level-0 extent in voxels (x, y, z).
    pub extent: [u64; 3],
    /// Number of time points; 0 when the dataset has no time axis.
    #[serde(default)]
    pub time_extent: u64,
    #[serde(default = "one")]
    pub channels: u32,
    #[serde(default = "one_u8")]
    pub levels: u8,
    #[serde(default)]
    pub schedule: Vec<ShapeStage>,
}

fn one() -> u32 {
    1
}

fn one_u8() -> u8 {
    1
}

impl DatasetConfig {
    pub fn new(name: impl Into<String>, extent: [u64; 3]) -> Self {
        DatasetConfig {
            name: name.into(),
            extent,
            time_extent: 0,
            channels: 1,
            levels: 1,
            schedule: anisotropic_schedule(),
        }
    }

    pub fn with_levels(mut self, levels: u8) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_time(mut self, time_extent: u64) -> Self {
        self.time_extent = time_extent;
        if self.schedule == anisotropic_schedule() {
            self.schedule = time_series_schedule();
        }
        self
    }

    pub fn with_channels(mut self, channels: u32) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_schedule(mut self, schedule: Vec<ShapeStage>) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn has_time(&self) -> bool {
        self.time_extent > 0
    }

    pub fn curve_dims(&self) -> usize {
        if self.has_time() {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("dataset name is empty".into()));
        }
        if self.extent.contains(&0) {
            return Err(Error::Config(format!("dataset {} has an empty extent", self.name)));
        }
        if self.levels == 0 {
            return Err(Error::Config(format!("dataset {} has no resolution levels", self.name)));
        }
        if self.channels == 0 {
            return Err(Error::Config(format!("dataset {} has no channels", self.name)));
        }
        if self.schedule.first().map(|s| s.from_level) != Some(0) {
            return Err(Error::Config("cuboid schedule must start at level 0".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].from_level >= w[1].from_level) {
            return Err(Error::Config("cuboid schedule levels must increase".into()));
        }
        for stage in &self.schedule {
            let voxels: u64 = stage.shape.iter().product();
            if voxels != CUBOID_VOXELS {
                return Err(Error::Config(format!(
                    "cuboid shape {:?} holds {voxels} voxels, expected {CUBOID_VOXELS}",
                    stage.shape
                )));
            }
            if !self.has_time() && stage.shape[3] != 1 {
                return Err(Error::Config("time-chunked cuboids on a dataset without time".into()));
            }
        }
        for r in 0..self.levels {
            self.level(r)?;
        }
        Ok(())
    }

    fn shape_at(&self, level: u8) -> [u64; 4] {
        self.schedule
            .iter()
            .rev()
            .find(|s| s.from_level <= level)
            .map(|s| s.shape)
            .unwrap_or([128, 128, 16, 1])
    }

    pub fn level(&self, level: u8) -> Result<ResolutionLevel> {
        if level >= self.levels {
            return Err(Error::NotFound(format!(
                "resolution {level} (dataset {} has {} levels)",
                self.name, self.levels
            )));
        }
        let mut x = self.extent[0];
        let mut y = self.extent[1];
        for _ in 0..level {
            x = x.div_ceil(2);
            y = y.div_ceil(2);
        }
        let t = self.time_extent.max(1);
        let level = ResolutionLevel {
            index: level,
            extent: [x, y, self.extent[2], t],
            cuboid: self.shape_at(level),
            scale: 1 << level,
            has_time: self.has_time(),
        };
        let grid = level.grid_extent();
        let dims = level.dims();
        let budget = 1u64 << crate::curve::bits_per_dim(dims);
        if grid[..dims].iter().any(|&g| g > budget) {
            return Err(Error::Config(format!("dataset {} exceeds the curve's bit budget", self.name)));
        }
        Ok(level)
    }

    pub fn levels(&self) -> impl Iterator<Item = ResolutionLevel> + '_ {
        (0..self.levels).filter_map(|r| self.level(r).ok())
    }
}

/// Geometry of one level of the resolution hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ResolutionLevel {
    pub index: u8,
    /// Voxel extent (x, y, z, t); t is 1 without a time axis.
    pub extent: [u64; 4],
    /// Cuboid shape (cx, cy, cz, ct).
    pub cuboid: [u64; 4],
    /// XY scale factor relative to level 0.
    pub scale: u64,
    has_time: bool,
}

impl ResolutionLevel {
    pub fn dims(&self) -> usize {
        if self.has_time {
            4
        } else {
            3
        }
    }

    pub fn cuboid_voxels(&self) -> usize {
        self.cuboid.iter().product::<u64>() as usize
    }

    pub fn bounds(&self) -> VoxelBox {
        VoxelBox::from_extent(self.extent)
    }

    pub fn grid_extent(&self) -> [u64; 4] {
        std::array::from_fn(|d| self.extent[d].div_ceil(self.cuboid[d]))
    }

    /// One past the largest key any cuboid of this level can take.
    pub fn key_space(&self) -> u64 {
        let g = self.grid_extent();
        let max: Vec<u64> = (0..self.dims()).map(|d| g[d] - 1).collect();
        GridCoord::new(&max).map(|c| morton_encode(&c).value + 1).unwrap_or(u64::MAX)
    }

    pub fn cuboid_box(&self, grid: &GridCoord) -> VoxelBox {
        let g = grid.padded();
        VoxelBox {
            lo: std::array::from_fn(|d| g[d] * self.cuboid[d]),
            hi: std::array::from_fn(|d| (g[d] + 1) * self.cuboid[d]),
        }
    }

    /// Row-major (x fastest) offset of a voxel inside its cuboid.
    pub fn intra_offset(&self, p: [u64; 4]) -> usize {
        let c = self.cuboid;
        let (x, y, z, t) = (p[0] % c[0], p[1] % c[1], p[2] % c[2], p[3] % c[3]);
        (((t * c[2] + z) * c[1] + y) * c[0] + x) as usize
    }

    pub fn grid_of(&self, p: [u64; 4]) -> GridCoord {
        let g: Vec<u64> = (0..self.dims()).map(|d| p[d] / self.cuboid[d]).collect();
        GridCoord::new(&g).expect("voxel inside the level's grid")
    }

    /// Inverse of [`intra_offset`](Self::intra_offset) for a cuboid at `grid`.
    pub fn voxel_at(&self, grid: &GridCoord, offset: usize) -> [u64; 4] {
        let c = self.cuboid;
        let g = grid.padded();
        let o = offset as u64;
        let x = o % c[0];
        let y = (o / c[0]) % c[1];
        let z = (o / (c[0] * c[1])) % c[2];
        let t = o / (c[0] * c[1] * c[2]);
        [g[0] * c[0] + x, g[1] * c[1] + y, g[2] * c[2] + z, g[3] * c[3] + t]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectKind {
    Image,
    Annotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub token: String,
    pub dataset: String,
    pub kind: ProjectKind,
    pub voxel_type: VoxelType,
    #[serde(default)]
    pub exceptions: bool,
    #[serde(default)]
    pub read_only: bool,
    /// Store cuboids deflated. Always on for annotation projects.
    #[serde(default = "yes")]
    pub compress: bool,
    /// Level at which annotations are written and from which they propagate.
    #[serde(default)]
    pub annotation_level: u8,
    #[serde(default = "default_tile")]
    pub tile_size: u32,
}

fn yes() -> bool {
    true
}

fn default_tile() -> u32 {
    512
}

impl ProjectConfig {
    pub fn image(token: impl Into<String>, dataset: impl Into<String>, voxel_type: VoxelType) -> Self {
        ProjectConfig {
            token: token.into(),
            dataset: dataset.into(),
            kind: ProjectKind::Image,
            voxel_type,
            exceptions: false,
            read_only: false,
            compress: true,
            annotation_level: 0,
            tile_size: default_tile(),
        }
    }

    pub fn annotation(token: impl Into<String>, dataset: impl Into<String>) -> Self {
        ProjectConfig {
            kind: ProjectKind::Annotation,
            ..ProjectConfig::image(token, dataset, VoxelType::Label32)
        }
    }

    pub fn with_exceptions(mut self, on: bool) -> Self {
        self.exceptions = on;
        self
    }

    pub fn with_compression(mut self, on: bool) -> Self {
        self.compress = on;
        self
    }

    pub fn read_only(mut self, on: bool) -> Self {
        self.read_only = on;
        self
    }

    pub fn is_annotation(&self) -> bool {
        self.kind == ProjectKind::Annotation
    }

    pub fn validate(&self, dataset: &DatasetConfig) -> Result<()> {
        validate_token(&self.token)?;
        if self.is_annotation() {
            if self.voxel_type != VoxelType::Label32 {
                return Err(Error::Config("annotation projects store 32-bit labels".into()));
            }
            if !self.compress {
                return Err(Error::Config("annotation projects are always compressed".into()));
            }
            if self.annotation_level >= dataset.levels {
                return Err(Error::Config(format!(
                    "annotation level {} outside the hierarchy",
                    self.annotation_level
                )));
            }
        } else if self.exceptions {
            return Err(Error::Config("exceptions apply to annotation projects only".into()));
        }
        if !(256..=1024).contains(&self.tile_size) {
            return Err(Error::Config(format!("tile size {} outside 256..=1024", self.tile_size)));
        }
        Ok(())
    }
}

pub const RESERVED_TOKENS: &[&str] = &["admin", "tiles"];

pub fn validate_token(token: &str) -> Result<()> {
    let ok = !token.is_empty()
        && token.len() <= 64
        && token.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if !ok || RESERVED_TOKENS.contains(&token) {
        return Err(Error::BadRequest(format!("invalid token {token:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_shapes_hold_two_to_the_eighteen() {
        assert_eq!(128 * 128 * 16, CUBOID_VOXELS);
        assert_eq!(64 * 64 * 64, CUBOID_VOXELS);
        assert_eq!(CUBOID_VOXELS, 256 * 1024);
    }

    #[test]
    fn level_extents_halve_xy_only() {
        let ds = DatasetConfig::new("d", [1000, 999, 50]).with_levels(6);
        ds.validate().unwrap();
        let l1 = ds.level(1).unwrap();
        assert_eq!(l1.extent, [500, 500, 50, 1]);
        let l5 = ds.level(5).unwrap();
        assert_eq!(l5.extent, [32, 32, 50, 1]);
        assert_eq!(l5.scale, 32);
        assert_eq!(ds.level(3).unwrap().cuboid, [128, 128, 16, 1]);
        assert_eq!(ds.level(4).unwrap().cuboid, [64, 64, 64, 1]);
        assert!(ds.level(6).is_err());
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let ds = DatasetConfig::new("d", [100, 100, 100])
            .with_schedule(vec![ShapeStage { from_level: 0, shape: [128, 128, 8, 1] }]);
        assert!(matches!(ds.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn intra_offset_round_trips() {
        let ds = DatasetConfig::new("d", [300, 300, 40]).with_time(20);
        ds.validate().unwrap();
        let lvl = ds.level(0).unwrap();
        let p = [130, 77, 13, 9];
        let g = lvl.grid_of(p);
        assert_eq!(lvl.voxel_at(&g, lvl.intra_offset(p)), p);
    }

    #[test]
    fn key_space_covers_grid() {
        let lvl = DatasetConfig::new("d", [512, 512, 16]).level(0).unwrap();
        // 4x4x1 grid: largest key is (3,3,0) = 0b11011
        assert_eq!(lvl.key_space(), 28);
    }

    #[test]
    fn tokens() {
        assert!(validate_token("bock11").is_ok());
        assert!(validate_token("tiles").is_err());
        assert!(validate_token("a/b").is_err());
    }
}
