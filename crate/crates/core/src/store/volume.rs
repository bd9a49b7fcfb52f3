use crate::curve::VoxelBox;
use crate::error::{Error, Result};
use crate::store::config::VoxelType;

/// A dense sub-volume: one row-major (x fastest) block per channel,
/// concatenated in channel order.
#[derive(Clone, PartialEq, Eq)]
pub struct DenseVolume {
    pub voxel_type: VoxelType,
    /// Voxel box the data covers; its `lo` is the volume's offset.
    pub bounds: VoxelBox,
    /// 3 for spatial volumes, 4 when the time axis is part of the shape.
    pub ndim: u8,
    pub channels: Vec<u32>,
    pub data: Vec<u8>,
}

impl std::fmt::Debug for DenseVolume {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseVolume")
            .field("voxel_type", &self.voxel_type)
            .field("bounds", &self.bounds)
            .field("ndim", &self.ndim)
            .field("channels", &self.channels)
            .field("bytes", &self.data.len())
            .finish()
    }
}

impl DenseVolume {
    pub fn zeros(voxel_type: VoxelType, bounds: VoxelBox) -> Self {
        Self::zeros_with(voxel_type, bounds, vec![0])
    }

    pub fn zeros_with(voxel_type: VoxelType, bounds: VoxelBox, channels: Vec<u32>) -> Self {
        let n = bounds.volume() as usize * voxel_type.width() * channels.len();
        DenseVolume { voxel_type, bounds, ndim: default_ndim(&bounds), channels, data: vec![0; n] }
    }

    pub fn from_bytes(voxel_type: VoxelType, bounds: VoxelBox, data: Vec<u8>) -> Result<Self> {
        let v = DenseVolume { voxel_type, bounds, ndim: default_ndim(&bounds), channels: vec![0], data };
        v.check()?;
        Ok(v)
    }

    pub fn from_u8(bounds: VoxelBox, data: Vec<u8>) -> Result<Self> {
        Self::from_bytes(VoxelType::Uint8, bounds, data)
    }

    pub fn from_u16(bounds: VoxelBox, data: &[u16]) -> Result<Self> {
        Self::from_bytes(VoxelType::Uint16, bounds, data.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_labels(bounds: VoxelBox, data: &[u32]) -> Result<Self> {
        Self::from_bytes(VoxelType::Label32, bounds, data.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn check(&self) -> Result<()> {
        let want = self.bounds.volume() as usize * self.voxel_type.width() * self.channels.len();
        if self.data.len() != want {
            return Err(Error::BadRequest(format!(
                "payload holds {} bytes, {:?} of {:?} needs {want}",
                self.data.len(),
                self.bounds,
                self.voxel_type
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::BadRequest("volume has no channels".into()));
        }
        Ok(())
    }

    pub fn offset(&self) -> [u64; 4] {
        self.bounds.lo
    }

    pub fn dims(&self) -> [u64; 4] {
        self.bounds.dims()
    }

    pub fn voxel_count(&self) -> usize {
        self.bounds.volume() as usize
    }

    pub fn channel_len(&self) -> usize {
        self.voxel_count() * self.voxel_type.width()
    }

    pub fn channel(&self, i: usize) -> &[u8] {
        let n = self.channel_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [u8] {
        let n = self.channel_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Linear index of an absolute voxel position.
    pub fn index_of(&self, p: [u64; 4]) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let d = self.dims();
        let r: [u64; 4] = std::array::from_fn(|k| p[k] - self.bounds.lo[k]);
        Some((((r[3] * d[2] + r[2]) * d[1] + r[1]) * d[0] + r[0]) as usize)
    }

    /// Voxel value widened to u32, channel 0.
    pub fn get(&self, p: [u64; 4]) -> Option<u32> {
        let i = self.index_of(p)?;
        Some(read_value(self.voxel_type, self.channel(0), i))
    }

    pub fn set(&mut self, p: [u64; 4], v: u32) {
        let i = self.index_of(p).expect("voxel inside the volume");
        let vt = self.voxel_type;
        write_value(vt, self.channel_mut(0), i, v);
    }

    /// Channel 0 widened to u32.
    pub fn values(&self) -> Vec<u32> {
        let buf = self.channel(0);
        (0..self.voxel_count()).map(|i| read_value(self.voxel_type, buf, i)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }
}

fn default_ndim(b: &VoxelBox) -> u8 {
    if b.lo[3] == 0 && b.hi[3] == 1 {
        3
    } else {
        4
    }
}

pub(crate) fn read_value(vt: VoxelType, buf: &[u8], i: usize) -> u32 {
    match vt {
        VoxelType::Uint8 => buf[i] as u32,
        VoxelType::Uint16 => u16::from_le_bytes([buf[2 * i], buf[2 * i + 1]]) as u32,
        VoxelType::Label32 | VoxelType::Rgba32 => u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()),
    }
}

pub(crate) fn write_value(vt: VoxelType, buf: &mut [u8], i: usize, v: u32) {
    match vt {
        VoxelType::Uint8 => buf[i] = v as u8,
        VoxelType::Uint16 => buf[2 * i..2 * i + 2].copy_from_slice(&(v as u16).to_le_bytes()),
        VoxelType::Label32 | VoxelType::Rgba32 => buf[4 * i..4 * i + 4].copy_from_slice(&v.to_le_bytes()),
    }
}

pub(crate) fn label_at(buf: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap())
}

pub(crate) fn set_label(buf: &mut [u8], i: usize, v: u32) {
    buf[4 * i..4 * i + 4].copy_from_slice(&v.to_le_bytes());
}

/// Copy `region` from a buffer laid out over `src_box` into one laid out over
/// `dst_box`. Both boxes must contain `region`.
pub fn copy_region(src: &[u8], src_box: &VoxelBox, dst: &mut [u8], dst_box: &VoxelBox, region: &VoxelBox, width: usize) {
    if region.is_empty() {
        return;
    }
    let sd = src_box.dims();
    let dd = dst_box.dims();
    let row = region.dims()[0] as usize * width;
    for t in region.lo[3]..region.hi[3] {
        for z in region.lo[2]..region.hi[2] {
            for y in region.lo[1]..region.hi[1] {
                let s = ((((t - src_box.lo[3]) * sd[2] + (z - src_box.lo[2])) * sd[1] + (y - src_box.lo[1])) * sd[0]
                    + (region.lo[0] - src_box.lo[0])) as usize
                    * width;
                let d = ((((t - dst_box.lo[3]) * dd[2] + (z - dst_box.lo[2])) * dd[1] + (y - dst_box.lo[1])) * dd[0]
                    + (region.lo[0] - dst_box.lo[0])) as usize
                    * width;
                dst[d..d + row].copy_from_slice(&src[s..s + row]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_region_moves_the_overlap_only() {
        let src_box = VoxelBox::xyz((0, 4), (0, 4), (0, 2));
        let src: Vec<u8> = (0..32).collect();
        let dst_box = VoxelBox::xyz((2, 6), (1, 3), (1, 2));
        let mut dst = vec![0u8; 8];
        let region = src_box.intersect(&dst_box);
        copy_region(&src, &src_box, &mut dst, &dst_box, &region, 1);
        // src (x,y,1) = 16 + 4y + x; region x in 2..4, y in 1..3
        assert_eq!(dst, vec![22, 23, 0, 0, 26, 27, 0, 0]);
    }

    #[test]
    fn typed_access() {
        let b = VoxelBox::xyz((10, 12), (0, 1), (0, 1));
        let mut v = DenseVolume::zeros(VoxelType::Uint16, b);
        v.set([11, 0, 0, 0], 0xBEEF);
        assert_eq!(v.get([11, 0, 0, 0]), Some(0xBEEF));
        assert_eq!(v.get([12, 0, 0, 0]), None);
        assert_eq!(v.values(), vec![0, 0xBEEF]);
        assert_eq!(v.ndim, 3);
        assert!(DenseVolume::from_u8(b, vec![1]).is_err());
    }
}
