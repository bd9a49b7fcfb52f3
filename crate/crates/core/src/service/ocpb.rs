//! Binary interchange bodies.
//!
//! Dense volumes travel as an OCPB v1 container:
//!
//! ```text
//! "OCPB" | u8 version=1 | u8 dtype | u8 ndim | u8 codec
//!        | ndim x u32 extent | ndim x u32 offset | u64 payload length | payload
//! ```
//!
//! All integers are little-endian. Dimensions run x, y, z, then t when the
//! dataset has a time axis, then a channel axis when more than one channel
//! was requested (its offset is always 0). The payload is row-major with x
//! fastest, deflated when codec is 1.
//!
//! Voxel lists are `u32 count` followed by `count x ndim` u32 coordinates.
//! Several objects travel in one OCPR body:
//!
//! ```text
//! "OCPR" | u8 version=1 | u32 count | count x record
//! record = u32 meta length | canonical JSON | u8 kind | payload
//!   kind 0: nothing  kind 1: u8 ndim, voxel list  kind 2: u64 length, OCPB container
//! ```

use std::borrow::Cow;
use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::annotations::{AnnotationObject, Payload};
use crate::curve::VoxelBox;
use crate::error::{Error, Result};
use crate::store::{DenseVolume, VoxelType};

pub const VOLUME_MAGIC: &[u8; 4] = b"OCPB";
pub const RECORDS_MAGIC: &[u8; 4] = b"OCPR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WireCodec {
    #[default]
    None,
    Deflate,
}

impl WireCodec {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "raw" => Some(WireCodec::None),
            "deflate" | "zlib" => Some(WireCodec::Deflate),
            _ => None,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadRequest(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn wire_u32(v: u64, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit the wire format")))
}

pub fn encode_volume(vol: &DenseVolume, codec: WireCodec) -> Result<Vec<u8>> {
    let spatial = vol.ndim as usize;
    let multi = vol.channels.len() > 1;
    let ndim = spatial + multi as usize;
    let d = vol.dims();
    let mut extents: Vec<u64> = d[..spatial].to_vec();
    let mut offsets: Vec<u64> = vol.bounds.lo[..spatial].to_vec();
    if multi {
        extents.push(vol.channels.len() as u64);
        offsets.push(0);
    }
    let payload: Cow<[u8]> = match codec {
        WireCodec::None => Cow::Borrowed(&vol.data),
        WireCodec::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&vol.data)?;
            Cow::Owned(enc.finish()?)
        }
    };
    let mut out = Vec::with_capacity(16 + 8 * ndim + payload.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&[VERSION, vol.voxel_type.code(), ndim as u8, codec as u8]);
    for &e in &extents {
        out.extend_from_slice(&wire_u32(e, "extent")?.to_le_bytes());
    }
    for &o in &offsets {
        out.extend_from_slice(&wire_u32(o, "offset")?.to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode an OCPB container. `has_time` tells a 4-d x,y,z,t body apart from
/// a 4-d x,y,z,channel one.
pub fn decode_volume(bytes: &[u8], has_time: bool) -> Result<DenseVolume> {
    let mut r = Reader::new(bytes);
    let vol = read_volume(&mut r, has_time)?;
    r.finish()?;
    Ok(vol)
}

fn read_volume(r: &mut Reader<'_>, has_time: bool) -> Result<DenseVolume> {
    if r.take(4)? != VOLUME_MAGIC {
        return Err(bad("not an OCPB container"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(bad(format!("OCPB version {version} unsupported")));
    }
    let dtype = r.u8()?;
    let voxel_type = VoxelType::from_code(dtype).ok_or_else(|| bad(format!("unknown dtype code {dtype}")))?;
    let ndim = r.u8()? as usize;
    let codec = match r.u8()? {
        0 => WireCodec::None,
        1 => WireCodec::Deflate,
        c => return Err(bad(format!("unknown codec {c}"))),
    };
    let spatial = 3 + has_time as usize;
    if ndim != spatial && ndim != spatial + 1 {
        return Err(bad(format!("{ndim}-d body for a {spatial}-d dataset")));
    }
    let extents: Vec<u64> = (0..ndim).map(|_| r.u32().map(u64::from)).collect::<Result<_>>()?;
    let offsets: Vec<u64> = (0..ndim).map(|_| r.u32().map(u64::from)).collect::<Result<_>>()?;
    let mut lo = [0u64; 4];
    let mut hi = [0, 0, 0, 1];
    for d in 0..spatial {
        lo[d] = offsets[d];
        hi[d] = offsets[d] + extents[d];
    }
    let channels = if ndim > spatial { extents[spatial] } else { 1 };
    if channels == 0 || (ndim > spatial && offsets[spatial] != 0) {
        return Err(bad("malformed channel axis"));
    }
    let len = r.u64()?;
    let payload = r.take(usize::try_from(len).map_err(|_| bad("payload too large"))?)?;
    let bounds = VoxelBox { lo, hi };
    let want = bounds.volume() as usize * voxel_type.width() * channels as usize;
    let data = match codec {
        WireCodec::None => payload.to_vec(),
        WireCodec::Deflate => {
            let mut data = Vec::with_capacity(want);
            DeflateDecoder::new(payload)
                .take(want as u64 + 1)
                .read_to_end(&mut data)
                .map_err(|e| bad(format!("deflate payload: {e}")))?;
            data
        }
    };
    let vol = DenseVolume {
        voxel_type,
        bounds,
        ndim: spatial as u8,
        channels: (0..channels as u32).collect(),
        data,
    };
    vol.check()?;
    Ok(vol)
}

pub fn encode_voxels(voxels: &[[u64; 4]], ndim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + voxels.len() * ndim * 4);
    out.extend_from_slice(&wire_u32(voxels.len() as u64, "voxel count")?.to_le_bytes());
    for v in voxels {
        for &c in &v[..ndim] {
            out.extend_from_slice(&wire_u32(c, "coordinate")?.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_voxels(bytes: &[u8], ndim: usize) -> Result<Vec<[u64; 4]>> {
    let mut r = Reader::new(bytes);
    let out = read_voxels(&mut r, ndim)?;
    r.finish()?;
    Ok(out)
}

fn read_voxels(r: &mut Reader<'_>, ndim: usize) -> Result<Vec<[u64; 4]>> {
    if !(3..=4).contains(&ndim) {
        return Err(bad(format!("voxel lists are 3-d or 4-d, not {ndim}-d")));
    }
    let n = r.u32()? as usize;
    if n.saturating_mul(ndim * 4) > r.buf.len() - r.pos {
        return Err(bad("truncated voxel list"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0u64; 4];
        for c in p.iter_mut().take(ndim) {
            *c = r.u32()? as u64;
        }
        out.push(p);
    }
    Ok(out)
}

/// One object of a multi-record body.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub object: AnnotationObject,
    pub payload: Payload,
}

pub fn encode_records(records: &[Record], codec: WireCodec) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(RECORDS_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&wire_u32(records.len() as u64, "record count")?.to_le_bytes());
    for rec in records {
        let meta = rec.object.to_canonical_json();
        out.extend_from_slice(&wire_u32(meta.len() as u64, "metadata length")?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        match &rec.payload {
            Payload::None => out.push(0),
            Payload::Voxels(v) => {
                let ndim = if v.iter().any(|p| p[3] != 0) { 4 } else { 3 };
                out.push(1);
                out.push(ndim as u8);
                out.extend_from_slice(&encode_voxels(v, ndim)?);
            }
            Payload::Dense(vol) => {
                let body = encode_volume(vol, codec)?;
                out.push(2);
                out.extend_from_slice(&(body.len() as u64).to_le_bytes());
                out.extend_from_slice(&body);
            }
        }
    }
    Ok(out)
}

pub fn decode_records(bytes: &[u8], has_time: bool) -> Result<Vec<Record>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != RECORDS_MAGIC {
        return Err(bad("not an OCPR body"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(bad(format!("OCPR version {version} unsupported")));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let object = AnnotationObject::from_json(r.take(len)?)?;
        let payload = match r.u8()? {
            0 => Payload::None,
            1 => {
                let ndim = r.u8()? as usize;
                Payload::Voxels(read_voxels(&mut r, ndim)?)
            }
            2 => {
                let len = usize::try_from(r.u64()?).map_err(|_| bad("record too large"))?;
                let mut sub = Reader::new(r.take(len)?);
                let vol = read_volume(&mut sub, has_time)?;
                sub.finish()?;
                Payload::Dense(vol)
            }
            k => return Err(bad(format!("unknown payload kind {k}"))),
        };
        out.push(Record { object, payload });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::ObjectType;

    fn sample() -> DenseVolume {
        let b = VoxelBox::xyz((3, 5), (1, 4), (7, 8));
        DenseVolume::from_u8(b, (0..6).collect()).unwrap()
    }

    #[test]
    fn volume_header_layout() {
        let enc = encode_volume(&sample(), WireCodec::None).unwrap();
        let mut want = b"OCPB".to_vec();
        want.extend_from_slice(&[1, 1, 3, 0]);
        for v in [2u32, 3, 1, 3, 1, 7] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&6u64.to_le_bytes());
        want.extend_from_slice(&[0, 1, 2, 3, 4, 5]);
        assert_eq!(enc, want);
    }

    #[test]
    fn volume_round_trips() {
        for codec in [WireCodec::None, WireCodec::Deflate] {
            let v = sample();
            assert_eq!(decode_volume(&encode_volume(&v, codec).unwrap(), false).unwrap(), v);
        }
        let b = VoxelBox::xyz((0, 2), (0, 2), (0, 1)).with_time((4, 6));
        let v = DenseVolume::from_labels(b, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(v.ndim, 4);
        assert_eq!(decode_volume(&encode_volume(&v, WireCodec::Deflate).unwrap(), true).unwrap(), v);
    }

    #[test]
    fn multi_channel_axis() {
        let b = VoxelBox::xyz((0, 2), (0, 1), (0, 1));
        let mut v = DenseVolume::zeros_with(VoxelType::Uint8, b, vec![0, 1, 2]);
        v.data = (0..6).collect();
        let enc = encode_volume(&v, WireCodec::None).unwrap();
        assert_eq!(enc[6], 4);
        assert_eq!(decode_volume(&enc, false).unwrap(), v);
    }

    #[test]
    fn rejects_malformed() {
        let enc = encode_volume(&sample(), WireCodec::None).unwrap();
        assert!(decode_volume(&enc[..enc.len() - 1], false).is_err());
        let mut extra = enc.clone();
        extra.push(0);
        assert!(decode_volume(&extra, false).is_err());
        let mut wrong = enc.clone();
        wrong[0] = b'X';
        assert!(decode_volume(&wrong, false).is_err());
        assert!(decode_voxels(&[9, 0, 0, 0], 3).is_err());
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![
            Record { object: AnnotationObject::new(ObjectType::Synapse).with_id(4), payload: Payload::None },
            Record {
                object: AnnotationObject::new(ObjectType::Seed).with_kv("k", "v"),
                payload: Payload::Voxels(vec![[1, 2, 3, 0], [4, 5, 6, 0]]),
            },
            Record { object: AnnotationObject::new(ObjectType::Neuron), payload: Payload::Dense(sample()) },
        ];
        let enc = encode_records(&recs, WireCodec::Deflate).unwrap();
        assert_eq!(decode_records(&enc, false).unwrap(), recs);
    }
}
