//! Stored cuboid framing: 1-byte codec id, 4-byte little-endian raw length,
//! then the codec stream.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Codec {
    None = 0,
    Deflate = 1,
}

impl Codec {
    pub fn from_id(id: u8) -> Option<Codec> {
        match id {
            0 => Some(Codec::None),
            1 => Some(Codec::Deflate),
            _ => None,
        }
    }
}

const HEADER: usize = 5;

pub fn compress(raw: &[u8], codec: Codec) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + raw.len() / 4);
    out.push(codec as u8);
    out.extend_from_slice(&(raw.len() as u32).to_le_bytes());
    match codec {
        Codec::None => out.extend_from_slice(raw),
        Codec::Deflate => {
            let mut enc = DeflateEncoder::new(out, Compression::fast());
            enc.write_all(raw).expect("writing to a Vec cannot fail");
            out = enc.finish().expect("writing to a Vec cannot fail");
        }
    }
    out
}

pub fn decompress(stored: &[u8]) -> Result<Vec<u8>> {
    if stored.len() < HEADER {
        return Err(Error::Integrity(format!("{}-byte payload is shorter than its header", stored.len())));
    }
    let codec = Codec::from_id(stored[0]).ok_or_else(|| Error::Integrity(format!("unknown codec id {}", stored[0])))?;
    let raw_len = u32::from_le_bytes(stored[1..5].try_into().unwrap()) as usize;
    let body = &stored[HEADER..];
    let raw = match codec {
        Codec::None => body.to_vec(),
        Codec::Deflate => {
            let mut raw = Vec::with_capacity(raw_len);
            DeflateDecoder::new(body)
                .take(raw_len as u64 + 1)
                .read_to_end(&mut raw)
                .map_err(|e| Error::Integrity(format!("deflate stream: {e}")))?;
            raw
        }
    };
    if raw.len() != raw_len {
        return Err(Error::Integrity(format!("decoded {} bytes, header says {raw_len}", raw.len())));
    }
    Ok(raw)
}
