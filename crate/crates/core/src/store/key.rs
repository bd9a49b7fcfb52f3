//! Byte layout of every key the engine writes.
//!
//! All keys of a project share the prefix `token 0x00`, followed by a one-byte
//! keyspace tag. Cuboid keys sort by (project, resolution, channel, morton), so a
//! Morton scan is a sequential backend scan; the exception record of a cuboid
//! sorts immediately after it.

pub const EXCEPTION_SUFFIX: &[u8] = b"/exc";

const CUBOIDS: u8 = b'c';
const INDEX: u8 = b'i';
const META: u8 = b'm';
const FIELD_EQ: u8 = b'f';
const FIELD_FLOAT: u8 = b'g';
const COUNTER: u8 = b'n';

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CuboidKey {
    pub project: String,
    pub level: u8,
    pub channel: u32,
    pub morton: u64,
}

impl CuboidKey {
    pub fn new(project: &str, level: u8, channel: u32, morton: u64) -> Self {
        CuboidKey { project: project.to_owned(), level, channel, morton }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut k = level_channel_prefix(&self.project, self.level, self.channel);
        k.extend_from_slice(&self.morton.to_be_bytes());
        k
    }

    pub fn exception_key(&self) -> Vec<u8> {
        let mut k = self.encode();
        k.extend_from_slice(EXCEPTION_SUFFIX);
        k
    }

    /// Parse a cuboid key; `None` for any other keyspace.
    pub fn decode(key: &[u8]) -> Option<(CuboidKey, bool)> {
        let sep = key.iter().position(|&b| b == 0)?;
        let project = std::str::from_utf8(&key[..sep]).ok()?;
        let rest = &key[sep + 1..];
        if rest.first() != Some(&CUBOIDS) {
            return None;
        }
        let body = &rest[1..];
        let exc = match body.len() {
            13 => false,
            n if n == 13 + EXCEPTION_SUFFIX.len() && body.ends_with(EXCEPTION_SUFFIX) => true,
            _ => return None,
        };
        let level = body[0];
        let channel = u32::from_be_bytes(body[1..5].try_into().ok()?);
        let morton = u64::from_be_bytes(body[5..13].try_into().ok()?);
        Some((CuboidKey::new(project, level, channel, morton), exc))
    }
}

pub fn project_prefix(project: &str) -> Vec<u8> {
    let mut k = Vec::with_capacity(project.len() + 24);
    k.extend_from_slice(project.as_bytes());
    k.push(0);
    k
}

fn tagged(project: &str, tag: u8) -> Vec<u8> {
    let mut k = project_prefix(project);
    k.push(tag);
    k
}

fn level_channel_prefix(project: &str, level: u8, channel: u32) -> Vec<u8> {
    let mut k = tagged(project, CUBOIDS);
    k.push(level);
    k.extend_from_slice(&channel.to_be_bytes());
    k
}

/// Smallest key greater than every key starting with `prefix`.
pub fn prefix_end(prefix: &[u8]) -> Vec<u8> {
    let mut end = prefix.to_vec();
    while let Some(last) = end.pop() {
        if last < 0xff {
            end.push(last + 1);
            return end;
        }
    }
    vec![0xff; prefix.len() + 1]
}

/// Key range holding every cuboid (and exception record) of one level and channel.
pub fn cuboid_range(project: &str, level: u8, channel: u32) -> (Vec<u8>, Vec<u8>) {
    let lo = level_channel_prefix(project, level, channel);
    let hi = prefix_end(&lo);
    (lo, hi)
}

/// Key range holding every cuboid of one level, across channels.
pub fn level_range(project: &str, level: u8) -> (Vec<u8>, Vec<u8>) {
    let mut lo = tagged(project, CUBOIDS);
    lo.push(level);
    let hi = prefix_end(&lo);
    (lo, hi)
}

pub fn project_range(project: &str) -> (Vec<u8>, Vec<u8>) {
    let lo = project_prefix(project);
    let hi = prefix_end(&lo);
    (lo, hi)
}

pub fn index_key(project: &str, level: u8, id: u32) -> Vec<u8> {
    let mut k = tagged(project, INDEX);
    k.push(level);
    k.extend_from_slice(&id.to_be_bytes());
    k
}

pub fn index_level_range(project: &str, level: u8) -> (Vec<u8>, Vec<u8>) {
    let mut lo = tagged(project, INDEX);
    lo.push(level);
    let hi = prefix_end(&lo);
    (lo, hi)
}

pub fn decode_index_key(key: &[u8]) -> Option<(u8, u32)> {
    let sep = key.iter().position(|&b| b == 0)?;
    let rest = &key[sep + 1..];
    if rest.len() != 6 || rest[0] != INDEX {
        return None;
    }
    Some((rest[1], u32::from_be_bytes(rest[2..6].try_into().ok()?)))
}

pub fn meta_key(project: &str, id: u32) -> Vec<u8> {
    let mut k = tagged(project, META);
    k.extend_from_slice(&id.to_be_bytes());
    k
}

pub fn meta_range(project: &str) -> (Vec<u8>, Vec<u8>) {
    let lo = tagged(project, META);
    let hi = prefix_end(&lo);
    (lo, hi)
}

pub fn counter_key(project: &str) -> Vec<u8> {
    tagged(project, COUNTER)
}

fn field_prefix(project: &str, tag: u8, field: &str) -> Vec<u8> {
    let mut k = tagged(project, tag);
    k.extend_from_slice(field.as_bytes());
    k.push(0);
    k
}

/// Prefix of the equality index for `field == value`; ids follow as 4 BE bytes.
pub fn field_eq_prefix(project: &str, field: &str, value: &str) -> Vec<u8> {
    let mut k = field_prefix(project, FIELD_EQ, field);
    k.extend_from_slice(value.as_bytes());
    k.push(0);
    k
}

pub fn field_eq_key(project: &str, field: &str, value: &str, id: u32) -> Vec<u8> {
    let mut k = field_eq_prefix(project, field, value);
    k.extend_from_slice(&id.to_be_bytes());
    k
}

/// Order-preserving byte image of an f64.
pub fn sortable_f64(v: f64) -> [u8; 8] {
    let bits = v.to_bits();
    let flipped = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    flipped.to_be_bytes()
}

pub fn field_float_prefix(project: &str, field: &str) -> Vec<u8> {
    field_prefix(project, FIELD_FLOAT, field)
}

pub fn field_float_key(project: &str, field: &str, value: f64, id: u32) -> Vec<u8> {
    let mut k = field_float_prefix(project, field);
    k.extend_from_slice(&sortable_f64(value));
    k.extend_from_slice(&id.to_be_bytes());
    k
}

/// Trailing 4-byte id of a field-index key.
pub fn trailing_id(key: &[u8]) -> Option<u32> {
    let n = key.len();
    (n >= 4).then(|| u32::from_be_bytes(key[n - 4..].try_into().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_keys_sort_by_level_channel_morton() {
        let a = CuboidKey::new("p", 0, 0, 5).encode();
        let b = CuboidKey::new("p", 0, 0, 6).encode();
        let c = CuboidKey::new("p", 0, 1, 0).encode();
        let d = CuboidKey::new("p", 1, 0, 0).encode();
        assert!(a < b && b < c && c < d);
        assert!(CuboidKey::new("p", 0, 0, 300).encode() > CuboidKey::new("p", 0, 0, 255).encode());
    }

    #[test]
    fn exception_record_sits_between_neighbours() {
        let k = CuboidKey::new("p", 2, 0, 41);
        let exc = k.exception_key();
        assert!(k.encode() < exc);
        assert!(exc < CuboidKey::new("p", 2, 0, 42).encode());
        let (lo, hi) = cuboid_range("p", 2, 0);
        assert!(lo <= exc && exc < hi);
    }

    #[test]
    fn decode_round_trip() {
        let k = CuboidKey::new("proj_1", 3, 7, 0xdead_beef);
        assert_eq!(CuboidKey::decode(&k.encode()), Some((k.clone(), false)));
        assert_eq!(CuboidKey::decode(&k.exception_key()), Some((k, true)));
        assert_eq!(CuboidKey::decode(&index_key("proj_1", 0, 3)), None);
        assert_eq!(decode_index_key(&index_key("proj_1", 4, 99)), Some((4, 99)));
    }

    #[test]
    fn projects_do_not_share_ranges() {
        let (lo, hi) = project_range("ab");
        let other = CuboidKey::new("abc", 0, 0, 0).encode();
        assert!(!(lo <= other && other < hi));
    }

    #[test]
    fn float_keys_preserve_order() {
        let vals = [-3.5, -0.0, 0.0, 0.25, 0.99, 1.0, 1e9];
        for w in vals.windows(2) {
            assert!(sortable_f64(w[0]) <= sortable_f64(w[1]), "{w:?}");
        }
    }
}
