//! URL grammar.
//!
//! ```text
//! GET    /{token}/cutout/{res}/{x1},{x2}/{y1},{y2}/{z1},{z2}[/{t1},{t2}]/   (also /hdf5/)
//! PUT    /{token}/cutout/{res}/{ranges}/                         dense write
//! GET    /{token}/{id}/[voxels|boundingbox|cutout][/{res}[/{ranges}]]/
//! GET    /{token}/{id1},{id2},.../                               batch read
//! GET    /{token}/objects/{field}/{value}[/{field}/{op}/{value}]/
//! GET    /{token}/ids/{res}/{ranges}/                            ids in a region
//! PUT    /{token}/[{discipline}/][update/][dataonly/]            write objects
//! DELETE /{token}/{id}/
//! GET    /tiles/{token}/{r}/{z}/{y}_{x}.png
//! GET|PUT /admin/datasets/{name}    GET|PUT /admin/projects/{token}
//! GET    /admin/projects/{token}/report
//! ```

use std::fmt::Write as _;

use crate::annotations::query::{FLOAT_FIELDS};
use crate::annotations::{Discipline, FloatOp, Predicate};
use crate::curve::VoxelBox;
use crate::error::{Error, Result};
use crate::tiles::Plane;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Get,
    Put,
    Delete,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "GET" | "HEAD" => Method::Get,
            "PUT" | "POST" => Method::Put,
            "DELETE" => Method::Delete,
            _ => return None,
        })
    }
}

/// Half-open ranges of a cutout: x, y, z and optionally t.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ranges {
    pub x: (u64, u64),
    pub y: (u64, u64),
    pub z: (u64, u64),
    pub t: Option<(u64, u64)>,
}

impl Ranges {
    pub fn to_box(&self) -> VoxelBox {
        let b = VoxelBox::xyz(self.x, self.y, self.z);
        match self.t {
            Some(t) => b.with_time(t),
            None => b,
        }
    }

    pub fn from_box(b: &VoxelBox, with_time: bool) -> Self {
        Ranges {
            x: (b.lo[0], b.hi[0]),
            y: (b.lo[1], b.hi[1]),
            z: (b.lo[2], b.hi[2]),
            t: with_time.then_some((b.lo[3], b.hi[3])),
        }
    }

    fn render(&self, out: &mut String) {
        for (lo, hi) in [self.x, self.y, self.z].into_iter().chain(self.t) {
            let _ = write!(out, "{lo},{hi}/");
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectView {
    Metadata,
    Voxels { res: Option<u8> },
    BoundingBox { res: Option<u8> },
    Cutout { res: Option<u8>, ranges: Option<Ranges> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Route {
    Cutout { token: String, legacy: bool, res: u8, ranges: Ranges },
    Object { token: String, id: u32, view: ObjectView },
    Batch { token: String, ids: Vec<u32> },
    Query { token: String, predicates: Vec<Predicate> },
    Ids { token: String, res: u8, ranges: Ranges },
    Write { token: String, discipline: Option<Discipline>, update: bool, dataonly: bool },
    Tile { token: String, res: u8, z: u64, y: u64, x: u64 },
    Dataset { name: String },
    Project { token: String },
    PlacementReport { token: String },
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadRequest(msg.into())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(format!("{what} {s:?} is not a non-negative integer")));
    }
    s.parse().map_err(|_| bad(format!("{what} {s:?} out of range")))
}

fn range(s: &str) -> Result<(u64, u64)> {
    let (a, b) = s.split_once(',').ok_or_else(|| bad(format!("range {s:?} is not lo,hi")))?;
    let (lo, hi) = (num::<u64>(a, "range bound")?, num::<u64>(b, "range bound")?);
    if lo >= hi {
        return Err(bad(format!("empty range {s:?}")));
    }
    Ok((lo, hi))
}

fn ranges(segs: &[&str]) -> Result<Ranges> {
    match segs.len() {
        3 | 4 => Ok(Ranges {
            x: range(segs[0])?,
            y: range(segs[1])?,
            z: range(segs[2])?,
            t: segs.get(3).map(|s| range(s)).transpose()?,
        }),
        n => Err(bad(format!("expected 3 or 4 ranges, got {n}"))),
    }
}

fn is_id_list(s: &str) -> bool {
    !s.is_empty() && s.split(',').all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}

fn res_and_ranges(segs: &[&str]) -> Result<(Option<u8>, Option<Ranges>)> {
    match segs {
        [] => Ok((None, None)),
        [r] => Ok((Some(num(r, "resolution")?), None)),
        [r, rest @ ..] => Ok((Some(num(r, "resolution")?), Some(ranges(rest)?))),
    }
}

fn predicates(segs: &[&str]) -> Result<Vec<Predicate>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < segs.len() {
        let field = segs[i];
        if field == "kv" {
            match segs.get(i + 1..i + 3) {
                Some([k, v]) => out.push(Predicate::kv(k, v)),
                _ => return Err(bad("kv predicate needs a key and a value")),
            }
            i += 3;
        } else if FLOAT_FIELDS.contains(&field) {
            let op = segs.get(i + 1).and_then(|s| FloatOp::parse(s));
            let (op, value, step) = match op {
                Some(op) => (op, segs.get(i + 2), 3),
                None => (FloatOp::Eq, segs.get(i + 1), 2),
            };
            let value = value.ok_or_else(|| bad(format!("{field} predicate needs a value")))?;
            let v: f64 = value.parse().map_err(|_| bad(format!("{value:?} is not a number")))?;
            out.push(Predicate::float(field, op, v));
            i += step;
        } else {
            let value = segs.get(i + 1).ok_or_else(|| bad(format!("{field} predicate needs a value")))?;
            out.push(Predicate::eq(field, value));
            i += 2;
        }
    }
    if out.is_empty() {
        return Err(bad("objects query without predicates"));
    }
    Ok(out)
}

/// Percent-decoding of a path segment.
fn decode_segment(s: &str) -> Result<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3).ok_or_else(|| bad("truncated percent escape"))?;
            out.push(u8::from_str_radix(hex, 16).map_err(|_| bad("bad percent escape"))?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| bad("path is not UTF-8"))
}

fn encode_segment(s: &str, out: &mut String) {
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~,".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
}

pub fn parse(method: Method, path: &str) -> Result<Route> {
    let decoded: Vec<String> = path.split('/').filter(|s| !s.is_empty()).map(decode_segment).collect::<Result<_>>()?;
    let segs: Vec<&str> = decoded.iter().map(String::as_str).collect();
    let Some((&head, rest)) = segs.split_first() else {
        return Err(Error::NotFound("empty path".into()));
    };
    match head {
        "admin" => return parse_admin(rest),
        "tiles" => return parse_tile(rest),
        _ => {}
    }
    let token = head.to_owned();
    if method == Method::Put && rest.first().map_or(true, |s| *s != "cutout" && *s != "hdf5") {
        let mut discipline = None;
        let (mut update, mut dataonly) = (false, false);
        for s in rest {
            match *s {
                "update" => update = true,
                "dataonly" => dataonly = true,
                d => match Discipline::parse(d) {
                    Some(d) if discipline.is_none() => discipline = Some(d),
                    Some(_) => return Err(bad("more than one write discipline")),
                    None => return Err(bad(format!("unknown write option {d:?}"))),
                },
            }
        }
        return Ok(Route::Write { token, discipline, update, dataonly });
    }
    match rest {
        [] => Err(Error::NotFound(format!("no resource at /{token}/"))),
        [kind @ ("cutout" | "hdf5"), r, tail @ ..] => Ok(Route::Cutout {
            token,
            legacy: *kind == "hdf5",
            res: num(r, "resolution")?,
            ranges: ranges(tail)?,
        }),
        ["cutout" | "hdf5"] => Err(bad("cutout needs a resolution and ranges")),
        ["objects", tail @ ..] => Ok(Route::Query { token, predicates: predicates(tail)? }),
        ["ids", r, tail @ ..] => Ok(Route::Ids { token, res: num(r, "resolution")?, ranges: ranges(tail)? }),
        [ids, tail @ ..] if is_id_list(ids) => {
            let list: Vec<u32> = ids.split(',').map(|s| num(s, "object id")).collect::<Result<_>>()?;
            if list.len() > 1 {
                if !tail.is_empty() {
                    return Err(bad("data options apply to single objects"));
                }
                return Ok(Route::Batch { token, ids: list });
            }
            let id = list[0];
            let view = match tail {
                [] => ObjectView::Metadata,
                ["voxels", more @ ..] => match res_and_ranges(more)? {
                    (res, None) => ObjectView::Voxels { res },
                    _ => return Err(bad("voxels take only a resolution")),
                },
                ["boundingbox", more @ ..] => match res_and_ranges(more)? {
                    (res, None) => ObjectView::BoundingBox { res },
                    _ => return Err(bad("boundingbox takes only a resolution")),
                },
                ["cutout", more @ ..] => {
                    let (res, ranges) = res_and_ranges(more)?;
                    ObjectView::Cutout { res, ranges }
                }
                [other, ..] => return Err(bad(format!("unknown data option {other:?}"))),
            };
            Ok(Route::Object { token, id, view })
        }
        [other, ..] => Err(bad(format!("unknown resource {other:?}"))),
    }
}

fn parse_admin(rest: &[&str]) -> Result<Route> {
    match rest {
        ["datasets", name] => Ok(Route::Dataset { name: name.to_string() }),
        ["projects", token] => Ok(Route::Project { token: token.to_string() }),
        ["projects", token, "report"] => Ok(Route::PlacementReport { token: token.to_string() }),
        _ => Err(Error::NotFound("unknown admin resource".into())),
    }
}

fn parse_tile(rest: &[&str]) -> Result<Route> {
    let [token, r, z, file] = rest else {
        return Err(bad("tile paths are /tiles/{token}/{r}/{z}/{y}_{x}.png"));
    };
    let stem = file.strip_suffix(".png").ok_or_else(|| bad("tiles are .png"))?;
    let (y, x) = stem.split_once('_').ok_or_else(|| bad("tile name is {y}_{x}.png"))?;
    Ok(Route::Tile {
        token: token.to_string(),
        res: num(r, "resolution")?,
        z: num(z, "slice")?,
        y: num(y, "tile row")?,
        x: num(x, "tile column")?,
    })
}

impl Route {
    /// Canonical path of the route (query string not included).
    pub fn render(&self) -> String {
        let mut out = String::from("/");
        let seg = |out: &mut String, s: &str| {
            encode_segment(s, out);
            out.push('/');
        };
        match self {
            Route::Cutout { token, legacy, res, ranges } => {
                seg(&mut out, token);
                out.push_str(if *legacy { "hdf5/" } else { "cutout/" });
                let _ = write!(out, "{res}/");
                ranges.render(&mut out);
            }
            Route::Object { token, id, view } => {
                seg(&mut out, token);
                let _ = write!(out, "{id}/");
                let res_part = |out: &mut String, name: &str, res: &Option<u8>| {
                    out.push_str(name);
                    out.push('/');
                    if let Some(r) = res {
                        let _ = write!(out, "{r}/");
                    }
                };
                match view {
                    ObjectView::Metadata => {}
                    ObjectView::Voxels { res } => res_part(&mut out, "voxels", res),
                    ObjectView::BoundingBox { res } => res_part(&mut out, "boundingbox", res),
                    ObjectView::Cutout { res, ranges } => {
                        res_part(&mut out, "cutout", res);
                        if let Some(r) = ranges {
                            r.render(&mut out);
                        }
                    }
                }
            }
            Route::Batch { token, ids } => {
                seg(&mut out, token);
                let list: Vec<String> = ids.iter().map(u32::to_string).collect();
                out.push_str(&list.join(","));
                out.push('/');
            }
            Route::Query { token, predicates } => {
                seg(&mut out, token);
                out.push_str("objects/");
                for p in predicates {
                    match p {
                        Predicate::Field { field, value } => {
                            seg(&mut out, field);
                            seg(&mut out, value);
                        }
                        Predicate::Kv { key, value } => {
                            out.push_str("kv/");
                            seg(&mut out, key);
                            seg(&mut out, value);
                        }
                        Predicate::Float { field, op, value } => {
                            seg(&mut out, field);
                            let _ = write!(out, "{}/{value}/", op.as_str());
                        }
                    }
                }
            }
            Route::Ids { token, res, ranges } => {
                seg(&mut out, token);
                let _ = write!(out, "ids/{res}/");
                ranges.render(&mut out);
            }
            Route::Write { token, discipline, update, dataonly } => {
                seg(&mut out, token);
                if let Some(d) = discipline {
                    let _ = write!(out, "{}/", d.as_str());
                }
                if *update {
                    out.push_str("update/");
                }
                if *dataonly {
                    out.push_str("dataonly/");
                }
            }
            Route::Tile { token, res, z, y, x } => {
                out.push_str("tiles/");
                seg(&mut out, token);
                let _ = write!(out, "{res}/{z}/{y}_{x}.png");
            }
            Route::Dataset { name } => {
                out.push_str("admin/datasets/");
                encode_segment(name, &mut out);
            }
            Route::Project { token } => {
                out.push_str("admin/projects/");
                encode_segment(token, &mut out);
            }
            Route::PlacementReport { token } => {
                out.push_str("admin/projects/");
                seg(&mut out, token);
                out.push_str("report");
            }
        }
        out
    }
}

/// Query-string parameters, percent-decoded. Flags without `=` map to "".
pub fn query_params(query: &str) -> Result<Vec<(String, String)>> {
    query
        .split('&')
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            Ok((decode_segment(&k.replace('+', " "))?, decode_segment(&v.replace('+', " "))?))
        })
        .collect()
}

pub fn tile_plane(params: &[(String, String)]) -> Result<Plane> {
    match params.iter().find(|(k, _)| k == "plane").map(|(_, v)| v.as_str()) {
        None | Some("xy") => Ok(Plane::Xy),
        Some("xz") => Ok(Plane::Xz),
        Some("yz") => Ok(Plane::Yz),
        Some(other) => Err(bad(format!("unknown plane {other:?}"))),
    }
}
