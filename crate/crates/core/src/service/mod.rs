//! The REST protocol: URL grammar ([`url`]), binary bodies ([`ocpb`]) and a
//! transport-independent request handler. [`http`] puts the handler behind
//! an HTTP/1.1 listener.
//!
//! The handler keeps no session state; every request is answered from the
//! store alone. Writes to one object are serialized by the store's
//! per-object locks.

pub mod http;
pub mod ocpb;
pub mod url;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::annotations::{AnnotationObject, Payload, WriteOptions};
use crate::curve::{VoxelBox, VoxelRegion};
use crate::error::{Error, Result};
use crate::router::Placement;
use crate::store::config::{anisotropic_schedule, time_series_schedule, ResolutionLevel};
use crate::store::{DatasetConfig, ProjectConfig, Store};
use crate::tiles::TileAddress;

pub use ocpb::{Record, WireCodec};
pub use url::{Method, ObjectView, Ranges, Route};

pub const OCPB_TYPE: &str = "application/x-ocpb";
pub const JSON_TYPE: &str = "application/json";
pub const PNG_TYPE: &str = "image/png";
pub const TEXT_TYPE: &str = "text/plain; charset=utf-8";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub query: String,
    pub body: Vec<u8>,
}

impl Request {
    pub fn get(path: &str) -> Self {
        Self::with("GET", path, Vec::new())
    }

    pub fn put(path: &str, body: Vec<u8>) -> Self {
        Self::with("PUT", path, body)
    }

    pub fn delete(path: &str) -> Self {
        Self::with("DELETE", path, Vec::new())
    }

    /// `target` may carry a `?query`.
    pub fn with(method: &str, target: &str, body: Vec<u8>) -> Self {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        Request { method: method.into(), path: path.into(), query: query.into(), body }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn ok(content_type: &'static str, body: Vec<u8>) -> Self {
        Response { status: 200, content_type, body }
    }

    fn json(v: &impl serde::Serialize) -> Self {
        Self::ok(JSON_TYPE, serde_json::to_vec(v).expect("response serializes"))
    }

    pub fn error(err: &Error) -> Self {
        Response { status: status_of(err), content_type: TEXT_TYPE, body: format!("{err}\n").into_bytes() }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub fn status_of(err: &Error) -> u16 {
    match err {
        Error::NotFound(_) => 404,
        Error::BadRequest(_) | Error::OutOfRange(_) | Error::Alignment(_) => 400,
        Error::Bounds(_) => 416,
        Error::Permission(_) => 403,
        Error::Conflict(_) | Error::Config(_) | Error::Locked(_) => 409,
        Error::Integrity(_) | Error::Storage(_) | Error::Migration(_) | Error::Io(_) => 500,
    }
}

/// Query-string options shared by several routes.
#[derive(Debug, Default)]
struct Options {
    channels: Option<Vec<u32>>,
    filter: Option<BTreeSet<u32>>,
    codec: WireCodec,
    plane: crate::tiles::Plane,
    write: (Option<crate::annotations::Discipline>, bool, bool),
}

fn id_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::BadRequest(format!("bad {what} {p:?}"))))
        .collect()
}

fn options(query: &str) -> Result<Options> {
    let params = url::query_params(query)?;
    let mut o = Options { plane: url::tile_plane(&params)?, ..Default::default() };
    for (k, v) in &params {
        match k.as_str() {
            "channels" => o.channels = Some(id_list(v, "channel")?),
            "filter" => o.filter = Some(id_list(v, "id")?.into_iter().collect()),
            "codec" => o.codec = WireCodec::parse(v).ok_or_else(|| Error::BadRequest(format!("unknown codec {v:?}")))?,
            "discipline" => {
                o.write.0 = Some(
                    crate::annotations::Discipline::parse(v)
                        .ok_or_else(|| Error::BadRequest(format!("unknown discipline {v:?}")))?,
                )
            }
            "update" => o.write.1 = true,
            "dataonly" => o.write.2 = true,
            "plane" => {}
            other => return Err(Error::BadRequest(format!("unknown query parameter {other:?}"))),
        }
    }
    Ok(o)
}

/// Reject any range reaching past the level extent; the library would clip.
fn strict_box(lvl: &ResolutionLevel, ranges: &Ranges) -> Result<VoxelBox> {
    let b = ranges.to_box();
    if (0..4).any(|d| b.hi[d] > lvl.extent[d]) {
        return Err(Error::Bounds(format!("{b:?} reaches past level {} extent {:?}", lvl.index, lvl.extent)));
    }
    if ranges.t.is_some() && lvl.dims() < 4 {
        return Err(Error::BadRequest("time range on a dataset without time".into()));
    }
    Ok(b)
}

/// The stateless request handler.
#[derive(Clone)]
pub struct Service {
    store: Arc<Store>,
}

impl Service {
    pub fn new(store: Arc<Store>) -> Self {
        Service { store }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn handle(&self, req: &Request) -> Response {
        match self.dispatch(req) {
            Ok(resp) => resp,
            Err(e) => {
                log::debug!("{} {} -> {e}", req.method, req.path);
                Response::error(&e)
            }
        }
    }

    fn dispatch(&self, req: &Request) -> Result<Response> {
        let method =
            Method::parse(&req.method).ok_or_else(|| Error::BadRequest(format!("method {} not supported", req.method)))?;
        let route = url::parse(method, &req.path)?;
        let opts = options(&req.query)?;
        match (method, route) {
            (Method::Get, Route::Cutout { token, res, ranges, .. }) => self.get_cutout(&token, res, &ranges, &opts),
            (Method::Put, Route::Cutout { token, res, ranges, .. }) => self.put_cutout(&token, res, &ranges, &req.body),
            (Method::Get, Route::Object { token, id, view }) => self.get_object(&token, id, view, &opts),
            (Method::Delete, Route::Object { token, id, view: ObjectView::Metadata }) => {
                self.store.delete_annotation(&token, id)?;
                Ok(Response::json(&json!({ "deleted": id })))
            }
            (Method::Get, Route::Batch { token, ids }) => {
                let objects = self.store.batch_read(&token, &ids)?;
                let records: Vec<Record> =
                    objects.into_iter().map(|object| Record { object, payload: Payload::None }).collect();
                Ok(Response::ok(OCPB_TYPE, ocpb::encode_records(&records, opts.codec)?))
            }
            (Method::Get, Route::Query { token, predicates }) => {
                Ok(Response::json(&self.store.query_objects(&token, &predicates)?))
            }
            (Method::Get, Route::Ids { token, res, ranges }) => {
                let p = self.store.project(&token)?;
                let b = strict_box(&p.level(res)?, &ranges)?;
                Ok(Response::json(&self.store.ids_in_region(&token, res, &b)?))
            }
            (Method::Put, Route::Write { token, discipline, update, dataonly }) => {
                let (qd, qu, qo) = opts.write;
                if discipline.is_some() && qd.is_some() && discipline != qd {
                    return Err(Error::BadRequest("conflicting write disciplines".into()));
                }
                let wo = WriteOptions {
                    discipline: discipline.or(qd).unwrap_or_default(),
                    update: update || qu,
                    dataonly: dataonly || qo,
                    level: None,
                };
                self.write_objects(&token, &req.body, wo)
            }
            (Method::Get, Route::Tile { token, res, z, y, x }) => {
                let addr = TileAddress { res, slice: z, row: y, col: x, plane: opts.plane };
                Ok(Response::ok(PNG_TYPE, self.store.tile_png(&token, addr)?))
            }
            (Method::Get, Route::Dataset { name }) => Ok(Response::json(&self.store.dataset(&name)?)),
            (Method::Put, Route::Dataset { name }) => self.put_dataset(&name, &req.body),
            (Method::Get, Route::Project { token }) => self.describe_project(&token),
            (Method::Put, Route::Project { token }) => {
                self.put_project(&token, &req.body)?;
                self.describe_project(&token)
            }
            (Method::Get, Route::PlacementReport { token }) => {
                Ok(Response::json(&self.store.router().placement_report(&token)?))
            }
            (m, r) => Err(Error::BadRequest(format!("{m:?} not allowed on {}", r.render()))),
        }
    }

    fn get_cutout(&self, token: &str, res: u8, ranges: &Ranges, opts: &Options) -> Result<Response> {
        let p = self.store.project(token)?;
        let b = strict_box(&p.level(res)?, ranges)?;
        let vol = match &opts.filter {
            Some(keep) => {
                if opts.channels.is_some() {
                    return Err(Error::BadRequest("filter applies to label projects with one channel".into()));
                }
                self.store.filter_cutout(token, res, &b, keep)?
            }
            None => {
                let channels = opts.channels.clone().unwrap_or_else(|| vec![0]);
                self.store.read_cutout(token, res, &VoxelRegion::with_channels(b, channels))?
            }
        };
        Ok(Response::ok(OCPB_TYPE, ocpb::encode_volume(&vol, opts.codec)?))
    }

    fn put_cutout(&self, token: &str, res: u8, ranges: &Ranges, body: &[u8]) -> Result<Response> {
        let p = self.store.project(token)?;
        let b = strict_box(&p.level(res)?, ranges)?;
        let vol = ocpb::decode_volume(body, p.dataset.has_time())?;
        if vol.bounds != b {
            return Err(Error::BadRequest(format!("body covers {:?}, URL names {b:?}", vol.bounds)));
        }
        let summary = self.store.write_cutout(token, res, &vol)?;
        Ok(Response::json(&json!({ "cuboids_written": summary.cuboids_written })))
    }

    fn get_object(&self, token: &str, id: u32, view: ObjectView, opts: &Options) -> Result<Response> {
        let p = self.store.project(token)?;
        let default_res = p.config.annotation_level;
        match view {
            ObjectView::Metadata => {
                Ok(Response::ok(JSON_TYPE, self.store.get_object(token, id)?.to_canonical_json().into_bytes()))
            }
            ObjectView::Voxels { res } => {
                let res = res.unwrap_or(default_res);
                let dims = p.level(res)?.dims();
                let voxels = self.store.object_voxels(token, id, res)?;
                Ok(Response::ok(OCPB_TYPE, ocpb::encode_voxels(&voxels, dims)?))
            }
            ObjectView::BoundingBox { res } => {
                let res = res.unwrap_or(default_res);
                let b = self.store.object_bounding_box(token, id, res)?;
                Ok(Response::json(&json!({ "level": res, "lo": b.lo, "hi": b.hi })))
            }
            ObjectView::Cutout { res, ranges } => {
                let res = res.unwrap_or(default_res);
                let region = ranges.map(|r| strict_box(&p.level(res)?, &r)).transpose()?;
                let vol = self.store.object_cutout(token, id, res, region)?;
                Ok(Response::ok(OCPB_TYPE, ocpb::encode_volume(&vol, opts.codec)?))
            }
        }
    }

    /// Bodies: an OCPR multi-record, a JSON object or a JSON array of objects.
    fn write_objects(&self, token: &str, body: &[u8], opts: WriteOptions) -> Result<Response> {
        let p = self.store.project(token)?;
        let items: Vec<(AnnotationObject, Payload)> = if body.starts_with(ocpb::RECORDS_MAGIC) {
            ocpb::decode_records(body, p.dataset.has_time())?.into_iter().map(|r| (r.object, r.payload)).collect()
        } else {
            match serde_json::from_slice::<Value>(body)? {
                Value::Array(list) => list.into_iter().map(json_item).collect::<Result<_>>()?,
                v @ Value::Object(_) => vec![json_item(v)?],
                _ => return Err(Error::BadRequest("write body is neither OCPR nor JSON metadata".into())),
            }
        };
        if items.is_empty() {
            return Err(Error::BadRequest("write body holds no objects".into()));
        }
        Ok(Response::json(&self.store.batch_write(token, items, opts)?))
    }

    fn put_dataset(&self, name: &str, body: &[u8]) -> Result<Response> {
        let mut v: Value = serde_json::from_slice(body)?;
        let obj = v.as_object_mut().ok_or_else(|| Error::BadRequest("dataset body must be a JSON object".into()))?;
        obj.insert("name".into(), json!(name));
        let mut cfg: DatasetConfig = serde_json::from_value(v)?;
        if cfg.schedule.is_empty() {
            cfg.schedule = if cfg.has_time() { time_series_schedule() } else { anisotropic_schedule() };
        }
        self.store.create_dataset(cfg)?;
        Ok(Response::json(&self.store.dataset(name)?))
    }

    fn put_project(&self, token: &str, body: &[u8]) -> Result<()> {
        let mut v: Value = serde_json::from_slice(body)?;
        let obj = v.as_object_mut().ok_or_else(|| Error::BadRequest("project body must be a JSON object".into()))?;
        obj.insert("token".into(), json!(token));
        let placement = obj.remove("placement");
        let cfg: ProjectConfig = serde_json::from_value(v)?;
        match placement {
            Some(pl) => {
                let placement: Placement = serde_json::from_value(pl)?;
                self.store.create_project_with(cfg, placement)?;
            }
            None => {
                self.store.create_project(cfg)?;
            }
        }
        Ok(())
    }

    fn describe_project(&self, token: &str) -> Result<Response> {
        let p = self.store.project(token)?;
        let mut v = serde_json::to_value(&p.config)?;
        v["placement"] = serde_json::to_value(&*self.store.router().placement(token)?)?;
        Ok(Response::json(&v))
    }
}

/// One JSON write item: object metadata plus an optional `voxels` list of
/// `[x, y, z]` or `[x, y, z, t]` positions.
fn json_item(mut v: Value) -> Result<(AnnotationObject, Payload)> {
    let voxels = v.as_object_mut().and_then(|o| o.remove("voxels"));
    let object: AnnotationObject = serde_json::from_value(v)?;
    let payload = match voxels {
        None => Payload::None,
        Some(list) => {
            let points: Vec<Vec<u64>> = serde_json::from_value(list)?;
            let voxels = points
                .into_iter()
                .map(|p| match p[..] {
                    [x, y, z] => Ok([x, y, z, 0]),
                    [x, y, z, t] => Ok([x, y, z, t]),
                    _ => Err(Error::BadRequest(format!("voxel {p:?} needs 3 or 4 coordinates"))),
                })
                .collect::<Result<_>>()?;
            Payload::Voxels(voxels)
        }
    };
    Ok((object, payload))
}

