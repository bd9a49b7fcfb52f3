//! Object metadata records and the secondary keyspaces used for predicate
//! queries: equality indexes for type, status, author and user key/value
//! pairs, and an order-preserving float index for confidence.

use std::collections::BTreeSet;

use crate::annotations::AnnotationObject;
use crate::error::{Error, Result};
use crate::store::backend::{Backend, WriteBatch};
use crate::store::key::{
    field_eq_key, field_eq_prefix, field_float_key, field_float_prefix, meta_key, meta_range, prefix_end, sortable_f64,
    trailing_id,
};
use crate::store::Store;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FloatOp {
    Lt,
    Leq,
    Eq,
    Geq,
    Gt,
}

impl FloatOp {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lt" => FloatOp::Lt,
            "leq" => FloatOp::Leq,
            "eq" => FloatOp::Eq,
            "geq" => FloatOp::Geq,
            "gt" => FloatOp::Gt,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FloatOp::Lt => "lt",
            FloatOp::Leq => "leq",
            FloatOp::Eq => "eq",
            FloatOp::Geq => "geq",
            FloatOp::Gt => "gt",
        }
    }
}

/// One conjunct of an object query.
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    /// `type`, `status` or `author` equal to a value.
    Field { field: String, value: String },
    /// User key/value pair equal to a value.
    Kv { key: String, value: String },
    /// `confidence` compared against a number.
    Float { field: String, op: FloatOp, value: f64 },
}

impl Predicate {
    pub fn eq(field: &str, value: impl ToString) -> Self {
        Predicate::Field { field: field.to_owned(), value: value.to_string() }
    }

    pub fn kv(key: &str, value: &str) -> Self {
        Predicate::Kv { key: key.to_owned(), value: value.to_owned() }
    }

    pub fn float(field: &str, op: FloatOp, value: f64) -> Self {
        Predicate::Float { field: field.to_owned(), op, value }
    }
}

pub const EQ_FIELDS: &[&str] = &["type", "status", "author"];
pub const FLOAT_FIELDS: &[&str] = &["confidence"];

fn kv_field(key: &str) -> String {
    format!("kv:{key}")
}

fn normalized(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn eq_pairs(obj: &AnnotationObject) -> Vec<(String, String)> {
    let mut out = vec![
        ("type".to_owned(), obj.kind.as_str().to_owned()),
        ("status".to_owned(), obj.status.to_string()),
        ("author".to_owned(), obj.author.clone()),
    ];
    out.extend(obj.kv.iter().map(|(k, v)| (kv_field(k), v.clone())));
    out
}

/// Metadata record plus index entries for `obj`, replacing those of `old`.
pub(crate) fn put_metadata(token: &str, old: Option<&AnnotationObject>, obj: &AnnotationObject, batch: &mut WriteBatch) {
    if let Some(old) = old {
        remove_metadata(token, old, batch);
    }
    batch.put(meta_key(token, obj.id), obj.to_canonical_json().into_bytes());
    for (field, value) in eq_pairs(obj) {
        batch.put(field_eq_key(token, &field, &value, obj.id), Vec::new());
    }
    batch.put(field_float_key(token, "confidence", normalized(obj.confidence), obj.id), Vec::new());
}

pub(crate) fn remove_metadata(token: &str, obj: &AnnotationObject, batch: &mut WriteBatch) {
    batch.delete(meta_key(token, obj.id));
    for (field, value) in eq_pairs(obj) {
        batch.delete(field_eq_key(token, &field, &value, obj.id));
    }
    batch.delete(field_float_key(token, "confidence", normalized(obj.confidence), obj.id));
}

fn float_range(prefix: &[u8], op: FloatOp, v: f64) -> (Vec<u8>, Vec<u8>) {
    let mut at = prefix.to_vec();
    at.extend_from_slice(&sortable_f64(normalized(v)));
    let end = prefix_end(prefix);
    match op {
        FloatOp::Lt => (prefix.to_vec(), at),
        FloatOp::Leq => (prefix.to_vec(), prefix_end(&at)),
        FloatOp::Eq => {
            let hi = prefix_end(&at);
            (at, hi)
        }
        FloatOp::Geq => (at, end),
        FloatOp::Gt => (prefix_end(&at), end),
    }
}

impl Store {
    /// Ids of objects satisfying every predicate, ascending. No predicates
    /// lists every object with metadata.
    pub fn query_objects(&self, token: &str, predicates: &[Predicate]) -> Result<Vec<u32>> {
        let p = self.project(token)?;
        if !p.config.is_annotation() {
            return Err(Error::BadRequest(format!("project {token} holds no annotations")));
        }
        for pred in predicates {
            match pred {
                Predicate::Field { field, .. } if !EQ_FIELDS.contains(&field.as_str()) => {
                    return Err(Error::BadRequest(format!("unknown field {field:?}")));
                }
                Predicate::Float { field, value, .. } => {
                    if !FLOAT_FIELDS.contains(&field.as_str()) {
                        return Err(Error::BadRequest(format!("{field:?} is not a numeric field")));
                    }
                    if value.is_nan() {
                        return Err(Error::BadRequest("NaN in a range query".into()));
                    }
                }
                _ => {}
            }
        }
        let home = self.router().home(token)?;
        let mut result: Option<BTreeSet<u32>> = None;
        if predicates.is_empty() {
            let (lo, hi) = meta_range(token);
            result = Some(home.scan_keys(&lo, &hi)?.iter().filter_map(|k| trailing_id(k)).collect());
        }
        for pred in predicates {
            let (lo, hi) = match pred {
                Predicate::Field { field, value } => {
                    let lo = field_eq_prefix(token, field, value);
                    let hi = prefix_end(&lo);
                    (lo, hi)
                }
                Predicate::Kv { key, value } => {
                    let lo = field_eq_prefix(token, &kv_field(key), value);
                    let hi = prefix_end(&lo);
                    (lo, hi)
                }
                Predicate::Float { field, op, value } => float_range(&field_float_prefix(token, field), *op, *value),
            };
            let ids: BTreeSet<u32> = home.scan_keys(&lo, &hi)?.iter().filter_map(|k| trailing_id(k)).collect();
            result = Some(match result {
                None => ids,
                Some(acc) => acc.intersection(&ids).copied().collect(),
            });
            if result.as_ref().is_some_and(BTreeSet::is_empty) {
                break;
            }
        }
        Ok(result.unwrap_or_default().into_iter().collect())
    }
}
