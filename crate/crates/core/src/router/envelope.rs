//! Canonical JSON-RPC 2.0 tool-call envelopes.
//!
//! Canonical bytes are UTF-8 JSON with no insignificant whitespace, object
//! keys sorted by code point, integers without exponent and reals in their
//! shortest round-trip form. 32-bit reals are widened to 64 bits before
//! rendering, so parsing is exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Affect entries carried in envelope metadata.
pub const AFFECT_DIMS: usize = 8;

const METHOD_PREFIX: &str = "tool/";

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("non-finite metadata field {0}")]
    NonFiniteMetadata(&'static str),
}

fn violation(path: impl Into<String>, reason: impl Into<String>) -> EnvelopeError {
    EnvelopeError::SchemaViolation { path: path.into(), reason: reason.into() }
}

/// A filled argument slot: an object reference or a real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Ref(String),
    Scalar(f64),
}

pub type Args = BTreeMap<String, ArgValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMeta {
    pub episode: String,
    pub step: u32,
    pub slab_count: u32,
    pub ticks: u32,
    pub confidence: f64,
    pub affect: Vec<f32>,
    pub sync_digest: String,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub id: u64,
    /// Tool name without the `tool/` prefix.
    pub tool: String,
    pub args: Args,
    pub meta: EnvelopeMeta,
}

impl Envelope {
    pub fn method(&self) -> String {
        format!("{METHOD_PREFIX}{}", self.tool)
    }
}

/// Lowercase hex SHA-256 of the little-endian bytes of `sync`.
pub fn sync_digest(sync: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for v in sync {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Hands out strictly increasing ids for one session.
#[derive(Debug, Clone)]
pub struct Session {
    next_id: u64,
}

impl Default for Session {
    fn default() -> Self {
        Self { next_id: 1 }
    }
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn envelope(&mut self, tool: &str, args: Args, meta: EnvelopeMeta) -> Envelope {
        let id = self.next_id;
        self.next_id += 1;
        Envelope { id, tool: tool.to_string(), args, meta }
    }
}

fn real(v: f64, field: &'static str) -> Result<Value, EnvelopeError> {
    Number::from_f64(v).map(Value::Number).ok_or(EnvelopeError::NonFiniteMetadata(field))
}

fn to_value(env: &Envelope) -> Result<Value, EnvelopeError> {
    let m = &env.meta;
    let affect = m
        .affect
        .iter()
        .map(|&a| real(f64::from(a), "affect"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut meta = Map::new();
    meta.insert("affect".into(), Value::Array(affect));
    meta.insert("confidence".into(), real(m.confidence, "confidence")?);
    meta.insert("episode".into(), Value::String(m.episode.clone()));
    meta.insert("fallback".into(), Value::Bool(m.fallback));
    meta.insert("slab_count".into(), Value::from(m.slab_count));
    meta.insert("step".into(), Value::from(m.step));
    meta.insert("sync_digest".into(), Value::String(m.sync_digest.clone()));
    meta.insert("ticks".into(), Value::from(m.ticks));

    let mut args = Map::new();
    for (k, v) in &env.args {
        let value = match v {
            ArgValue::Ref(s) => Value::String(s.clone()),
            ArgValue::Scalar(x) => real(*x, "args")?,
        };
        args.insert(k.clone(), value);
    }
    let mut params = Map::new();
    params.insert("args".into(), Value::Object(args));
    params.insert("meta".into(), Value::Object(meta));

    let mut top = Map::new();
    top.insert("id".into(), Value::from(env.id));
    top.insert("jsonrpc".into(), Value::String("2.0".into()));
    top.insert("method".into(), Value::String(env.method()));
    top.insert("params".into(), Value::Object(params));
    Ok(Value::Object(top))
}

/// Canonical bytes of `env`, without a trailing newline.
pub fn serialize_envelope(env: &Envelope) -> Result<Vec<u8>, EnvelopeError> {
    let value = to_value(env)?;
    Ok(serde_json::to_vec(&value).expect("a JSON value always serializes"))
}

fn object<'a>(v: &'a Value, path: &str, keys: &[&str]) -> Result<&'a Map<String, Value>, EnvelopeError> {
    let map = v.as_object().ok_or_else(|| violation(path, "expected an object"))?;
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    if let Some(extra) = map.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(violation(join(extra), "unknown field"));
    }
    if let Some(missing) = keys.iter().find(|k| !map.contains_key(**k)) {
        return Err(violation(join(missing), "missing field"));
    }
    Ok(map)
}

fn uint(v: &Value, path: &str) -> Result<u64, EnvelopeError> {
    v.as_u64().ok_or_else(|| violation(path, "expected a non-negative integer"))
}

fn u32_field(v: &Value, path: &str) -> Result<u32, EnvelopeError> {
    u32::try_from(uint(v, path)?).map_err(|_| violation(path, "integer out of range"))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str, EnvelopeError> {
    v.as_str().ok_or_else(|| violation(path, "expected a string"))
}

fn number(v: &Value, path: &str) -> Result<f64, EnvelopeError> {
    v.as_f64().ok_or_else(|| violation(path, "expected a number"))
}

/// Strict inverse of [`serialize_envelope`].
pub fn parse_envelope(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| EnvelopeError::MalformedJson(e.to_string()))?;
    let top = object(&root, "", &["id", "jsonrpc", "method", "params"])?;
    if top["jsonrpc"] != Value::String("2.0".into()) {
        return Err(violation("jsonrpc", "must be the string \"2.0\""));
    }
    let id = uint(&top["id"], "id")?;
    let tool = string(&top["method"], "method")?
        .strip_prefix(METHOD_PREFIX)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| violation("method", "must be tool/<name>"))?
        .to_string();

    let params = object(&top["params"], "params", &["args", "meta"])?;
    let raw_args = params["args"].as_object().ok_or_else(|| violation("params.args", "expected an object"))?;
    let mut args = Args::new();
    for (k, v) in raw_args {
        let path = format!("params.args.{k}");
        let value = match v {
            Value::String(s) => ArgValue::Ref(s.clone()),
            Value::Number(_) => ArgValue::Scalar(number(v, &path)?),
            _ => return Err(violation(path, "expected a string or a number")),
        };
        args.insert(k.clone(), value);
    }

    let meta = object(
        &params["meta"],
        "params.meta",
        &["affect", "confidence", "episode", "fallback", "slab_count", "step", "sync_digest", "ticks"],
    )?;
    let affect_raw = meta["affect"].as_array().ok_or_else(|| violation("params.meta.affect", "expected an array"))?;
    if affect_raw.len() != AFFECT_DIMS {
        return Err(violation("params.meta.affect", format!("expected {AFFECT_DIMS} entries")));
    }
    let affect = affect_raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let path = format!("params.meta.affect[{i}]");
            let x = number(v, &path)?;
            let narrowed = x as f32;
            if f64::from(narrowed) != x {
                return Err(violation(path, "not a 32-bit real"));
            }
            Ok(narrowed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let digest = string(&meta["sync_digest"], "params.meta.sync_digest")?;
    if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(violation("params.meta.sync_digest", "expected 64 lowercase hex characters"));
    }
    let fallback = meta["fallback"].as_bool().ok_or_else(|| violation("params.meta.fallback", "expected a boolean"))?;

    Ok(Envelope {
        id,
        tool,
        args,
        meta: EnvelopeMeta {
            episode: string(&meta["episode"], "params.meta.episode")?.to_string(),
            step: u32_field(&meta["step"], "params.meta.step")?,
            slab_count: u32_field(&meta["slab_count"], "params.meta.slab_count")?,
            ticks: u32_field(&meta["ticks"], "params.meta.ticks")?,
            confidence: number(&meta["confidence"], "params.meta.confidence")?,
            affect,
            sync_digest: digest.to_string(),
            fallback,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Envelope {
        let mut args = Args::new();
        args.insert("object".into(), ArgValue::Ref("apple".into()));
        Envelope {
            id: 7,
            tool: "pick".into(),
            args,
            meta: EnvelopeMeta {
                episode: "synth-1-0".into(),
                step: 2,
                slab_count: 3,
                ticks: 24,
                confidence: 0.8125,
                affect: vec![0.5, -0.25, 0.0, 0.125, 0.0, 0.0, 0.75, -1.0],
                sync_digest: sync_digest(&[0.0; 4]),
                fallback: false,
            },
        }
    }

    #[test]
    fn digest_of_known_bytes() {
        // SHA-256 of sixteen zero bytes.
        assert_eq!(sync_digest(&[0.0; 4]), "374708fff7719dd5979ec875d56cd2286f6d3cf7ec317a3b25632aab28ec37bb");
    }

    #[test]
    fn round_trip() {
        let env = sample();
        let bytes = serialize_envelope(&env).unwrap();
        assert_eq!(parse_envelope(&bytes).unwrap(), env);
        assert!(!bytes.contains(&b' ') && !bytes.contains(&b'\n'));
    }

    #[test]
    fn arg_insertion_order_is_irrelevant() {
        let mut a = sample();
        let mut b = sample();
        a.args.clear();
        b.args.clear();
        a.args.insert("x".into(), ArgValue::Scalar(1.5));
        a.args.insert("a".into(), ArgValue::Ref("cup".into()));
        b.args.insert("a".into(), ArgValue::Ref("cup".into()));
        b.args.insert("x".into(), ArgValue::Scalar(1.5));
        assert_eq!(serialize_envelope(&a).unwrap(), serialize_envelope(&b).unwrap());
    }

    #[test]
    fn wrong_jsonrpc_literal() {
        let text = String::from_utf8(serialize_envelope(&sample()).unwrap()).unwrap().replace("\"2.0\"", "\"1.0\"");
        let err = parse_envelope(text.as_bytes()).unwrap_err();
        assert!(matches!(err, EnvelopeError::SchemaViolation { ref path, .. } if path == "jsonrpc"));
    }

    #[test]
    fn truncated_stream() {
        let bytes = serialize_envelope(&sample()).unwrap();
        let err = parse_envelope(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, EnvelopeError::MalformedJson(_)));
    }

    #[test]
    fn unknown_field_and_bad_digest() {
        let text = String::from_utf8(serialize_envelope(&sample()).unwrap()).unwrap();
        let extra = text.replacen('{', "{\"extra\":1,", 1);
        let err = parse_envelope(extra.as_bytes()).unwrap_err();
        assert!(matches!(err, EnvelopeError::SchemaViolation { ref path, .. } if path == "extra"));
        let mut env = sample();
        env.meta.sync_digest = "ABC".into();
        let err = parse_envelope(&serialize_envelope(&env).unwrap()).unwrap_err();
        assert!(matches!(err, EnvelopeError::SchemaViolation { ref path, .. } if path == "params.meta.sync_digest"));
    }

    #[test]
    fn non_finite_confidence() {
        let mut env = sample();
        env.meta.confidence = f64::NAN;
        assert_eq!(serialize_envelope(&env).unwrap_err(), EnvelopeError::NonFiniteMetadata("confidence"));
    }

    #[test]
    fn session_ids_increase() {
        let mut s = Session::new();
        let ids: Vec<u64> = (0..5).map(|_| s.envelope("noop", Args::new(), sample().meta).id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
    }
}
