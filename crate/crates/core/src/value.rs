//! Runtime value model and record schemas.
//!
//! Every datum that crosses a node boundary is a [`Value`] checked against a
//! [`FieldType`]. Values have one canonical JSON encoding (sorted keys, fixed
//! number formatting, base64 bytes, non-finite floats as strings) which is
//! used for hashing, caching, trace digests and the on-disk formats. Decoding
//! is schema-directed: the same JSON text can only be read back against the
//! type it was written for.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Type of a single schema field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldType {
    Bool,
    Int,
    Float,
    String,
    Bytes,
    List(Box<FieldType>),
    Record(Schema),
}

/// Ordered map of field name to field type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Schema {
    fields: BTreeMap<String, FieldType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("empty field name")]
    EmptyFieldName,
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("malformed schema: {0}")]
    Malformed(String),
}

/// A value failed to conform to the type it was checked against.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at `{path}`: expected {expected}, found {found}")]
pub struct ConformanceError {
    pub path: String,
    pub expected: String,
    pub found: String,
}

impl ConformanceError {
    fn new(path: &str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        ConformanceError {
            path: if path.is_empty() { "$".to_string() } else { path.to_string() },
            expected: expected.into(),
            found: found.into(),
        }
    }
}

impl FieldType {
    pub fn list(inner: FieldType) -> Self {
        FieldType::List(Box::new(inner))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, FieldType::Int | FieldType::Float)
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            FieldType::Bool => J::String("bool".into()),
            FieldType::Int => J::String("int".into()),
            FieldType::Float => J::String("float".into()),
            FieldType::String => J::String("string".into()),
            FieldType::Bytes => J::String("bytes".into()),
            FieldType::List(inner) => {
                let mut m = serde_json::Map::new();
                m.insert("list".into(), inner.to_json());
                J::Object(m)
            }
            FieldType::Record(schema) => {
                let mut m = serde_json::Map::new();
                m.insert("record".into(), schema.to_json());
                J::Object(m)
            }
        }
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Self, SchemaError> {
        use serde_json::Value as J;
        match json {
            J::String(s) => match s.as_str() {
                "bool" => Ok(FieldType::Bool),
                "int" => Ok(FieldType::Int),
                "float" => Ok(FieldType::Float),
                "string" => Ok(FieldType::String),
                "bytes" => Ok(FieldType::Bytes),
                other => Err(SchemaError::Malformed(format!("unknown type `{other}`"))),
            },
            J::Object(m) if m.len() == 1 => {
                let (k, v) = m.iter().next().expect("len checked");
                match k.as_str() {
                    "list" => Ok(FieldType::list(FieldType::from_json(v)?)),
                    "record" => Ok(FieldType::Record(Schema::from_json(v)?)),
                    other => Err(SchemaError::Malformed(format!("unknown type constructor `{other}`"))),
                }
            }
            other => Err(SchemaError::Malformed(format!("unexpected type encoding {other}"))),
        }
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldType::Bool => f.write_str("bool"),
            FieldType::Int => f.write_str("int"),
            FieldType::Float => f.write_str("float"),
            FieldType::String => f.write_str("string"),
            FieldType::Bytes => f.write_str("bytes"),
            FieldType::List(inner) => write!(f, "list<{inner}>"),
            FieldType::Record(s) => write!(f, "record{s}"),
        }
    }
}

impl Schema {
    pub fn empty() -> Self {
        Schema::default()
    }

    /// Builds a schema, rejecting empty and duplicate field names.
    pub fn from_fields<I, K>(fields: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = (K, FieldType)>,
        K: Into<String>,
    {
        let mut out = BTreeMap::new();
        for (name, ty) in fields {
            let name = name.into();
            if name.is_empty() {
                return Err(SchemaError::EmptyFieldName);
            }
            if out.insert(name.clone(), ty).is_some() {
                return Err(SchemaError::DuplicateField(name));
            }
        }
        Ok(Schema { fields: out })
    }

    /// Panicking variant of [`Schema::from_fields`] for literals in code and tests.
    pub fn of<const N: usize>(fields: [(&str, FieldType); N]) -> Self {
        Schema::from_fields(fields).expect("invalid schema literal")
    }

    pub fn fields(&self) -> &BTreeMap<String, FieldType> {
        &self.fields
    }

    pub fn get(&self, name: &str) -> Option<&FieldType> {
        self.fields.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fields.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, ty: FieldType) -> Result<(), SchemaError> {
        let name = name.into();
        if name.is_empty() {
            return Err(SchemaError::EmptyFieldName);
        }
        if self.fields.contains_key(&name) {
            return Err(SchemaError::DuplicateField(name));
        }
        self.fields.insert(name, ty);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &FieldType)> {
        self.fields.iter()
    }

    /// Checks that `record` has exactly this schema's fields with conforming values.
    pub fn check_record(&self, record: &BTreeMap<String, Value>) -> Result<(), ConformanceError> {
        check_record_at(self, record, "")
    }

    pub fn check(&self, value: &Value) -> Result<(), ConformanceError> {
        match value {
            Value::Record(r) => self.check_record(r),
            other => Err(ConformanceError::new("", "record", other.type_name())),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (k, v) in &self.fields {
            m.insert(k.clone(), v.to_json());
        }
        serde_json::Value::Object(m)
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Self, SchemaError> {
        let obj = json
            .as_object()
            .ok_or_else(|| SchemaError::Malformed("schema must be an object".into()))?;
        let mut fields = Vec::with_capacity(obj.len());
        for (k, v) in obj {
            fields.push((k.clone(), FieldType::from_json(v)?));
        }
        Schema::from_fields(fields)
    }

    /// SHA-256 of the canonical encoding.
    pub fn canonical_hash(&self) -> String {
        digest_hex(canonical_json(&self.to_json()).as_bytes())
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}: {v}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(d)?;
        Schema::from_json(&json).map_err(serde::de::Error::custom)
    }
}

impl Serialize for FieldType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FieldType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(d)?;
        FieldType::from_json(&json).map_err(serde::de::Error::custom)
    }
}

fn check_record_at(
    schema: &Schema,
    record: &BTreeMap<String, Value>,
    path: &str,
) -> Result<(), ConformanceError> {
    for (name, ty) in &schema.fields {
        let sub = join_path(path, name);
        match record.get(name) {
            Some(v) => check_at(v, ty, &sub)?,
            None => return Err(ConformanceError::new(&sub, ty.to_string(), "missing field")),
        }
    }
    if let Some(extra) = record.keys().find(|k| !schema.fields.contains_key(*k)) {
        return Err(ConformanceError::new(&join_path(path, extra), "no such field", "extra field"));
    }
    Ok(())
}

fn check_at(value: &Value, ty: &FieldType, path: &str) -> Result<(), ConformanceError> {
    match (value, ty) {
        (Value::Bool(_), FieldType::Bool)
        | (Value::Int(_), FieldType::Int)
        | (Value::Float(_), FieldType::Float)
        | (Value::String(_), FieldType::String)
        | (Value::Bytes(_), FieldType::Bytes) => Ok(()),
        (Value::List(items), FieldType::List(inner)) => {
            for (i, item) in items.iter().enumerate() {
                check_at(item, inner, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        (Value::Record(r), FieldType::Record(s)) => check_record_at(s, r, path),
        (v, t) => Err(ConformanceError::new(path, t.to_string(), v.type_name())),
    }
}

fn join_path(path: &str, field: &str) -> String {
    if path.is_empty() {
        field.to_string()
    } else {
        format!("{path}.{field}")
    }
}

/// A runtime datum.
///
/// Equality is structural; floats compare by bit pattern so that every value,
/// including NaN, equals itself.
#[derive(Debug, Clone)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    String(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Record(BTreeMap<String, Value>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::String(a), Value::String(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::List(a), Value::List(b)) => a == b,
            (Value::Record(a), Value::Record(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::String(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::String(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Conformance(#[from] ConformanceError),
}

impl Value {
    pub fn empty_record() -> Self {
        Value::Record(BTreeMap::new())
    }

    pub fn record<const N: usize>(fields: [(&str, Value); N]) -> Self {
        Value::Record(fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::String(_) => "string",
            Value::Bytes(_) => "bytes",
            Value::List(_) => "list",
            Value::Record(_) => "record",
        }
    }

    pub fn as_record(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.as_record().and_then(|r| r.get(field))
    }

    pub fn conforms_to(&self, ty: &FieldType) -> Result<(), ConformanceError> {
        check_at(self, ty, "")
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Bool(b) => J::Bool(*b),
            Value::Int(i) => J::Number((*i).into()),
            Value::Float(f) => match serde_json::Number::from_f64(*f) {
                Some(n) => J::Number(n),
                None if f.is_nan() => J::String("NaN".into()),
                None if *f > 0.0 => J::String("inf".into()),
                None => J::String("-inf".into()),
            },
            Value::String(s) => J::String(s.clone()),
            Value::Bytes(b) => J::String(BASE64.encode(b)),
            Value::List(items) => J::Array(items.iter().map(Value::to_json).collect()),
            Value::Record(r) => {
                let mut m = serde_json::Map::new();
                for (k, v) in r {
                    m.insert(k.clone(), v.to_json());
                }
                J::Object(m)
            }
        }
    }

    /// Schema-directed decoding of the canonical JSON form.
    pub fn from_json(json: &serde_json::Value, ty: &FieldType) -> Result<Value, ConformanceError> {
        from_json_at(json, ty, "")
    }

    /// Parses canonical JSON text against `ty`.
    pub fn parse_canonical(text: &str, ty: &FieldType) -> Result<Value, DecodeError> {
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DecodeError::Json(e.to_string()))?;
        Ok(Value::from_json(&json, ty)?)
    }

    pub fn canonical_string(&self) -> String {
        canonical_json(&self.to_json())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.canonical_string().into_bytes()
    }

    pub fn digest(&self) -> String {
        digest_hex(&self.canonical_bytes())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

fn json_kind(json: &serde_json::Value) -> &'static str {
    use serde_json::Value as J;
    match json {
        J::Null => "null",
        J::Bool(_) => "bool",
        J::Number(n) if n.is_f64() => "float",
        J::Number(_) => "int",
        J::String(_) => "string",
        J::Array(_) => "list",
        J::Object(_) => "record",
    }
}

fn from_json_at(json: &serde_json::Value, ty: &FieldType, path: &str) -> Result<Value, ConformanceError> {
    use serde_json::Value as J;
    let mismatch = || ConformanceError::new(path, ty.to_string(), json_kind(json));
    match (ty, json) {
        (FieldType::Bool, J::Bool(b)) => Ok(Value::Bool(*b)),
        (FieldType::Int, J::Number(n)) => n.as_i64().map(Value::Int).ok_or_else(mismatch),
        (FieldType::Float, J::Number(n)) => n.as_f64().map(Value::Float).ok_or_else(mismatch),
        (FieldType::Float, J::String(s)) => match s.as_str() {
            "NaN" => Ok(Value::Float(f64::NAN)),
            "inf" => Ok(Value::Float(f64::INFINITY)),
            "-inf" => Ok(Value::Float(f64::NEG_INFINITY)),
            _ => Err(mismatch()),
        },
        (FieldType::String, J::String(s)) => Ok(Value::String(s.clone())),
        (FieldType::Bytes, J::String(s)) => BASE64
            .decode(s)
            .map(Value::Bytes)
            .map_err(|_| ConformanceError::new(path, "bytes (base64)", "malformed base64")),
        (FieldType::List(inner), J::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| from_json_at(item, inner, &format!("{path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::List),
        (FieldType::Record(schema), J::Object(obj)) => {
            let mut out = BTreeMap::new();
            for (name, fty) in schema.fields() {
                let sub = join_path(path, name);
                let item = obj
                    .get(name)
                    .ok_or_else(|| ConformanceError::new(&sub, fty.to_string(), "missing field"))?;
                out.insert(name.clone(), from_json_at(item, fty, &sub)?);
            }
            if let Some(extra) = obj.keys().find(|k| !schema.contains(k)) {
                return Err(ConformanceError::new(&join_path(path, extra), "no such field", "extra field"));
            }
            Ok(Value::Record(out))
        }
        _ => Err(mismatch()),
    }
}

/// Serializes JSON with object keys sorted bytewise and no insignificant whitespace.
pub fn canonical_json(json: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(json, &mut out);
    out
}

fn write_canonical(json: &serde_json::Value, out: &mut String) {
    use serde_json::Value as J;
    match json {
        J::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        J::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serialization"));
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
        leaf => out.push_str(&serde_json::to_string(leaf).expect("leaf serialization")),
    }
}

/// Lowercase hex SHA-256.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
