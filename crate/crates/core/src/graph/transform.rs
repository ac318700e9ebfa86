//! Named pure edge transforms and edge application.
//!
//! A transform maps a whole source record to a new record; the edge's field
//! map then selects and renames fields of the result.

use std::collections::BTreeMap;

use thiserror::Error;

use super::EdgeSpec;
use crate::value::{FieldType, Schema, Value};

/// Registered transform names.
pub const TRANSFORMS: &[&str] = &["identity", "stringify", "to_upper"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EdgeError {
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("edge `{edge}`: source has no field `{field}`")]
    MissingSourceField { edge: String, field: String },
    #[error("edge `{edge}`: fields {fields:?} all map to `{target}`")]
    DuplicateTarget { edge: String, target: String, fields: Vec<String> },
    #[error("edge `{edge}`: source value is not a record")]
    NotARecord { edge: String },
}

/// Output schema of transform `name` applied to records of `input`.
pub fn transform_schema(name: &str, input: &Schema) -> Result<Schema, EdgeError> {
    match name {
        "identity" | "to_upper" => Ok(input.clone()),
        "stringify" => {
            let mut out = Schema::empty();
            for (k, _) in input.iter() {
                out.insert(k.clone(), FieldType::String).expect("names come from a valid schema");
            }
            Ok(out)
        }
        other => Err(EdgeError::UnknownTransform(other.to_string())),
    }
}

/// Applies transform `name` to a record value.
pub fn apply_transform(name: &str, record: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, EdgeError> {
    match name {
        "identity" => Ok(record.clone()),
        // top-level string fields only
        "to_upper" => Ok(record
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => Value::String(s.to_uppercase()),
                    other => other.clone(),
                };
                (k.clone(), v)
            })
            .collect()),
        "stringify" => Ok(record
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    Value::String(s) => s.clone(),
                    other => other.canonical_string(),
                };
                (k.clone(), Value::String(s))
            })
            .collect()),
        other => Err(EdgeError::UnknownTransform(other.to_string())),
    }
}

pub(crate) fn check_field_map(edge: &EdgeSpec) -> Result<(), EdgeError> {
    let mut by_target: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (src, dst) in &edge.field_map {
        by_target.entry(dst).or_default().push(src.clone());
    }
    if let Some((target, fields)) = by_target.into_iter().find(|(_, v)| v.len() > 1) {
        return Err(EdgeError::DuplicateTarget { edge: edge.id.clone(), target: target.to_string(), fields });
    }
    Ok(())
}

/// Record schema an edge delivers given the source output schema.
pub fn produced_schema(edge: &EdgeSpec, src_output: &Schema) -> Result<Schema, EdgeError> {
    check_field_map(edge)?;
    let transformed = match &edge.transform {
        Some(t) => transform_schema(t, src_output)?,
        None => src_output.clone(),
    };
    let mut out = Schema::empty();
    for (src, dst) in &edge.field_map {
        let ty = transformed
            .get(src)
            .ok_or_else(|| EdgeError::MissingSourceField { edge: edge.id.clone(), field: src.clone() })?;
        out.insert(dst.clone(), ty.clone()).expect("targets checked unique");
    }
    Ok(out)
}

/// Record an edge delivers given the source node's output value.
pub fn apply_edge(edge: &EdgeSpec, src_output: &Value) -> Result<BTreeMap<String, Value>, EdgeError> {
    check_field_map(edge)?;
    let record = src_output.as_record().ok_or_else(|| EdgeError::NotARecord { edge: edge.id.clone() })?;
    let transformed;
    let source = match &edge.transform {
        Some(t) => {
            transformed = apply_transform(t, record)?;
            &transformed
        }
        None => record,
    };
    let mut out = BTreeMap::new();
    for (src, dst) in &edge.field_map {
        let v = source
            .get(src)
            .ok_or_else(|| EdgeError::MissingSourceField { edge: edge.id.clone(), field: src.clone() })?;
        out.insert(dst.clone(), v.clone());
    }
    Ok(out)
}
