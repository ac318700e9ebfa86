use thiserror::Error;

use super::ast::{BinaryOp, Expr, Func, UnaryOp};
use crate::value::{FieldType, Schema, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("type error in `{node}`: expected {expected}, found {found}")]
    Mismatch { node: String, expected: String, found: String },
    #[error("unknown state key `{0}`")]
    UnknownStateKey(String),
}

/// An expression together with the type every successful evaluation yields.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedExpr {
    pub expr: Expr,
    pub result_type: FieldType,
}

pub fn typecheck(expr: &Expr, state_schema: &Schema) -> Result<TypedExpr, TypeError> {
    let result_type = type_of(expr, state_schema)?;
    Ok(TypedExpr { expr: expr.clone(), result_type })
}

fn mismatch(node: &Expr, expected: &str, found: &FieldType) -> TypeError {
    TypeError::Mismatch { node: node.to_string(), expected: expected.to_string(), found: found.to_string() }
}

/// Resolves a key path against the state schema.
pub fn path_type(path: &[String], state_schema: &Schema) -> Result<FieldType, TypeError> {
    let mut ty = state_schema.get(&path[0]).cloned().ok_or_else(|| TypeError::UnknownStateKey(path[0].clone()))?;
    for (i, seg) in path.iter().enumerate().skip(1) {
        ty = match ty {
            FieldType::Record(ref s) => s
                .get(seg)
                .cloned()
                .ok_or_else(|| TypeError::UnknownStateKey(path[..=i].join(".")))?,
            other => {
                return Err(TypeError::Mismatch {
                    node: path[..=i].join("."),
                    expected: "record".into(),
                    found: other.to_string(),
                })
            }
        };
    }
    Ok(ty)
}

fn type_of(expr: &Expr, schema: &Schema) -> Result<FieldType, TypeError> {
    match expr {
        Expr::Literal(v) => Ok(match v {
            Value::Bool(_) => FieldType::Bool,
            Value::Int(_) => FieldType::Int,
            Value::Float(_) => FieldType::Float,
            Value::String(_) => FieldType::String,
            Value::Bytes(_) => FieldType::Bytes,
            other => {
                return Err(TypeError::Mismatch {
                    node: expr.to_string(),
                    expected: "scalar literal".into(),
                    found: other.type_name().into(),
                })
            }
        }),
        Expr::StateRef(path) => path_type(path, schema),
        Expr::Unary(UnaryOp::Not, e) => match type_of(e, schema)? {
            FieldType::Bool => Ok(FieldType::Bool),
            other => Err(mismatch(e, "bool", &other)),
        },
        Expr::Unary(UnaryOp::Neg, e) => match type_of(e, schema)? {
            t @ (FieldType::Int | FieldType::Float) => Ok(t),
            other => Err(mismatch(e, "int or float", &other)),
        },
        Expr::Binary(op, l, r) => {
            let lt = type_of(l, schema)?;
            let rt = type_of(r, schema)?;
            match op {
                BinaryOp::And | BinaryOp::Or => {
                    if lt != FieldType::Bool {
                        return Err(mismatch(l, "bool", &lt));
                    }
                    if rt != FieldType::Bool {
                        return Err(mismatch(r, "bool", &rt));
                    }
                    Ok(FieldType::Bool)
                }
                BinaryOp::Eq | BinaryOp::Ne => {
                    let ok = matches!(lt, FieldType::Int | FieldType::Float | FieldType::String | FieldType::Bool);
                    if !ok {
                        return Err(mismatch(l, "int, float, string or bool", &lt));
                    }
                    if lt != rt {
                        return Err(mismatch(r, &lt.to_string(), &rt));
                    }
                    Ok(FieldType::Bool)
                }
                BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                    if !matches!(lt, FieldType::Int | FieldType::Float | FieldType::String) {
                        return Err(mismatch(l, "int, float or string", &lt));
                    }
                    if lt != rt {
                        return Err(mismatch(r, &lt.to_string(), &rt));
                    }
                    Ok(FieldType::Bool)
                }
                BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                    if !lt.is_numeric() {
                        return Err(mismatch(l, "int or float", &lt));
                    }
                    if lt != rt {
                        return Err(mismatch(r, &lt.to_string(), &rt));
                    }
                    Ok(lt)
                }
            }
        }
        Expr::Call(Func::Has, args) => match args.as_slice() {
            [Expr::StateRef(_)] => Ok(FieldType::Bool),
            _ => Err(TypeError::Mismatch {
                node: expr.to_string(),
                expected: "has(<state key>)".into(),
                found: "other arguments".into(),
            }),
        },
        Expr::Call(Func::Len, args) => match args.as_slice() {
            [arg] => match type_of(arg, schema)? {
                FieldType::String | FieldType::List(_) => Ok(FieldType::Int),
                other => Err(mismatch(arg, "string or list", &other)),
            },
            _ => Err(TypeError::Mismatch {
                node: expr.to_string(),
                expected: "one argument".into(),
                found: format!("{} arguments", args.len()),
            }),
        },
    }
}
