use std::cmp::Ordering;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, Func, UnaryOp};
use super::typecheck::TypedExpr;
use crate::memory::{StateReadError, StateSnapshot};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("integer division by zero")]
    DivisionByZero,
    #[error("comparison with NaN")]
    NanComparison,
    #[error("integer overflow")]
    Overflow,
    #[error("state key `{0}` has never been written")]
    MissingKey(String),
    #[error("read of undeclared state key `{0}`")]
    ScopeViolation(String),
    #[error("state does not match the schema the expression was checked against: {0}")]
    SchemaDrift(String),
}

/// Evaluates strictly, except that `and`/`or` short-circuit left to right.
pub fn evaluate(texpr: &TypedExpr, snapshot: &StateSnapshot) -> Result<Value, EvalError> {
    let v = eval(&texpr.expr, snapshot)?;
    v.conforms_to(&texpr.result_type).map_err(|e| EvalError::SchemaDrift(e.to_string()))?;
    Ok(v)
}

fn drift(what: &str, v: &Value) -> EvalError {
    EvalError::SchemaDrift(format!("expected {what}, found {}", v.type_name()))
}

fn lookup<'s>(path: &[String], snap: &'s StateSnapshot) -> Result<&'s Value, EvalError> {
    let mut v = snap.read(&path[0]).map_err(|e| match e {
        StateReadError::ScopeViolation(k) => EvalError::ScopeViolation(k),
        StateReadError::MissingKey(k) => EvalError::MissingKey(k),
    })?;
    for seg in &path[1..] {
        v = match v {
            Value::Record(r) => r.get(seg).ok_or_else(|| EvalError::SchemaDrift(format!("no field `{seg}`")))?,
            other => return Err(drift("record", other)),
        };
    }
    Ok(v)
}

fn eval(expr: &Expr, snap: &StateSnapshot) -> Result<Value, EvalError> {
    match expr {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::StateRef(path) => lookup(path, snap).cloned(),
        Expr::Unary(UnaryOp::Not, e) => match eval(e, snap)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(drift("bool", &other)),
        },
        Expr::Unary(UnaryOp::Neg, e) => match eval(e, snap)? {
            Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
            Value::Float(x) => Ok(Value::Float(-x)),
            other => Err(drift("number", &other)),
        },
        Expr::Binary(BinaryOp::And, l, r) => {
            if !as_bool(eval(l, snap)?)? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(as_bool(eval(r, snap)?)?))
        }
        Expr::Binary(BinaryOp::Or, l, r) => {
            if as_bool(eval(l, snap)?)? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(as_bool(eval(r, snap)?)?))
        }
        Expr::Binary(op, l, r) => {
            let lv = eval(l, snap)?;
            let rv = eval(r, snap)?;
            if op.is_comparison() {
                compare(*op, &lv, &rv).map(Value::Bool)
            } else {
                arith(*op, lv, rv)
            }
        }
        Expr::Call(Func::Has, args) => match args.as_slice() {
            [Expr::StateRef(path)] => match lookup(path, snap) {
                Ok(_) => Ok(Value::Bool(true)),
                Err(EvalError::MissingKey(_)) | Err(EvalError::SchemaDrift(_)) => Ok(Value::Bool(false)),
                Err(e) => Err(e),
            },
            _ => Err(EvalError::SchemaDrift("has() takes one state key".into())),
        },
        Expr::Call(Func::Len, args) => match args.as_slice() {
            [arg] => match eval(arg, snap)? {
                Value::String(s) => Ok(Value::Int(s.chars().count() as i64)),
                Value::List(items) => Ok(Value::Int(items.len() as i64)),
                other => Err(drift("string or list", &other)),
            },
            _ => Err(EvalError::SchemaDrift("len() takes one argument".into())),
        },
    }
}

fn as_bool(v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(drift("bool", &other)),
    }
}

fn compare(op: BinaryOp, l: &Value, r: &Value) -> Result<bool, EvalError> {
    let ord = match (l, r) {
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        (Value::Float(a), Value::Float(b)) => a.partial_cmp(b).ok_or(EvalError::NanComparison)?,
        // bytewise on UTF-8
        (Value::String(a), Value::String(b)) => a.as_bytes().cmp(b.as_bytes()),
        (Value::Bool(a), Value::Bool(b)) if matches!(op, BinaryOp::Eq | BinaryOp::Ne) => a.cmp(b),
        (a, _) => return Err(drift("comparable operands", a)),
    };
    Ok(match op {
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::Ne => ord != Ordering::Equal,
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::Le => ord != Ordering::Greater,
        BinaryOp::Gt => ord == Ordering::Greater,
        BinaryOp::Ge => ord != Ordering::Less,
        _ => unreachable!("not a comparison"),
    })
}

fn arith(op: BinaryOp, l: Value, r: Value) -> Result<Value, EvalError> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => {
            let out = match op {
                BinaryOp::Add => a.checked_add(b),
                BinaryOp::Sub => a.checked_sub(b),
                BinaryOp::Mul => a.checked_mul(b),
                BinaryOp::Div => {
                    if b == 0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a.checked_div(b)
                }
                _ => unreachable!("not arithmetic"),
            };
            out.map(Value::Int).ok_or(EvalError::Overflow)
        }
        (Value::Float(a), Value::Float(b)) => Ok(Value::Float(match op {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            _ => unreachable!("not arithmetic"),
        })),
        (a, _) => Err(drift("matching numbers", &a)),
    }
}
