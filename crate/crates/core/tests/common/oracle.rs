//! Reference evaluator for guard expressions. It has its own tree, renders it
//! fully parenthesised and evaluates it directly, so agreement with the
//! library checks the lexer, parser, typechecker and evaluator together.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use detflow::value::{FieldType, Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ty {
    Int,
    Float,
    Str,
    Bool,
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    And,
    Or,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    fn text(self) -> &'static str {
        match self {
            Op::And => "and",
            Op::Or => "or",
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        }
    }
}

#[derive(Debug, Clone)]
pub enum E {
    I(i64),
    F(f64),
    S(String),
    B(bool),
    Var(Vec<&'static str>),
    Not(Box<E>),
    Neg(Box<E>),
    Bin(Op, Box<E>, Box<E>),
    Has(Vec<&'static str>),
    Len(Box<E>),
}

fn escape(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl E {
    pub fn render(&self) -> String {
        match self {
            E::I(n) if *n < 0 => format!("(-{})", n.unsigned_abs()),
            E::I(n) => n.to_string(),
            E::F(x) if x.is_sign_negative() => format!("(-{:?})", -x),
            E::F(x) => format!("{x:?}"),
            E::S(s) => escape(s),
            E::B(b) => b.to_string(),
            E::Var(p) => p.join("."),
            E::Not(e) => format!("(not {})", e.render()),
            E::Neg(e) => format!("(-{})", e.render()),
            E::Bin(op, l, r) => format!("({} {} {})", l.render(), op.text(), r.render()),
            E::Has(p) => format!("has({})", p.join(".")),
            E::Len(e) => format!("len({})", e.render()),
        }
    }
}

pub fn schema() -> Schema {
    Schema::of([
        ("i", FieldType::Int),
        ("j", FieldType::Int),
        ("m", FieldType::Int),
        ("f", FieldType::Float),
        ("g", FieldType::Float),
        ("s", FieldType::String),
        ("t", FieldType::String),
        ("b", FieldType::Bool),
        ("c", FieldType::Bool),
        ("l", FieldType::list(FieldType::Int)),
        ("r", FieldType::Record(Schema::of([("a", FieldType::Int), ("z", FieldType::String)]))),
    ])
}

const BIG: [i64; 5] = [i64::MAX, i64::MIN, 1 << 62, -(1 << 62), 3_037_000_500];

fn int<R: Rng>(rng: &mut R) -> i64 {
    if rng.gen_bool(0.1) {
        *BIG.choose(rng).unwrap()
    } else {
        rng.gen_range(-6..=6)
    }
}

fn float<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..20) {
        0 => f64::NAN,
        1 => f64::INFINITY,
        2 => -0.0,
        _ => f64::from(rng.gen_range(-48..=48)) / 8.0,
    }
}

fn string<R: Rng>(rng: &mut R) -> String {
    const ALPHA: [&str; 7] = ["a", "b", "Z", "é", "\"", "0", " "];
    (0..rng.gen_range(0..4)).map(|_| *ALPHA.choose(rng).unwrap()).collect()
}

/// A snapshot over [`schema`]; each key is absent with probability 0.1.
pub fn snapshot<R: Rng>(rng: &mut R) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Value, rng: &mut R| {
        if rng.gen_bool(0.9) {
            m.insert(k.to_string(), v);
        }
    };
    for k in ["i", "j", "m"] {
        let v = Value::Int(int(rng));
        put(k, v, rng);
    }
    for k in ["f", "g"] {
        let v = Value::Float(float(rng));
        put(k, v, rng);
    }
    for k in ["s", "t"] {
        let v = Value::String(string(rng));
        put(k, v, rng);
    }
    for k in ["b", "c"] {
        let v = Value::Bool(rng.gen());
        put(k, v, rng);
    }
    let l = Value::List((0..rng.gen_range(0..4)).map(|_| Value::Int(int(rng))).collect());
    put("l", l, rng);
    let r = Value::record([("a", Value::Int(int(rng))), ("z", Value::String(string(rng)))]);
    put("r", r, rng);
    m
}

fn leaf<R: Rng>(ty: Ty, rng: &mut R) -> E {
    let lit = rng.gen_bool(0.4);
    match ty {
        Ty::Int if lit => E::I(if rng.gen_bool(0.1) { *BIG[2..].choose(rng).unwrap() } else { rng.gen_range(-9..=9) }),
        Ty::Int => E::Var([vec!["i"], vec!["j"], vec!["m"], vec!["r", "a"]].choose(rng).unwrap().clone()),
        Ty::Float if lit => E::F(f64::from(rng.gen_range(-40..=40)) / 8.0),
        Ty::Float => E::Var([vec!["f"], vec!["g"]].choose(rng).unwrap().clone()),
        Ty::Str if lit => E::S(string(rng)),
        Ty::Str => E::Var([vec!["s"], vec!["t"], vec!["r", "z"]].choose(rng).unwrap().clone()),
        Ty::Bool if lit => E::B(rng.gen()),
        Ty::Bool => match rng.gen_range(0..3) {
            0 => E::Has([vec!["i"], vec!["zz"], vec!["r", "a"], vec!["r", "q"], vec!["i", "x"]].choose(rng).unwrap().clone()),
            _ => E::Var([vec!["b"], vec!["c"]].choose(rng).unwrap().clone()),
        },
    }
}

/// Random well-typed expression of type `ty` and depth at most `depth`.
pub fn gen<R: Rng>(ty: Ty, depth: u32, rng: &mut R) -> E {
    if depth <= 1 || rng.gen_bool(0.25) {
        return leaf(ty, rng);
    }
    let sub = |t: Ty, rng: &mut R| Box::new(gen(t, depth - 1, rng));
    let arith = [Op::Add, Op::Sub, Op::Mul, Op::Div];
    match ty {
        Ty::Bool => match rng.gen_range(0..4) {
            0 => E::Not(sub(Ty::Bool, rng)),
            1 => E::Bin(*[Op::And, Op::Or].choose(rng).unwrap(), sub(Ty::Bool, rng), sub(Ty::Bool, rng)),
            _ => {
                let t = *[Ty::Int, Ty::Float, Ty::Str, Ty::Bool].choose(rng).unwrap();
                let op = if t == Ty::Bool {
                    *[Op::Eq, Op::Ne].choose(rng).unwrap()
                } else {
                    *[Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge].choose(rng).unwrap()
                };
                E::Bin(op, sub(t, rng), sub(t, rng))
            }
        },
        Ty::Int => match rng.gen_range(0..5) {
            0 => E::Neg(sub(Ty::Int, rng)),
            1 => E::Len(if rng.gen_bool(0.5) { Box::new(E::Var(vec!["l"])) } else { sub(Ty::Str, rng) }),
            _ => E::Bin(*arith.choose(rng).unwrap(), sub(Ty::Int, rng), sub(Ty::Int, rng)),
        },
        Ty::Float => match rng.gen_range(0..4) {
            0 => E::Neg(sub(Ty::Float, rng)),
            _ => E::Bin(*arith.choose(rng).unwrap(), sub(Ty::Float, rng), sub(Ty::Float, rng)),
        },
        Ty::Str => leaf(Ty::Str, rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Err {
    DivZero,
    Nan,
    Overflow,
    Missing(String),
}

#[derive(Debug, Clone)]
pub enum V {
    I(i64),
    F(f64),
    S(String),
    B(bool),
    L(usize),
}

impl PartialEq for V {
    fn eq(&self, other: &V) -> bool {
        match (self, other) {
            (V::I(a), V::I(b)) => a == b,
            (V::F(a), V::F(b)) => a.to_bits() == b.to_bits(),
            (V::S(a), V::S(b)) => a == b,
            (V::B(a), V::B(b)) => a == b,
            (V::L(a), V::L(b)) => a == b,
            _ => false,
        }
    }
}

impl V {
    pub fn from_value(v: &Value) -> Option<V> {
        Some(match v {
            Value::Int(i) => V::I(*i),
            Value::Float(x) => V::F(*x),
            Value::String(s) => V::S(s.clone()),
            Value::Bool(b) => V::B(*b),
            _ => return None,
        })
    }
}

fn narrow(x: i128) -> Result<V, Err> {
    i64::try_from(x).map(V::I).map_err(|_| Err::Overflow)
}

fn walk<'a>(path: &[&str], snap: &'a BTreeMap<String, Value>) -> Option<&'a Value> {
    let mut v = snap.get(path[0])?;
    for seg in &path[1..] {
        match v {
            Value::Record(r) => v = r.get(*seg)?,
            _ => return None,
        }
    }
    Some(v)
}

pub fn eval(e: &E, snap: &BTreeMap<String, Value>) -> Result<V, Err> {
    Ok(match e {
        E::I(n) => V::I(*n),
        E::F(x) => V::F(*x),
        E::S(s) => V::S(s.clone()),
        E::B(b) => V::B(*b),
        E::Var(p) => {
            let v = walk(p, snap).ok_or_else(|| Err::Missing(p[0].to_string()))?;
            match v {
                Value::List(items) => V::L(items.len()),
                other => V::from_value(other).expect("scalar state"),
            }
        }
        E::Has(p) => V::B(walk(p, snap).is_some()),
        E::Not(x) => match eval(x, snap)? {
            V::B(b) => V::B(!b),
            v => panic!("not on {v:?}"),
        },
        E::Neg(x) => match eval(x, snap)? {
            V::I(n) => narrow(-i128::from(n))?,
            V::F(f) => V::F(-f),
            v => panic!("neg on {v:?}"),
        },
        E::Len(x) => match eval(x, snap)? {
            V::S(s) => V::I(s.chars().count() as i64),
            V::L(n) => V::I(n as i64),
            v => panic!("len on {v:?}"),
        },
        E::Bin(Op::And, l, r) => match eval(l, snap)? {
            V::B(false) => V::B(false),
            _ => eval(r, snap)?,
        },
        E::Bin(Op::Or, l, r) => match eval(l, snap)? {
            V::B(true) => V::B(true),
            _ => eval(r, snap)?,
        },
        E::Bin(op, l, r) => {
            let a = eval(l, snap)?;
            let b = eval(r, snap)?;
            binary(*op, a, b)?
        }
    })
}

fn binary(op: Op, a: V, b: V) -> Result<V, Err> {
    use std::cmp::Ordering::*;
    let ord = match (&a, &b) {
        (V::I(x), V::I(y)) => {
            let (x, y) = (i128::from(*x), i128::from(*y));
            match op {
                Op::Add => return narrow(x + y),
                Op::Sub => return narrow(x - y),
                Op::Mul => return narrow(x * y),
                Op::Div if y == 0 => return Err(Err::DivZero),
                Op::Div => return narrow(x / y),
                _ => x.cmp(&y),
            }
        }
        (V::F(x), V::F(y)) => match op {
            Op::Add => return Ok(V::F(x + y)),
            Op::Sub => return Ok(V::F(x - y)),
            Op::Mul => return Ok(V::F(x * y)),
            Op::Div => return Ok(V::F(x / y)),
            _ if x.is_nan() || y.is_nan() => return Err(Err::Nan),
            _ if x < y => Less,
            _ if x > y => Greater,
            _ => Equal,
        },
        (V::S(x), V::S(y)) => x.chars().cmp(y.chars()),
        (V::B(x), V::B(y)) => x.cmp(y),
        _ => panic!("operands {a:?} {b:?}"),
    };
    Ok(V::B(match op {
        Op::Eq => ord == Equal,
        Op::Ne => ord != Equal,
        Op::Lt => ord == Less,
        Op::Le => ord != Greater,
        Op::Gt => ord == Greater,
        Op::Ge => ord != Less,
        _ => unreachable!(),
    }))
}

/// Outcome of one oracle comparison: `None` when they agree.
pub fn disagreement(e: &E, snap: &BTreeMap<String, Value>) -> Option<String> {
    use detflow::memory::{Scope, StateSnapshot};
    use detflow::predicate::{compile, evaluate, EvalError};

    let src = e.render();
    let texpr = match compile(&src, &schema()) {
        Ok(t) => t,
        Err(err) => return Some(format!("`{src}` does not compile: {err}")),
    };
    let lib = evaluate(&texpr, &StateSnapshot::from_values(snap.clone(), Scope::All));
    let lib = match lib {
        Ok(v) => match V::from_value(&v) {
            Some(v) => Ok(v),
            None => return Some(format!("`{src}` gave non-scalar {v:?}")),
        },
        Err(EvalError::DivisionByZero) => Err(Err::DivZero),
        Err(EvalError::NanComparison) => Err(Err::Nan),
        Err(EvalError::Overflow) => Err(Err::Overflow),
        Err(EvalError::MissingKey(k)) => Err(Err::Missing(k)),
        Err(other) => return Some(format!("`{src}` raised {other}")),
    };
    let want = eval(e, snap);
    (lib != want).then(|| format!("`{src}` on {snap:?}: library {lib:?}, reference {want:?}"))
}

/// Random library AST for print/parse round trips.
pub fn random_ast<R: Rng>(depth: u32, rng: &mut R) -> detflow::predicate::Expr {
    use detflow::predicate::{BinaryOp, Expr, Func, UnaryOp};
    const PATHS: [&str; 6] = ["a", "score", "x1", "_k", "r.a", "deep.er.path"];
    if depth <= 1 || rng.gen_bool(0.2) {
        return match rng.gen_range(0..6) {
            0 => Expr::Literal(Value::Int(rng.gen_range(0..1_000_000))),
            1 => Expr::Literal(Value::Float(*[0.5, 3.0, 1e20, 0.1, 1.5e-7, 42.25].choose(rng).unwrap())),
            2 => Expr::Literal(Value::String(string(rng) + if rng.gen_bool(0.2) { "\\\n" } else { "" })),
            3 => Expr::Literal(Value::Bool(rng.gen())),
            _ => Expr::state_ref(PATHS.choose(rng).unwrap()),
        };
    }
    let d = depth - 1;
    match rng.gen_range(0..8) {
        0 => Expr::unary(UnaryOp::Not, random_ast(d, rng)),
        1 => Expr::unary(UnaryOp::Neg, random_ast(d, rng)),
        2 => Expr::Call(Func::Has, vec![Expr::state_ref(PATHS.choose(rng).unwrap())]),
        3 => Expr::Call(Func::Len, vec![random_ast(d, rng)]),
        _ => {
            let ops = [
                BinaryOp::And,
                BinaryOp::Or,
                BinaryOp::Eq,
                BinaryOp::Ne,
                BinaryOp::Lt,
                BinaryOp::Le,
                BinaryOp::Gt,
                BinaryOp::Ge,
                BinaryOp::Add,
                BinaryOp::Sub,
                BinaryOp::Mul,
                BinaryOp::Div,
            ];
            Expr::binary(*ops.choose(rng).unwrap(), random_ast(d, rng), random_ast(d, rng))
        }
    }
}
