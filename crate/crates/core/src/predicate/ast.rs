use std::collections::BTreeSet;
use std::fmt;

use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Has,
    Len,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    /// Non-empty path: a state key followed by record field names.
    StateRef(Vec<String>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge)
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Has => "has",
            Func::Len => "len",
        }
    }
}

const PREC_NOT: u8 = 3;
const PREC_NEG: u8 = 7;
const PREC_ATOM: u8 = 8;

impl Expr {
    pub fn state_ref(path: &str) -> Expr {
        Expr::StateRef(path.split('.').map(str::to_string).collect())
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(UnaryOp::Not, _) => PREC_NOT,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Literal(_) | Expr::StateRef(_) | Expr::Call(..) => PREC_ATOM,
        }
    }

    /// State keys (first path segments) this expression may read.
    pub fn state_keys(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_keys(&mut out);
        out
    }

    fn collect_keys(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Literal(_) => {}
            Expr::StateRef(path) => {
                out.insert(path[0].clone());
            }
            Expr::Unary(_, e) => e.collect_keys(out),
            Expr::Binary(_, l, r) => {
                l.collect_keys(out);
                r.collect_keys(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_keys(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::StateRef(_) => 1,
            Expr::Unary(_, e) => 1 + e.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Literal(v) => write_literal(f, v)?,
            Expr::StateRef(path) => f.write_str(&path.join("."))?,
            Expr::Unary(UnaryOp::Not, e) => {
                f.write_str("not ")?;
                e.write_with(f, PREC_NOT)?;
            }
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                e.write_with(f, PREC_NEG)?;
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                // comparisons do not chain, so neither side may be a bare comparison
                let left_min = if op.is_comparison() { p + 1 } else { p };
                l.write_with(f, left_min)?;
                write!(f, " {} ", op.symbol())?;
                r.write_with(f, p + 1)?;
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.write_with(f, 0)?;
                }
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Bool(b) => write!(f, "{b}"),
        Value::Int(i) => write!(f, "{i}"),
        Value::Float(x) => write!(f, "{x:?}"),
        Value::String(s) => {
            f.write_str("\"")?;
            for c in s.chars() {
                match c {
                    '"' => f.write_str("\\\"")?,
                    '\\' => f.write_str("\\\\")?,
                    '\n' => f.write_str("\\n")?,
                    '\t' => f.write_str("\\t")?,
                    '\r' => f.write_str("\\r")?,
                    c => write!(f, "{c}")?,
                }
            }
            f.write_str("\"")
        }
        other => write!(f, "{other}"),
    }
}

/// Prints source text that parses back to a structurally equal tree, as long
/// as numeric literals are finite and non-negative (the parser never produces
/// anything else).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0)
    }
}
