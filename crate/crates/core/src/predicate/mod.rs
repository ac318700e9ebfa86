//! Guard expression language for control nodes.
//!
//! ```text
//! expr  := or
//! or    := and ("or" and)*
//! and   := not ("and" not)*
//! not   := "not" not | cmp
//! cmp   := add (("=="|"!="|"<"|"<="|">"|">=") add)?
//! add   := mul (("+"|"-") mul)*
//! mul   := unary (("*"|"/") unary)*
//! unary := "-" unary | primary
//! primary := INT | FLOAT | STRING | "true" | "false" | "(" expr ")"
//!          | "has" "(" path ")" | "len" "(" expr ")" | path
//! path  := IDENT ("." IDENT)*
//! ```
//!
//! A path names a state key and then fields inside its record value.

mod ast;
mod eval;
mod lexer;
mod parser;
mod typecheck;

pub use ast::{BinaryOp, Expr, Func, UnaryOp};
pub use eval::{evaluate, EvalError};
pub use lexer::{tokenize, LexError, OpToken, Token, TokenKind};
pub use parser::{parse, ParseError};
pub use typecheck::{path_type, typecheck, TypeError, TypedExpr};

use thiserror::Error;

use crate::value::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredicateError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub fn parse_str(source: &str) -> Result<Expr, PredicateError> {
    Ok(parse(&tokenize(source)?)?)
}

/// Tokenize, parse and typecheck in one step.
pub fn compile(source: &str, state_schema: &Schema) -> Result<TypedExpr, PredicateError> {
    Ok(typecheck(&parse_str(source)?, state_schema)?)
}
