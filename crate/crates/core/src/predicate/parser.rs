use std::collections::BTreeSet;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, Func, UnaryOp};
use super::lexer::{OpToken, Token, TokenKind};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {offset}: expected one of {expected:?}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: BTreeSet<String>,
}

fn expected(offset: usize, items: &[&str]) -> ParseError {
    ParseError { offset, expected: items.iter().map(|s| s.to_string()).collect() }
}

/// Precedence, loosest first: `or`, `and`, `not`, comparisons (non-associative),
/// `+ -`, `* /`, unary `-`, primary.
pub fn parse(tokens: &[Token]) -> Result<Expr, ParseError> {
    let end = tokens.last().map_or(0, |t| t.offset + t.lexeme.len());
    let mut p = Parser { tokens, pos: 0, end };
    let expr = p.or_expr()?;
    if p.pos < tokens.len() {
        return Err(expected(p.offset(), &["and", "or", "end of input"]));
    }
    Ok(expr)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn eat_op(&mut self, op: OpToken) -> bool {
        if self.peek() == Some(&TokenKind::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.eat_op(OpToken::Or) {
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.eat_op(OpToken::And) {
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(OpToken::Not) {
            return Ok(Expr::unary(UnaryOp::Not, self.not_expr()?));
        }
        self.cmp_expr()
    }

    fn cmp_op(&self) -> Option<BinaryOp> {
        match self.peek()? {
            TokenKind::Op(OpToken::Eq) => Some(BinaryOp::Eq),
            TokenKind::Op(OpToken::Ne) => Some(BinaryOp::Ne),
            TokenKind::Op(OpToken::Lt) => Some(BinaryOp::Lt),
            TokenKind::Op(OpToken::Le) => Some(BinaryOp::Le),
            TokenKind::Op(OpToken::Gt) => Some(BinaryOp::Gt),
            TokenKind::Op(OpToken::Ge) => Some(BinaryOp::Ge),
            _ => None,
        }
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let Some(op) = self.cmp_op() else { return Ok(lhs) };
        self.pos += 1;
        let rhs = self.add_expr()?;
        if self.cmp_op().is_some() {
            return Err(expected(self.offset(), &["and", "or", ")", "end of input"]));
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Op(OpToken::Plus)) => BinaryOp::Add,
                Some(TokenKind::Op(OpToken::Minus)) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.mul_expr()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Op(OpToken::Star)) => BinaryOp::Mul,
                Some(TokenKind::Op(OpToken::Slash)) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(OpToken::Minus) {
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(tok) = self.peek() else {
            return Err(expected(offset, &["expression"]));
        };
        self.pos += 1;
        match tok {
            TokenKind::Int(i) => Ok(Expr::Literal(Value::Int(*i))),
            TokenKind::Float(x) => Ok(Expr::Literal(Value::Float(*x))),
            TokenKind::Str(s) => Ok(Expr::Literal(Value::String(s.clone()))),
            TokenKind::Bool(b) => Ok(Expr::Literal(Value::Bool(*b))),
            TokenKind::LParen => {
                let inner = self.or_expr()?;
                if self.peek() != Some(&TokenKind::RParen) {
                    return Err(expected(self.offset(), &[")"]));
                }
                self.pos += 1;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if self.peek() == Some(&TokenKind::LParen) {
                    self.call(name, offset)
                } else {
                    self.key_path(name.clone())
                }
            }
            _ => {
                self.pos -= 1;
                Err(expected(offset, &["expression"]))
            }
        }
    }

    fn key_path(&mut self, first: String) -> Result<Expr, ParseError> {
        let mut path = vec![first];
        while self.peek() == Some(&TokenKind::Dot) {
            self.pos += 1;
            match self.peek() {
                Some(TokenKind::Ident(seg)) => {
                    path.push(seg.clone());
                    self.pos += 1;
                }
                _ => return Err(expected(self.offset(), &["identifier"])),
            }
        }
        Ok(Expr::StateRef(path))
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr, ParseError> {
        let func = match name {
            "has" => Func::Has,
            "len" => Func::Len,
            _ => return Err(expected(offset, &["has", "len", "state key"])),
        };
        self.pos += 1; // (
        let arg = match func {
            Func::Has => match self.peek() {
                Some(TokenKind::Ident(first)) => {
                    self.pos += 1;
                    self.key_path(first.clone())?
                }
                _ => return Err(expected(self.offset(), &["state key"])),
            },
            Func::Len => self.or_expr()?,
        };
        if self.peek() != Some(&TokenKind::RParen) {
            return Err(expected(self.offset(), &[")"]));
        }
        self.pos += 1;
        Ok(Expr::Call(func, vec![arg]))
    }
}
