use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Op(OpToken),
    LParen,
    RParen,
    Dot,
    Comma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpToken {
    And,
    Or,
    Not,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Exact source text of the token.
    pub lexeme: String,
    /// Byte offset of the first character.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unexpected character {ch:?} at offset {offset}")]
pub struct LexError {
    pub offset: usize,
    pub ch: char,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let err = |offset: usize| LexError { offset, ch: source[offset..].chars().next().unwrap_or('\0') };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b'.' => {
                i += 1;
                TokenKind::Dot
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            b'+' => {
                i += 1;
                TokenKind::Op(OpToken::Plus)
            }
            b'-' => {
                i += 1;
                TokenKind::Op(OpToken::Minus)
            }
            b'*' => {
                i += 1;
                TokenKind::Op(OpToken::Star)
            }
            b'/' => {
                i += 1;
                TokenKind::Op(OpToken::Slash)
            }
            b'=' | b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Op(if c == b'=' { OpToken::Eq } else { OpToken::Ne })
                } else {
                    return Err(err(i));
                }
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                i += if eq { 2 } else { 1 };
                TokenKind::Op(match (c, eq) {
                    (b'<', false) => OpToken::Lt,
                    (b'<', true) => OpToken::Le,
                    (_, false) => OpToken::Gt,
                    (_, true) => OpToken::Ge,
                })
            }
            b'"' => {
                let (s, end) = lex_string(source, i)?;
                i = end;
                TokenKind::Str(s)
            }
            b'0'..=b'9' => {
                let (kind, end) = lex_number(source, i)?;
                i = end;
                kind
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                match &source[start..i] {
                    "and" => TokenKind::Op(OpToken::And),
                    "or" => TokenKind::Op(OpToken::Or),
                    "not" => TokenKind::Op(OpToken::Not),
                    "true" => TokenKind::Bool(true),
                    "false" => TokenKind::Bool(false),
                    ident => TokenKind::Ident(ident.to_string()),
                }
            }
            _ => return Err(err(i)),
        };
        tokens.push(Token { kind, lexeme: source[start..i].to_string(), offset: start });
    }
    Ok(tokens)
}

fn lex_number(source: &str, start: usize) -> Result<(TokenKind, usize), LexError> {
    let bytes = source.as_bytes();
    let digits = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        i
    };
    let mut i = digits(start);
    let mut is_float = false;
    if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i = digits(i + 1);
        is_float = true;
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if bytes.get(j).is_some_and(u8::is_ascii_digit) {
            i = digits(j);
            is_float = true;
        }
    }
    let text = &source[start..i];
    let bad = || LexError { offset: start, ch: bytes[start] as char };
    let kind = if is_float {
        TokenKind::Float(text.parse().map_err(|_| bad())?)
    } else {
        TokenKind::Int(text.parse().map_err(|_| bad())?)
    };
    Ok((kind, i))
}

fn lex_string(source: &str, start: usize) -> Result<(String, usize), LexError> {
    let mut out = String::new();
    let mut chars = source[start + 1..].char_indices();
    while let Some((rel, ch)) = chars.next() {
        let pos = start + 1 + rel;
        match ch {
            '"' => return Ok((out, pos + 1)),
            '\\' => match chars.next() {
                Some((_, '"')) => out.push('"'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                _ => return Err(LexError { offset: pos, ch: '\\' }),
            },
            c => out.push(c),
        }
    }
    Err(LexError { offset: start, ch: '"' })
}
