//! Text grammar:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' '-'? integer)*
//! primary := number | 'x' index | ('exp' | 'tanh') '(' sum ')' | '(' sum ')'
//! ```
//!
//! Variables are one-based (`x1..xn`); the tree stores zero-based indices.
//! The parser builds raw nodes without folding so printing and re-parsing
//! reproduce the same tree.

use alloc::string::String;
use alloc::sync::Arc;

use super::Expr;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected token {0:?}")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown identifier {0:?}")]
    UnknownIdentifier(String),
    #[error("variable index {index} out of range 1..={n}")]
    VariableOutOfRange { index: usize, n: usize },
    #[error("invalid number literal {0:?}")]
    InvalidNumber(String),
    #[error("exponent must be an integer literal")]
    BadExponent,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Exp,
    Tanh,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    n: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, kind: ParseErrorKind, offset: usize) -> ParseError {
        ParseError { kind, offset }
    }

    fn next_token(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start).map(|v| (Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            let word = &self.src[start..self.pos];
            return match word {
                "exp" => Ok((Tok::Func(Func::Exp), start)),
                "tanh" => Ok((Tok::Func(Func::Tanh), start)),
                _ => {
                    let idx = word
                        .strip_prefix('x')
                        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
                        .and_then(|d| d.parse::<usize>().ok());
                    match idx {
                        Some(i) if i >= 1 && i <= self.n => Ok((Tok::Var(i - 1), start)),
                        Some(i) => Err(self.err(ParseErrorKind::VariableOutOfRange { index: i, n: self.n }, start)),
                        None => Err(self.err(ParseErrorKind::UnknownIdentifier(word.into()), start)),
                    }
                }
            };
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(self.err(ParseErrorKind::UnexpectedChar(ch), start))
    }

    fn number(&mut self, start: usize) -> Result<f64, ParseError> {
        let bytes = self.src.as_bytes();
        let digits = |p: &mut usize| {
            let s = *p;
            while *p < bytes.len() && bytes[*p].is_ascii_digit() {
                *p += 1;
            }
            *p - s
        };
        let mut p = self.pos;
        let mut count = digits(&mut p);
        if p < bytes.len() && bytes[p] == b'.' {
            p += 1;
            count += digits(&mut p);
        }
        if count > 0 && p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
            let mut q = p + 1;
            if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) > 0 {
                p = q;
            }
        }
        self.pos = p;
        let text = &self.src[start..p];
        match text.parse::<f64>() {
            Ok(v) if count > 0 && v.is_finite() => Ok(v),
            _ => Err(self.err(ParseErrorKind::InvalidNumber(text.into()), start)),
        }
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    at: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, at) = self.lex.next_token()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn unexpected(&self) -> ParseError {
        let kind = match self.tok {
            Tok::End => ParseErrorKind::UnexpectedEnd,
            _ => {
                let end = (self.at + 1).max(self.lex.pos).min(self.lex.src.len());
                ParseErrorKind::UnexpectedToken(self.lex.src[self.at..end].into())
            }
        };
        ParseError { kind, offset: self.at }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let add = match self.tok {
                Tok::Plus => true,
                Tok::Minus => false,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.product()?;
            lhs = if add {
                Expr::Add(Arc::new(lhs), Arc::new(rhs))
            } else {
                Expr::Sub(Arc::new(lhs), Arc::new(rhs))
            };
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let mul = match self.tok {
                Tok::Star => true,
                Tok::Slash => false,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = if mul {
                Expr::Mul(Arc::new(lhs), Arc::new(rhs))
            } else {
                Expr::Div(Arc::new(lhs), Arc::new(rhs))
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Minus {
            self.bump()?;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Arc::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.tok == Tok::Caret {
            self.bump()?;
            let neg = if self.tok == Tok::Minus {
                self.bump()?;
                true
            } else {
                false
            };
            let k = match self.tok {
                Tok::Num(v) if v == libm::trunc(v) && v <= i32::MAX as f64 => v as i32,
                _ => return Err(ParseError { kind: ParseErrorKind::BadExponent, offset: self.at }),
            };
            self.bump()?;
            base = Expr::Pow(Arc::new(base), if neg { -k } else { k });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Var(i) => {
                self.bump()?;
                Ok(Expr::Var(i))
            }
            Tok::Func(func) => {
                self.bump()?;
                if self.tok != Tok::LParen {
                    return Err(self.unexpected());
                }
                self.bump()?;
                let arg = self.sum()?;
                self.expect_rparen()?;
                Ok(match func {
                    Func::Exp => Expr::Exp(Arc::new(arg)),
                    Func::Tanh => Expr::Tanh(Arc::new(arg)),
                })
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.tok != Tok::RParen {
            return Err(self.unexpected());
        }
        self.bump()
    }
}

/// Parse `text` as a function of `x1..xn`.
pub fn parse(text: &str, n: usize) -> Result<Expr, ParseError> {
    let mut p = Parser { lex: Lexer { src: text, pos: 0, n }, tok: Tok::End, at: 0 };
    p.bump()?;
    let e = p.sum()?;
    if p.tok != Tok::End {
        return Err(p.unexpected());
    }
    Ok(e)
}
