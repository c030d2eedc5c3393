//! Recursive-descent parser for the expression grammar.
//!
//! Precedence (tightest first): `^` (right-assoc), unary `-`, `* /`, `+ -`.
//! Variables are `x0..x{d-1}`; `pi` is the only named constant; functions are
//! `sin cos tan exp log tanh sqrt abs`, each taking one argument.

use super::ast::{Ast, Func};
use crate::expr::ExprError;

const MAX_DEPTH: usize = 40;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn next_token(&mut self) -> Result<Option<(Tok, usize)>, ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' => {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos < self.src.len() && self.src[self.pos] == b'.' {
                    self.pos += 1;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                }
                if self.pos < self.src.len() && (self.src[self.pos] | 32) == b'e' {
                    let mark = self.pos;
                    self.pos += 1;
                    if self.pos < self.src.len()
                        && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
                    {
                        self.pos += 1;
                    }
                    if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    } else {
                        // Not an exponent after all (e.g. "2*exp(x0)").
                        self.pos = mark;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("invalid number literal `{text}`"),
                })?;
                Tok::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_owned())
            }
            other => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((tok, start)))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.idx)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.peek().map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        match self.bump() {
            Some((t, _)) if t == tok => Ok(()),
            Some((t, o)) => Err(ExprError::Syntax {
                offset: o,
                message: format!("expected {what}, found `{t:?}`"),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn parse_sum(&mut self, depth: usize) -> Result<Ast, ExprError> {
        let mut lhs = self.parse_term(depth)?;
        loop {
            match self.peek() {
                Some((Tok::Plus, _)) => {
                    self.bump();
                    let rhs = self.parse_term(depth)?;
                    lhs = Ast::add(lhs, rhs);
                }
                Some((Tok::Minus, _)) => {
                    self.bump();
                    let rhs = self.parse_term(depth)?;
                    lhs = Ast::sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self, depth: usize) -> Result<Ast, ExprError> {
        let mut lhs = self.parse_unary(depth)?;
        loop {
            match self.peek() {
                Some((Tok::Star, _)) => {
                    self.bump();
                    let rhs = self.parse_unary(depth)?;
                    lhs = Ast::mul(lhs, rhs);
                }
                Some((Tok::Slash, _)) => {
                    self.bump();
                    let rhs = self.parse_unary(depth)?;
                    lhs = Ast::div(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self, depth: usize) -> Result<Ast, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::Syntax {
                offset: self.offset(),
                message: "expression is nested too deeply".into(),
            });
        }
        if let Some((Tok::Minus, _)) = self.peek() {
            self.bump();
            let inner = self.parse_unary(depth + 1)?;
            return Ok(Ast::neg(inner));
        }
        self.parse_power(depth)
    }

    fn parse_power(&mut self, depth: usize) -> Result<Ast, ExprError> {
        let base = self.parse_atom(depth)?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            // `^` binds tighter than unary minus but its exponent may carry one.
            let exponent = self.parse_unary(depth + 1)?;
            return Ok(Ast::pow(base, exponent));
        }
        Ok(base)
    }

    fn parse_atom(&mut self, depth: usize) -> Result<Ast, ExprError> {
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Ast::num(v)),
            Some((Tok::LParen, _)) => {
                let inner = self.parse_sum(depth + 1)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((Tok::Ident(name), offset)) => self.parse_ident(&name, offset, depth),
            Some((t, o)) => Err(ExprError::Syntax {
                offset: o,
                message: format!("expected an expression, found `{t:?}`"),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: "expected an expression, found end of input".into(),
            }),
        }
    }

    fn parse_ident(&mut self, name: &str, offset: usize, depth: usize) -> Result<Ast, ExprError> {
        // Variables: x<index>.
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = rest.parse().map_err(|_| ExprError::Syntax {
                    offset,
                    message: format!("variable index `{rest}` is too large"),
                })?;
                if index >= self.dim {
                    return Err(ExprError::VarOutOfRange {
                        offset,
                        index,
                        dim: self.dim,
                    });
                }
                return Ok(Ast::var(index));
            }
        }
        if name == "pi" {
            return Ok(Ast::num(std::f64::consts::PI));
        }
        if let Some(func) = Func::from_name(name) {
            self.expect(Tok::LParen, "`(` after function name")?;
            let arg = self.parse_sum(depth + 1)?;
            if let Some((Tok::Comma, o)) = self.peek() {
                return Err(ExprError::Arity {
                    offset: *o,
                    func: name.to_owned(),
                });
            }
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Ast::call(func, arg));
        }
        Err(ExprError::UnknownIdentifier {
            offset,
            name: name.to_owned(),
        })
    }
}

pub fn parse_ast(text: &str, dim: usize) -> Result<Ast, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut lexer = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next_token()? {
        toks.push(t);
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        dim,
        end: text.len(),
    };
    let ast = parser.parse_sum(0)?;
    if let Some((t, o)) = parser.peek() {
        return Err(ExprError::Syntax {
            offset: *o,
            message: format!("unexpected trailing `{t:?}`"),
        });
    }
    Ok(ast)
}
