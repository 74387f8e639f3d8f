//! Scalar expressions for coefficient fields, measure densities and test
//! functions.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' factor)?
//! base   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')' | '-' base
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. `**` is accepted
//! as a spelling of `^`. Variables are `x`, `y` (field point) and `zx`, `zy`
//! (boundary point, used by measure densities); `pi` is a constant.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Zx,
    Zy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values bound to the expression variables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x: f64,
    pub y: f64,
    pub zx: f64,
    pub zy: f64,
}

impl Bindings {
    /// Field point given as 1 or 2 coordinates.
    pub fn at(point: &[f64]) -> Self {
        Bindings {
            x: point.first().copied().unwrap_or(0.0),
            y: point.get(1).copied().unwrap_or(0.0),
            ..Default::default()
        }
    }

    pub fn with_boundary(mut self, z: &[f64]) -> Self {
        self.zx = z.first().copied().unwrap_or(0.0);
        self.zy = z.get(1).copied().unwrap_or(0.0);
        self
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::Zx => self.zx,
            Var::Zy => self.zy,
        }
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        parse_expr(source)
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Num(value)
    }

    pub fn eval(&self, env: &Bindings) -> Result<f64, DomainError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => env.get(*var),
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Binary(op, l, r) => {
                let l = l.eval(env)?;
                let r = r.eval(env)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(DomainError("division by zero"));
                        }
                        l / r
                    }
                    BinOp::Pow => pow(l, r)?,
                }
            }
            Expr::Call(f, args) => {
                let a0 = args[0].eval(env)?;
                match f {
                    Func::Sin => libm::sin(a0),
                    Func::Cos => libm::cos(a0),
                    Func::Exp => libm::exp(a0),
                    Func::Sqrt => {
                        if a0 < 0.0 {
                            return Err(DomainError("sqrt of a negative number"));
                        }
                        libm::sqrt(a0)
                    }
                    Func::Abs => a0.abs(),
                    Func::Min | Func::Max => {
                        let mut acc = a0;
                        for a in &args[1..] {
                            let v = a.eval(env)?;
                            acc = if *f == Func::Min { acc.min(v) } else { acc.max(v) };
                        }
                        acc
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DomainError("non-finite result"))
        }
    }

    /// Evaluates at a field point (`x`, `y`); boundary variables read as 0.
    pub fn eval_at(&self, point: &[f64]) -> Result<f64, DomainError> {
        self.eval(&Bindings::at(point))
    }

    pub fn mentions(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) => e.mentions(var),
            Expr::Binary(_, l, r) => l.mentions(var) || r.mentions(var),
            Expr::Call(_, args) => args.iter().any(|a| a.mentions(var)),
        }
    }

    /// The value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        let free = [Var::X, Var::Y, Var::Zx, Var::Zy]
            .iter()
            .all(|v| !self.mentions(*v));
        if free {
            self.eval(&Bindings::default()).ok()
        } else {
            None
        }
    }
}

fn pow(base: f64, exponent: f64) -> Result<f64, DomainError> {
    if base < 0.0 && libm::trunc(exponent) != exponent {
        return Err(DomainError("negative base with non-integer exponent"));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(DomainError("zero to a negative power"));
    }
    Ok(libm::pow(base, exponent))
}

/// Fully parenthesized; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(match v {
                Var::X => "x",
                Var::Y => "y",
                Var::Zx => "zx",
                Var::Zy => "zy",
            }),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {sym} {r})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

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
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((Tok::End, start));
        };
        let single = |t: Tok| Ok((t, start));
        self.pos += 1;
        match c {
            b'+' => single(Tok::Plus),
            b'-' => single(Tok::Minus),
            b'*' => {
                if bytes.get(self.pos) == Some(&b'*') {
                    self.pos += 1;
                    single(Tok::Caret)
                } else {
                    single(Tok::Star)
                }
            }
            b'/' => single(Tok::Slash),
            b'^' => single(Tok::Caret),
            b'(' => single(Tok::LParen),
            b')' => single(Tok::RParen),
            b',' => single(Tok::Comma),
            b'0'..=b'9' | b'.' => {
                self.pos = start;
                self.number()
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Ok((Tok::Ident(self.src[start..self.pos].to_string()), start))
            }
            _ => Err(ParseError::Syntax {
                offset: start,
                message: "unexpected character".to_string(),
            }),
        }
    }

    fn number(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        let mut n = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(&mut self.pos);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                offset: start,
                message: "malformed number".to_string(),
            });
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(&mut self.pos) == 0 {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: "malformed number".to_string(),
            })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn error<T>(&self, message: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.to_string(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            // unary minus sits below `^`
            self.bump();
            let operand = self.factor()?;
            return Ok(Expr::Neg(Box::new(operand)));
        }
        let base = self.base()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.error("expected `)`");
                }
                self.bump();
                Ok(e)
            }
            Tok::Minus => {
                self.bump();
                let operand = self.factor()?;
                Ok(Expr::Neg(Box::new(operand)))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let Some(func) = Func::lookup(&name) else {
                        return Err(ParseError::UnknownIdentifier { name, offset: at });
                    };
                    self.bump();
                    let mut args = alloc::vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if *self.peek() != Tok::RParen {
                        return self.error("expected `,` or `)`");
                    }
                    self.bump();
                    if !func.arity_ok(args.len()) {
                        return Err(ParseError::Syntax {
                            offset: at,
                            message: alloc::format!(
                                "wrong number of arguments to `{}`",
                                func.name()
                            ),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                match name.as_str() {
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    "zx" => Ok(Expr::Var(Var::Zx)),
                    "zy" => Ok(Expr::Var(Var::Zy)),
                    "pi" => Ok(Expr::Num(core::f64::consts::PI)),
                    _ => Err(ParseError::UnknownIdentifier { name, offset: at }),
                }
            }
            Tok::End => self.error("unexpected end of input"),
            _ => self.error("expected a number, identifier or `(`"),
        }
    }
}

pub fn parse_expr(source: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::tokenize(source)?;
    if toks.len() == 1 {
        return Err(ParseError::Syntax {
            offset: 0,
            message: "empty expression".to_string(),
        });
    }
    let mut p = Parser { toks, i: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

pub fn eval_expr(e: &Expr, point: &[f64]) -> Result<f64, DomainError> {
    e.eval_at(point)
}
