//! The vector-field expression language.
//!
//! A field is written as a bracketed component list, `[e1, ..., en]`, where
//! each component is an infix arithmetic expression over the coordinate
//! names, the time `t`, named parameters and the smooth functions `sin`,
//! `cos`, `exp`, `log` and `sqrt`. Parameters are substituted by their
//! numeric value while parsing, so the resulting trees only reference
//! coordinates and time.

use std::collections::BTreeMap;
use std::fmt;

use crate::jet::{layout, Jet, JetLayout};
use crate::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Coord(usize),
    Time,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Const(_) | Expr::Coord(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_time(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.uses_time() || b.uses_time()
            }
        }
    }

    pub fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Coord(i) => Some(*i),
            Expr::Const(_) | Expr::Time => None,
            Expr::Neg(a) | Expr::Call(_, a) => a.max_coord(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.max_coord().max(b.max_coord())
            }
        }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Coord(i) => x[*i],
            Expr::Time => t,
            Expr::Neg(a) => -a.eval(x, t)?,
            Expr::Add(a, b) => a.eval(x, t)? + b.eval(x, t)?,
            Expr::Sub(a, b) => a.eval(x, t)? - b.eval(x, t)?,
            Expr::Mul(a, b) => a.eval(x, t)? * b.eval(x, t)?,
            Expr::Div(a, b) => {
                let d = b.eval(x, t)?;
                if d == 0.0 {
                    return Err(Error::Domain("division by zero".into()));
                }
                a.eval(x, t)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x, t)?;
                match integer_exponent(b) {
                    Some(n) => {
                        if n < 0 && base == 0.0 {
                            return Err(Error::Domain("negative power of zero".into()));
                        }
                        base.powi(n)
                    }
                    None => {
                        let p = b.eval(x, t)?;
                        if base < 0.0 {
                            return Err(Error::Domain(format!("non-integer power of {base}")));
                        }
                        base.powf(p)
                    }
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, t)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(Error::Domain(format!("log of non-positive value {v}")));
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(Error::Domain(format!("sqrt of negative value {v}")));
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Evaluates the expression on jet-valued inputs.
    pub fn eval_jet(&self, x: &[Jet], t: &Jet) -> Result<Jet> {
        let lay = t.layout();
        Ok(match self {
            Expr::Const(c) => Jet::constant(lay, *c),
            Expr::Coord(i) => x[*i].clone(),
            Expr::Time => t.clone(),
            Expr::Neg(a) => -a.eval_jet(x, t)?,
            Expr::Add(a, b) => a.eval_jet(x, t)? + b.eval_jet(x, t)?,
            Expr::Sub(a, b) => a.eval_jet(x, t)? - b.eval_jet(x, t)?,
            Expr::Mul(a, b) => a.eval_jet(x, t)? * b.eval_jet(x, t)?,
            Expr::Div(a, b) => (&a.eval_jet(x, t)? / &b.eval_jet(x, t)?)?,
            Expr::Pow(a, b) => {
                let base = a.eval_jet(x, t)?;
                match integer_exponent(b) {
                    Some(n) => base.powi(n)?,
                    None => {
                        let p = b.eval_jet(x, t)?;
                        if p.coeffs()[1..].iter().all(|&c| c == 0.0) {
                            base.powf(p.value())?
                        } else {
                            (base.ln()? * p).exp()
                        }
                    }
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval_jet(x, t)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln()?,
                    Func::Sqrt => v.sqrt()?,
                }
            }
        })
    }
}

fn integer_exponent(e: &Expr) -> Option<i32> {
    match e {
        Expr::Const(c) if c.fract() == 0.0 && c.abs() <= 64.0 => Some(*c as i32),
        _ => None,
    }
}

/// Prints an expression with the coordinate names of its field.
pub struct Printer<'a> {
    pub expr: &'a Expr,
    pub coords: &'a [String],
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(c) if *c < 0.0 => 0,
        _ => 5,
    }
}

impl Printer<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |child: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if precedence(child) < min {
                write!(f, "(")?;
                self.write(child, f)?;
                write!(f, ")")
            } else {
                self.write(child, f)
            }
        };
        match e {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Coord(i) => write!(f, "{}", self.coords[*i]),
            Expr::Time => write!(f, "t"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                sub(a, 4, f)
            }
            Expr::Add(a, b) => {
                sub(a, 1, f)?;
                write!(f, " + ")?;
                sub(b, 2, f)
            }
            Expr::Sub(a, b) => {
                sub(a, 1, f)?;
                write!(f, " - ")?;
                sub(b, 2, f)
            }
            Expr::Mul(a, b) => {
                sub(a, 2, f)?;
                write!(f, "*")?;
                sub(b, 3, f)
            }
            Expr::Div(a, b) => {
                sub(a, 2, f)?;
                write!(f, "/")?;
                sub(b, 3, f)
            }
            Expr::Pow(a, b) => {
                sub(a, 5, f)?;
                write!(f, "^")?;
                sub(b, 4, f)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if !c.is_ascii() {
            return Err(Error::Syntax {
                offset: i,
                expected: "ASCII input".into(),
            });
        }
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                expected: "number".into(),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),[]".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Syntax {
                offset: i,
                expected: "operator, number or identifier".into(),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    coords: &'a [String],
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            expected: expected.into(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn starts_operand(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Num(_)) | Some(Tok::Ident(_)) | Some(Tok::Op('(')) | Some(Tok::Op('-'))
        )
    }

    // A binary operator must be followed by an operand; report the operator itself otherwise.
    fn operand_after(&mut self, op_offset: usize, op: char) -> Result<()> {
        if self.starts_operand() {
            Ok(())
        } else {
            Err(Error::Syntax {
                offset: op_offset,
                expected: format!("operand after '{op}'"),
            })
        }
    }

    fn list(&mut self) -> Result<Vec<Expr>> {
        if !self.eat('[') {
            return self.err("'['");
        }
        let mut items = vec![self.expr()?];
        loop {
            if self.eat(',') {
                items.push(self.expr()?);
            } else if self.eat(']') {
                break;
            } else {
                return self.err("',' or ']'");
            }
        }
        if self.pos != self.toks.len() {
            return self.err("end of input");
        }
        Ok(items)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let off = self.offset();
            if self.eat('+') {
                self.operand_after(off, '+')?;
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                self.operand_after(off, '-')?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let off = self.offset();
            if self.eat('*') {
                self.operand_after(off, '*')?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                self.operand_after(off, '/')?;
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        let off = self.offset();
        if self.eat('^') {
            self.operand_after(off, '^')?;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let off = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("')'");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    let func = match Func::from_name(&name) {
                        Some(f) => f,
                        None => return Err(Error::UnknownSymbol(name)),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return self.err("')'");
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if let Some(i) = self.coords.iter().position(|c| *c == name) {
                    Ok(Expr::Coord(i))
                } else if name == "t" {
                    Ok(Expr::Time)
                } else if let Some(v) = self.params.get(&name) {
                    Ok(Expr::Const(*v))
                } else if name == "pi" {
                    Ok(Expr::Const(std::f64::consts::PI))
                } else {
                    let _ = off;
                    Err(Error::UnknownSymbol(name))
                }
            }
            _ => self.err("number, identifier or '('"),
        }
    }
}

/// Parses a bracketed component list. Returns the component trees.
pub fn parse_components(
    src: &str,
    coords: &[String],
    params: &BTreeMap<String, f64>,
) -> Result<Vec<Expr>> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
        coords,
        params,
    };
    p.list()
}

/// Layout plus the coordinate/time seed jets for a point, with time as the last variable.
pub fn seed_jets(point: &[f64], time: f64, order: usize) -> (Arc<JetLayout>, Vec<Jet>, Jet) {
    let n = point.len();
    let lay = layout(n + 1, order);
    let xs = point
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(&lay, i, v))
        .collect();
    let t = Jet::variable(&lay, n, time);
    (lay, xs, t)
}
