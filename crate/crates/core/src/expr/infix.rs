//! Infix rendering and parsing.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '×') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom (('^' | '**') INT)?
//! atom    := NUMBER | IDENT | ('sin' | 'cos') '(' sum ')' | '(' sum ')'
//! ```
//!
//! Unary minus binds tighter than `*` and looser than `^`, so `-9.81*sin(x1)`
//! is `(-9.81)*sin(x1)` and `-x1^2` is `-(x1*x1)`. A minus directly applied to
//! a numeric literal folds into the constant.

use std::fmt;

use super::{Expr, ExprError, Token};

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 4;

/// Exponents above this are rejected by the parser.
const MAX_POWER: u32 = 16;

fn prec(e: &Expr) -> u8 {
    match e.token() {
        Token::Add | Token::Sub => PREC_SUM,
        Token::Mul => PREC_PRODUCT,
        Token::Neg => PREC_UNARY,
        Token::Const(c) if c < 0.0 || (c == 0.0 && c.is_sign_negative()) => PREC_UNARY,
        _ => PREC_ATOM,
    }
}

pub(crate) fn write_infix(
    e: &Expr,
    f: &mut fmt::Formatter<'_>,
    names: Option<&[String]>,
) -> fmt::Result {
    match e.token() {
        Token::Var(i) => match names.and_then(|n| n.get(i)) {
            Some(name) => f.write_str(name),
            None => write!(f, "x{}", i + 1),
        },
        Token::Const(c) => write!(f, "{c}"),
        Token::Sin | Token::Cos => {
            f.write_str(if e.token() == Token::Sin { "sin(" } else { "cos(" })?;
            write_infix(e.child(0), f, names)?;
            f.write_str(")")
        }
        Token::Neg => {
            f.write_str("-")?;
            // `-(-a)` keeps its parentheses to stay a double negation, and
            // `-(2)` keeps them so the parser does not fold it into `-2`.
            let c = e.child(0);
            if c.as_const().is_some() {
                f.write_str("(")?;
                write_infix(c, f, names)?;
                f.write_str(")")
            } else {
                write_operand(c, f, names, PREC_UNARY + 1)
            }
        }
        Token::Add | Token::Sub | Token::Mul => {
            let (p, sym) = match e.token() {
                Token::Add => (PREC_SUM, " + "),
                Token::Sub => (PREC_SUM, " - "),
                _ => (PREC_PRODUCT, "*"),
            };
            write_operand(e.child(0), f, names, p)?;
            f.write_str(sym)?;
            // Right operands: equal precedence needs parentheses (left
            // associativity), and a leading minus is always parenthesized.
            let r = e.child(1);
            let need = if prec(r) == PREC_UNARY { PREC_ATOM } else { p + 1 };
            write_operand(r, f, names, need)
        }
    }
}

fn write_operand(
    e: &Expr,
    f: &mut fmt::Formatter<'_>,
    names: Option<&[String]>,
    min_prec: u8,
) -> fmt::Result {
    if prec(e) < min_prec {
        f.write_str("(")?;
        write_infix(e, f, names)?;
        f.write_str(")")
    } else {
        write_infix(e, f, names)
    }
}

/// Parses an infix expression over variables `x1..x{dim}`.
pub fn parse_infix(src: &str, dim: usize) -> Result<Expr, ExprError> {
    Parser::new(src, &[], dim).parse()
}

/// Parses an infix expression; identifiers are resolved against `names`
/// first (position = 0-based variable index), then as `x<i>`.
pub fn parse_infix_with_names(src: &str, names: &[String]) -> Result<Expr, ExprError> {
    Parser::new(src, names, names.len()).parse()
}

#[derive(Debug, Clone, PartialEq)]
enum Lex {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

struct Parser<'a> {
    toks: Vec<(usize, Lex)>,
    pos: usize,
    names: &'a [String],
    dim: usize,
    src_len: usize,
    lex_err: Option<ExprError>,
}

impl<'a> Parser<'a> {
    fn new(src: &str, names: &'a [String], dim: usize) -> Self {
        let (toks, lex_err) = match lex(src) {
            Ok(t) => (t, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        Parser {
            toks,
            pos: 0,
            names,
            dim,
            src_len: src.len(),
            lex_err,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        let pos = self
            .toks
            .get(self.pos)
            .map(|t| t.0)
            .unwrap_or(self.src_len);
        Err(ExprError::Parse {
            pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&Lex> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn bump(&mut self) -> Option<Lex> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn parse(mut self) -> Result<Expr, ExprError> {
        if let Some(e) = self.lex_err.take() {
            return Err(e);
        }
        if self.toks.is_empty() {
            return Err(ExprError::Empty);
        }
        let e = self.sum()?;
        if self.pos < self.toks.len() {
            return self.err("unexpected trailing input");
        }
        Ok(e)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(Lex::Plus) => {
                    self.bump();
                    lhs = Expr::add(lhs, self.product()?);
                }
                Some(Lex::Minus) => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.product()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Lex::Star) = self.peek() {
            self.bump();
            lhs = Expr::mul(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Lex::Minus) => {
                self.bump();
                let literal = matches!(self.peek(), Some(Lex::Num(..)));
                let inner = self.unary()?;
                match inner.as_const() {
                    Some(c) if literal => Ok(Expr::constant(-c)),
                    _ => Ok(Expr::neg(inner)),
                }
            }
            Some(Lex::Plus) => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Lex::Caret) = self.peek() {
            self.bump();
            let k = match self.bump() {
                Some(Lex::Num(v, _)) if v.fract() == 0.0 && v >= 1.0 && v <= MAX_POWER as f64 => {
                    v as u32
                }
                _ => {
                    self.pos -= 1;
                    return self.err(format!("exponent must be an integer in 1..={MAX_POWER}"));
                }
            };
            let mut acc = base.clone();
            for _ in 1..k {
                acc = Expr::mul(acc, base.clone());
            }
            return Ok(acc);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            Some(Lex::Num(v, _)) => Ok(Expr::constant(v)),
            Some(Lex::LParen) => {
                let e = self.sum()?;
                match self.bump() {
                    Some(Lex::RParen) => Ok(e),
                    _ => {
                        self.pos -= 1;
                        self.err("expected `)`")
                    }
                }
            }
            Some(Lex::Ident(name)) => {
                if name == "sin" || name == "cos" {
                    if self.bump() != Some(Lex::LParen) {
                        self.pos -= 1;
                        return self.err(format!("expected `(` after `{name}`"));
                    }
                    let arg = self.sum()?;
                    if self.bump() != Some(Lex::RParen) {
                        self.pos -= 1;
                        return self.err("expected `)`");
                    }
                    return Ok(if name == "sin" {
                        Expr::sin(arg)
                    } else {
                        Expr::cos(arg)
                    });
                }
                self.variable(&name)
            }
            Some(_) => {
                self.pos -= 1;
                self.err("expected a number, variable, function or `(`")
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn variable(&mut self, name: &str) -> Result<Expr, ExprError> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Ok(Expr::var(i));
        }
        if let Some(i) = name
            .strip_prefix('x')
            .and_then(|r| r.parse::<usize>().ok())
            .filter(|&i| i >= 1)
        {
            if i > self.dim {
                return Err(ExprError::VariableOutOfRange {
                    index: i,
                    dim: self.dim,
                });
            }
            return Ok(Expr::var(i - 1));
        }
        self.pos -= 1;
        self.err(format!("unknown identifier `{name}`"))
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Lex)>, ExprError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push((at, Lex::Plus));
                i += 1;
            }
            '-' | '−' => {
                out.push((at, Lex::Minus));
                i += 1;
            }
            '×' | '·' => {
                out.push((at, Lex::Star));
                i += 1;
            }
            '*' => {
                if chars.get(i + 1).map(|c| c.1) == Some('*') {
                    out.push((at, Lex::Caret));
                    i += 2;
                } else {
                    out.push((at, Lex::Star));
                    i += 1;
                }
            }
            '^' => {
                out.push((at, Lex::Caret));
                i += 1;
            }
            '(' => {
                out.push((at, Lex::LParen));
                i += 1;
            }
            ')' => {
                out.push((at, Lex::RParen));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].1.is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().map(|c| c.1).collect();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push((at, Lex::Num(v, text))),
                    _ => {
                        return Err(ExprError::Parse {
                            pos: at,
                            msg: format!("bad number `{text}`"),
                        })
                    }
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().map(|c| c.1).collect();
                out.push((at, Lex::Ident(text)));
            }
            other => {
                return Err(ExprError::Parse {
                    pos: at,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expr {
        Expr::var(i - 1)
    }

    #[test]
    fn precedence() {
        assert_eq!(parse_infix("x1*x1 + x2", 2).unwrap(), x(1) * x(1) + x(2));
        assert_eq!(
            parse_infix("-9.81*sin(x1) - 0.2*x2", 2).unwrap(),
            Expr::constant(-9.81) * Expr::sin(x(1)) - 0.2 * x(2)
        );
        assert_eq!(parse_infix("-x1^2", 1).unwrap(), -(x(1) * x(1)));
        assert_eq!(parse_infix("x1 - x2 - x1", 2).unwrap(), (x(1) - x(2)) - x(1));
        assert_eq!(parse_infix("2 × (1 − cos(x1))", 1).unwrap(), 2.0 * (1.0 - Expr::cos(x(1))));
        assert_eq!(parse_infix("x1**3", 1).unwrap(), x(1) * x(1) * x(1));
        assert_eq!(parse_infix("1e-3*x1", 1).unwrap(), 1e-3 * x(1));
    }

    #[test]
    fn named_variables() {
        let names: Vec<String> = ["delta1", "omega1"].iter().map(|s| s.to_string()).collect();
        let e = parse_infix_with_names("omega1 - sin(delta1)", &names).unwrap();
        assert_eq!(e, x(2) - Expr::sin(x(1)));
        assert_eq!(e.display_with(&names).to_string(), "omega1 - sin(delta1)");
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_infix("x1 +", 1), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_infix("x1 $ x2", 2), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_infix("tan(x1)", 1), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_infix("(x1", 1), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_infix("x1^0.5", 1), Err(ExprError::Parse { .. })));
        assert_eq!(
            parse_infix("x3", 2),
            Err(ExprError::VariableOutOfRange { index: 3, dim: 2 })
        );
        assert_eq!(parse_infix("  ", 2), Err(ExprError::Empty));
    }

    #[test]
    fn render_round_trips() {
        let cases = vec![
            x(1) * (x(2) * x(1)),
            x(1) - (x(2) - x(1)),
            x(1) - (x(2) + x(1)),
            -(-x(1)),
            -(x(1) * x(2)),
            x(1) * -x(2),
            x(1) + Expr::constant(-2.0),
            Expr::constant(-2.0) * x(1),
            Expr::neg(Expr::constant(2.0)) * x(1),
            Expr::cos(-x(1)) * Expr::constant(1e-7),
            x(2) - -Expr::constant(3.5),
        ];
        for e in cases {
            let s = e.to_string();
            assert_eq!(parse_infix(&s, 2).unwrap(), e, "rendered as {s}");
        }
    }
}
