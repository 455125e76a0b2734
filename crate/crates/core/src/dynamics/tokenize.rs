//! Flat token stream for a system: each component's prefix traversal wrapped
//! in `SOS … EOS`, with numbers spelled out digit by digit.
//!
//! Integers become their base-10 digits (`123 → 1 2 3`). Everything else is
//! rounded to four significant digits and written as four mantissa digits
//! followed by a power-of-ten token (`3.14 → 3 1 4 0 10^0`). Negative numbers
//! are preceded by a unary minus.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DynamicalSystem, DynamicsError};
use crate::expr::{simplify, Expr, Token};

/// Integers at or above this magnitude use the scientific form.
const INTEGER_LIMIT: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SysToken {
    Sos,
    Eos,
    Add,
    Sub,
    Mul,
    Neg,
    Sin,
    Cos,
    Var(usize),
    Digit(u8),
    Pow10(i32),
}

impl SysToken {
    /// Stable ASCII code (`neg` distinguishes unary from binary minus).
    pub fn code(self) -> String {
        match self {
            SysToken::Sos => "SOS".into(),
            SysToken::Eos => "EOS".into(),
            SysToken::Add => "+".into(),
            SysToken::Sub => "-".into(),
            SysToken::Mul => "*".into(),
            SysToken::Neg => "neg".into(),
            SysToken::Sin => "sin".into(),
            SysToken::Cos => "cos".into(),
            SysToken::Var(i) => format!("x{}", i + 1),
            SysToken::Digit(d) => format!("{d}"),
            SysToken::Pow10(e) => format!("10^{e}"),
        }
    }

    pub fn from_code(s: &str) -> Result<SysToken, DynamicsError> {
        let bad = || DynamicsError::Tokenization(format!("unknown token `{s}`"));
        Ok(match s {
            "SOS" => SysToken::Sos,
            "EOS" => SysToken::Eos,
            "+" => SysToken::Add,
            "-" => SysToken::Sub,
            "*" => SysToken::Mul,
            "neg" => SysToken::Neg,
            "sin" => SysToken::Sin,
            "cos" => SysToken::Cos,
            _ => {
                if let Some(e) = s.strip_prefix("10^") {
                    SysToken::Pow10(e.parse().map_err(|_| bad())?)
                } else if let Some(i) = s.strip_prefix('x') {
                    match i.parse::<usize>() {
                        Ok(i) if i >= 1 => SysToken::Var(i - 1),
                        _ => return Err(bad()),
                    }
                } else if s.len() == 1 && s.as_bytes()[0].is_ascii_digit() {
                    SysToken::Digit(s.as_bytes()[0] - b'0')
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Typeset form: `×` for products, `−` for both minus signs.
impl fmt::Display for SysToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SysToken::Mul => f.write_str("×"),
            SysToken::Sub | SysToken::Neg => f.write_str("−"),
            SysToken::Pow10(e) if *e < 0 => write!(f, "10^−{}", -e),
            other => f.write_str(&other.code()),
        }
    }
}

/// Token stream of a whole system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemTokenization {
    pub tokens: Vec<SysToken>,
}

impl SystemTokenization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn codes(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.code()).collect()
    }
}

impl fmt::Display for SystemTokenization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// Tokens for a finite number; negative values get a leading [`SysToken::Neg`].
pub fn encode_number(v: f64) -> Vec<SysToken> {
    assert!(v.is_finite(), "cannot encode {v}");
    let mut out = Vec::new();
    if v.is_sign_negative() && v != 0.0 {
        out.push(SysToken::Neg);
    }
    let a = v.abs();
    if a.fract() == 0.0 && a < INTEGER_LIMIT {
        out.extend(
            format!("{}", a as u64)
                .bytes()
                .map(|b| SysToken::Digit(b - b'0')),
        );
    } else {
        // `{:.3e}` yields exactly four significant digits: `d.ddd e±x`.
        let s = format!("{a:.3e}");
        let (mant, exp) = s.split_once('e').expect("scientific format");
        out.extend(
            mant.bytes()
                .filter(u8::is_ascii_digit)
                .map(|b| SysToken::Digit(b - b'0')),
        );
        out.push(SysToken::Pow10(exp.parse().expect("integer exponent")));
    }
    out
}

/// Inverse of [`encode_number`] for an unsigned digit run and optional
/// exponent token. Four-digit mantissas denote `d.ddd × 10^e`.
pub fn decode_number(digits: &[u8], pow10: Option<i32>) -> Result<f64, DynamicsError> {
    if digits.is_empty() {
        return Err(DynamicsError::Tokenization("empty digit run".into()));
    }
    let text: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let s = match pow10 {
        None => text,
        Some(e) if text.len() == 1 => format!("{text}e{e}"),
        Some(e) => format!("{}.{}e{}", &text[..1], &text[1..], e),
    };
    s.parse()
        .map_err(|_| DynamicsError::Tokenization(format!("bad number `{s}`")))
}

fn push_expr(e: &Expr, out: &mut Vec<SysToken>) {
    match e.token() {
        Token::Const(c) => {
            let num = encode_number(c);
            // An integer run right before would swallow these digits.
            let k = out.iter().rev().take_while(|t| matches!(t, SysToken::Digit(_))).count();
            if k > 0 && matches!(num[0], SysToken::Digit(_)) {
                out.push(SysToken::Pow10(k as i32 - 1));
            }
            out.extend(num)
        }
        Token::Var(i) => out.push(SysToken::Var(i)),
        t => {
            out.push(match t {
                Token::Add => SysToken::Add,
                Token::Sub => SysToken::Sub,
                Token::Mul => SysToken::Mul,
                Token::Neg => SysToken::Neg,
                Token::Sin => SysToken::Sin,
                _ => SysToken::Cos,
            });
            for c in e.children() {
                push_expr(c, out);
            }
        }
    }
}

/// `[SOS, prefix(f_1), EOS, …, SOS, prefix(f_n), EOS]`.
///
/// Components are constant-folded first, and an integer immediately
/// followed by another number is closed with an exponent token so the two
/// digit runs stay apart.
pub fn tokenize_system(s: &DynamicalSystem) -> SystemTokenization {
    let mut tokens = Vec::new();
    for fi in s.components() {
        tokens.push(SysToken::Sos);
        push_expr(&simplify(fi), &mut tokens);
        tokens.push(SysToken::Eos);
    }
    SystemTokenization { tokens }
}

/// Recovers the component expressions from a token stream. A unary minus
/// directly in front of a number folds into a negative constant.
pub fn detokenize(t: &SystemTokenization, dim: usize) -> Result<Vec<Expr>, DynamicsError> {
    let mut out = Vec::new();
    let toks = &t.tokens;
    let mut i = 0;
    while i < toks.len() {
        if toks[i] != SysToken::Sos {
            return Err(DynamicsError::Tokenization(format!(
                "expected SOS at position {i}, found {}",
                toks[i].code()
            )));
        }
        let end = toks[i + 1..]
            .iter()
            .position(|&t| t == SysToken::Eos)
            .map(|p| p + i + 1)
            .ok_or_else(|| DynamicsError::Tokenization("missing EOS".into()))?;
        let body = &toks[i + 1..end];
        let mut pos = 0;
        let e = parse_component(body, &mut pos, dim)?;
        if pos != body.len() {
            return Err(DynamicsError::Tokenization(format!(
                "dangling tokens in component {}",
                out.len() + 1
            )));
        }
        out.push(e);
        i = end + 1;
    }
    Ok(out)
}

fn read_number(body: &[SysToken], pos: &mut usize) -> Option<Result<f64, DynamicsError>> {
    let mut digits = Vec::new();
    while let Some(SysToken::Digit(d)) = body.get(*pos) {
        digits.push(*d);
        *pos += 1;
    }
    if digits.is_empty() {
        return None;
    }
    let pow = match body.get(*pos) {
        Some(SysToken::Pow10(e)) => {
            *pos += 1;
            Some(*e)
        }
        _ => None,
    };
    Some(decode_number(&digits, pow))
}

fn parse_component(body: &[SysToken], pos: &mut usize, dim: usize) -> Result<Expr, DynamicsError> {
    let tok = *body
        .get(*pos)
        .ok_or_else(|| DynamicsError::Tokenization("incomplete component".into()))?;
    if let Some(v) = read_number(body, pos) {
        return Ok(Expr::constant(v?));
    }
    *pos += 1;
    let e = match tok {
        SysToken::Var(i) => {
            if i >= dim {
                return Err(DynamicsError::Tokenization(format!(
                    "variable x{} out of range",
                    i + 1
                )));
            }
            Expr::var(i)
        }
        SysToken::Neg => {
            if let Some(v) = read_number(body, pos) {
                return Ok(Expr::constant(-v?));
            }
            Expr::neg(parse_component(body, pos, dim)?)
        }
        SysToken::Sin => Expr::sin(parse_component(body, pos, dim)?),
        SysToken::Cos => Expr::cos(parse_component(body, pos, dim)?),
        SysToken::Add | SysToken::Sub | SysToken::Mul => {
            let a = parse_component(body, pos, dim)?;
            let b = parse_component(body, pos, dim)?;
            match tok {
                SysToken::Add => Expr::add(a, b),
                SysToken::Sub => Expr::sub(a, b),
                _ => Expr::mul(a, b),
            }
        }
        other => {
            return Err(DynamicsError::Tokenization(format!(
                "unexpected {} inside a component",
                other.code()
            )))
        }
    };
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{benchmark, Domain};
    use crate::expr::parse_infix;
    use SysToken::*;

    #[test]
    fn numbers() {
        assert_eq!(encode_number(123.0), vec![Digit(1), Digit(2), Digit(3)]);
        assert_eq!(
            encode_number(3.14),
            vec![Digit(3), Digit(1), Digit(4), Digit(0), Pow10(0)]
        );
        assert_eq!(
            encode_number(0.2),
            vec![Digit(2), Digit(0), Digit(0), Digit(0), Pow10(-1)]
        );
        assert_eq!(encode_number(-7.0), vec![Neg, Digit(7)]);
        assert_eq!(encode_number(0.0), vec![Digit(0)]);
        assert_eq!(decode_number(&[2, 0, 0, 0], Some(-1)).unwrap(), 0.2);
        assert_eq!(decode_number(&[3, 1, 4, 0], Some(0)).unwrap(), 3.14);
        assert_eq!(decode_number(&[1, 2, 3], None).unwrap(), 123.0);
    }

    #[test]
    fn four_significant_digits() {
        let toks = encode_number(1.0 / 3.0);
        assert_eq!(toks, vec![Digit(3), Digit(3), Digit(3), Digit(3), Pow10(-1)]);
        let toks = encode_number(98765.4321);
        assert_eq!(toks, vec![Digit(9), Digit(8), Digit(7), Digit(7), Pow10(4)]);
    }

    #[test]
    fn damped_pendulum_golden() {
        let s = benchmark("pendulum_damped").unwrap();
        let t = tokenize_system(&s);
        let expected = vec![
            Sos, Var(1), Eos, Sos, Add, Mul, Neg, Digit(9), Digit(8), Digit(1), Digit(0),
            Pow10(0), Sin, Var(0), Mul, Neg, Digit(2), Digit(0), Digit(0), Digit(0), Pow10(-1),
            Var(1), Eos,
        ];
        assert_eq!(t.tokens, expected);
        assert_eq!(
            t.to_string(),
            "[SOS, x2, EOS, SOS, +, ×, −, 9, 8, 1, 0, 10^0, sin, x1, ×, −, 2, 0, 0, 0, 10^−1, x2, EOS]"
        );
    }

    #[test]
    fn rotation_uses_unary_minus() {
        let f = vec![parse_infix("x2", 2).unwrap(), parse_infix("-x1", 2).unwrap()];
        let s = DynamicalSystem::with_default_names("rot", f, Domain::cube(2, 1.0)).unwrap();
        let t = tokenize_system(&s);
        assert_eq!(t.tokens, vec![Sos, Var(1), Eos, Sos, Neg, Var(0), Eos]);
        assert_eq!(detokenize(&t, 2).unwrap(), s.components());
    }

    #[test]
    fn adjacent_integers_stay_apart() {
        let f = vec![parse_infix("x1*(x1 + (x1 + 1 + 12))", 1).unwrap()];
        let s = DynamicalSystem::with_default_names("adj", f, Domain::cube(1, 1.0)).unwrap();
        let t = tokenize_system(&s);
        assert_eq!(
            t.tokens,
            vec![Sos, Mul, Var(0), Add, Var(0), Add, Add, Var(0), Digit(1), Pow10(0), Digit(1), Digit(2), Eos]
        );
        assert_eq!(detokenize(&t, 1).unwrap(), s.components());
    }

    #[test]
    fn codes_round_trip() {
        let s = benchmark("pendulum_damped").unwrap();
        let t = tokenize_system(&s);
        let back: Vec<SysToken> = t
            .codes()
            .iter()
            .map(|c| SysToken::from_code(c).unwrap())
            .collect();
        assert_eq!(back, t.tokens);
    }

    #[test]
    fn malformed_streams() {
        let bad = SystemTokenization {
            tokens: vec![Sos, Add, Var(0), Eos],
        };
        assert!(detokenize(&bad, 1).is_err());
        let bad = SystemTokenization {
            tokens: vec![Var(0)],
        };
        assert!(detokenize(&bad, 1).is_err());
        let bad = SystemTokenization {
            tokens: vec![Sos, Var(0), Var(0), Eos],
        };
        assert!(detokenize(&bad, 1).is_err());
    }
}
