//! Interval arithmetic with outward padding.
//!
//! Every operation widens its result by [`PAD_ULPS`] units in the last place
//! on each side instead of switching the FPU rounding mode. Libm `sin`/`cos`
//! are accurate to well under that margin.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use crate::expr::{Expr, Token};

pub const PAD_ULPS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(mut v: f64) -> f64 {
    for _ in 0..PAD_ULPS {
        v = v.next_down();
    }
    v
}

fn up(mut v: f64) -> f64 {
    for _ in 0..PAD_ULPS {
        v = v.next_up();
    }
    v
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    /// Padded result; any NaN bound widens to the whole line.
    fn padded(lo: f64, hi: f64) -> Self {
        if lo.is_nan() || hi.is_nan() {
            return Interval::ENTIRE;
        }
        Interval {
            lo: down(lo),
            hi: up(hi),
        }
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_subset_of(self, other: Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn add(self, o: Interval) -> Self {
        Interval::padded(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(self, o: Interval) -> Self {
        Interval::padded(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(self) -> Self {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(self, o: Interval) -> Self {
        let p = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        if p.iter().any(|v| v.is_nan()) {
            return Interval::ENTIRE;
        }
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::padded(lo, hi)
    }

    /// Range of `t²`, never negative.
    pub fn square(self) -> Self {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.lo >= 0.0 {
            Interval::padded(a, b)
        } else if self.hi <= 0.0 {
            Interval::padded(b, a)
        } else {
            Interval {
                lo: 0.0,
                hi: up(a.max(b)),
            }
        }
    }

    /// Range of `sin` via its critical points `π/2 + kπ`.
    pub fn sin(self) -> Self {
        self.trig(f64::sin, FRAC_PI_2)
    }

    /// Range of `cos` via its critical points `kπ`.
    pub fn cos(self) -> Self {
        self.trig(f64::cos, 0.0)
    }

    /// `phase` is the location of a maximum; minima sit half a period later.
    fn trig(self, f: fn(f64) -> f64, phase: f64) -> Self {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        // A slightly enlarged search window can only add extrema, which
        // keeps the enclosure sound despite rounding in `k·2π`.
        let slack = 1e-9 * (1.0 + self.lo.abs().max(self.hi.abs()));
        let (a, b) = (self.lo - slack, self.hi + slack);
        let hits = |c: f64| {
            let k = ((a - c) / TAU).ceil();
            c + k * TAU <= b
        };
        let (fa, fb) = (f(self.lo), f(self.hi));
        let hi = if hits(phase) { 1.0 } else { up(fa.max(fb)).min(1.0) };
        let lo = if hits(phase + PI) { -1.0 } else { down(fa.min(fb)).max(-1.0) };
        Interval { lo, hi }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy)]
enum IOp {
    Var(usize),
    Const(f64),
    Neg,
    Sin,
    Cos,
    Square,
    Add,
    Sub,
    Mul,
}

/// Postfix program for interval evaluation; `e·e` with structurally equal
/// factors compiles to a single square.
#[derive(Debug, Clone)]
pub struct IntervalProgram {
    ops: Vec<IOp>,
}

impl IntervalProgram {
    pub fn new(e: &Expr) -> Self {
        let mut ops = Vec::with_capacity(e.complexity());
        emit(e, &mut ops);
        IntervalProgram { ops }
    }

    pub fn eval(&self, bx: &[Interval], stack: &mut Vec<Interval>) -> Interval {
        stack.clear();
        for op in &self.ops {
            match *op {
                IOp::Var(j) => stack.push(bx[j]),
                IOp::Const(c) => stack.push(Interval::point(c)),
                IOp::Neg | IOp::Sin | IOp::Cos | IOp::Square => {
                    let a = stack.pop().unwrap();
                    stack.push(match op {
                        IOp::Neg => a.neg(),
                        IOp::Sin => a.sin(),
                        IOp::Cos => a.cos(),
                        _ => a.square(),
                    });
                }
                IOp::Add | IOp::Sub | IOp::Mul => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(match op {
                        IOp::Add => a.add(b),
                        IOp::Sub => a.sub(b),
                        _ => a.mul(b),
                    });
                }
            }
        }
        stack[0]
    }
}

fn emit(e: &Expr, ops: &mut Vec<IOp>) {
    if e.token() == Token::Mul && e.child(0) == e.child(1) {
        emit(e.child(0), ops);
        ops.push(IOp::Square);
        return;
    }
    for c in e.children() {
        emit(c, ops);
    }
    ops.push(match e.token() {
        Token::Var(j) => IOp::Var(j),
        Token::Const(c) => IOp::Const(c),
        Token::Neg => IOp::Neg,
        Token::Sin => IOp::Sin,
        Token::Cos => IOp::Cos,
        Token::Add => IOp::Add,
        Token::Sub => IOp::Sub,
        Token::Mul => IOp::Mul,
    });
}

/// Natural interval extension of `e` over a box.
pub fn interval_eval(e: &Expr, bx: &[Interval]) -> Interval {
    IntervalProgram::new(e).eval(bx, &mut Vec::new())
}
