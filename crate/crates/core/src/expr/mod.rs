//! Symbolic expression trees.
//!
//! An [`Expr`] is an immutable, reference-counted tree over the token set
//! `{+, -, *, neg, sin, cos, x_i, constants}`. Candidate Lyapunov functions,
//! system vector fields and their derivatives all live in this one type.

mod diff;
mod eval;
mod infix;
mod simplify;

use std::fmt;
use std::ops;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{diff, gradient, lie_derivative};
pub use eval::{CompiledExpr, Points};
pub use infix::{parse_infix, parse_infix_with_names};
pub use simplify::{simplify, subtract_origin};

/// Largest state dimension supported by [`VarSet`].
pub const MAX_VARS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("incomplete prefix sequence: {missing} operand slot(s) left open")]
    IncompleteSequence { missing: usize },
    #[error("dangling tokens: expression complete after {used} of {total} tokens")]
    DanglingTokens { used: usize, total: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("variable x{index} out of range for a {dim}-dimensional system")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("empty token sequence")]
    Empty,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expression is not finite at the origin")]
    NonFiniteAtOrigin,
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// One node label of an expression tree.
///
/// Variables are stored 0-based and rendered 1-based (`Var(0)` is `x1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Add,
    Sub,
    Mul,
    Neg,
    Sin,
    Cos,
    Var(usize),
    Const(f64),
}

/// Coarse classification of a [`Token`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    BinaryOp,
    UnaryOp,
    Variable,
    Constant,
}

impl Token {
    pub fn arity(self) -> usize {
        match self {
            Token::Add | Token::Sub | Token::Mul => 2,
            Token::Neg | Token::Sin | Token::Cos => 1,
            Token::Var(_) | Token::Const(_) => 0,
        }
    }

    pub fn kind(self) -> TokenKind {
        match self {
            Token::Add | Token::Sub | Token::Mul => TokenKind::BinaryOp,
            Token::Neg | Token::Sin | Token::Cos => TokenKind::UnaryOp,
            Token::Var(_) => TokenKind::Variable,
            Token::Const(_) => TokenKind::Constant,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.arity() == 0
    }

    /// Canonical string form used by the prefix-token JSON arrays.
    pub fn symbol(self) -> String {
        match self {
            Token::Add => "+".into(),
            Token::Sub => "-".into(),
            Token::Mul => "*".into(),
            Token::Neg => "neg".into(),
            Token::Sin => "sin".into(),
            Token::Cos => "cos".into(),
            Token::Var(i) => format!("x{}", i + 1),
            Token::Const(c) => format!("{c}"),
        }
    }

    /// Parses the canonical string form. `×` is accepted for `*`.
    pub fn from_symbol(s: &str) -> Result<Token, ExprError> {
        let tok = match s {
            "+" => Token::Add,
            "-" | "−" => Token::Sub,
            "*" | "×" => Token::Mul,
            "neg" => Token::Neg,
            "sin" => Token::Sin,
            "cos" => Token::Cos,
            _ => {
                if let Some(rest) = s.strip_prefix('x') {
                    match rest.parse::<usize>() {
                        Ok(i) if i >= 1 => Token::Var(i - 1),
                        _ => return Err(ExprError::UnknownToken(s.to_string())),
                    }
                } else {
                    match s.parse::<f64>() {
                        Ok(c) if c.is_finite() => Token::Const(c),
                        _ => return Err(ExprError::UnknownToken(s.to_string())),
                    }
                }
            }
        };
        Ok(tok)
    }

    fn same(self, other: Token) -> bool {
        match (self, other) {
            (Token::Const(a), Token::Const(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol())
    }
}

/// Set of variable indices (0-based) as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct VarSet(u64);

impl VarSet {
    pub fn empty() -> Self {
        VarSet(0)
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_VARS);
        if n == MAX_VARS {
            VarSet(u64::MAX)
        } else {
            VarSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        assert!(i < MAX_VARS, "variable index {i} exceeds {MAX_VARS}");
        VarSet(1 << i)
    }

    pub fn union(self, other: VarSet) -> Self {
        VarSet(self.0 | other.0)
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_VARS && self.0 & (1 << i) != 0
    }

    pub fn is_superset(self, other: VarSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Largest contained index plus one (0 for the empty set).
    pub fn span(self) -> usize {
        MAX_VARS - self.0.leading_zeros() as usize
    }

    /// Iterates contained 0-based indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_VARS).filter(move |&i| self.contains(i))
    }
}

#[derive(Debug)]
struct Node {
    token: Token,
    children: Vec<Expr>,
    size: usize,
    vars: VarSet,
}

/// Immutable expression tree. Cloning is cheap (one `Arc` bump).
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn build(token: Token, children: Vec<Expr>) -> Expr {
        debug_assert_eq!(token.arity(), children.len());
        let size = 1 + children.iter().map(Expr::complexity).sum::<usize>();
        let mut vars = match token {
            Token::Var(i) => VarSet::singleton(i),
            _ => VarSet::empty(),
        };
        for c in &children {
            vars = vars.union(c.free_vars());
        }
        Expr(Arc::new(Node {
            token,
            children,
            size,
            vars,
        }))
    }

    /// Builds a node from a token and exactly `token.arity()` children.
    pub fn node(token: Token, children: Vec<Expr>) -> Expr {
        assert_eq!(
            token.arity(),
            children.len(),
            "token {token} expects {} children",
            token.arity()
        );
        Expr::build(token, children)
    }

    pub fn var(i: usize) -> Expr {
        Expr::build(Token::Var(i), Vec::new())
    }

    pub fn constant(c: f64) -> Expr {
        Expr::build(Token::Const(c), Vec::new())
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::build(Token::Sin, vec![a])
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::build(Token::Cos, vec![a])
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::build(Token::Neg, vec![a])
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::build(Token::Add, vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::build(Token::Sub, vec![a, b])
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::build(Token::Mul, vec![a, b])
    }

    /// `a * a`.
    pub fn square(a: Expr) -> Expr {
        Expr::mul(a.clone(), a)
    }

    /// Sum of the given terms, `0` if empty.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms
            .into_iter()
            .reduce(Expr::add)
            .unwrap_or_else(Expr::zero)
    }

    pub fn token(&self) -> Token {
        self.0.token
    }

    pub fn children(&self) -> &[Expr] {
        &self.0.children
    }

    pub fn child(&self, i: usize) -> &Expr {
        &self.0.children[i]
    }

    /// Number of nodes, equal to the length of the prefix traversal.
    pub fn complexity(&self) -> usize {
        self.0.size
    }

    pub fn free_vars(&self) -> VarSet {
        self.0.vars
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.0.token {
            Token::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_const(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Pre-order traversal.
    pub fn to_prefix(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.complexity());
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e.token());
            for c in e.children().iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Canonical prefix form as strings (the JSON array form).
    pub fn to_prefix_strings(&self) -> Vec<String> {
        self.to_prefix().into_iter().map(Token::symbol).collect()
    }

    /// Rebuilds the unique tree whose pre-order traversal is `tokens`.
    /// Variables must have index `< dim`.
    pub fn from_prefix(tokens: &[Token], dim: usize) -> Result<Expr, ExprError> {
        if tokens.is_empty() {
            return Err(ExprError::Empty);
        }
        let mut open = 1usize;
        for (i, t) in tokens.iter().enumerate() {
            if open == 0 {
                return Err(ExprError::DanglingTokens {
                    used: i,
                    total: tokens.len(),
                });
            }
            if let Token::Var(v) = *t {
                if v >= dim {
                    return Err(ExprError::VariableOutOfRange { index: v + 1, dim });
                }
            }
            if let Token::Const(c) = *t {
                if !c.is_finite() {
                    return Err(ExprError::UnknownToken(format!("{c}")));
                }
            }
            open = open - 1 + t.arity();
        }
        if open > 0 {
            return Err(ExprError::IncompleteSequence { missing: open });
        }
        let mut stack: Vec<Expr> = Vec::with_capacity(tokens.len());
        for &t in tokens.iter().rev() {
            let k = t.arity();
            let at = stack.len() - k;
            let mut children: Vec<Expr> = stack.drain(at..).collect();
            children.reverse();
            stack.push(Expr::build(t, children));
        }
        debug_assert_eq!(stack.len(), 1);
        Ok(stack.pop().unwrap())
    }

    /// [`Expr::from_prefix`] over string tokens.
    pub fn from_prefix_strings<S: AsRef<str>>(tokens: &[S], dim: usize) -> Result<Expr, ExprError> {
        let toks = tokens
            .iter()
            .map(|s| Token::from_symbol(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Expr::from_prefix(&toks, dim)
    }

    /// Evaluates at one point. Non-finite intermediate values propagate.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.token() {
            Token::Const(c) => c,
            Token::Var(i) => x[i],
            Token::Neg => -self.child(0).eval(x),
            Token::Sin => self.child(0).eval(x).sin(),
            Token::Cos => self.child(0).eval(x).cos(),
            Token::Add => self.child(0).eval(x) + self.child(1).eval(x),
            Token::Sub => self.child(0).eval(x) - self.child(1).eval(x),
            Token::Mul => self.child(0).eval(x) * self.child(1).eval(x),
        }
    }

    /// Value at the origin of an `n`-dimensional space.
    pub fn eval_at_origin(&self, n: usize) -> f64 {
        self.eval(&vec![0.0; n.max(self.free_vars().span())])
    }

    /// Compiles to a flat program for batched evaluation.
    pub fn compile(&self) -> CompiledExpr {
        CompiledExpr::new(self)
    }

    /// Replaces the subtree at pre-order position `pos` with `replacement`.
    pub fn replace_at(&self, pos: usize, replacement: &Expr) -> Expr {
        assert!(pos < self.complexity(), "position {pos} out of range");
        if pos == 0 {
            return replacement.clone();
        }
        let mut offset = 1;
        let mut children = self.children().to_vec();
        for c in children.iter_mut() {
            let sz = c.complexity();
            if pos < offset + sz {
                *c = c.replace_at(pos - offset, replacement);
                return Expr::build(self.token(), children);
            }
            offset += sz;
        }
        unreachable!()
    }

    /// Subtree rooted at pre-order position `pos`.
    pub fn subtree_at(&self, pos: usize) -> &Expr {
        assert!(pos < self.complexity(), "position {pos} out of range");
        if pos == 0 {
            return self;
        }
        let mut offset = 1;
        for c in self.children() {
            let sz = c.complexity();
            if pos < offset + sz {
                return c.subtree_at(pos - offset);
            }
            offset += sz;
        }
        unreachable!()
    }

    /// Depth of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Expr::depth).max().unwrap_or(0)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Expr) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        self.complexity() == other.complexity()
            && self.token().same(other.token())
            && self
                .children()
                .iter()
                .zip(other.children())
                .all(|(a, b)| a == b)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        infix::write_infix(self, f, None)
    }
}

impl Expr {
    /// Infix rendering with custom variable names.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        struct Named<'a>(&'a Expr, &'a [String]);
        impl fmt::Display for Named<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                infix::write_infix(self.0, f, Some(self.1))
            }
        }
        Named(self, names)
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_prefix_strings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Expr, D::Error> {
        let toks = Vec::<String>::deserialize(d)?;
        Expr::from_prefix_strings(&toks, MAX_VARS).map_err(serde::de::Error::custom)
    }
}

macro_rules! bin_op {
    ($tr:ident, $m:ident, $ctor:ident) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$ctor(self, rhs)
            }
        }
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                Expr::$ctor(self.clone(), rhs.clone())
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::$ctor(self, Expr::constant(rhs))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$ctor(Expr::constant(self), rhs)
            }
        }
    };
}

bin_op!(Add, add, add);
bin_op!(Sub, sub, sub);
bin_op!(Mul, mul, mul);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

/// Scans the running arity balance of a token sequence. Returns the index of
/// the token at which the balance first reaches zero, if any.
pub fn arity_balance_end(tokens: &[Token]) -> Option<usize> {
    let mut open = 1usize;
    for (i, t) in tokens.iter().enumerate() {
        open = open - 1 + t.arity();
        if open == 0 {
            return Some(i);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expr {
        Expr::var(i - 1)
    }

    fn toks(s: &[&str]) -> Vec<Token> {
        s.iter().map(|t| Token::from_symbol(t).unwrap()).collect()
    }

    #[test]
    fn parse_prefix_sum_of_square() {
        let e = Expr::from_prefix(&toks(&["+", "*", "x1", "x1", "x2"]), 2).unwrap();
        assert_eq!(e, x(1) * x(1) + x(2));
        assert_eq!(e.to_string(), "x1*x1 + x2");
    }

    #[test]
    fn parse_prefix_single_leaf() {
        let e = Expr::from_prefix(&toks(&["x2"]), 2).unwrap();
        assert_eq!(e, x(2));
    }

    #[test]
    fn parse_prefix_errors() {
        assert_eq!(
            Expr::from_prefix(&toks(&["+", "x1"]), 2),
            Err(ExprError::IncompleteSequence { missing: 1 })
        );
        assert_eq!(
            Expr::from_prefix(&toks(&["x1", "x2"]), 2),
            Err(ExprError::DanglingTokens { used: 1, total: 2 })
        );
        assert!(matches!(
            Expr::from_prefix_strings(&["+", "x1", "tan"], 2),
            Err(ExprError::UnknownToken(_))
        ));
        assert_eq!(
            Expr::from_prefix(&toks(&["x3"]), 2),
            Err(ExprError::VariableOutOfRange { index: 3, dim: 2 })
        );
        assert_eq!(Expr::from_prefix(&[], 2), Err(ExprError::Empty));
    }

    #[test]
    fn to_prefix_examples() {
        assert_eq!(
            (x(1) * x(1) + x(2)).to_prefix_strings(),
            vec!["+", "*", "x1", "x1", "x2"]
        );
        assert_eq!(Expr::sin(x(1)).to_prefix_strings(), vec!["sin", "x1"]);
        let pend = 2.0 * (1.0 - Expr::cos(x(1))) + x(2) * x(2);
        assert_eq!(pend.to_prefix().len(), 10);
        assert_eq!(Expr::from_prefix(&pend.to_prefix(), 2).unwrap(), pend);
    }

    #[test]
    fn complexity_and_free_vars() {
        let e = x(1) * x(1) + x(2);
        assert_eq!(e.complexity(), 5);
        assert_eq!(e.free_vars().iter().collect::<Vec<_>>(), vec![0, 1]);
        let s = Expr::sin(x(3));
        assert_eq!(s.complexity(), 2);
        assert_eq!(s.free_vars().iter().collect::<Vec<_>>(), vec![2]);
        let six = Expr::sum((1..=6).map(|i| x(i) * x(i)));
        assert_eq!(six.free_vars(), VarSet::full(6));
    }

    #[test]
    fn subtree_replace() {
        let e = x(1) * x(1) + x(2);
        assert_eq!(e.subtree_at(1), &(x(1) * x(1)));
        assert_eq!(e.subtree_at(4), &x(2));
        let r = e.replace_at(4, &Expr::sin(x(1)));
        assert_eq!(r, x(1) * x(1) + Expr::sin(x(1)));
        assert_eq!(e.replace_at(0, &x(2)), x(2));
    }

    #[test]
    fn arity_balance() {
        assert_eq!(arity_balance_end(&toks(&["+", "x1", "x2"])), Some(2));
        assert_eq!(arity_balance_end(&toks(&["+", "x1"])), None);
    }

    #[test]
    fn serde_prefix_array() {
        let e = Expr::cos(x(1)) - 1.5;
        let js = serde_json::to_string(&e).unwrap();
        assert_eq!(js, r#"["-","cos","x1","1.5"]"#);
        let back: Expr = serde_json::from_str(&js).unwrap();
        assert_eq!(back, e);
    }
}
