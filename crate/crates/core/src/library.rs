//! The symbolic library shared by the generator and genetic programming.

use serde::{Deserialize, Serialize};

use crate::expr::Token;

/// Integer constants available as leaves.
pub const CONSTANTS: std::ops::RangeInclusive<u8> = 1..=9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Library {
    pub dim: usize,
    /// Whether integer constants 1–9 may be produced.
    pub constants: bool,
}

impl Library {
    pub fn new(dim: usize, constants: bool) -> Self {
        Library { dim, constants }
    }

    pub fn operators() -> [Token; 5] {
        [Token::Add, Token::Sub, Token::Mul, Token::Sin, Token::Cos]
    }

    /// Leaves that may be produced under this library.
    pub fn terminals(&self) -> Vec<Token> {
        let mut t: Vec<Token> = (0..self.dim).map(Token::Var).collect();
        if self.constants {
            t.extend(CONSTANTS.map(|c| Token::Const(c as f64)));
        }
        t
    }

    /// Every producible token, operators first.
    pub fn tokens(&self) -> Vec<Token> {
        let mut t = Self::operators().to_vec();
        t.extend(self.terminals());
        t
    }

    /// The full vocabulary for dimension `dim`, constants included.
    pub fn vocabulary(dim: usize) -> Vec<Token> {
        Library::new(dim, true).tokens()
    }
}
