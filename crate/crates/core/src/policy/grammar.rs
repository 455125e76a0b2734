//! Decoder vocabulary, hierarchical tree state and legality masks.

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::expr::Token;
use crate::library::{Library, CONSTANTS};

/// Decoder output vocabulary for an `n`-dimensional system: operators,
/// variables, then integer constants 1–9.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    n: usize,
    tokens: Vec<Token>,
}

impl Vocab {
    pub fn new(n: usize) -> Self {
        Vocab {
            n,
            tokens: Library::vocabulary(n),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> Token {
        self.tokens[i]
    }

    /// The "no token" marker used for absent parents, siblings and the
    /// start-of-sequence input.
    pub fn empty_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn index_of(&self, t: Token) -> Option<usize> {
        let ops = Library::operators().len();
        match t {
            Token::Add => Some(0),
            Token::Sub => Some(1),
            Token::Mul => Some(2),
            Token::Sin => Some(3),
            Token::Cos => Some(4),
            Token::Var(i) if i < self.n => Some(ops + i),
            Token::Const(c)
                if c.fract() == 0.0 && c >= *CONSTANTS.start() as f64 && c <= *CONSTANTS.end() as f64 =>
            {
                Some(ops + self.n + c as usize - *CONSTANTS.start() as usize)
            }
            _ => None,
        }
    }

    pub fn is_constant(&self, i: usize) -> bool {
        matches!(self.tokens[i], Token::Const(_))
    }
}

/// Sampling constraints shared by generation and re-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub k_max: usize,
    /// Allow the integer constants 1–9.
    pub constants: bool,
    /// Forbid tokens that would make completion within `k_max` impossible.
    pub budget_mask: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            k_max: 30,
            constants: false,
            budget_mask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    /// `None` for the virtual root slot.
    parent: Option<Token>,
    filled: usize,
    first: Option<Token>,
}

impl Slot {
    fn capacity(&self) -> usize {
        self.parent.map_or(1, Token::arity)
    }
}

/// A partial pre-order traversal and the open child slots it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    tokens: Vec<Token>,
    stack: Vec<Slot>,
}

impl Default for GenerationState {
    fn default() -> Self {
        Self::new()
    }
}

impl GenerationState {
    pub fn new() -> Self {
        GenerationState {
            tokens: Vec::new(),
            stack: vec![Slot {
                parent: None,
                filled: 0,
                first: None,
            }],
        }
    }

    pub fn from_tokens(tokens: &[Token]) -> Self {
        let mut s = Self::new();
        for &t in tokens {
            s.push(t);
        }
        s
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of still-open child slots.
    pub fn balance(&self) -> usize {
        self.stack.iter().map(|s| s.capacity() - s.filled).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }

    /// `(parent, sibling)` of the next slot.
    pub fn tree_state(&self) -> (Option<Token>, Option<Token>) {
        match self.stack.last() {
            None => (None, None),
            Some(s) => (s.parent, if s.filled == 1 { s.first } else { None }),
        }
    }

    pub fn prev(&self) -> Option<Token> {
        self.tokens.last().copied()
    }

    pub fn push(&mut self, t: Token) {
        assert!(!self.is_complete(), "push onto a complete traversal");
        self.tokens.push(t);
        let top = self.stack.last_mut().unwrap();
        top.filled += 1;
        if top.filled == 1 {
            top.first = Some(t);
        }
        if top.filled == top.capacity() {
            self.stack.pop();
        }
        if t.arity() > 0 {
            self.stack.push(Slot {
                parent: Some(t),
                filled: 0,
                first: None,
            });
        }
    }

    /// Legal next tokens under `cfg`.
    pub fn mask(&self, vocab: &Vocab, cfg: &SampleConfig) -> Vec<bool> {
        let c = self.balance();
        let remaining = cfg.k_max.saturating_sub(self.len());
        (0..vocab.len())
            .map(|i| {
                if self.is_complete() || remaining == 0 {
                    return false;
                }
                if vocab.is_constant(i) && !cfg.constants {
                    return false;
                }
                // Each open slot needs at least one more token.
                !cfg.budget_mask || vocab.token(i).arity() + c <= remaining
            })
            .collect()
    }
}

/// Decoder input ids `(prev, parent, sibling)` for one step.
pub fn step_inputs(state: &GenerationState, vocab: &Vocab) -> Result<[usize; 3], PolicyError> {
    let id = |t: Option<Token>| match t {
        None => Ok(vocab.empty_id()),
        Some(t) => vocab
            .index_of(t)
            .ok_or_else(|| PolicyError::VocabularyMismatch(format!("token {t} is not in the vocabulary"))),
    };
    let (p, s) = state.tree_state();
    Ok([id(state.prev())?, id(p)?, id(s)?])
}

/// Replays `tokens` and returns, for each step, its input ids, legality mask
/// and target index.
pub fn replay(
    tokens: &[Token],
    vocab: &Vocab,
    cfg: &SampleConfig,
) -> Result<Vec<([usize; 3], Vec<bool>, usize)>, PolicyError> {
    let mut st = GenerationState::new();
    let mut out = Vec::with_capacity(tokens.len());
    for (pos, &t) in tokens.iter().enumerate() {
        let target = vocab.index_of(t).ok_or(PolicyError::IllegalSequence {
            pos,
            reason: format!("token {t} is not in the vocabulary"),
        })?;
        let mask = st.mask(vocab, cfg);
        if !mask[target] {
            return Err(PolicyError::IllegalSequence {
                pos,
                reason: format!("token {t} is masked"),
            });
        }
        out.push((step_inputs(&st, vocab)?, mask, target));
        st.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Token::*;

    #[test]
    fn parent_and_sibling() {
        let s = GenerationState::from_tokens(&[Add, Var(0)]);
        assert_eq!(s.tree_state(), (Some(Add), Some(Var(0))));
        let s = GenerationState::from_tokens(&[Sin]);
        assert_eq!(s.tree_state(), (Some(Sin), None));
        assert_eq!(GenerationState::new().tree_state(), (None, None));
        // Back to the root's second slot after a finished left subtree.
        let s = GenerationState::from_tokens(&[Add, Mul, Var(0), Var(0)]);
        assert_eq!(s.tree_state(), (Some(Add), Some(Mul)));
        assert_eq!(s.balance(), 1);
    }

    #[test]
    fn completion() {
        let mut s = GenerationState::new();
        assert_eq!(s.balance(), 1);
        for t in [Add, Mul, Var(0), Var(0), Var(1)] {
            assert!(!s.is_complete());
            s.push(t);
        }
        assert!(s.is_complete());
        assert_eq!(s.balance(), 0);
    }

    #[test]
    fn budget_mask() {
        let v = Vocab::new(2);
        let cfg = SampleConfig {
            k_max: 3,
            ..SampleConfig::default()
        };
        let s = GenerationState::from_tokens(&[Add]);
        let m = s.mask(&v, &cfg);
        // Two slots, two tokens left: only terminals.
        for (i, &ok) in m.iter().enumerate() {
            let t = v.token(i);
            assert_eq!(ok, t.is_terminal() && !matches!(t, Const(_)), "{t}");
        }
        let cfg = SampleConfig {
            constants: true,
            ..cfg
        };
        assert!(s.mask(&v, &cfg)[v.index_of(Const(9.0)).unwrap()]);
    }

    #[test]
    fn vocab_indexing() {
        let v = Vocab::new(3);
        assert_eq!(v.len(), 5 + 3 + 9);
        for (i, &t) in v.tokens().iter().enumerate() {
            assert_eq!(v.index_of(t), Some(i));
        }
        assert_eq!(v.index_of(Var(3)), None);
        assert_eq!(v.index_of(Const(0.5)), None);
        assert_eq!(v.index_of(Neg), None);
    }
}
