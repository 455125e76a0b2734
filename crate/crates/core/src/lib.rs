//! Search for analytical Lyapunov functions.
//!
//! A transformer policy proposes symbolic candidates `V(x)` for a given
//! vector field, genetic programming refines them, a global-optimization
//! falsifier hunts for counterexamples, and an interval branch-and-bound
//! certifier issues the final verdict.

pub mod certifier;
pub mod dynamics;
pub mod expr;
pub mod falsifier;
pub mod gp;
pub mod library;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use dynamics::{benchmark, Domain, DynamicalSystem, DynamicsError};
pub use expr::{Expr, ExprError, Token, TokenKind, VarSet};
