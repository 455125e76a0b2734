//! Autonomous systems `ẋ = f(x)` on a box, their tokenization, and the
//! benchmark registry.

mod benchmarks;
mod file;
mod tokenize;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{lie_derivative, Expr, ExprError};

pub use benchmarks::{benchmark, registry, Benchmark, SUITE_ENTRIES};
pub use file::{load_system, SystemFile};
pub use tokenize::{
    decode_number, detokenize, encode_number, tokenize_system, SysToken, SystemTokenization,
};

/// Tolerance for `f(0) = 0` at registration.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("f(0) != 0: component {component} evaluates to {value:e} at the origin")]
    NotAnEquilibrium { component: usize, value: f64 },
    #[error("component {component} is not finite at {point:?}")]
    NonFinite { component: usize, point: Vec<f64> },
    #[error("system has {got} equations, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("equation {index}: {source}")]
    Equation { index: usize, source: ExprError },
    #[error("malformed token stream: {0}")]
    Tokenization(String),
    #[error("system file: {0}")]
    File(String),
}

/// Axis-aligned box containing the origin in its interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DynamicsError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(DynamicsError::InvalidDomain(format!(
                "bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(DynamicsError::InvalidDomain(format!(
                    "dimension {}: [{l}, {u}]",
                    i + 1
                )));
            }
            if !(l < 0.0 && 0.0 < u) {
                return Err(DynamicsError::InvalidDomain(format!(
                    "origin not strictly inside dimension {}: [{l}, {u}]",
                    i + 1
                )));
            }
        }
        Ok(Domain { lower, upper })
    }

    /// `[-r_i, r_i]` per dimension.
    pub fn symmetric(radii: &[f64]) -> Result<Self, DynamicsError> {
        Domain::new(radii.iter().map(|r| -r).collect(), radii.to_vec())
    }

    /// `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Self {
        Domain::symmetric(&vec![r; n]).expect("positive radius")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.width(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// `n` i.i.d. uniform points in the box.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for j in 0..d {
                row[j] = rng.gen_range(self.lower[j]..=self.upper[j]);
            }
        }
        out
    }
}

/// `ẋ = f(x)` on a box with an equilibrium at the origin.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    name: String,
    variables: Vec<String>,
    f: Vec<Expr>,
    domain: Domain,
    note: Option<String>,
}

impl DynamicalSystem {
    /// Validates and builds a system. Checks that every component is finite
    /// on the box (corners plus a deterministic sample) and vanishes at the
    /// origin.
    pub fn new(
        name: impl Into<String>,
        variables: Vec<String>,
        f: Vec<Expr>,
        domain: Domain,
    ) -> Result<Self, DynamicsError> {
        let n = domain.dim();
        if f.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: f.len(),
            });
        }
        if variables.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: variables.len(),
            });
        }
        for (i, fi) in f.iter().enumerate() {
            if fi.free_vars().span() > n {
                return Err(DynamicsError::Equation {
                    index: i + 1,
                    source: ExprError::VariableOutOfRange {
                        index: fi.free_vars().span(),
                        dim: n,
                    },
                });
            }
            let v = fi.eval(&vec![0.0; n]);
            if !(v.abs() <= EQUILIBRIUM_TOL) {
                return Err(DynamicsError::NotAnEquilibrium {
                    component: i + 1,
                    value: v,
                });
            }
        }
        let sys = DynamicalSystem {
            name: name.into(),
            variables,
            f,
            domain,
            note: None,
        };
        sys.check_finite()?;
        Ok(sys)
    }

    /// Like [`DynamicalSystem::new`] with variables named `x1..xn`.
    pub fn with_default_names(
        name: impl Into<String>,
        f: Vec<Expr>,
        domain: Domain,
    ) -> Result<Self, DynamicsError> {
        let names = (1..=domain.dim()).map(|i| format!("x{i}")).collect();
        DynamicalSystem::new(name, names, f, domain)
    }

    fn check_finite(&self) -> Result<(), DynamicsError> {
        let n = self.dim();
        let d = &self.domain;
        let mut pts: Vec<Vec<f64>> = Vec::new();
        if n <= 12 {
            for mask in 0u32..(1 << n) {
                pts.push(
                    (0..n)
                        .map(|j| if mask & (1 << j) != 0 { d.upper[j] } else { d.lower[j] })
                        .collect(),
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = d.sample(2048, &mut rng);
        pts.extend(sample.rows().into_iter().map(|r| r.to_vec()));
        for (i, fi) in self.f.iter().enumerate() {
            let c = fi.compile();
            for p in &pts {
                if !c.eval_point(p).is_finite() {
                    return Err(DynamicsError::NonFinite {
                        component: i + 1,
                        point: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn components(&self) -> &[Expr] {
        &self.f
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn note(&self) -> Option<&str> {
        self.note.as_deref()
    }

    /// `L_f V = ∇V · f`.
    pub fn lie_derivative(&self, v: &Expr) -> Result<Expr, ExprError> {
        lie_derivative(v, &self.f)
    }

    /// Evaluates `f` at one point.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.f.iter().map(|fi| fi.eval(x)).collect()
    }

    /// Infix rendering of each component using the variable names.
    pub fn equations(&self) -> Vec<String> {
        self.f
            .iter()
            .map(|e| e.display_with(&self.variables).to_string())
            .collect()
    }
}
