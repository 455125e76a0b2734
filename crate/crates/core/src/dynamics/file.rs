//! JSON system definitions:
//!
//! ```json
//! { "name": "rot", "dim": 2, "variables": ["x1", "x2"],
//!   "equations": ["x2", ["neg", "x1"]],
//!   "domain": { "lower": [-1, -1], "upper": [1, 1] } }
//! ```
//!
//! Each equation is an infix string or a prefix token array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Domain, DynamicalSystem, DynamicsError};
use crate::expr::{parse_infix_with_names, Expr};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Equation {
    Infix(String),
    Prefix(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    pub equations: Vec<Equation>,
    pub domain: Domain,
}

impl SystemFile {
    pub fn into_system(self) -> Result<DynamicalSystem, DynamicsError> {
        let n = self.dim;
        let names = self
            .variables
            .unwrap_or_else(|| (1..=n).map(|i| format!("x{i}")).collect());
        if names.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: names.len(),
            });
        }
        if self.equations.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: self.equations.len(),
            });
        }
        if self.domain.dim() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: self.domain.dim(),
            });
        }
        let domain = Domain::new(self.domain.lower, self.domain.upper)?;
        let f = self
            .equations
            .iter()
            .enumerate()
            .map(|(i, eq)| {
                match eq {
                    Equation::Infix(s) => parse_infix_with_names(s, &names),
                    Equation::Prefix(toks) => Expr::from_prefix_strings(toks, n),
                }
                .map_err(|source| DynamicsError::Equation {
                    index: i + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DynamicalSystem::new(self.name, names, f, domain)
    }

    pub fn from_system(s: &DynamicalSystem) -> Self {
        SystemFile {
            name: s.name().to_string(),
            dim: s.dim(),
            variables: Some(s.variables().to_vec()),
            equations: s
                .components()
                .iter()
                .map(|e| Equation::Prefix(e.to_prefix_strings()))
                .collect(),
            domain: s.domain().clone(),
        }
    }
}

/// Reads and validates a system definition file.
pub fn load_system(path: &Path) -> Result<DynamicalSystem, DynamicsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DynamicsError::File(format!("{}: {e}", path.display())))?;
    let sf: SystemFile = serde_json::from_str(&text)
        .map_err(|e| DynamicsError::File(format!("{}: {e}", path.display())))?;
    sf.into_system()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark;

    #[test]
    fn mixed_equation_forms() {
        let js = r#"{"name":"rot","dim":2,"equations":["x2",["neg","x1"]],
                     "domain":{"lower":[-1,-1],"upper":[1,1]}}"#;
        let sf: SystemFile = serde_json::from_str(js).unwrap();
        let s = sf.into_system().unwrap();
        assert_eq!(s.components()[1], -Expr::var(0));
        assert_eq!(s.variables(), &["x1".to_string(), "x2".to_string()]);
    }

    #[test]
    fn named_variables_and_errors() {
        let js = r#"{"name":"p","dim":2,"variables":["theta","w"],
                     "equations":["w","-sin(theta) - 0.5*w"],
                     "domain":{"lower":[-1,-1],"upper":[1,1]}}"#;
        let s: SystemFile = serde_json::from_str(js).unwrap();
        assert!(s.into_system().is_ok());

        let js = r#"{"name":"p","dim":2,"equations":["x2","x1 +"],
                     "domain":{"lower":[-1,-1],"upper":[1,1]}}"#;
        let s: SystemFile = serde_json::from_str(js).unwrap();
        assert!(matches!(
            s.into_system(),
            Err(DynamicsError::Equation { index: 2, .. })
        ));
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = benchmark("trig3d").unwrap();
        let path = dir.path().join("trig.json");
        std::fs::write(&path, serde_json::to_string(&SystemFile::from_system(&s)).unwrap())
            .unwrap();
        let back = load_system(&path).unwrap();
        assert_eq!(back.components(), s.components());
        assert_eq!(back.domain(), s.domain());
    }
}
