//! Sound final check: interval branch-and-bound over the box, plus SMT-LIB2
//! export for external solvers.

mod bnb;
mod interval;
mod smt;

pub use bnb::{certify, certify_with_lie, CertVerdict, Certificate, CertifyConfig};
pub use interval::{interval_eval, Interval, IntervalProgram, PAD_ULPS};
pub use smt::{export_smtlib, smt_real, to_sexpr};
