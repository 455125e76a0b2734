//! Shared fixtures for the criterion benches.

use lyapfind_core::expr::parse_infix;
use lyapfind_core::gp::random_tree;
use lyapfind_core::library::Library;
use lyapfind_core::{benchmark, rng, DynamicalSystem, Expr};

/// A candidate and its system, as seen by the verification kernels.
pub struct Fixture {
    pub system: DynamicalSystem,
    pub v: Expr,
}

pub fn fixture(system: &str, v: &str) -> Fixture {
    let system = benchmark(system).expect("registered system");
    let v = parse_infix(v, system.dim()).expect("fixture parses");
    Fixture { system, v }
}

/// `count` random trees of depth at most `depth` over `n` variables.
pub fn random_population(n: usize, depth: usize, count: usize, seed: u64) -> Vec<Expr> {
    let lib = Library::new(n, true);
    let mut r = rng::stream(seed, &[]);
    (0..count).map(|_| random_tree(&lib, depth, &mut r)).collect()
}
