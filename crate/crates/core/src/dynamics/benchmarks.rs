//! Built-in benchmark systems. Parameters are fixed here so that runs on a
//! named benchmark are reproducible; custom systems go through system files.

use super::{Domain, DynamicalSystem, DynamicsError};
use crate::expr::{parse_infix_with_names, Expr};

/// A registry entry. `entry` is the system's position (1-based) in the
/// benchmark suite; 0 marks auxiliary systems outside the suite.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub entry: usize,
    pub summary: &'static str,
    build: fn() -> DynamicalSystem,
}

impl Benchmark {
    pub fn system(&self) -> DynamicalSystem {
        (self.build)()
    }

    pub fn in_suite(&self) -> bool {
        self.entry > 0
    }
}

/// Number of suite entries. Entry 3 holds two variants of the 3-D
/// polynomial system.
pub const SUITE_ENTRIES: usize = 12;

pub fn registry() -> &'static [Benchmark] {
    const REG: &[Benchmark] = &[
        Benchmark {
            name: "van_der_pol",
            entry: 1,
            summary: "reversed Van der Pol oscillator, mu = 1, |x| <= 1",
            build: van_der_pol,
        },
        Benchmark {
            name: "poly_2d",
            entry: 2,
            summary: "2-D polynomial with quartic terms, |x| <= 1",
            build: poly_2d,
        },
        Benchmark {
            name: "poly_3d_i",
            entry: 3,
            summary: "3-D cubic polynomial system I, |x| <= 1",
            build: poly_3d_i,
        },
        Benchmark {
            name: "poly_3d_ii",
            entry: 3,
            summary: "3-D quartic polynomial system II, |x| <= 1",
            build: poly_3d_ii,
        },
        Benchmark {
            name: "coupled_6d",
            entry: 4,
            summary: "three damped oscillators with quadratic coupling, |x| <= 1",
            build: coupled_6d,
        },
        Benchmark {
            name: "coupled_8d",
            entry: 5,
            summary: "four damped oscillators with quadratic coupling, |x| <= 1",
            build: coupled_8d,
        },
        Benchmark {
            name: "coupled_10d",
            entry: 6,
            summary: "five damped oscillators with quadratic coupling, |x| <= 1",
            build: coupled_10d,
        },
        Benchmark {
            name: "pendulum",
            entry: 7,
            summary: "damped pendulum, g = l = m = 1, b = 0.1, |x1| <= pi, |x2| <= 6",
            build: pendulum,
        },
        Benchmark {
            name: "trig3d",
            entry: 8,
            summary: "3-D trigonometric system with h(x) = sin(x)cos(x), |x| <= 1.5",
            build: trig3d,
        },
        Benchmark {
            name: "power_3bus",
            entry: 9,
            summary: "lossless 3-bus swing dynamics, |delta| <= 0.75, |omega| <= 1.2",
            build: power_3bus,
        },
        Benchmark {
            name: "quadrotor",
            entry: 10,
            summary: "closed-loop quadrotor attitude, |x| <= 3",
            build: quadrotor,
        },
        Benchmark {
            name: "lossy_power_2bus",
            entry: 11,
            summary: "lossy 2-bus swing dynamics, |delta| <= 0.75, |omega| <= 2",
            build: lossy_power_2bus,
        },
        Benchmark {
            name: "synthetic_9d",
            entry: 12,
            summary: "6-D coupled oscillators linked to the trig subsystem, |x| <= 1.5",
            build: synthetic_9d,
        },
        Benchmark {
            name: "pendulum_damped",
            entry: 0,
            summary: "pendulum with g = 9.81, b/m = 0.2 (tokenizer reference)",
            build: pendulum_damped,
        },
    ];
    REG
}

/// Looks up a registered system by name.
pub fn benchmark(name: &str) -> Result<DynamicalSystem, DynamicsError> {
    registry()
        .iter()
        .find(|b| b.name == name)
        .map(Benchmark::system)
        .ok_or_else(|| DynamicsError::UnknownBenchmark(name.to_string()))
}

fn x_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn build(name: &str, names: Vec<String>, eqs: &[&str], domain: Domain) -> DynamicalSystem {
    let f = eqs
        .iter()
        .map(|s| parse_infix_with_names(s, &names).expect("built-in equation parses"))
        .collect();
    DynamicalSystem::new(name, names, f, domain).expect("built-in system is valid")
}

fn cube(name: &str, r: f64, eqs: &[&str]) -> DynamicalSystem {
    build(name, x_names(eqs.len()), eqs, Domain::cube(eqs.len(), r))
}

fn van_der_pol() -> DynamicalSystem {
    cube("van_der_pol", 1.0, &["x2", "-x1 - (1 - x1^2)*x2"])
}

fn poly_2d() -> DynamicalSystem {
    cube(
        "poly_2d",
        1.0,
        &["-5*x1^3 - 2*x1*x2^2", "-9*x1^4 + 3*x1^3*x2 - 4*x2^3"],
    )
}

fn poly_3d_i() -> DynamicalSystem {
    cube(
        "poly_3d_i",
        1.0,
        &["-3*x1^3 + 3*x1*x3 - 9*x1", "-x1^3 - 5*x2 + 5*x3^2", "-9*x3^3"],
    )
}

fn poly_3d_ii() -> DynamicalSystem {
    cube(
        "poly_3d_ii",
        1.0,
        &["-8*x1*x2^2 - 10*x2^4", "-8*x2^3 + 3*x2^2 - 8*x2", "-x3"],
    )
}

fn coupled_6d() -> DynamicalSystem {
    cube(
        "coupled_6d",
        1.0,
        &[
            "-x1 + 0.5*x2 - 0.1*x5^2",
            "-0.5*x1 - x2",
            "-x3 + 0.5*x4 - 0.1*x1^2",
            "-0.5*x3 - x4",
            "-x5 + 0.5*x6",
            "-0.5*x5 - x6 + 0.1*x2^2",
        ],
    )
}

fn coupled_8d() -> DynamicalSystem {
    cube(
        "coupled_8d",
        1.0,
        &[
            "-x1 + 0.5*x2 - 0.1*x5^2",
            "-0.5*x1 - x2",
            "-x3 + 0.5*x4 - 0.1*x1^2",
            "-0.5*x3 - x4",
            "-x5 + 0.5*x6 + 0.1*x7^2",
            "-0.5*x5 - x6",
            "-x7 + 0.5*x8",
            "-0.5*x7 - x8 - 0.1*x4^2",
        ],
    )
}

fn coupled_10d() -> DynamicalSystem {
    cube(
        "coupled_10d",
        1.0,
        &[
            "-x1 + 0.5*x2 - 0.1*x5^2",
            "-0.5*x1 - x2",
            "-x3 + 0.5*x4 - 0.1*x1^2",
            "-0.5*x3 - x4",
            "-x5 + 0.5*x6 + 0.1*x9^2",
            "-0.5*x5 - x6",
            "-x7 + 0.5*x8",
            "-0.5*x7 - x8",
            "-x9 + 0.5*x10",
            "-0.5*x9 - x10 - 0.1*x4^2",
        ],
    )
}

fn pendulum() -> DynamicalSystem {
    build(
        "pendulum",
        x_names(2),
        &["x2", "-sin(x1) - 0.1*x2"],
        Domain::symmetric(&[std::f64::consts::PI, 6.0]).unwrap(),
    )
}

fn pendulum_damped() -> DynamicalSystem {
    cube("pendulum_damped", 1.0, &["x2", "-9.81*sin(x1) + -0.2*x2"])
}

fn trig3d() -> DynamicalSystem {
    cube(
        "trig3d",
        1.5,
        &[
            "x2",
            "-sin(x1)*cos(x1) - x2 - sin(x3)*cos(x3)",
            "x2 - x3",
        ],
    )
}

fn quadrotor() -> DynamicalSystem {
    // I_x = I_y = 2, I_z = 5, l = J_R = 1, k = (5, 20, 4); the stabilizing
    // controller is substituted, Ω = sin(x2)cos(x4).
    cube(
        "quadrotor",
        3.0,
        &[
            "x2",
            "-1.5*x4*x6 - 0.5*x4*(sin(x2)*cos(x4)) - x1 - 2.5*x2",
            "x4",
            "1.5*x2*x6 + 0.5*x2*(sin(x2)*cos(x4)) - x3 - 10*x4",
            "x6",
            "-x5 - 0.8*x6",
        ],
    )
}

fn power_names(buses: usize) -> Vec<String> {
    (1..=buses)
        .map(|i| format!("delta{i}"))
        .chain((1..=buses).map(|i| format!("omega{i}")))
        .collect()
}

/// `ω_i − mean(ω)`: angle dynamics in center-of-inertia coordinates.
fn coi_angle_rate(buses: usize, i: usize) -> Expr {
    let mean = Expr::sum((0..buses).map(|j| Expr::var(buses + j))) * (1.0 / buses as f64);
    Expr::var(buses + i) - mean
}

fn power_3bus() -> DynamicalSystem {
    // m = 2, d = 1, u(ω) = ω, p = 0, B_ij = 1 (i ≠ j):
    // 2 ω̇_i = −2 ω_i − Σ_{j≠i} sin(δ_i − δ_j).
    let names = power_names(3);
    let mut f: Vec<Expr> = (0..3).map(|i| coi_angle_rate(3, i)).collect();
    for eq in [
        "-omega1 - 0.5*(sin(delta1 - delta2) + sin(delta1 - delta3))",
        "-omega2 - 0.5*(sin(delta2 - delta1) + sin(delta2 - delta3))",
        "-omega3 - 0.5*(sin(delta3 - delta1) + sin(delta3 - delta2))",
    ] {
        f.push(parse_infix_with_names(eq, &names).expect("built-in equation parses"));
    }
    let domain = Domain::symmetric(&[0.75, 0.75, 0.75, 1.2, 1.2, 1.2]).unwrap();
    DynamicalSystem::new("power_3bus", names, f, domain).expect("built-in system is valid")
}

fn lossy_power_2bus() -> DynamicalSystem {
    // p = 1, m = 2, d = 1, u(ω) = ω, B = G = 1 off-diagonal:
    // 2 ω̇_i = 1 − 2 ω_i − sin(δ_i − δ_j) − cos(δ_i − δ_j).
    // The injection p = 1 exactly balances cos(0) = 1, so f(0) = 0 holds.
    let names = power_names(2);
    let mut f: Vec<Expr> = (0..2).map(|i| coi_angle_rate(2, i)).collect();
    for eq in [
        "0.5*(1 - 2*omega1 - sin(delta1 - delta2) - cos(delta1 - delta2))",
        "0.5*(1 - 2*omega2 - sin(delta2 - delta1) - cos(delta2 - delta1))",
    ] {
        f.push(parse_infix_with_names(eq, &names).expect("built-in equation parses"));
    }
    let domain = Domain::symmetric(&[0.75, 0.75, 2.0, 2.0]).unwrap();
    DynamicalSystem::new("lossy_power_2bus", names, f, domain)
        .expect("built-in system is valid")
        .with_note(
            "net injection p_i = 1 is kept: with G_ij = 1 the conductance term \
             cos(delta_i - delta_j) equals 1 at the origin and cancels it, so \
             the origin is an equilibrium",
        )
}

fn synthetic_9d() -> DynamicalSystem {
    cube(
        "synthetic_9d",
        1.5,
        &[
            "-x1 + 0.5*x2 - 0.1*x5^2",
            "-0.5*x1 - x2 + 0.1*x8",
            "-x3 + 0.5*x4 - 0.1*x1^2",
            "-0.5*x3 - x4",
            "-x5 + 0.5*x6",
            "-0.5*x5 - x6 + 0.1*x2^2",
            "x8",
            "-sin(x7)*cos(x7) - x8 - sin(x9)*cos(x9) - 0.1*x2",
            "x8 - x9",
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_infix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_entry_builds_with_equilibrium_at_origin() {
        for b in registry() {
            let s = b.system();
            assert_eq!(s.name(), b.name);
            for v in s.eval(&vec![0.0; s.dim()]) {
                assert!(v.abs() <= 1e-9, "{}: {v}", b.name);
            }
        }
    }

    #[test]
    fn suite_covers_every_section() {
        for e in 1..=SUITE_ENTRIES {
            assert!(registry().iter().any(|b| b.entry == e), "{e}");
        }
        assert_eq!(registry().iter().filter(|b| b.in_suite()).count(), 13);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            benchmark("nosuch"),
            Err(DynamicsError::UnknownBenchmark(_))
        ));
    }

    #[test]
    fn documented_domains() {
        let p = benchmark("pendulum").unwrap();
        assert_eq!(p.domain().upper, vec![std::f64::consts::PI, 6.0]);
        let l = benchmark("lossy_power_2bus").unwrap();
        assert_eq!(l.domain().upper, vec![0.75, 0.75, 2.0, 2.0]);
        assert!(l.note().is_some());
        let v = benchmark("van_der_pol").unwrap();
        assert_eq!(v.domain().lower, vec![-1.0, -1.0]);
    }

    /// Hand-expanded closed forms against the registered equations.
    #[test]
    fn closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let check = |name: &str, oracle: &dyn Fn(&[f64]) -> Vec<f64>, rng: &mut ChaCha8Rng| {
            let s = benchmark(name).unwrap();
            let pts = s.domain().sample(200, rng);
            for row in pts.rows() {
                let x = row.to_vec();
                let got = s.eval(&x);
                let want = oracle(&x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{name} at {x:?}");
                }
            }
        };
        check(
            "van_der_pol",
            &|x| vec![x[1], -x[0] - (1.0 - x[0] * x[0]) * x[1]],
            &mut rng,
        );
        check(
            "pendulum",
            &|x| vec![x[1], -x[0].sin() - 0.1 * x[1]],
            &mut rng,
        );
        check(
            "quadrotor",
            &|x| {
                let om = x[1].sin() * x[3].cos();
                vec![
                    x[1],
                    -1.5 * x[3] * x[5] - 0.5 * x[3] * om - x[0] - 2.5 * x[1],
                    x[3],
                    1.5 * x[1] * x[5] + 0.5 * x[1] * om - x[2] - 10.0 * x[3],
                    x[5],
                    -x[4] - 0.8 * x[5],
                ]
            },
            &mut rng,
        );
        check(
            "lossy_power_2bus",
            &|x| {
                let (d, w) = (x[0] - x[1], [x[2], x[3]]);
                let m = 0.5 * (w[0] + w[1]);
                vec![
                    w[0] - m,
                    w[1] - m,
                    0.5 * (1.0 - 2.0 * w[0] - d.sin() - d.cos()),
                    0.5 * (1.0 - 2.0 * w[1] + d.sin() - d.cos()),
                ]
            },
            &mut rng,
        );
    }

    #[test]
    fn lossless_energy_dissipates_at_twice_kinetic_rate() {
        let s = benchmark("power_3bus").unwrap();
        let v = parse_infix_with_names(
            "omega1^2 + omega2^2 + omega3^2 - 0.5*(cos(delta1 - delta2) + cos(delta1 - delta3) \
             + cos(delta2 - delta1) + cos(delta2 - delta3) + cos(delta3 - delta1) \
             + cos(delta3 - delta2) - 1)",
            s.variables(),
        )
        .unwrap();
        let l = s.lie_derivative(&v).unwrap();
        let oracle = parse_infix("-2*(x4^2 + x5^2 + x6^2)", 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for row in s.domain().sample(500, &mut rng).rows() {
            let x = row.to_vec();
            let (a, b) = (l.eval(&x), oracle.eval(&x));
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
