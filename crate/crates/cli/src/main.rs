use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use lyapfind_core::certifier::{certify, export_smtlib, CertVerdict, CertifyConfig};
use lyapfind_core::dynamics::{load_system, registry, tokenize_system};
use lyapfind_core::expr::parse_infix_with_names;
use lyapfind_core::falsifier::{verify_candidate, FalsifierConfig, FalsifierMode, Verdict};
use lyapfind_core::policy::{load_checkpoint, save_checkpoint};
use lyapfind_core::trainer::{ablation_runs, train_with, Outcome, TrainRunConfig, ABLATIONS};
use lyapfind_core::{benchmark, rng, DynamicalSystem, Expr};
use serde::Serialize;

mod manifest;

use manifest::{fingerprint, RunManifest, RunPaths};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "LYAPFIND_OUT";

const EXIT_NOT_FOUND: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(name = "lyapfind", version, about = "Search for analytical Lyapunov functions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the discovery loop on a system.
    Discover {
        /// Benchmark name or path to a system JSON file.
        system: String,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Prove (or refute) a candidate with interval branch-and-bound.
    Certify {
        system: String,
        expr: String,
        #[command(flatten)]
        cert: CertOpts,
    },
    /// Search a candidate for counterexamples.
    Falsify {
        system: String,
        expr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "shgo")]
        falsifier: FalsifierMode,
        #[arg(long, default_value_t = 0.05)]
        radius: f64,
    },
    /// Print the encoder token stream of a system.
    Tokenize { system: String },
    /// List or run benchmark systems and ablation studies.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Write the negated Lyapunov conditions as an SMT-LIB2 script.
    ExportSmt {
        system: String,
        expr: String,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-12)]
        delta: f64,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// List the suite systems and ablation studies.
    List,
    /// Run a system (all seeds) or an ablation such as `ablation/alpha-sweep`.
    Run {
        target: String,
        /// System for ablation runs.
        #[arg(long, default_value = "trig3d")]
        system: String,
        /// Number of seeds, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[command(flatten)]
        run: RunOpts,
    },
}

#[derive(Args, Clone)]
struct RunOpts {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when no config file is given: `desk` or `full`.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    falsifier: Option<FalsifierMode>,
    /// Disable GP refinement (and with it expert guidance).
    #[arg(long)]
    no_gp: bool,
    #[arg(long)]
    no_expert: bool,
    /// Let the policy sample integer constants.
    #[arg(long)]
    constants: bool,
    /// Wall-clock cap per run in seconds.
    #[arg(long)]
    wall_clock: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Start from a saved policy.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory (default: `$LYAPFIND_OUT` or `runs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CertOpts {
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 1e-12)]
    delta: f64,
    #[arg(long, default_value_t = 2_000_000)]
    max_boxes: u64,
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
}

/// An error with its exit status.
struct Fail(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail(EXIT_CONFIG, e.into())
    }
}

fn parse_err(e: impl Into<anyhow::Error>) -> Fail {
    Fail(EXIT_PARSE, e.into())
}

fn config_err(msg: String) -> Fail {
    Fail(EXIT_CONFIG, anyhow::anyhow!(msg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, Fail> {
    match cmd {
        Cmd::Discover { system, run } => {
            let f = resolve_system(&system)?;
            let cfg = resolve_config(&run)?;
            let dir = out_root(&run).join(format!("{}-seed{}", f.name(), cfg.seed));
            let outcome = discover(&f, &cfg, &dir, run.resume.as_deref())?;
            Ok(if outcome.found().is_some() { 0 } else { EXIT_NOT_FOUND })
        }
        Cmd::Certify { system, expr, cert } => {
            let f = resolve_system(&system)?;
            let v = parse_expr(&expr, &f)?;
            let cfg = CertifyConfig {
                eps: cert.eps,
                delta: cert.delta,
                max_boxes: cert.max_boxes,
                time_limit_s: cert.time_limit,
            };
            let c = certify(&v, &f, &cfg);
            print_json(&c)?;
            Ok(match c.verdict {
                CertVerdict::Certified => 0,
                CertVerdict::Counterexample { .. } => EXIT_NOT_FOUND,
                CertVerdict::BudgetExhausted => EXIT_BUDGET,
            })
        }
        Cmd::Falsify {
            system,
            expr,
            seed,
            falsifier,
            radius,
        } => {
            let f = resolve_system(&system)?;
            let v = parse_expr(&expr, &f)?;
            let cfg = FalsifierConfig {
                mode: falsifier,
                radius_frac: radius,
                ..FalsifierConfig::default()
            };
            let rep = verify_candidate(&v, &f, &cfg, &mut rng::stream(seed, &[]));
            print_json(&rep)?;
            Ok(if rep.verdict == Verdict::NumericallyValid { 0 } else { EXIT_NOT_FOUND })
        }
        Cmd::Tokenize { system } => {
            let f = resolve_system(&system)?;
            println!("{}", tokenize_system(&f));
            Ok(0)
        }
        Cmd::Bench { cmd: BenchCmd::List } => {
            bench_list();
            Ok(0)
        }
        Cmd::Bench {
            cmd:
                BenchCmd::Run {
                    target,
                    system,
                    seeds,
                    run,
                },
        } => bench_run(&target, &system, seeds, &run),
        Cmd::ExportSmt {
            system,
            expr,
            eps,
            delta,
            out,
        } => {
            let f = resolve_system(&system)?;
            let v = parse_expr(&expr, &f)?;
            let s = export_smtlib(&v, &f, f.domain(), eps, delta);
            match out {
                Some(p) => fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{s}"),
            }
            Ok(0)
        }
    }
}

fn resolve_system(r: &str) -> Result<DynamicalSystem, Fail> {
    let p = Path::new(r);
    if p.extension().is_some_and(|e| e == "json") || p.is_file() {
        return load_system(p).map_err(parse_err);
    }
    benchmark(r).map_err(parse_err)
}

fn parse_expr(src: &str, f: &DynamicalSystem) -> Result<Expr, Fail> {
    parse_infix_with_names(src, f.variables()).map_err(parse_err)
}

fn out_root(run: &RunOpts) -> PathBuf {
    run.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve_config(run: &RunOpts) -> Result<TrainRunConfig, Fail> {
    let mut cfg = match &run.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => match run.preset.as_str() {
            "desk" => TrainRunConfig::desk(),
            "full" => TrainRunConfig::default(),
            other => return Err(config_err(format!("unknown preset `{other}` (expected desk or full)"))),
        },
    };
    apply_overrides(&mut cfg, run);
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut TrainRunConfig, run: &RunOpts) {
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(e) = run.epochs {
        cfg.epochs = e;
    }
    if let Some(a) = run.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = run.batch {
        cfg.batch = b;
    }
    if let Some(k) = run.kmax {
        cfg.k_max = k;
        cfg.gp.k_max = k;
    }
    if let Some(r) = run.radius {
        cfg.radius_frac = r;
    }
    if let Some(m) = run.falsifier {
        cfg.falsifier = m;
    }
    if run.no_gp {
        cfg.gp_refine = false;
        cfg.expert_guidance = false;
    }
    if run.no_expert {
        cfg.expert_guidance = false;
    }
    if run.constants {
        cfg.constants_in_policy = true;
    }
    if let Some(w) = run.wall_clock {
        cfg.wall_clock_s = w;
    }
    if let Some(c) = run.checkpoint_every {
        cfg.checkpoint_every = c;
    }
}

#[derive(Serialize)]
struct Found<'a> {
    system: &'a str,
    expression: String,
    prefix: Vec<String>,
    raw: String,
    reward: f64,
    epoch: usize,
    origin: lyapfind_core::trainer::Origin,
    certificate: &'a lyapfind_core::certifier::Certificate,
}

/// One discovery run into `dir`. Returns the outcome.
fn discover(f: &DynamicalSystem, cfg: &TrainRunConfig, dir: &Path, resume: Option<&Path>) -> Result<Outcome, Fail> {
    fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;
    let paths = RunPaths::new(dir);
    let manifest = RunManifest {
        system: f.name().to_string(),
        fingerprint: fingerprint(&tokenize_system(f)),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        paths: paths.clone(),
    };
    fs::write(&paths.manifest, serde_json::to_string_pretty(&manifest)? + "\n")?;
    let policy = match resume {
        Some(p) => {
            let pol = load_checkpoint(p).map_err(|e| config_err(e.to_string()))?;
            if pol.dim() != f.dim() {
                return Err(config_err(format!(
                    "checkpoint is for a {}-dimensional system, not {}",
                    pol.dim(),
                    f.dim()
                )));
            }
            Some(pol)
        }
        None => None,
    };

    let mut log = fs::File::create(&paths.epochs)?;
    let mut times = fs::File::create(&paths.timings)?;
    let mut io_err: Option<std::io::Error> = None;
    let every = cfg.checkpoint_every;
    let ckdir = dir.join("checkpoints");
    let res = train_with(f, cfg, policy, &mut |rec, pol| {
        let mut step = || -> std::io::Result<()> {
            writeln!(log, "{}", serde_json::to_string(rec)?)?;
            writeln!(times, "{{\"epoch\":{},\"wall_time_s\":{:.3}}}", rec.epoch, rec.wall_time_s)?;
            if every > 0 && (rec.epoch + 1) % every == 0 {
                save_checkpoint(pol, &ckdir.join(format!("epoch-{:05}.ckpt", rec.epoch + 1)))
                    .map_err(|e| std::io::Error::other(e.to_string()))?;
            }
            Ok(())
        };
        if io_err.is_none() {
            io_err = step().err();
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_checkpoint(&res.policy, &ckdir.join("final.ckpt")).map_err(|e| config_err(e.to_string()))?;

    let names = f.variables();
    match &res.outcome {
        Outcome::Found(d) => {
            let found = Found {
                system: f.name(),
                expression: d.expr.display_with(names).to_string(),
                prefix: d.expr.to_prefix_strings(),
                raw: d.raw.display_with(names).to_string(),
                reward: d.reward,
                epoch: d.epoch,
                origin: d.origin,
                certificate: &d.certificate,
            };
            fs::write(&paths.found, serde_json::to_string_pretty(&found)? + "\n")?;
            println!("found V = {} at epoch {} ({})", found.expression, d.epoch, dir.display());
        }
        Outcome::Exhausted { best, reason } => {
            let b = best
                .as_ref()
                .map_or_else(|| "none".to_string(), |b| format!("{} (reward {:.6})", b.expr.display_with(names), b.reward));
            println!("no certified function ({reason:?}); best candidate: {b} ({})", dir.display());
        }
    }
    Ok(res.outcome)
}

fn bench_list() {
    let mut entries: Vec<_> = registry().iter().filter(|b| b.in_suite()).collect();
    entries.sort_by_key(|b| b.entry);
    let mut last = 0;
    for b in entries {
        let f = b.system();
        let tag = if b.entry == last { "  ".to_string() } else { format!("{:2}", b.entry) };
        last = b.entry;
        println!("{tag} {:<18} {}-D  {}", b.name, f.dim(), b.summary);
    }
    for a in ABLATIONS {
        println!("   ablation/{a}");
    }
}

#[derive(Serialize)]
struct BenchLine<'a> {
    target: &'a str,
    label: &'a str,
    system: &'a str,
    seed: u64,
    found: bool,
    epochs: usize,
    best_reward: f64,
    expression: Option<String>,
}

fn bench_run(target: &str, system: &str, seeds: u64, run: &RunOpts) -> Result<u8, Fail> {
    let base = resolve_config(run)?;
    let (system, runs) = match target.strip_prefix("ablation/") {
        Some(name) => {
            let runs = ablation_runs(name, &base)
                .ok_or_else(|| config_err(format!("unknown ablation `{name}` (expected one of {ABLATIONS:?})")))?;
            (system, runs)
        }
        None => (target, vec![("default".to_string(), base.clone())]),
    };
    let f = resolve_system(system)?;
    let root = out_root(run).join("bench").join(target.replace('/', "-"));
    fs::create_dir_all(&root)?;
    let mut summary = fs::File::create(root.join("summary.jsonl"))?;
    for (label, cfg) in &runs {
        // Flags given explicitly still win over the ablation's settings.
        let mut cfg = cfg.clone();
        if run.epochs.is_some() {
            cfg.epochs = run.epochs.unwrap();
        }
        for k in 0..seeds {
            cfg.seed = base.seed + k;
            let dir = root.join(label.replace(['=', '+'], "_")).join(format!("seed{}", cfg.seed));
            let outcome = discover(&f, &cfg, &dir, run.resume.as_deref())?;
            let records = fs::read_to_string(dir.join("epochs.jsonl"))?;
            let (epochs, best) = records
                .lines()
                .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
                .fold((0, 0.0f64), |(n, b), v| (n + 1, b.max(v["best_reward"].as_f64().unwrap_or(0.0))));
            let line = BenchLine {
                target,
                label,
                system: f.name(),
                seed: cfg.seed,
                found: outcome.found().is_some(),
                epochs,
                best_reward: best,
                expression: outcome.found().map(|d| d.expr.display_with(f.variables()).to_string()),
            };
            let s = serde_json::to_string(&line)?;
            writeln!(summary, "{s}")?;
            println!("{s}");
        }
    }
    Ok(0)
}

fn print_json<T: Serialize>(v: &T) -> Result<(), Fail> {
    let s = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
