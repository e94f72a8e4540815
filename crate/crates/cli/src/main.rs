use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use entroscope::approximator::{approx_chain, approx_hk, ApproxConfig};
use entroscope::checks::{run_suite, CheckConfig, Suite, SuiteReport};
use entroscope::counterexamples::{remark3_witness, remark4_report, BlockSequenceSpec};
use entroscope::ensembles::load_ensemble;
use entroscope::entropy::{entropy_h, entropy_s, rel_entropy};
use entroscope::linalg::load_matrix;
use entroscope::ua_sweep::{make_family, ua_sweep, FamilySpec, FAMILY_GRAMMAR};
use entroscope::Error;

const WITNESSES: [&str; 2] = ["remark3", "remark4"];

#[derive(Parser)]
#[command(name = "entroscope", version, about = "Entropy approximation toolkit")]
struct Cli {
    /// Also print a human-readable summary to stderr.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// S, H, trace and spectrum of a matrix; with a second matrix also H(A||B).
    Entropy(EntropyArgs),
    /// Estimate H_k and the gap Δ_k of a matrix.
    Approx(ApproxArgs),
    /// Empirical supremum of the gaps over an operator family.
    Sweep(SweepArgs),
    /// Run a randomized invariant suite.
    Check(CheckArgs),
    /// Emit a counterexample report (remark3 or remark4).
    Witness(WitnessArgs),
}

#[derive(Args, Serialize)]
struct EntropyArgs {
    matrix: PathBuf,
    second: Option<PathBuf>,
    /// Show values in bits in the --pretty summary (JSON stays in nats).
    #[arg(long)]
    bits: bool,
}

#[derive(Args, Serialize)]
struct ApproxArgs {
    matrix: PathBuf,
    /// Rank cap; with --chain, the largest k of the chain.
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Run k = 1..=K, seeding each level with the previous best ensemble.
    #[arg(long)]
    chain: bool,
    /// Ensemble file offered as an extra seed (repeatable).
    #[arg(long = "seed-ensemble")]
    seed_ensembles: Vec<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    family: String,
    #[arg(long)]
    dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 3)]
    max_iters: usize,
    #[arg(long)]
    m: Option<usize>,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CheckArgs {
    #[arg(long, default_value = "all")]
    suite: String,
    /// Trials per invariant (default: each invariant's own count).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 50)]
    oracle_trials: usize,
    /// Largest dimension drawn.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replaces every non-oracle tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Serialize)]
struct WitnessArgs {
    name: String,
    /// Block dimensions for remark4.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    dims: Vec<usize>,
    /// Mixing weights for remark4 (padded with zeros).
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.2")]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 40)]
    exhibit_max_dim: usize,
}

#[derive(Serialize)]
struct Sidecar {
    wall_time_ms: f64,
}

#[derive(Serialize)]
struct RunRecord {
    command: &'static str,
    params: Value,
    seed: Option<u64>,
    version: &'static str,
    payload: Value,
    sidecar: Sidecar,
}

struct Outcome {
    payload: Value,
    summary: String,
    /// Set when the run completed but an invariant failed.
    failure: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let start = Instant::now();
    let (name, params, seed, result) = match &cli.command {
        Command::Entropy(a) => ("entropy", json!(a), None, cmd_entropy(a)),
        Command::Approx(a) => ("approx", json!(a), Some(a.seed), cmd_approx(a)),
        Command::Sweep(a) => ("sweep", json!(a), Some(a.seed), cmd_sweep(a)),
        Command::Check(a) => ("check", json!(a), Some(a.seed), cmd_check(a)),
        Command::Witness(a) => ("witness", json!(a), None, cmd_witness(a)),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                Error::Io(_) => 3,
                _ => 2,
            });
        }
    };
    let record = RunRecord {
        command: name,
        params,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        payload: outcome.payload,
        sidecar: Sidecar {
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    match serde_json::to_string(&record) {
        Ok(text) => println!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    if cli.pretty {
        eprint!("{}", outcome.summary);
    }
    match outcome.failure {
        Some(msg) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(1)
        }
        None => ExitCode::SUCCESS,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ENTROSCOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("invalid ENTROSCOPE_THREADS: cannot parse '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn ok(payload: Value, summary: String) -> Result<Outcome, Error> {
    Ok(Outcome {
        payload,
        summary,
        failure: None,
    })
}

fn cmd_entropy(a: &EntropyArgs) -> Result<Outcome, Error> {
    let m = load_matrix(&a.matrix)?;
    let scale = if a.bits { 1.0 / std::f64::consts::LN_2 } else { 1.0 };
    let unit = if a.bits { "bits" } else { "nats" };
    let (s, h) = (entropy_s(&m), entropy_h(&m));
    let mut payload = json!({
        "dim": m.dim(),
        "trace": m.trace(),
        "rank": m.rank(),
        "spectrum": m.eigenvalues(),
        "entropy_s": s,
        "entropy_h": h,
    });
    let mut summary = format!(
        "dim {}  trace {:.6}  S {:.6} {unit}  H {:.6} {unit}\n",
        m.dim(),
        m.trace(),
        s * scale,
        h * scale
    );
    if let Some(path) = &a.second {
        let b = load_matrix(path)?;
        let rel = rel_entropy(&m, &b)?;
        payload["relative_entropy"] = json!(rel);
        let shown = rel.finite().map_or("inf".to_string(), |v| format!("{:.6}", v * scale));
        summary.push_str(&format!("H(A||B) {shown} {unit}\n"));
    }
    ok(payload, summary)
}

fn cmd_approx(a: &ApproxArgs) -> Result<Outcome, Error> {
    let m = load_matrix(&a.matrix)?;
    let mut cfg = ApproxConfig::new(a.k)
        .with_restarts(a.restarts)
        .with_seed(a.seed)
        .with_max_iters(a.max_iters);
    cfg.m = a.m;
    for path in &a.seed_ensembles {
        cfg = cfg.with_extra_seed(load_ensemble(path)?);
    }
    if a.chain {
        let chain = approx_chain(&m, a.k, &cfg)?;
        let summary = chain
            .iter()
            .map(|r| format!("k {}  hk {:.9}  delta_hat {:.9}  delta_tilde {:.9}\n", r.k, r.hk_lower, r.delta_hat, r.delta_tilde))
            .collect();
        return ok(json!({ "chain": chain }), summary);
    }
    let r = approx_hk(&m, &cfg)?;
    let summary = format!(
        "k {}  H {:.9}  hk {:.9}  delta_hat {:.9}  delta_tilde {:.9}  source {:?}\n",
        r.k, r.entropy, r.hk_lower, r.delta_hat, r.delta_tilde, r.best_source
    );
    ok(serde_json::to_value(&r)?, summary)
}

fn cmd_sweep(a: &SweepArgs) -> Result<Outcome, Error> {
    let spec: FamilySpec = a.family.parse().map_err(|e: Error| {
        Error::Validation {
            field: "family".into(),
            reason: format!("{e}\n{FAMILY_GRAMMAR}"),
        }
    })?;
    let family = make_family(spec, a.dim)?;
    let mut cfg = ApproxConfig::new(1)
        .with_restarts(a.restarts)
        .with_seed(a.seed)
        .with_max_iters(a.max_iters);
    cfg.m = a.m;
    let table = ua_sweep(&family, &a.ks, a.samples, &cfg)?;
    let csv = table.to_csv();
    if let Some(path) = &a.csv {
        std::fs::write(path, &csv)?;
    }
    ok(serde_json::to_value(&table)?, csv)
}

fn cmd_check(a: &CheckArgs) -> Result<Outcome, Error> {
    let suite: Suite = a.suite.parse()?;
    let cfg = CheckConfig {
        trials: a.trials,
        oracle_trials: a.oracle_trials,
        max_dim: a.dim,
        seed: a.seed,
        tol: a.tol,
        ..CheckConfig::default()
    };
    let reports = run_suite(suite, &cfg)?;
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.invariants
                .iter()
                .filter(|o| !o.ok())
                .map(move |o| format!("{}/{}", r.suite, o.name))
        })
        .collect();
    let summary = reports.iter().map(suite_table).collect();
    Ok(Outcome {
        payload: json!({ "all_passed": failed.is_empty(), "suites": reports }),
        summary,
        failure: (!failed.is_empty()).then(|| failed.join(", ")),
    })
}

fn suite_table(r: &SuiteReport) -> String {
    let mut out = format!("[{}]\n", r.suite);
    for o in &r.invariants {
        out.push_str(&format!(
            "  {} {:<32} {:>4}/{:<4} worst {:>12.3e}  tol {:.0e}\n",
            if o.ok() { "PASS" } else { "FAIL" },
            o.name,
            o.passed,
            o.trials,
            o.worst_slack,
            o.tolerance
        ));
    }
    out
}

fn cmd_witness(a: &WitnessArgs) -> Result<Outcome, Error> {
    match a.name.as_str() {
        "remark3" => {
            let r = remark3_witness()?;
            let summary = format!(
                "H(rho) {:.6}  ensemble {:.6}  tilde {:.6}  hat {:.6}  strict gap {}\n",
                r.h_rho, r.ensemble_value, r.delta_tilde_2, r.delta_hat_2, r.strict_gap_confirmed
            );
            let failure = (!r.strict_gap_confirmed).then(|| "strict gap not confirmed".to_string());
            Ok(Outcome {
                payload: serde_json::to_value(&r)?,
                summary,
                failure,
            })
        }
        "remark4" => {
            let spec = BlockSequenceSpec::new(a.dims.clone(), a.weights.clone())?;
            let r = remark4_report(&spec, a.exhibit_max_dim)?;
            let summary = format!(
                "closed form {:.12}  direct {:.12}  diff {:.2e}  exhibit holds {}\n",
                r.closed_form, r.direct, r.abs_diff, r.exhibit.holds
            );
            let failure = (!r.matches || !r.exhibit.holds).then(|| "closed form or exhibit mismatch".to_string());
            Ok(Outcome {
                payload: serde_json::to_value(&r)?,
                summary,
                failure,
            })
        }
        other => Err(Error::Validation {
            field: "name".into(),
            reason: format!("unknown witness '{other}'; expected one of {}", WITNESSES.join(", ")),
        }),
    }
}
