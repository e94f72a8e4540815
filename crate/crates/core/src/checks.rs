//! Randomized invariant suites.
//!
//! Each invariant is evaluated on independent seeded trials. A trial yields a
//! signed slack: for `lhs <= rhs` it is `lhs - rhs`, for an identity it is
//! `|lhs - rhs|`. A trial passes when the slack is finite and at most the
//! invariant's tolerance.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::approximator::{approx_chain, approx_hk, oracle_delta, ApproxConfig, ApproxResult};
use crate::counterexamples::{
    blockdiag_entropy_closed_form, blockdiag_entropy_direct, discontinuity_exhibit,
    remark3_witness, BlockSequenceSpec,
};
use crate::ensembles::{
    ensemble_gap, hjw_ensemble, perturb_ensemble, push_ensemble, spectral_coarse_ensemble,
    sum_product, BlockPlan, Ensemble,
};
use crate::entropy::{
    classical_h, classical_h_raw, coarse_grain, entropy_h, entropy_s, eta0, h2, rel_entropy,
    uhlmann_less_chaotic, WeightSequence,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    derive_seed, frobenius, operator_norm, random_contraction, random_positive_with,
    random_stiefel_with, random_unitary, substream, CMatrix, KrausOperation, PositiveOperator, Rng,
};
use crate::ua_sweep::{l1_ball_sup, l1_objective, lambda_star};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    EntropyIdentities,
    Lemma6,
    Lemma11,
    Glo,
    Ensembles,
    Counterexamples,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = [
        "entropy-identities",
        "lemma6",
        "lemma11",
        "glo",
        "ensembles",
        "counterexamples",
        "all",
    ];

    const CONCRETE: [Suite; 6] = [
        Suite::EntropyIdentities,
        Suite::Lemma6,
        Suite::Lemma11,
        Suite::Glo,
        Suite::Ensembles,
        Suite::Counterexamples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::EntropyIdentities => "entropy-identities",
            Suite::Lemma6 => "lemma6",
            Suite::Lemma11 => "lemma11",
            Suite::Glo => "glo",
            Suite::Ensembles => "ensembles",
            Suite::Counterexamples => "counterexamples",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::CONCRETE
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                invalid(
                    "suite",
                    format!("unknown suite '{s}'; expected one of {}", Suite::NAMES.join(", ")),
                )
            })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckConfig {
    /// Trials per invariant; `None` uses each invariant's default count.
    pub trials: Option<usize>,
    /// Trials for invariants that call the brute-force oracle.
    pub oracle_trials: usize,
    /// Largest dimension drawn; `None` uses each suite's default.
    pub max_dim: Option<usize>,
    pub seed: u64,
    /// Replaces every non-oracle tolerance when set.
    pub tol: Option<f64>,
    /// Restarts for estimator runs inside the suites.
    pub restarts: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            trials: None,
            oracle_trials: 50,
            max_dim: None,
            seed: 0,
            tol: None,
            restarts: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantOutcome {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    pub failed: usize,
    pub worst_slack: f64,
    pub tolerance: f64,
}

impl InvariantOutcome {
    pub fn ok(&self) -> bool {
        self.failed == 0 && self.trials > 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub invariants: Vec<InvariantOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(InvariantOutcome::ok)
    }

    pub fn get(&self, name: &str) -> Option<&InvariantOutcome> {
        self.invariants.iter().find(|o| o.name == name)
    }
}

struct Tally {
    out: InvariantOutcome,
}

impl Tally {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            out: InvariantOutcome {
                name: name.to_string(),
                trials: 0,
                passed: 0,
                failed: 0,
                worst_slack: f64::NEG_INFINITY,
                tolerance,
            },
        }
    }

    fn record(&mut self, slack: f64) {
        let o = &mut self.out;
        o.trials += 1;
        if slack.is_finite() && slack <= o.tolerance {
            o.passed += 1;
        } else {
            o.failed += 1;
        }
        o.worst_slack = if slack.is_nan() { f64::NAN } else { o.worst_slack.max(slack) };
    }

    fn pass_if(&mut self, ok: bool) {
        self.record(if ok { 0.0 } else { f64::INFINITY });
    }
}

/// Per-suite driver: tolerance override, seeded trial streams, collected outcomes.
struct Runner<'a> {
    cfg: &'a CheckConfig,
    suite: Suite,
    outcomes: Vec<InvariantOutcome>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a CheckConfig, suite: Suite) -> Self {
        Self {
            cfg,
            suite,
            outcomes: Vec::new(),
        }
    }

    fn trials(&self, default: usize) -> usize {
        self.cfg.trials.unwrap_or(default)
    }

    fn tol(&self, default: f64) -> f64 {
        self.cfg.tol.unwrap_or(default)
    }

    fn stream(&self, name: &str, trial: usize) -> Rng {
        let tag = name
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        substream(derive_seed(self.cfg.seed, tag), trial as u64)
    }

    /// Runs `trials` trials of one invariant; `body` returns the slack.
    fn invariant(
        &mut self,
        name: &str,
        tolerance: f64,
        trials: usize,
        mut body: impl FnMut(&mut Rng, usize) -> Result<f64>,
    ) -> Result<()> {
        let mut tally = Tally::new(name, tolerance);
        for t in 0..trials {
            let mut rng = self.stream(name, t);
            tally.record(body(&mut rng, t)?);
        }
        self.outcomes.push(tally.out);
        Ok(())
    }

    fn push(&mut self, tally: Tally) {
        self.outcomes.push(tally.out);
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.suite.name().to_string(),
            seed: self.cfg.seed,
            invariants: self.outcomes,
        }
    }
}

fn dim_in(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi.max(lo))
}

fn dirichlet(rng: &mut Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random positive operator with random rank and trace in `[0.2, 3]`.
fn random_operator(rng: &mut Rng, dim: usize) -> Result<PositiveOperator> {
    let rank = rng.random_range(1..=dim);
    let trace = rng.random_range(0.2..3.0);
    Ok(random_positive_with(dim, rank, rng)?.scaled(trace))
}

fn full_rank_operator(rng: &mut Rng, dim: usize) -> Result<PositiveOperator> {
    let trace = rng.random_range(0.2..3.0);
    Ok(random_positive_with(dim, dim, rng)?.scaled(trace))
}

fn random_states(rng: &mut Rng, dim: usize, n: usize) -> Result<Vec<PositiveOperator>> {
    (0..n)
        .map(|_| {
            let rank = rng.random_range(1..=dim);
            random_positive_with(dim, rank, rng)
        })
        .collect()
}

fn finite_rel(a: &PositiveOperator, b: &PositiveOperator) -> Result<f64> {
    Ok(rel_entropy(a, b)?.finite().unwrap_or(f64::INFINITY))
}

/// Runs one suite (or all of them) and returns one report per concrete suite.
pub fn run_suite(suite: Suite, cfg: &CheckConfig) -> Result<Vec<SuiteReport>> {
    if cfg.trials == Some(0) {
        return Err(invalid("trials", "must be at least 1"));
    }
    let suites: Vec<Suite> = if suite == Suite::All {
        Suite::CONCRETE.to_vec()
    } else {
        vec![suite]
    };
    suites
        .into_iter()
        .map(|s| match s {
            Suite::EntropyIdentities => entropy_identities(cfg),
            Suite::Lemma6 => lemma6(cfg),
            Suite::Lemma11 => lemma11(cfg),
            Suite::Glo => glo(cfg),
            Suite::Ensembles => ensembles(cfg),
            Suite::Counterexamples => counterexamples(cfg),
            Suite::All => unreachable!(),
        })
        .collect()
}

pub fn entropy_identities(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::EntropyIdentities);
    let max_dim = cfg.max_dim.unwrap_or(6).max(2);
    let n = r.trials(200);

    r.invariant("mixing-inequality", r.tol(1e-9), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let m = rng.random_range(1..=6);
        let states = random_states(rng, dim, m)?;
        let w = dirichlet(rng, m);
        let avg = states
            .iter()
            .zip(&w)
            .fold(PositiveOperator::zero(dim), |acc, (s, x)| acc.add(&s.scaled(*x)));
        let rhs: f64 = states.iter().zip(&w).map(|(s, x)| x * entropy_h(s) + eta0(*x)).sum();
        Ok(entropy_h(&avg) - rhs)
    })?;

    let mut lower = Tally::new("sandwich-lower", r.tol(1e-9));
    let mut upper = Tally::new("sandwich-upper", r.tol(1e-9));
    for t in 0..n {
        let mut rng = r.stream("sandwich", t);
        let dim = dim_in(&mut rng, 2, max_dim);
        let a = random_operator(&mut rng, dim)?;
        let c = random_operator(&mut rng, dim)?;
        let b = a.add(&c);
        let (ha, hb, hc) = (entropy_h(&a), entropy_h(&b), entropy_h(&c));
        lower.record(ha + hc - hb);
        upper.record(hb - ha - hc - b.trace() * h2(a.trace() / b.trace())?);
    }
    r.push(lower);
    r.push(upper);

    r.invariant("ensemble-identity", r.tol(1e-8), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let m = rng.random_range(1..=6);
        let members = (0..m)
            .map(|_| full_rank_operator(rng, dim))
            .collect::<Result<Vec<_>>>()?;
        let e = Ensemble::new(dirichlet(rng, m), members)?;
        let a = e.average();
        let lhs = entropy_s(a) - e.weights().iter().zip(e.members()).map(|(p, x)| p * entropy_s(x)).sum::<f64>();
        let mut rhs = 0.0;
        for (p, x) in e.weights().iter().zip(e.members()) {
            rhs += p * finite_rel(x, a)?;
        }
        Ok((lhs - rhs).abs())
    })?;

    r.invariant("donald-identity", r.tol(1e-8), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let m = rng.random_range(1..=6);
        let members = (0..m)
            .map(|_| random_operator(rng, dim))
            .collect::<Result<Vec<_>>>()?;
        let e = Ensemble::new(dirichlet(rng, m), members)?;
        let a = e.average();
        let b = full_rank_operator(rng, dim)?;
        let mut lhs = 0.0;
        let mut rhs = finite_rel(a, &b)?;
        for (p, x) in e.weights().iter().zip(e.members()) {
            lhs += p * finite_rel(x, &b)?;
            rhs += p * finite_rel(x, a)?;
        }
        Ok((lhs - rhs).abs())
    })?;

    r.invariant("schur-concavity", r.tol(1e-10), r.trials(500), |rng, _| {
        // q = D p for a doubly stochastic D (mixture of permutations) is majorized by p.
        let len = dim_in(rng, 2, 8);
        let p = dirichlet(rng, len);
        let perms = rng.random_range(1..=4);
        let w = dirichlet(rng, perms);
        let mut q = vec![0.0; len];
        for wi in w {
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(rng);
            for (j, &src) in idx.iter().enumerate() {
                q[j] += wi * p[src];
            }
        }
        let pq = WeightSequence::new(p)?;
        let total = pq.total();
        let qs = WeightSequence::new(q.iter().map(|x| x * total / q.iter().sum::<f64>()).collect())?;
        if !uhlmann_less_chaotic(&pq, &qs)? {
            return Ok(f64::INFINITY);
        }
        Ok(classical_h(&pq) - classical_h(&qs))
    })?;

    let lambdas = [0.0, 0.5, 2.0];
    r.invariant("homogeneity-entropy", r.tol(1e-10), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let l = lambdas[t % 3];
        Ok((entropy_h(&a.scaled(l)) - l * entropy_h(&a)).abs())
    })?;
    r.invariant("homogeneity-relative-entropy", r.tol(1e-10), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let b = full_rank_operator(rng, dim)?;
        let l = lambdas[t % 3];
        Ok((finite_rel(&a.scaled(l), &b.scaled(l))? - l * finite_rel(&a, &b)?).abs())
    })?;
    let seeded = |rng: &mut Rng| rng.random::<u64>();
    r.invariant("homogeneity-gap", r.tol(1e-9), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim.min(4));
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let l = lambdas[t % 3];
        let cfg = ApproxConfig::new(k).with_restarts(2).with_max_iters(50).with_seed(seeded(rng));
        let base = approx_hk(&a, &cfg)?;
        let scaled_cfg = cfg.clone().with_extra_seed(base.best_ensemble.scaled(l));
        let scaled = approx_hk(&a.scaled(l), &scaled_cfg)?;
        Ok((scaled.delta_hat - l * base.delta_hat).abs())
    })?;
    Ok(r.finish())
}

/// Best estimate for `a` at `k`, with extra seeds.
fn estimate(a: &PositiveOperator, cfg: ApproxConfig, seeds: Vec<Ensemble>) -> Result<ApproxResult> {
    let mut cfg = cfg;
    cfg.extra_seeds.extend(seeds);
    approx_hk(a, &cfg)
}

pub fn lemma6(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::Lemma6);
    let max_dim = cfg.max_dim.unwrap_or(4).max(2);
    let n = r.trials(100);
    let restarts = cfg.restarts;
    let approx = move |k, seed| {
        ApproxConfig::new(k)
            .with_restarts(restarts)
            .with_max_iters(100)
            .with_seed(seed)
    };

    let mut nonneg = Tally::new("gap-nonnegative", r.tol(1e-9));
    let mut cap = Tally::new("rank-cap", r.tol(1e-9));
    let mut below_h = Tally::new("hk-below-entropy", r.tol(1e-9));
    let mut bound = Tally::new("below-coarse-bound", r.tol(1e-9));
    for t in 0..n {
        let mut rng = r.stream("estimator-bounds", t);
        let dim = dim_in(&mut rng, 2, max_dim);
        let a = random_operator(&mut rng, dim)?;
        let k = dim_in(&mut rng, 1, dim);
        let res = approx_hk(&a, &approx(k, t as u64))?;
        nonneg.record(-res.delta_hat);
        cap.record(res.hk_lower - a.trace() * (k as f64).ln());
        below_h.record(res.hk_lower - res.entropy);
        bound.record(res.delta_hat - res.delta_tilde);
    }
    r.push(nonneg);
    r.push(cap);
    r.push(below_h);
    r.push(bound);

    let mut zero = Tally::new("zero-on-low-rank", r.tol(1e-12));
    let mut unitary = Tally::new("unitary-invariance", r.tol(1e-8));
    let mut homog = Tally::new("estimator-homogeneity", r.tol(1e-9));
    for t in 0..n {
        let mut rng = r.stream("estimator-structure", t);
        let dim = dim_in(&mut rng, 2, max_dim);
        let k = dim_in(&mut rng, 1, dim);
        let rank = rng.random_range(1..=k);
        let low = random_positive_with(dim, rank, &mut rng)?.scaled(rng.random_range(0.2..3.0));
        zero.record(approx_hk(&low, &approx(k, t as u64))?.delta_hat.abs());

        let a = random_operator(&mut rng, dim)?;
        let base = approx_hk(&a, &approx(k, t as u64))?;
        let u = random_unitary(dim, &mut rng);
        let rotated = a.conjugate_by(&u);
        let seeded = estimate(&rotated, approx(k, t as u64), vec![base.best_ensemble.conjugated(&u)])?;
        unitary.record((seeded.delta_hat - base.delta_hat).abs());

        let l = if t % 2 == 0 { 0.5 } else { 2.0 };
        let scaled = estimate(&a.scaled(l), approx(k, t as u64), vec![base.best_ensemble.scaled(l)])?;
        homog.record((scaled.hk_lower - l * base.hk_lower).abs());
    }
    r.push(zero);
    r.push(unitary);
    r.push(homog);

    r.invariant("convex-product-seed", r.tol(1e-8), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let b = random_operator(rng, dim)?;
        let (k1, k2) = (dim_in(rng, 1, dim), dim_in(rng, 1, dim));
        let gamma = rng.random_range(0.05..0.95);
        let ra = approx_hk(&a, &approx(k1, t as u64))?;
        let rb = approx_hk(&b, &approx(k2, t as u64))?;
        let seed = sum_product(&[ra.best_ensemble.scaled(gamma), rb.best_ensemble.scaled(1.0 - gamma)])?;
        let mix = a.scaled(gamma).add(&b.scaled(1.0 - gamma));
        let res = estimate(&mix, approx(k1 + k2, t as u64), vec![seed])?;
        Ok(res.delta_hat - gamma * ra.delta_hat - (1.0 - gamma) * rb.delta_hat)
    })?;

    r.invariant("minkowski-seeded", r.tol(1e-8), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let b = random_operator(rng, dim)?;
        let (k1, k2) = (dim_in(rng, 1, dim), dim_in(rng, 1, dim));
        let ra = approx_hk(&a, &approx(k1, t as u64))?;
        let rb = approx_hk(&b, &approx(k2, t as u64))?;
        let seed = sum_product(&[ra.best_ensemble.clone(), rb.best_ensemble.clone()])?;
        let res = estimate(&a.add(&b), approx(k1 + k2, t as u64), vec![seed])?;
        Ok(res.delta_hat - ra.delta_hat - rb.delta_hat)
    })?;

    r.invariant("channel-push", r.tol(1e-8), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let terms = rng.random_range(1..=3);
        let tp = rng.random::<bool>();
        let phi = KrausOperation::random(dim, terms, tp, rng)?;
        let ra = approx_hk(&a, &approx(k, t as u64))?;
        let image = phi.apply(&a);
        let seed = push_ensemble(&ra.best_ensemble, &phi)?;
        let res = estimate(&image, approx(terms * k, t as u64), vec![seed])?;
        Ok(res.delta_hat - ra.delta_hat)
    })?;

    r.invariant("mixture-tail", r.tol(1e-8), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let count = rng.random_range(2..=4);
        let m = rng.random_range(1..=count);
        let k = dim_in(rng, 1, dim);
        let parts = (0..count)
            .map(|_| random_operator(rng, dim))
            .collect::<Result<Vec<_>>>()?;
        let lambda = dirichlet(rng, count);
        let runs = parts
            .iter()
            .map(|p| approx_hk(p, &approx(k, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        // Groups 1..m-1 keep one term each; group m is the union of the tail terms.
        let mut groups: Vec<Ensemble> = (0..m - 1)
            .map(|i| runs[i].best_ensemble.scaled(lambda[i]))
            .collect();
        let tail_mass: f64 = lambda[m - 1..].iter().sum();
        let mut weights = Vec::new();
        let mut members = Vec::new();
        for i in m - 1..count {
            let e = &runs[i].best_ensemble;
            for (w, x) in e.weights().iter().zip(e.members()) {
                weights.push(lambda[i] * w / tail_mass);
                members.push(x.scaled(tail_mass));
            }
        }
        groups.push(Ensemble::new(weights, members)?);
        let seed = sum_product(&groups)?;
        let mix = parts
            .iter()
            .zip(&lambda)
            .fold(PositiveOperator::zero(dim), |acc, (p, l)| acc.add(&p.scaled(*l)));
        let res = estimate(&mix, approx(m * k, t as u64), vec![seed])?;
        let head: f64 = runs.iter().zip(&lambda).map(|(x, l)| l * x.delta_hat).sum();
        let sup_trace = parts[m - 1..].iter().map(PositiveOperator::trace).fold(0.0, f64::max);
        let tail = sup_trace * classical_h_raw(&lambda[m - 1..]);
        Ok(res.delta_hat - head - tail)
    })?;

    r.invariant("k-monotonicity", r.tol(1e-9), n, |rng, t| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let chain = approx_chain(&a, dim, &approx(1, t as u64))?;
        Ok(chain
            .windows(2)
            .map(|w| w[0].hk_lower - w[1].hk_lower)
            .fold(f64::NEG_INFINITY, f64::max))
    })?;

    oracle_scale(&mut r)?;
    Ok(r.finish())
}

/// Two-sided comparisons that need `Δ_k` itself, on qutrits and qubits.
fn oracle_scale(r: &mut Runner<'_>) -> Result<()> {
    let n = r.cfg.oracle_trials;
    let max_dim = r.cfg.max_dim.unwrap_or(3).clamp(2, 3);
    let k_for = |t: usize, dim: usize| if dim == 2 { 1 } else { 1 + t % 2 };
    r.invariant("operator-monotone", 5e-3, n, |rng, t| {
        let dim = max_dim;
        let k = k_for(t, dim);
        let a = full_rank_operator(rng, dim)?;
        let b = a.add(&random_operator(rng, dim)?);
        Ok(oracle_delta(&a, k)? - oracle_delta(&b, k)?)
    })?;
    r.invariant("contraction", 5e-3, n, |rng, t| {
        let dim = max_dim;
        let k = k_for(t, dim);
        let a = full_rank_operator(rng, dim)?;
        let c = random_contraction(dim, rng);
        let norm = operator_norm(&c);
        Ok(oracle_delta(&a.conjugate_by(&c), k)? - norm * norm * oracle_delta(&a, k)?)
    })?;
    r.invariant("orthogonal-blocks", 5e-3, n, |rng, t| {
        let dim = max_dim;
        let k = k_for(t, dim);
        let a = full_rank_operator(rng, dim)?;
        let u = random_unitary(dim, rng);
        let split = rng.random_range(1..dim);
        let mut blocks = 0.0;
        for range in [0..split, split..dim] {
            let cols = u.columns(range.start, range.len());
            let p: CMatrix = cols * cols.adjoint();
            blocks += oracle_delta(&a.conjugate_by(&p), k)?;
        }
        Ok(blocks - oracle_delta(&a, k)?)
    })?;
    Ok(())
}

pub fn lemma11(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::Lemma11);
    let sequences = 20;
    let random_levels = |rng: &mut Rng| {
        let n = rng.random_range(3..=40);
        let mut h: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..10.0)).collect();
        h.sort_by(f64::total_cmp);
        h
    };
    r.invariant("residual", r.tol(1e-12), sequences, |rng, _| {
        Ok(lambda_star(&random_levels(rng))?.residual)
    })?;
    r.invariant("double-inequality", 0.0, sequences, |rng, _| {
        let s = lambda_star(&random_levels(rng))?;
        Ok(if s.double_inequality_holds() { 0.0 } else { f64::INFINITY })
    })?;
    r.invariant("maximizer-attains-sup", r.tol(1e-12), sequences, |rng, _| {
        let h = random_levels(rng);
        let s = lambda_star(&h)?;
        Ok((l1_objective(&s.maximizer, &h) - s.sup_value).abs())
    })?;
    r.invariant("random-search-below-sup", r.tol(1e-9), sequences, |rng, t| {
        let h = random_levels(rng);
        let s = l1_ball_sup(&h, h.len(), true, t as u64)?;
        Ok(s.sampled_best.unwrap_or(f64::INFINITY) - s.analytic.sup_value)
    })?;
    r.invariant("linear-limit", r.tol(1e-6), 1, |_, _| {
        let h: Vec<f64> = (1..=60).map(|j| j as f64).collect();
        Ok((lambda_star(&h)?.lambda - ((1.0 + std::f64::consts::E).ln() - 1.0)).abs())
    })?;
    r.invariant("constant-levels", r.tol(1e-12), 1, |_, _| {
        Ok((lambda_star(&[1.0, 1.0, 1.0])?.lambda - (3f64.ln() - 1.0)).abs())
    })?;
    Ok(r.finish())
}

pub fn glo(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::Glo);
    let max_dim = cfg.max_dim.unwrap_or(5).max(1);
    let mut tally = Tally::new("glo-cut-points", r.tol(1e-8));
    let mut sets = Tally::new("glo-kraus-sets", r.tol(1e-8));
    for t in 0..r.trials(100) {
        let mut rng = r.stream("glo", t);
        let dim = dim_in(&mut rng, 1, max_dim);
        let n = rng.random_range(1..=5);
        let phi = KrausOperation::random(dim, n, true, &mut rng)?;
        let a = random_operator(&mut rng, dim)?;
        let mut worst = f64::NEG_INFINITY;
        for s in glo_slacks(&a, &phi) {
            tally.record(s);
            worst = worst.max(s);
        }
        sets.record(worst);
    }
    r.push(sets);
    r.push(tally);
    Ok(r.finish())
}

/// Slacks of `Σ_{i>m} H(V_i A V_i*) <= H(A) - H(C_m A C_m)` for every cut `m = 0..=n`,
/// where `C_m = (Σ_{i<=m} V_i* V_i)^{1/2}`.
pub fn glo_slacks(a: &PositiveOperator, phi: &KrausOperation) -> Vec<f64> {
    let ops = phi.ops();
    let dim = phi.input_dim();
    let h_a = entropy_h(a);
    let tails: Vec<f64> = ops
        .iter()
        .map(|v| entropy_h(&PositiveOperator::from_psd(v * a.matrix() * v.adjoint())))
        .collect();
    (0..=ops.len())
        .map(|m| {
            let sum: CMatrix = ops[..m]
                .iter()
                .fold(CMatrix::zeros(dim, dim), |acc, v| acc + v.adjoint() * v);
            let c = PositiveOperator::from_psd(sum).sqrt();
            let head = entropy_h(&a.conjugate_by(&c));
            tails[m..].iter().sum::<f64>() - (h_a - head)
        })
        .collect()
}

pub fn ensembles(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::Ensembles);
    let max_dim = cfg.max_dim.unwrap_or(5).max(2);
    let n = r.trials(200);
    r.invariant("hjw-average", r.tol(1e-9), r.trials(500), |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let m = a.rank().div_ceil(k) + rng.random_range(0..3);
        let u = random_stiefel_with(m * k, a.rank(), rng)?;
        let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(m, k)?)?;
        Ok(frobenius(&(e.average().matrix() - a.matrix())) + if e.max_member_rank() <= k { 0.0 } else { 1.0 })
    })?;
    r.invariant("gap-nonnegative", r.tol(1e-12), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let m = a.rank().div_ceil(k) + 1;
        let u = random_stiefel_with(m * k, a.rank(), rng)?;
        let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(m, k)?)?;
        Ok(-ensemble_gap(&e).finite().unwrap_or(f64::INFINITY))
    })?;
    r.invariant("coarse-gap-equals-bound", r.tol(1e-9), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let e = spectral_coarse_ensemble(&a, k)?;
        let bound = classical_h(&coarse_grain(a.eigenvalues(), k)?);
        Ok((ensemble_gap(&e).finite().unwrap_or(f64::INFINITY) - bound).abs())
    })?;
    r.invariant("push-average", r.tol(1e-9), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_operator(rng, dim)?;
        let k = dim_in(rng, 1, dim);
        let e = spectral_coarse_ensemble(&a, k)?;
        let phi = KrausOperation::random(dim, rng.random_range(1..=3), rng.random(), rng)?;
        let pushed = push_ensemble(&e, &phi)?;
        Ok(frobenius(&(pushed.average().matrix() - phi.apply(&a).matrix())))
    })?;
    r.invariant("perturb-valid", r.tol(1e-8), n, |rng, _| {
        let dim = dim_in(rng, 2, max_dim);
        let a = random_positive_with(dim, dim, rng)?.normalized();
        let k = dim_in(rng, 1, dim);
        let e = spectral_coarse_ensemble(&a, k)?;
        let target = random_positive_with(dim, rng.random_range(1..=dim), rng)?;
        let p = perturb_ensemble(&e, &target)?;
        let wsum: f64 = p.weights().iter().sum();
        Ok(frobenius(&(p.average().matrix() - target.matrix())) + (wsum - 1.0).abs())
    })?;
    Ok(r.finish())
}

pub fn counterexamples(cfg: &CheckConfig) -> Result<SuiteReport> {
    let mut r = Runner::new(cfg, Suite::Counterexamples);
    let w = remark3_witness()?;
    let mut strict = Tally::new("strict-gap", 0.0);
    strict.pass_if(w.strict_gap_confirmed);
    r.push(strict);
    let mut avg = Tally::new("witness-average", r.tol(1e-12));
    avg.record(w.average_error);
    r.push(avg);
    r.invariant("closed-form-vs-direct", r.tol(1e-10), r.trials(50), |rng, _| {
        let spec = random_block_spec(rng)?;
        Ok((blockdiag_entropy_closed_form(&spec) - blockdiag_entropy_direct(&spec)?).abs())
    })?;
    let e = discontinuity_exhibit(60)?;
    let mut exhibit = Tally::new("discontinuity-exhibit", r.tol(1e-10));
    exhibit.record((1.0 - e.min_entropy).max(e.h_rho0));
    r.push(exhibit);
    Ok(r.finish())
}

/// Random spec with total dimension at most 64.
pub fn random_block_spec(rng: &mut Rng) -> Result<BlockSequenceSpec> {
    let blocks = rng.random_range(1..=5);
    let dims: Vec<usize> = (0..blocks).map(|_| rng.random_range(3..=12)).collect();
    let kept = rng.random_range(1..=blocks);
    let mut w = dirichlet(rng, kept);
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    BlockSequenceSpec::new(dims, w)
}
