//! Estimates of the `k`-approximator `H_k(A)` and the gap `Δ_k(A) = H(A) - H_k(A)`.
//!
//! `H_k(A)` is the supremum of `Σ π_i H(A_i)` over decompositions of `A` into
//! operators of rank at most `k`. Decompositions are parametrized by isometries
//! `U` (`N x r`, `r = rank A`) whose rows are grouped into blocks of `k`
//! (see [`hjw_ensemble`]). The objective only depends on `U` and the spectrum
//! of `A`: block `b` contributes `H(G_b)` where `G_b = Ū_b diag(s) U_bᵀ` is the
//! Gram matrix of the block's vectors.
//!
//! [`approx_hk`] maximizes over a mandatory spectral coarse-graining seed, any
//! caller-supplied seeds, and random restarts refined by Givens-rotation
//! coordinate ascent. Every candidate is a feasible decomposition, so
//! `hk_lower <= H_k(A)` and `delta_hat >= Δ_k(A)` up to rounding.
//! [`oracle_delta`] is an independent brute-force reference for `dim <= 4`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::ensembles::{
    hjw_ensemble, isometry_coordinates, spectral_coarse_ensemble, BlockPlan, Ensemble,
    SpectralFactor,
};
use crate::entropy::{classical_h, coarse_grain, entropy_h, eta0};
use crate::error::{invalid, Result};
use crate::linalg::{
    c, frobenius, orthonormalize_columns, EIG_TOL, polar_factor, random_stiefel_with, substream, CMatrix,
    PositiveOperator, C64,
};

/// Golden-section evaluations per rotation move, split over two phases.
const MOVE_EVALS: usize = 40;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// `Δ̃_k(A) = H({λ_i^k(A)})`, the classical entropy of the `k`-coarse-grained spectrum.
///
/// Eigenvalues below the rank tolerance are treated as zero, so the bound
/// vanishes exactly when `rank A <= k`.
pub fn delta_tilde(a: &PositiveOperator, k: usize) -> Result<f64> {
    let cutoff = EIG_TOL * a.trace();
    let values: Vec<f64> = a
        .eigenvalues()
        .iter()
        .map(|&v| if v > cutoff { v } else { 0.0 })
        .collect();
    Ok(classical_h(&coarse_grain(&values, k)?))
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproxConfig {
    /// Rank cap of the decomposition members.
    pub k: usize,
    /// Block count; `None` means `dim`. Raised to `ceil(rank / k)` when smaller.
    pub m: Option<usize>,
    pub restarts: usize,
    /// Maximum number of rotation sweeps per local search.
    pub max_iters: usize,
    /// A sweep gaining less than `step_tolerance * Tr A` ends the local search.
    pub step_tolerance: f64,
    pub seed: u64,
    /// Feasible decompositions offered as candidates (and as starting points).
    #[serde(serialize_with = "serialize_ensembles")]
    pub extra_seeds: Vec<Ensemble>,
    /// Extra block counts to report sensitivity for (each runs the restarts again).
    pub m_sensitivity: Vec<usize>,
}

impl ApproxConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            m: None,
            restarts: 16,
            max_iters: 200,
            step_tolerance: 1e-12,
            seed: 0,
            extra_seeds: Vec::new(),
            m_sensitivity: Vec::new(),
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_extra_seed(mut self, e: Ensemble) -> Self {
        self.extra_seeds.push(e);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.restarts < 1 {
            return Err(invalid("restarts", "must be at least 1"));
        }
        if self.m == Some(0) {
            return Err(invalid("m", "must be at least 1"));
        }
        if !(self.step_tolerance >= 0.0) {
            return Err(invalid("step_tolerance", "must be nonnegative"));
        }
        Ok(())
    }
}

fn serialize_ensembles<S: Serializer>(v: &[Ensemble], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(Ensemble::to_file))
}

fn serialize_ensemble<S: Serializer>(e: &Ensemble, s: S) -> std::result::Result<S::Ok, S::Error> {
    e.to_file().serialize(s)
}

/// Where the winning decomposition came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum CandidateSource {
    CoarseGraining,
    ExtraSeed(usize),
    RefinedCoarseGraining,
    RefinedSeed(usize),
    Restart(usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct MSensitivity {
    pub m: usize,
    pub hk_lower: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproxResult {
    pub k: usize,
    /// `H(A)`.
    pub entropy: f64,
    pub hk_lower: f64,
    pub delta_hat: f64,
    pub delta_tilde: f64,
    #[serde(serialize_with = "serialize_ensemble")]
    pub best_ensemble: Ensemble,
    pub best_source: CandidateSource,
    /// Rotation sweeps summed over all local searches.
    pub iterations_used: usize,
    /// Every local search met the step tolerance before `max_iters`.
    pub converged: bool,
    pub m_used: usize,
    /// Indices of extra seeds that were not feasible decompositions of `A` with rank `<= k`.
    pub seeds_rejected: Vec<usize>,
    pub m_sensitivity: Vec<MSensitivity>,
    pub config: ApproxConfig,
}

/// Objective over isometries: `Σ_b H(G_b)`.
#[derive(Clone, Debug)]
struct Landscape {
    s: Vec<f64>,
    trace: f64,
}

impl Landscape {
    fn rank(&self) -> usize {
        self.s.len()
    }

    /// `H` of the Gram matrix `G_ab = Σ_l conj(x_al) s_l x_bl` of the given rows.
    fn block_entropy(&self, rows: &[&[C64]]) -> f64 {
        let k = rows.len();
        let s = &self.s;
        let gram = |a: &[C64], b: &[C64]| -> C64 {
            a.iter()
                .zip(b)
                .zip(s)
                .fold(c(0.0, 0.0), |acc, ((x, y), w)| acc + x.conj() * y * *w)
        };
        match k {
            0 | 1 => 0.0,
            2 => {
                let p = gram(rows[0], rows[0]).re;
                let q = gram(rows[1], rows[1]).re;
                let off = gram(rows[0], rows[1]).norm_sqr();
                let t = p + q;
                if t <= 0.0 {
                    return 0.0;
                }
                let disc = (0.25 * (p - q) * (p - q) + off).sqrt();
                let hi = 0.5 * t + disc;
                let lo = ((p * q - off) / hi).max(0.0);
                (eta0(hi) + eta0(lo) - eta0(t)).max(0.0)
            }
            _ => {
                let g = DMatrix::from_fn(k, k, |a, b| gram(rows[a], rows[b]));
                let g = (&g + g.adjoint()).scale(0.5);
                let t: f64 = g.diagonal().iter().map(|z| z.re).sum();
                let eig = SymmetricEigen::new(g).eigenvalues;
                (eig.iter().map(|&v| eta0(v)).sum::<f64>() - eta0(t)).max(0.0)
            }
        }
    }
}

/// Givens-rotation coordinate ascent on one isometry.
struct LocalSearch<'a> {
    land: &'a Landscape,
    r: usize,
    u: Vec<C64>,
    blocks: Vec<Vec<usize>>,
    row_block: Vec<usize>,
    h: Vec<f64>,
}

impl<'a> LocalSearch<'a> {
    fn new(land: &'a Landscape, u: &CMatrix, plan: &BlockPlan) -> Self {
        let (n, r) = u.shape();
        let mut flat = Vec::with_capacity(n * r);
        for i in 0..n {
            for l in 0..r {
                flat.push(u[(i, l)]);
            }
        }
        let blocks = plan.blocks().to_vec();
        let mut row_block = vec![0; n];
        for (b, rows) in blocks.iter().enumerate() {
            for &j in rows {
                row_block[j] = b;
            }
        }
        let mut search = Self {
            land,
            r,
            u: flat,
            blocks,
            row_block,
            h: Vec::new(),
        };
        search.h = (0..search.blocks.len())
            .map(|b| search.block_entropy_with(b, None))
            .collect();
        search
    }

    fn row(&self, j: usize) -> &[C64] {
        &self.u[j * self.r..(j + 1) * self.r]
    }

    fn value(&self) -> f64 {
        self.h.iter().sum()
    }

    fn block_entropy_with(&self, b: usize, replace: Option<(usize, &[C64])>) -> f64 {
        let rows: Vec<&[C64]> = self.blocks[b]
            .iter()
            .map(|&j| match replace {
                Some((rj, row)) if rj == j => row,
                _ => self.row(j),
            })
            .collect();
        self.land.block_entropy(&rows)
    }

    fn rotated(&self, j: usize, jp: usize, theta: f64, phi: f64) -> (Vec<C64>, Vec<C64>) {
        let (cs, sn) = (theta.cos(), theta.sin());
        let e = c(phi.cos(), phi.sin());
        let (a, b) = (self.row(j), self.row(jp));
        let new_j = a.iter().zip(b).map(|(x, y)| x * cs - e * y * sn).collect();
        let new_jp = a.iter().zip(b).map(|(x, y)| e.conj() * x * sn + y * cs).collect();
        (new_j, new_jp)
    }

    /// Block entropies after rotating rows `j`, `jp` (in different blocks).
    fn trial(&self, j: usize, jp: usize, theta: f64, phi: f64) -> (f64, f64, Vec<C64>, Vec<C64>) {
        let (nj, njp) = self.rotated(j, jp, theta, phi);
        let hj = self.block_entropy_with(self.row_block[j], Some((j, &nj)));
        let hjp = self.block_entropy_with(self.row_block[jp], Some((jp, &njp)));
        (hj, hjp, nj, njp)
    }

    /// One rotation move on a row pair; returns `(gain, |θ|)` of the accepted move.
    fn improve_pair(&mut self, j: usize, jp: usize, width: f64) -> (f64, f64) {
        let (bj, bjp) = (self.row_block[j], self.row_block[jp]);
        let base = self.h[bj] + self.h[bjp];
        let mut best = (0.0, 0.0, 0.0);
        for phi in [0.0, std::f64::consts::FRAC_PI_2] {
            let f = |theta: f64| {
                let (hj, hjp, _, _) = self.trial(j, jp, theta, phi);
                hj + hjp - base
            };
            let (theta, gain) = golden_max(f, -width, width, MOVE_EVALS / 2);
            if gain > best.0 {
                best = (gain, theta, phi);
            }
        }
        let (gain, theta, phi) = best;
        if gain <= 1e-15 * self.land.trace.max(f64::MIN_POSITIVE) {
            return (0.0, 0.0);
        }
        let (hj, hjp, nj, njp) = self.trial(j, jp, theta, phi);
        let r = self.r;
        self.u[j * r..(j + 1) * r].copy_from_slice(&nj);
        self.u[jp * r..(jp + 1) * r].copy_from_slice(&njp);
        let gain = hj + hjp - base;
        self.h[bj] = hj;
        self.h[bjp] = hjp;
        (gain, theta.abs())
    }

    /// Cyclic sweeps over cross-block row pairs. Returns `(sweeps, converged)`.
    fn run(&mut self, max_iters: usize, tol: f64) -> (usize, bool) {
        let n = self.row_block.len();
        let mut pairs = Vec::new();
        for j in 0..n {
            for jp in j + 1..n {
                if self.row_block[j] != self.row_block[jp] {
                    pairs.push((j, jp));
                }
            }
        }
        if pairs.is_empty() {
            return (0, true);
        }
        let mut width = std::f64::consts::FRAC_PI_2;
        for sweep in 1..=max_iters {
            let mut gain = 0.0;
            let mut largest = 0.0_f64;
            for &(j, jp) in &pairs {
                let (g, t) = self.improve_pair(j, jp, width);
                gain += g;
                largest = largest.max(t);
            }
            if gain < tol {
                return (sweep, true);
            }
            width = (4.0 * largest).clamp(1e-7, std::f64::consts::FRAC_PI_2);
        }
        (max_iters, false)
    }

    fn isometry(&self) -> CMatrix {
        let n = self.row_block.len();
        CMatrix::from_fn(n, self.r, |i, l| self.u[i * self.r + l])
    }
}

/// Golden-section maximization of `f` on `[lo, hi]` with `evals` evaluations.
/// The returned point is the best evaluated one; `f(0)` is assumed to be 0.
fn golden_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, evals: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 2..evals {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}

struct Candidate {
    value: f64,
    source: CandidateSource,
    ensemble: Option<Ensemble>,
    isometry: Option<(CMatrix, BlockPlan)>,
    sweeps: usize,
    converged: bool,
}

fn refine(
    land: &Landscape,
    u: &CMatrix,
    plan: &BlockPlan,
    cfg: &ApproxConfig,
    source: CandidateSource,
) -> Candidate {
    let mut search = LocalSearch::new(land, u, plan);
    let (sweeps, converged) = search.run(cfg.max_iters, cfg.step_tolerance * land.trace);
    Candidate {
        value: search.value(),
        source,
        ensemble: None,
        isometry: Some((search.isometry(), plan.clone())),
        sweeps,
        converged,
    }
}

fn run_restarts(land: &Landscape, m: usize, cfg: &ApproxConfig) -> Vec<Candidate> {
    let r = land.rank();
    let plan = BlockPlan::contiguous(m, cfg.k).expect("m, k >= 1");
    (0..cfg.restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            let u = random_stiefel_with(m * cfg.k, r, &mut rng).expect("N >= r");
            refine(land, &u, &plan, cfg, CandidateSource::Restart(i))
        })
        .collect()
}

/// Seed must average to `A` (relative Frobenius error `1e-9`) with members of rank `<= k`.
fn seed_is_feasible(seed: &Ensemble, a: &PositiveOperator, k: usize) -> bool {
    if seed.dim() != a.dim() {
        return false;
    }
    let err = frobenius(&(seed.average().matrix() - a.matrix()));
    err <= 1e-9 * a.trace().max(1.0) && seed.max_member_rank() <= k
}

/// First candidate wins ties within `1e-12`.
fn pick_best(candidates: Vec<Candidate>) -> Candidate {
    let mut iter = candidates.into_iter();
    let mut best = iter.next().expect("at least the coarse-graining candidate");
    for cand in iter {
        if cand.value > best.value + 1e-12 {
            best = cand;
        }
    }
    best
}

/// Estimates `H_k(A)` from below and `Δ_k(A)` from above.
pub fn approx_hk(a: &PositiveOperator, cfg: &ApproxConfig) -> Result<ApproxResult> {
    cfg.validate()?;
    let k = cfg.k;
    let dim = a.dim();
    let entropy = entropy_h(a);
    let tilde = delta_tilde(a, k)?;
    let factor = SpectralFactor::of(a);
    let r = factor.rank();
    let m_used = cfg.m.unwrap_or(dim).max(r.div_ceil(k)).max(1);

    let coarse = spectral_coarse_ensemble(a, k)?;
    let mut candidates = vec![Candidate {
        value: entropy - tilde,
        source: CandidateSource::CoarseGraining,
        ensemble: Some(coarse.clone()),
        isometry: None,
        sweeps: 0,
        converged: true,
    }];

    let mut seeds_rejected = Vec::new();
    let mut feasible = Vec::new();
    for (i, seed) in cfg.extra_seeds.iter().enumerate() {
        if seed_is_feasible(seed, a, k) {
            candidates.push(Candidate {
                value: seed.value(),
                source: CandidateSource::ExtraSeed(i),
                ensemble: Some(seed.clone()),
                isometry: None,
                sweeps: 0,
                converged: true,
            });
            feasible.push((i, seed));
        } else {
            seeds_rejected.push(i);
        }
    }

    // Rank <= k (including A = 0): the coarse-graining seed is {1, A} and optimal.
    let trivial = r <= k || k == 1;
    let mut m_sensitivity = Vec::new();
    if !trivial {
        let land = Landscape {
            s: factor.values.clone(),
            trace: a.trace(),
        };
        let mut starts = vec![(coarse.clone(), CandidateSource::RefinedCoarseGraining)];
        starts.extend(
            feasible
                .iter()
                .map(|(i, s)| ((*s).clone(), CandidateSource::RefinedSeed(*i))),
        );
        let refined: Vec<Candidate> = starts
            .par_iter()
            .filter_map(|(e, source)| {
                let (u, plan) = isometry_coordinates(e, &factor, k).ok()?;
                Some(refine(&land, &u, &plan, cfg, *source))
            })
            .collect();
        candidates.extend(refined);
        candidates.extend(run_restarts(&land, m_used, cfg));

        for &m in &cfg.m_sensitivity {
            let m = m.max(r.div_ceil(k));
            let best = run_restarts(&land, m, cfg)
                .into_iter()
                .map(|c| c.value)
                .fold(f64::NEG_INFINITY, f64::max);
            m_sensitivity.push(MSensitivity { m, hk_lower: best });
        }
    }

    let iterations_used = candidates.iter().map(|c| c.sweeps).sum();
    let converged = candidates.iter().all(|c| c.converged);
    let best = pick_best(candidates);
    let best_ensemble = match (best.ensemble, best.isometry) {
        (Some(e), _) => e,
        (None, Some((u, plan))) => hjw_ensemble(a, &orthonormalize_if_needed(u), &plan)?,
        (None, None) => unreachable!("every candidate carries an ensemble or an isometry"),
    };
    let hk_lower = best.value;
    Ok(ApproxResult {
        k,
        entropy,
        hk_lower,
        delta_hat: entropy - hk_lower,
        delta_tilde: tilde,
        best_ensemble,
        best_source: best.source,
        iterations_used,
        converged,
        m_used,
        seeds_rejected,
        m_sensitivity,
        config: cfg.clone(),
    })
}

/// Givens rotations keep `U` on the Stiefel manifold up to rounding; this only
/// touches matrices whose drift would fail the isometry check.
fn orthonormalize_if_needed(u: CMatrix) -> CMatrix {
    let r = u.ncols();
    if frobenius(&(u.adjoint() * &u - CMatrix::identity(r, r))) > 1e-10 {
        polar_factor(&u)
    } else {
        u
    }
}

/// Runs `k = 1..=max_k`, seeding each level with the best ensemble of the previous one.
pub fn approx_chain(
    a: &PositiveOperator,
    max_k: usize,
    base: &ApproxConfig,
) -> Result<Vec<ApproxResult>> {
    let mut out: Vec<ApproxResult> = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let mut cfg = base.clone();
        cfg.k = k;
        if let Some(prev) = out.last() {
            cfg.extra_seeds.push(prev.best_ensemble.clone());
        }
        out.push(approx_hk(a, &cfg)?);
    }
    Ok(out)
}

/// Brute-force reference value of `Δ_k(A)` with its saturation record.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub delta: f64,
    pub per_m: Vec<OracleRun>,
    /// Every block count reached a doubling with improvement below the threshold.
    pub saturated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRun {
    pub m: usize,
    pub restarts: usize,
    pub hk_best: f64,
}

const ORACLE_START: usize = 128;
const ORACLE_MAX: usize = 2048;
const ORACLE_SATURATION: f64 = 1e-6;

/// Saturation protocol: for `m` in `{dim, 2 dim}`, restarts are doubled from 128
/// until a doubling improves the best value by less than `1e-6`. Each restart
/// is a Riemannian gradient ascent on the Stiefel manifold with the block
/// entropies evaluated through Jacobi eigenvalues, so neither the move set nor
/// the eigen-solver is shared with [`approx_hk`].
pub fn oracle_delta(a: &PositiveOperator, k: usize) -> Result<f64> {
    Ok(oracle_report(a, k, 0)?.delta)
}

pub fn oracle_report(a: &PositiveOperator, k: usize, seed: u64) -> Result<OracleReport> {
    let dim = a.dim();
    if dim > 4 {
        return Err(invalid("A", format!("oracle is limited to dim <= 4, got {dim}")));
    }
    if k < 1 {
        return Err(invalid("k", "must be at least 1"));
    }
    let entropy = entropy_h(a);
    let factor = SpectralFactor::of(a);
    let r = factor.rank();
    if r <= k {
        return Ok(OracleReport {
            delta: 0.0,
            per_m: Vec::new(),
            saturated: true,
        });
    }
    if k == 1 {
        // Rank-one members have zero entropy, so H_1 = 0.
        return Ok(OracleReport {
            delta: entropy,
            per_m: Vec::new(),
            saturated: true,
        });
    }
    let oracle = GradientOracle {
        s: factor.values.clone(),
        k,
    };
    let mut per_m = Vec::new();
    let mut saturated = true;
    let mut best = f64::NEG_INFINITY;
    for (mi, m) in [dim, 2 * dim].into_iter().enumerate() {
        let m = m.max(r.div_ceil(k));
        let stream_base = (mi as u64) << 32;
        let mut restarts = ORACLE_START;
        let mut value = oracle.best_of(m, 0..restarts, seed, stream_base);
        let mut sat = false;
        while restarts < ORACLE_MAX {
            let more = oracle.best_of(m, restarts..2 * restarts, seed, stream_base);
            restarts *= 2;
            let improved = more.max(value) - value;
            value = value.max(more);
            if improved < ORACLE_SATURATION * a.trace().max(1.0) {
                sat = true;
                break;
            }
        }
        saturated &= sat;
        best = best.max(value);
        per_m.push(OracleRun {
            m,
            restarts,
            hk_best: value,
        });
    }
    let tilde = delta_tilde(a, k)?;
    Ok(OracleReport {
        delta: (entropy - best).min(tilde).max(0.0),
        per_m,
        saturated,
    })
}

struct GradientOracle {
    s: Vec<f64>,
    k: usize,
}

impl GradientOracle {
    fn best_of(&self, m: usize, range: std::ops::Range<usize>, seed: u64, base: u64) -> f64 {
        range
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed ^ 0x6f72_6163_6c65, base + i as u64);
                let u = random_stiefel_with(m * self.k, self.s.len(), &mut rng).expect("N >= r");
                self.ascend(u)
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }

    /// Value and Euclidean gradient of `Σ_b H(Ū_b S U_bᵀ)`.
    fn value_and_gradient(&self, u: &CMatrix) -> (f64, CMatrix) {
        let (n, r) = u.shape();
        let k = self.k;
        let mut value = 0.0;
        let mut grad = CMatrix::zeros(n, r);
        for b in 0..n / k {
            let ub = u.rows(b * k, k);
            let gram = CMatrix::from_fn(k, k, |i, j| {
                (0..r).fold(c(0.0, 0.0), |acc, l| acc + ub[(i, l)].conj() * self.s[l] * ub[(j, l)])
            });
            let trace: f64 = gram.diagonal().iter().map(|z| z.re).sum();
            if trace <= 0.0 {
                continue;
            }
            let (vals, vecs) = jacobi_eigh(&gram);
            value += vals.iter().map(|&v| eta0(v)).sum::<f64>() - eta0(trace);
            // dH/dG = -log G + log(Tr G) I on the support; the floor keeps it finite.
            let floor = 1e-14 * trace;
            let logt = trace.ln();
            let mut mgrad = CMatrix::zeros(k, k);
            for (a, &v) in vals.iter().enumerate() {
                let coef = logt - v.max(floor).ln();
                let col = vecs.column(a);
                mgrad += (col * col.adjoint()).scale(coef);
            }
            let mut ub_s = ub.into_owned();
            for l in 0..r {
                ub_s.column_mut(l).scale_mut(self.s[l]);
            }
            let g = mgrad.transpose() * ub_s * c(2.0, 0.0);
            grad.rows_mut(b * k, k).copy_from(&g);
        }
        (value, grad)
    }

    fn value(&self, u: &CMatrix) -> f64 {
        self.value_and_gradient(u).0
    }

    /// Projection of an ambient direction onto the tangent space at `u`.
    fn project(u: &CMatrix, z: &CMatrix) -> CMatrix {
        let x = u.adjoint() * z;
        z - u * (&x + x.adjoint()).scale(0.5)
    }

    /// Riemannian Polak-Ribière conjugate gradient with Armijo backtracking.
    fn ascend(&self, mut u: CMatrix) -> f64 {
        let inner = |x: &CMatrix, y: &CMatrix| -> f64 {
            x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum()
        };
        let (mut f, g) = self.value_and_gradient(&u);
        let mut xi = Self::project(&u, &g);
        let mut dir = xi.clone();
        let mut step = 0.5;
        let mut window_start = f;
        for iter in 1..=2000 {
            let norm2 = inner(&xi, &xi);
            if norm2.sqrt() < 1e-9 {
                break;
            }
            let mut slope = inner(&xi, &dir);
            if slope <= 0.0 {
                dir = xi.clone();
                slope = norm2;
            }
            let mut accepted = None;
            for _ in 0..40 {
                let cand = orthonormalize_columns(&u + dir.scale(step));
                let fc = self.value(&cand);
                if fc >= f + 1e-4 * step * slope {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, fnext)) = accepted else { break };
            u = next;
            f = fnext;
            step *= 2.0;
            let g = self.value_and_gradient(&u).1;
            let xi_next = Self::project(&u, &g);
            let moved = Self::project(&u, &dir);
            let xi_moved = Self::project(&u, &xi);
            let beta = (inner(&xi_next, &(&xi_next - xi_moved)) / norm2).max(0.0);
            dir = &xi_next + moved.scale(beta);
            xi = xi_next;
            if iter % 20 == 0 {
                if f - window_start < 1e-10 {
                    break;
                }
                window_start = f;
            }
        }
        f
    }
}

/// Cyclic complex Jacobi eigen-solver for small Hermitian matrices.
fn jacobi_eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = CMatrix::identity(n, n);
    for _ in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        let scale: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Rotation zeroing a_pq: phase-reduce to a real symmetric 2x2 problem.
                let phase = apq / mag;
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                // J = [[cs, sn·phase], [-sn·conj(phase), cs]] acting on columns p, q.
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * cs - aiq * phase.conj() * sn;
                    a[(i, q)] = aip * phase * sn + aiq * cs;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = apj * cs - aqj * phase * sn;
                    a[(q, j)] = apj * phase.conj() * sn + aqj * cs;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * cs - viq * phase.conj() * sn;
                    v[(i, q)] = vip * phase * sn + viq * cs;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[(i, i)].re.max(0.0)).collect();
    (vals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::ensemble_gap;
    use crate::linalg::{random_positive, rng, CVector};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn remark3_ensemble() -> Ensemble {
        let s3 = 3f64.sqrt() / 2.0;
        let v = |x: f64, y: f64, z: f64| CVector::from_vec(vec![c(x, 0.0), c(y, 0.0), c(z, 0.0)]);
        let p = |x: &CVector, w: f64| PositiveOperator::projector_onto(x).scaled(w);
        let rho1 = p(&v(1.0, 0.0, 0.0), 0.5).add(&p(&v(-0.5, s3, 0.0), 0.5));
        let rho2 = p(&v(-0.5, -s3, 0.0), 0.4).add(&p(&v(0.0, 0.0, 1.0), 0.6));
        Ensemble::new(vec![4.0 / 9.0, 5.0 / 9.0], vec![rho1, rho2]).unwrap()
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let mut r = rng(1);
        for d in 1..=5 {
            let a = random_positive(d, d, d as u64).unwrap().scaled(3.0);
            let (mut vals, vecs) = jacobi_eigh(a.matrix());
            vals.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in vals.iter().zip(a.eigenvalues()) {
                close(*x, *y, 1e-12);
            }
            assert!(frobenius(&(vecs.adjoint() * &vecs - CMatrix::identity(d, d))) < 1e-12);
        }
        let _ = &mut r;
    }

    #[test]
    fn gram_entropy_matches_member_entropy() {
        let a = random_positive(4, 4, 3).unwrap();
        let factor = SpectralFactor::of(&a);
        let land = Landscape {
            s: factor.values.clone(),
            trace: a.trace(),
        };
        for k in 1..=4 {
            let m = 4usize.div_ceil(k) + 1;
            let plan = BlockPlan::contiguous(m, k).unwrap();
            let u = random_stiefel_with(m * k, 4, &mut rng(k as u64)).unwrap();
            let search = LocalSearch::new(&land, &u, &plan);
            let e = hjw_ensemble(&a, &u, &plan).unwrap();
            close(search.value(), e.value(), 1e-12);
        }
    }

    #[test]
    fn golden_section_finds_interior_maximum() {
        let (x, fx) = golden_max(|t| -(t - 0.3) * (t - 0.3) + 0.09, -1.0, 1.0, 30);
        close(x, 0.3, 1e-5);
        close(fx, 0.09, 1e-9);
    }

    #[test]
    fn delta_tilde_examples() {
        let low = random_positive(4, 2, 1).unwrap();
        close(delta_tilde(&low, 2).unwrap(), 0.0, 1e-12);
        close(
            delta_tilde(&PositiveOperator::maximally_mixed(3), 2).unwrap(),
            3f64.ln() - 2.0 / 3.0 * 2f64.ln(),
            1e-12,
        );
        close(delta_tilde(&PositiveOperator::maximally_mixed(4), 2).unwrap(), 2f64.ln(), 1e-12);
        assert!(delta_tilde(&low, 0).is_err());
    }

    #[test]
    fn low_rank_has_zero_gap() {
        let a = random_positive(4, 2, 9).unwrap();
        let res = approx_hk(&a, &ApproxConfig::new(2)).unwrap();
        close(res.delta_hat, 0.0, 1e-12);
        close(res.hk_lower, entropy_h(&a), 1e-12);
        assert_eq!(res.best_source, CandidateSource::CoarseGraining);
    }

    #[test]
    fn remark3_seed_beats_coarse_graining() {
        let a = PositiveOperator::maximally_mixed(3);
        let cfg = ApproxConfig::new(2).with_extra_seed(remark3_ensemble()).with_restarts(8);
        let res = approx_hk(&a, &cfg).unwrap();
        assert!(res.hk_lower >= 0.6238, "{}", res.hk_lower);
        assert!(res.delta_hat <= 0.4748);
        assert!(res.delta_hat < res.delta_tilde);
        assert!(res.seeds_rejected.is_empty());
        close(ensemble_gap(&res.best_ensemble).finite().unwrap(), res.delta_hat, 1e-8);
    }

    #[test]
    fn infeasible_seeds_are_rejected() {
        let a = PositiveOperator::maximally_mixed(3);
        let wrong_rank = Ensemble::singleton(a.clone());
        let wrong_avg = spectral_coarse_ensemble(&random_positive(3, 3, 2).unwrap(), 2).unwrap();
        let cfg = ApproxConfig::new(2)
            .with_extra_seed(wrong_rank)
            .with_extra_seed(wrong_avg)
            .with_restarts(2);
        let res = approx_hk(&a, &cfg).unwrap();
        assert_eq!(res.seeds_rejected, vec![0, 1]);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = random_positive(4, 4, 5).unwrap();
        let cfg = ApproxConfig::new(2).with_restarts(6).with_seed(3);
        let x = approx_hk(&a, &cfg).unwrap();
        let y = approx_hk(&a, &cfg).unwrap();
        assert_eq!(x.hk_lower.to_bits(), y.hk_lower.to_bits());
        assert!(x.delta_hat >= -1e-9);
        assert!(x.delta_hat <= x.delta_tilde + 1e-9);
        assert!(x.hk_lower <= a.trace() * 2f64.ln() + 1e-9);
        close(ensemble_gap(&x.best_ensemble).finite().unwrap(), x.delta_hat, 1e-8);
        assert!(x.best_ensemble.max_member_rank() <= 2);
    }

    #[test]
    fn chain_is_monotone() {
        let a = random_positive(4, 4, 8).unwrap();
        let res = approx_chain(&a, 4, &ApproxConfig::new(1).with_restarts(4)).unwrap();
        for w in res.windows(2) {
            assert!(w[1].hk_lower >= w[0].hk_lower - 1e-9);
        }
        close(res[3].delta_hat, 0.0, 1e-12);
    }

    #[test]
    fn m_sensitivity_is_reported() {
        let a = random_positive(3, 3, 2).unwrap();
        let mut cfg = ApproxConfig::new(2).with_restarts(4);
        cfg.m_sensitivity = vec![2, 6];
        let res = approx_hk(&a, &cfg).unwrap();
        assert_eq!(res.m_sensitivity.len(), 2);
        assert!(res.m_sensitivity.iter().all(|s| s.hk_lower <= res.entropy + 1e-12));
    }

    #[test]
    fn oracle_examples() {
        let pure = random_positive(3, 1, 4).unwrap();
        close(oracle_delta(&pure, 1).unwrap(), 0.0, 0.0);
        close(oracle_delta(&pure, 2).unwrap(), 0.0, 0.0);
        close(oracle_delta(&PositiveOperator::maximally_mixed(2), 1).unwrap(), 2f64.ln(), 1e-12);
        let d = oracle_delta(&PositiveOperator::maximally_mixed(3), 2).unwrap();
        assert!((0.0..=0.4748).contains(&d), "{d}");
        assert!(oracle_delta(&PositiveOperator::maximally_mixed(5), 2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_positive(3, 3, 7).unwrap();
        let oracle = GradientOracle {
            s: SpectralFactor::of(&a).values,
            k: 2,
        };
        let u = random_stiefel_with(6, 3, &mut rng(2)).unwrap();
        let (_, g) = oracle.value_and_gradient(&u);
        let mut dir = crate::linalg::complex_gaussian(6, 3, &mut rng(3));
        dir.unscale_mut(frobenius(&dir));
        let h = 1e-6;
        let fd = (oracle.value(&(&u + dir.scale(h))) - oracle.value(&(&u - dir.scale(h)))) / (2.0 * h);
        let analytic: f64 = g.iter().zip(dir.iter()).map(|(x, y)| (x.conj() * y).re).sum();
        close(fd, analytic, 1e-6);
    }
}
