//! Uniform-approximation diagnostics over sampled operator families.
//!
//! A family is a recipe for drawing positive operators: a base set (energy
//! balls, random low-rank states, a fixed operator) closed under a few
//! set-operations (domination, mixtures, channel images, sums, scaling,
//! normalization). [`ua_sweep`] reports the empirical sup of the gap
//! estimates over a sample of the family for each rank cap `k`.
//!
//! The module also carries the classical pieces used to reason about energy
//! sets: the growth index of an energy sequence and the constrained
//! maximization of `Σ η(x_j) / h_j` over the positive unit ball of `l1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::approximator::{approx_hk, ApproxConfig};
use crate::entropy::{eta0, WeightSequence};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    derive_seed, load_matrix, random_positive_with, random_unitary, substream, CMatrix,
    KrausOperation, PositiveOperator, Rng, C64,
};

/// Growth class of an energy sequence `h_1 <= h_2 <= ...`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    /// `h_j = j`.
    Linear,
    /// `h_j = ln(j + 1)`.
    Logarithmic,
    /// Explicit finite truncation.
    Custom(Vec<f64>),
}

impl Growth {
    /// First `n` levels of the sequence.
    pub fn levels(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Growth::Linear => Ok((1..=n).map(|j| j as f64).collect()),
            Growth::Logarithmic => Ok((1..=n).map(|j| (j as f64 + 1.0).ln()).collect()),
            Growth::Custom(h) if h.len() >= n => Ok(h[..n].to_vec()),
            Growth::Custom(h) => Err(invalid(
                "levels",
                format!("{} levels given, {n} needed", h.len()),
            )),
        }
    }
}

/// Value of `g(h) = inf{λ > 0 : Σ e^{-λ h_j} < ∞}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GIndex {
    Exact { value: f64 },
    Infinite,
    /// Numeric bracket from a finite truncation.
    Bracket { lo: f64, hi: f64, width: f64 },
}

/// Growth index of a nondecreasing sequence.
///
/// Tagged growth classes return their analytic value. For a custom
/// truncation the index equals `limsup ln(j) / h_j`, the abscissa at which
/// `Σ e^{-λ h_j}` switches from divergent to convergent; the bracket is the
/// range of `ln(j) / h_j` over the second half of the truncation.
pub fn g_index(h: &WeightSequence, growth: &Growth) -> Result<GIndex> {
    let v = h.values();
    if v.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("h", "sequence must be nondecreasing"));
    }
    if v.is_empty() || v.iter().all(|&x| x == 0.0) {
        return Ok(GIndex::Infinite);
    }
    match growth {
        Growth::Linear => Ok(GIndex::Exact { value: 0.0 }),
        Growth::Logarithmic => Ok(GIndex::Exact { value: 1.0 }),
        Growth::Custom(_) => {
            let n = v.len();
            let start = (n / 2).max(1);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for (i, &hj) in v.iter().enumerate().skip(start) {
                let j = (i + 1) as f64;
                if hj == 0.0 {
                    return Ok(GIndex::Infinite);
                }
                let r = j.ln() / hj;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            if !lo.is_finite() {
                // A single-term truncation carries no tail information.
                let r = if v[0] > 0.0 { 0.0 } else { f64::INFINITY };
                return Ok(GIndex::Bracket { lo: r, hi: r, width: 0.0 });
            }
            Ok(GIndex::Bracket {
                lo,
                hi,
                width: hi - lo,
            })
        }
    }
}

/// Maximizer of `Σ η(x_j) / h_j` over `{x >= 0, Σ x_j <= 1}`.
#[derive(Clone, Debug, Serialize)]
pub struct LambdaStar {
    /// Root of `Σ e^{-λ h_j} = e`.
    pub lambda: f64,
    /// `|Σ e^{-λ h_j} - e|` at the returned root.
    pub residual: f64,
    /// `x_j = e^{-λ h_j - 1}`.
    pub maximizer: Vec<f64>,
    /// `λ + Σ x_j / h_j`.
    pub sup_value: f64,
    /// `Σ x_j / h_j`, the part of the supremum above `λ`.
    pub excess: f64,
    /// `Σ x_j / h_1`, termwise bound of the excess.
    pub excess_bound: f64,
}

impl LambdaStar {
    /// `λ <= sup <= λ + Σ x_j / h_1`, checked on the returned decomposition.
    pub fn double_inequality_holds(&self) -> bool {
        self.lambda <= self.sup_value
            && self.excess <= self.excess_bound
            && self.sup_value == self.lambda + self.excess
    }
}

fn validate_levels(h: &[f64]) -> Result<()> {
    if h.len() <= 2 {
        return Err(invalid(
            "h",
            format!(
                "Σ e^(-λ h_j) = e has no positive root for {} terms; at least 3 are needed",
                h.len()
            ),
        ));
    }
    if h.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid("h", "all levels must be positive and finite"));
    }
    if h.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("h", "sequence must be nondecreasing"));
    }
    Ok(())
}

/// Solves `Σ e^{-λ h_j} = e` by bisection and returns the Lagrange maximizer.
pub fn lambda_star(h: &[f64]) -> Result<LambdaStar> {
    validate_levels(h)?;
    let e = std::f64::consts::E;
    let f = |lam: f64| h.iter().map(|&x| (-lam * x).exp()).sum::<f64>() - e;
    let n = h.len() as f64;
    let mut lo = 0.0;
    let mut hi = (n.ln() - 1.0) / h[0] + 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lam = 0.5 * (lo + hi);
    for _ in 0..200 {
        lam = 0.5 * (lo + hi);
        let v = f(lam);
        if v.abs() <= 1e-13 || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if v > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
    }
    let residual = f(lam).abs();
    let maximizer: Vec<f64> = h.iter().map(|&x| (-lam * x - 1.0).exp()).collect();
    let excess: f64 = maximizer.iter().zip(h).map(|(x, hj)| x / hj).sum();
    let excess_bound: f64 = maximizer.iter().map(|x| x / h[0]).sum();
    Ok(LambdaStar {
        lambda: lam,
        residual,
        maximizer,
        sup_value: lam + excess,
        excess,
        excess_bound,
    })
}

/// Objective `Σ η(x_j) / h_j`.
pub fn l1_objective(x: &[f64], h: &[f64]) -> f64 {
    x.iter().zip(h).map(|(&xj, &hj)| eta0(xj) / hj).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct L1BallSup {
    pub analytic: LambdaStar,
    /// Best value found by uniform sampling of the ball, when requested.
    pub sampled_best: Option<f64>,
    pub samples: usize,
}

pub const L1_SEARCH_SAMPLES: usize = 5000;

/// Analytic supremum of `Σ η(x_j)/h_j` over the positive unit `l1` ball in
/// `R^n`, optionally cross-checked against uniform random points of the ball.
pub fn l1_ball_sup(h: &[f64], n: usize, grid_check: bool, seed: u64) -> Result<L1BallSup> {
    if n > h.len() {
        return Err(invalid("n", format!("{n} exceeds the {} given levels", h.len())));
    }
    let h = &h[..n];
    let analytic = lambda_star(h)?;
    let sampled_best = grid_check.then(|| {
        let mut rng = substream(seed, 0x11);
        let mut best = f64::NEG_INFINITY;
        let mut x = vec![0.0; n];
        for _ in 0..L1_SEARCH_SAMPLES {
            uniform_ball_point(&mut rng, &mut x);
            best = best.max(l1_objective(&x, h));
        }
        best
    });
    Ok(L1BallSup {
        analytic,
        sampled_best,
        samples: if grid_check { L1_SEARCH_SAMPLES } else { 0 },
    })
}

/// Uniform point of `{x >= 0, Σ x <= 1}`: normalized exponentials with one slack coordinate.
fn uniform_ball_point(rng: &mut Rng, x: &mut [f64]) {
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = Exp1.sample(rng);
        total += *v;
    }
    let slack: f64 = Exp1.sample(rng);
    total += slack;
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Supremum over the tail `j > m` for each `m`: `λ` and value of the shifted sequence.
pub fn tail_sweep(h: &[f64], ms: &[usize]) -> Result<Vec<(usize, LambdaStar)>> {
    ms.iter()
        .map(|&m| {
            if m >= h.len() {
                return Err(invalid("m", format!("{m} leaves an empty tail")));
            }
            Ok((m, lambda_star(&h[m..])?))
        })
        .collect()
}

/// Set-operation tree describing a family.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FamilySpec {
    /// Unit-trace states with `Σ h_j λ_j <= bound`, spectrum in a random basis.
    EnergyBall { growth: Growth, bound: f64 },
    /// Unit-trace states of rank `<= rank`.
    RandomRank { rank: usize },
    /// The single operator loaded from `path`.
    Fixed {
        path: String,
        #[serde(skip)]
        operator: PositiveOperator,
    },
    /// `B = A^{1/2} R A^{1/2}` with `0 <= R <= I`, so `0 <= B <= A`.
    Dominated { base: Box<FamilySpec> },
    /// Spectrum elementwise below the base spectrum, in a random basis.
    MajorizationDominated { base: Box<FamilySpec> },
    /// Convex combinations of `m` base samples with uniform random weights.
    Mixtures { base: Box<FamilySpec>, m: usize },
    /// Images under random `n`-term Kraus sets with `Σ V*V <= I`.
    KrausImages { base: Box<FamilySpec>, n: usize },
    Minkowski {
        left: Box<FamilySpec>,
        right: Box<FamilySpec>,
    },
    Scaled { base: Box<FamilySpec>, factor: f64 },
    /// Samples divided by their trace (zero stays zero).
    NormalizedRays { base: Box<FamilySpec> },
}

pub const FAMILY_GRAMMAR: &str = "\
family := energy_ball:<linear|log>:<bound>
        | rank:<r>
        | fixed:<matrix.json>
        | dominated:<family>
        | majorization:<family>
        | mixtures:<family>:<m>
        | kraus:<family>:<n>
        | minkowski:<family>:<family>
        | scaled:<family>:<factor>
        | normalized:<family>";

impl FamilySpec {
    fn parse_tokens<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let head = tokens
            .next()
            .ok_or_else(|| invalid("family", "unexpected end of family spec"))?;
        let mut next = |field: &str| {
            tokens
                .next()
                .ok_or_else(|| invalid(field, format!("missing parameter after '{head}'")))
        };
        fn num<T: FromStr>(field: &str, s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| invalid(field, format!("cannot parse '{s}'")))
        }
        let spec = match head {
            "energy_ball" => {
                let growth = match next("growth")? {
                    "linear" => Growth::Linear,
                    "log" | "logarithmic" => Growth::Logarithmic,
                    other => {
                        return Err(invalid("growth", format!("expected linear or log, got '{other}'")))
                    }
                };
                let bound = num("bound", next("bound")?)?;
                FamilySpec::EnergyBall { growth, bound }
            }
            "rank" => FamilySpec::RandomRank {
                rank: num("rank", next("rank")?)?,
            },
            "fixed" => {
                let path = next("path")?.to_string();
                let operator = load_matrix(&path)?;
                FamilySpec::Fixed { path, operator }
            }
            "dominated" => FamilySpec::Dominated {
                base: Box::new(Self::parse_tokens(tokens)?),
            },
            "majorization" => FamilySpec::MajorizationDominated {
                base: Box::new(Self::parse_tokens(tokens)?),
            },
            "normalized" => FamilySpec::NormalizedRays {
                base: Box::new(Self::parse_tokens(tokens)?),
            },
            "mixtures" => {
                let base = Box::new(Self::parse_tokens(tokens)?);
                let m = num("m", tokens.next().ok_or_else(|| invalid("m", "missing mixture size"))?)?;
                FamilySpec::Mixtures { base, m }
            }
            "kraus" => {
                let base = Box::new(Self::parse_tokens(tokens)?);
                let n = num("n", tokens.next().ok_or_else(|| invalid("n", "missing Kraus count"))?)?;
                FamilySpec::KrausImages { base, n }
            }
            "scaled" => {
                let base = Box::new(Self::parse_tokens(tokens)?);
                let factor = num(
                    "factor",
                    tokens.next().ok_or_else(|| invalid("factor", "missing scale factor"))?,
                )?;
                FamilySpec::Scaled { base, factor }
            }
            "minkowski" => {
                let left = Box::new(Self::parse_tokens(tokens)?);
                let right = Box::new(Self::parse_tokens(tokens)?);
                FamilySpec::Minkowski { left, right }
            }
            other => return Err(invalid("family", format!("unknown set-operation '{other}'"))),
        };
        Ok(spec)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            FamilySpec::EnergyBall { growth, bound } => {
                let h = growth.levels(dim)?;
                if h.windows(2).any(|w| w[1] < w[0]) || h.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("levels", "must be finite and nondecreasing"));
                }
                if !(*bound > h[0]) || !bound.is_finite() {
                    return Err(invalid(
                        "bound",
                        format!("must exceed the lowest level {} to give a nonempty ball", h[0]),
                    ));
                }
                Ok(())
            }
            FamilySpec::RandomRank { rank } => {
                if *rank < 1 || *rank > dim {
                    return Err(invalid("rank", format!("must lie in 1..={dim}")));
                }
                Ok(())
            }
            FamilySpec::Fixed { operator, .. } => {
                if operator.dim() != dim {
                    return Err(invalid(
                        "dim",
                        format!("fixed operator has dim {}, family dim is {dim}", operator.dim()),
                    ));
                }
                Ok(())
            }
            FamilySpec::Dominated { base }
            | FamilySpec::MajorizationDominated { base }
            | FamilySpec::NormalizedRays { base } => base.validate(dim),
            FamilySpec::Mixtures { base, m } => {
                if *m < 1 {
                    return Err(invalid("m", "must be at least 1"));
                }
                base.validate(dim)
            }
            FamilySpec::KrausImages { base, n } => {
                if *n < 1 {
                    return Err(invalid("n", "must be at least 1"));
                }
                base.validate(dim)
            }
            FamilySpec::Minkowski { left, right } => {
                left.validate(dim)?;
                right.validate(dim)
            }
            FamilySpec::Scaled { base, factor } => {
                if !(*factor >= 0.0) || !factor.is_finite() {
                    return Err(invalid("factor", "must be finite and nonnegative"));
                }
                base.validate(dim)
            }
        }
    }

    fn draw(&self, dim: usize, rng: &mut Rng, stats: &mut SampleStats) -> Result<PositiveOperator> {
        Ok(match self {
            FamilySpec::EnergyBall { growth, bound } => {
                let h = growth.levels(dim)?;
                let spectrum = energy_spectrum(&h, *bound, rng, stats)?;
                in_random_basis(&spectrum, rng)
            }
            FamilySpec::RandomRank { rank } => random_positive_with(dim, *rank, rng)?,
            FamilySpec::Fixed { operator, .. } => operator.clone(),
            FamilySpec::Dominated { base } => {
                let a = base.draw(dim, rng, stats)?;
                let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let r = in_random_basis(&u, rng);
                let root = a.sqrt();
                PositiveOperator::from_matrix(&root * r.matrix() * &root)?
            }
            FamilySpec::MajorizationDominated { base } => {
                let a = base.draw(dim, rng, stats)?;
                let spectrum: Vec<f64> = a
                    .eigenvalues()
                    .iter()
                    .map(|&l| l * rng.random::<f64>())
                    .collect();
                in_random_basis(&spectrum, rng)
            }
            FamilySpec::Mixtures { base, m } => {
                let parts = (0..*m)
                    .map(|_| base.draw(dim, rng, stats))
                    .collect::<Result<Vec<_>>>()?;
                let raw: Vec<f64> = (0..*m).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = raw.iter().sum();
                parts
                    .iter()
                    .zip(&raw)
                    .fold(PositiveOperator::zero(dim), |acc, (p, w)| acc.add(&p.scaled(w / total)))
            }
            FamilySpec::KrausImages { base, n } => {
                let a = base.draw(dim, rng, stats)?;
                let phi = KrausOperation::random(dim, *n, false, rng)?;
                phi.apply(&a)
            }
            FamilySpec::Minkowski { left, right } => {
                let a = left.draw(dim, rng, stats)?;
                let b = right.draw(dim, rng, stats)?;
                a.add(&b)
            }
            FamilySpec::Scaled { base, factor } => base.draw(dim, rng, stats)?.scaled(*factor),
            FamilySpec::NormalizedRays { base } => {
                let a = base.draw(dim, rng, stats)?;
                if a.trace() > 0.0 {
                    a.normalized()
                } else {
                    a
                }
            }
        })
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilySpec::EnergyBall { growth, bound } => {
                let g = match growth {
                    Growth::Linear => "linear".to_string(),
                    Growth::Logarithmic => "log".to_string(),
                    Growth::Custom(h) => format!("custom{h:?}"),
                };
                write!(f, "energy_ball:{g}:{bound}")
            }
            FamilySpec::RandomRank { rank } => write!(f, "rank:{rank}"),
            FamilySpec::Fixed { path, .. } => write!(f, "fixed:{path}"),
            FamilySpec::Dominated { base } => write!(f, "dominated:{base}"),
            FamilySpec::MajorizationDominated { base } => write!(f, "majorization:{base}"),
            FamilySpec::Mixtures { base, m } => write!(f, "mixtures:{base}:{m}"),
            FamilySpec::KrausImages { base, n } => write!(f, "kraus:{base}:{n}"),
            FamilySpec::Minkowski { left, right } => write!(f, "minkowski:{left}:{right}"),
            FamilySpec::Scaled { base, factor } => write!(f, "scaled:{base}:{factor}"),
            FamilySpec::NormalizedRays { base } => write!(f, "normalized:{base}"),
        }
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split(':');
        let spec = Self::parse_tokens(&mut tokens)?;
        if let Some(extra) = tokens.next() {
            return Err(invalid("family", format!("trailing token '{extra}'")));
        }
        Ok(spec)
    }
}

fn in_random_basis(spectrum: &[f64], rng: &mut Rng) -> PositiveOperator {
    let dim = spectrum.len();
    let w = random_unitary(dim, rng);
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        spectrum.iter().map(|&x| C64::new(x, 0.0)),
    ));
    PositiveOperator::from_matrix(&w * d * w.adjoint()).expect("conjugated diagonal is positive")
}

/// Rejection sampler counts, summed over draws.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SampleStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl SampleStats {
    pub fn rejection_rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| 1.0 - self.accepted as f64 / self.proposals as f64)
    }

    fn merge(self, other: Self) -> Self {
        Self {
            proposals: self.proposals + other.proposals,
            accepted: self.accepted + other.accepted,
        }
    }
}

const MAX_PROPOSALS: u64 = 1_000_000;

/// Uniform spectrum on `{π in simplex : Σ h_j π_j <= bound}`.
///
/// In coordinates `π_2..π_n` the set is the intersection of the standard
/// corner simplex `Σ π_j <= 1` with the corner simplex `Σ c_j π_j <= 1`,
/// `c_j = (h_j - h_1) / (bound - h_1)`. Proposals are drawn uniformly from
/// whichever of the two has smaller volume and rejected if outside the other.
fn energy_spectrum(h: &[f64], bound: f64, rng: &mut Rng, stats: &mut SampleStats) -> Result<Vec<f64>> {
    let n = h.len();
    if n == 1 {
        stats.proposals += 1;
        stats.accepted += 1;
        return Ok(vec![1.0]);
    }
    let c: Vec<f64> = h[1..].iter().map(|&x| (x - h[0]) / (bound - h[0])).collect();
    // Degenerate levels (c_j = 0) make the energy simplex unbounded: use the standard one.
    let log_volume_ratio: f64 = c.iter().map(|&x| x.ln()).sum();
    let use_energy = c.iter().all(|&x| x > 0.0) && log_volume_ratio > 0.0;
    let mut y = vec![0.0; n - 1];
    for _ in 0..MAX_PROPOSALS {
        stats.proposals += 1;
        uniform_ball_point(rng, &mut y);
        let tail: Vec<f64> = if use_energy {
            y.iter().zip(&c).map(|(v, cj)| v / cj).collect()
        } else {
            y.clone()
        };
        let mass: f64 = tail.iter().sum();
        let energy: f64 = tail.iter().zip(&c).map(|(v, cj)| v * cj).sum();
        if mass <= 1.0 && energy <= 1.0 {
            stats.accepted += 1;
            let mut out = Vec::with_capacity(n);
            out.push((1.0 - mass).max(0.0));
            out.extend(tail);
            return Ok(out);
        }
    }
    Err(invalid(
        "bound",
        format!("rejection sampler accepted nothing in {MAX_PROPOSALS} proposals"),
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorFamily {
    pub label: String,
    pub spec: FamilySpec,
    pub dim: usize,
}

/// Validates a spec and binds it to a dimension.
pub fn make_family(spec: FamilySpec, dim: usize) -> Result<OperatorFamily> {
    if dim < 1 {
        return Err(invalid("dim", "must be at least 1"));
    }
    spec.validate(dim)?;
    Ok(OperatorFamily {
        label: spec.to_string(),
        spec,
        dim,
    })
}

impl OperatorFamily {
    /// Deterministic draw number `index` for `seed`.
    pub fn sample(&self, index: u64, seed: u64) -> Result<PositiveOperator> {
        Ok(self.sample_with_stats(index, seed)?.0)
    }

    pub fn sample_with_stats(&self, index: u64, seed: u64) -> Result<(PositiveOperator, SampleStats)> {
        let mut rng = substream(derive_seed(seed, 0x5a_4d50), index);
        let mut stats = SampleStats::default();
        let a = self.spec.draw(self.dim, &mut rng, &mut stats)?;
        Ok((a, stats))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub samples: usize,
    pub max_delta_hat: f64,
    pub max_delta_tilde: f64,
    /// Sample attaining `max_delta_hat` (lowest index on ties).
    pub argmax_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub family: String,
    pub dim: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Present when the family uses rejection sampling.
    pub rejection_rate: Option<f64>,
    pub config: ApproxConfig,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,samples,max_delta_hat,max_delta_tilde,argmax_index\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k, r.samples, r.max_delta_hat, r.max_delta_tilde, r.argmax_index
            ));
        }
        out
    }

    /// `max_delta_tilde` strictly decreasing along the rows.
    pub fn tilde_strictly_decreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].max_delta_tilde < w[0].max_delta_tilde)
    }
}

/// Empirical `sup` of `Δ̂_k` and `Δ̃_k` over `samples` draws of the family.
///
/// Draw `i` uses `family.sample(i, cfg.seed)`; the estimator runs with `cfg`
/// and `k` replaced per row. Rows are sorted by `k`.
pub fn ua_sweep(
    family: &OperatorFamily,
    ks: &[usize],
    samples: usize,
    cfg: &ApproxConfig,
) -> Result<SweepTable> {
    if samples < 1 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.first() == Some(&0) {
        return Err(invalid("ks", "every k must be at least 1"));
    }
    let per_sample: Vec<(Vec<(f64, f64)>, SampleStats)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (a, stats) = family.sample_with_stats(i as u64, cfg.seed)?;
            let vals = ks
                .iter()
                .map(|&k| {
                    let mut c = cfg.clone();
                    c.k = k;
                    let r = approx_hk(&a, &c)?;
                    Ok((r.delta_hat, r.delta_tilde))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((vals, stats))
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = ks
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let mut row = SweepRow {
                k,
                samples,
                max_delta_hat: f64::NEG_INFINITY,
                max_delta_tilde: f64::NEG_INFINITY,
                argmax_index: 0,
            };
            for (i, (vals, _)) in per_sample.iter().enumerate() {
                let (dh, dt) = vals[col];
                if dh > row.max_delta_hat {
                    row.max_delta_hat = dh;
                    row.argmax_index = i;
                }
                row.max_delta_tilde = row.max_delta_tilde.max(dt);
            }
            row
        })
        .collect();
    let stats = per_sample
        .iter()
        .fold(SampleStats::default(), |acc, (_, s)| acc.merge(*s));
    let uses_rejection = contains_energy_ball(&family.spec);
    Ok(SweepTable {
        family: family.label.clone(),
        dim: family.dim,
        seed: cfg.seed,
        rows,
        rejection_rate: if uses_rejection { stats.rejection_rate() } else { None },
        config: cfg.clone(),
    })
}

fn contains_energy_ball(spec: &FamilySpec) -> bool {
    match spec {
        FamilySpec::EnergyBall { .. } => true,
        FamilySpec::RandomRank { .. } | FamilySpec::Fixed { .. } => false,
        FamilySpec::Dominated { base }
        | FamilySpec::MajorizationDominated { base }
        | FamilySpec::NormalizedRays { base }
        | FamilySpec::Mixtures { base, .. }
        | FamilySpec::KrausImages { base, .. }
        | FamilySpec::Scaled { base, .. } => contains_energy_ball(base),
        FamilySpec::Minkowski { left, right } => {
            contains_energy_ball(left) || contains_energy_ball(right)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::entropy_h;

    fn seq(v: Vec<f64>) -> WeightSequence {
        WeightSequence::new(v).unwrap()
    }

    #[test]
    fn g_index_tagged_and_degenerate() {
        let lin = seq((1..=50).map(|j| j as f64).collect());
        assert_eq!(g_index(&lin, &Growth::Linear).unwrap(), GIndex::Exact { value: 0.0 });
        let log = seq((1..=50).map(|j| (j as f64 + 1.0).ln()).collect());
        assert_eq!(g_index(&log, &Growth::Logarithmic).unwrap(), GIndex::Exact { value: 1.0 });
        assert_eq!(g_index(&seq(vec![0.0; 10]), &Growth::Custom(vec![])).unwrap(), GIndex::Infinite);
        assert!(g_index(&seq(vec![2.0, 1.0]), &Growth::Linear).is_err());
    }

    #[test]
    fn g_index_custom_brackets_contain_truth() {
        // h_j = 2 ln j  (j >= 2) has index 1/2.
        let h: Vec<f64> = (1..=10_000).map(|j| 2.0 * (j as f64).ln().max(0.1)).collect();
        match g_index(&seq(h.clone()), &Growth::Custom(h)).unwrap() {
            GIndex::Bracket { lo, hi, width } => {
                assert!(lo <= 0.5 + 1e-12 && hi >= 0.5 - 1e-12, "{lo} {hi}");
                assert!(width < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        // h_j = sqrt(j): index 0, bracket shrinks toward it.
        let h: Vec<f64> = (1..=10_000).map(|j| (j as f64).sqrt()).collect();
        match g_index(&seq(h.clone()), &Growth::Custom(h)).unwrap() {
            GIndex::Bracket { lo, hi, .. } => assert!(lo >= 0.0 && hi < 0.13, "{lo} {hi}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_star_constant_levels() {
        let r = lambda_star(&[1.0, 1.0, 1.0]).unwrap();
        assert!((r.lambda - (3f64.ln() - 1.0)).abs() < 1e-12);
        assert!(r.residual <= 1e-12);
        assert!(r.double_inequality_holds());
        // Maximizer is uniform 1/3 and the supremum is H of the uniform distribution.
        assert!((r.sup_value - 3f64.ln()).abs() < 1e-12);
        assert!((l1_objective(&r.maximizer, &[1.0; 3]) - r.sup_value).abs() < 1e-12);
    }

    #[test]
    fn lambda_star_linear_limit() {
        let h: Vec<f64> = (1..=60).map(|j| j as f64).collect();
        let r = lambda_star(&h).unwrap();
        let limit = (1.0 + std::f64::consts::E).ln() - 1.0;
        assert!((r.lambda - limit).abs() < 1e-6);
        assert!(r.double_inequality_holds());
    }

    #[test]
    fn lambda_star_rejects_short_truncations() {
        let err = lambda_star(&[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("at least 3"), "{err}");
        assert!(lambda_star(&[0.0, 1.0, 2.0]).is_err());
        assert!(lambda_star(&[3.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn random_search_never_beats_analytic() {
        let h = [0.5, 1.0, 1.5, 3.0, 7.0];
        let r = l1_ball_sup(&h, 5, true, 4).unwrap();
        assert!(r.sampled_best.unwrap() <= r.analytic.sup_value + 1e-9);
        assert_eq!(r.samples, L1_SEARCH_SAMPLES);
    }

    #[test]
    fn tail_sweeps_approach_growth_index() {
        let lin: Vec<f64> = (1..=400).map(|j| j as f64).collect();
        let t = tail_sweep(&lin, &[0, 10, 50, 200]).unwrap();
        for w in t.windows(2) {
            assert!(w[1].1.sup_value < w[0].1.sup_value);
        }
        assert!(t[3].1.sup_value < 0.02);

        let log: Vec<f64> = (1..=200_000).map(|j| (j as f64 + 1.0).ln()).collect();
        let t = tail_sweep(&log, &[0, 10, 100, 1000]).unwrap();
        for w in t.windows(2) {
            assert!(w[1].1.sup_value < w[0].1.sup_value);
        }
        assert!(t.iter().all(|(_, r)| r.sup_value > 1.0));
    }

    #[test]
    fn parse_round_trips() {
        for s in [
            "energy_ball:linear:2",
            "rank:2",
            "scaled:energy_ball:log:1.5:0",
            "minkowski:rank:1:dominated:rank:3",
            "mixtures:kraus:rank:2:3:4",
            "normalized:majorization:rank:2",
        ] {
            let spec: FamilySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("energy_ball:cubic:2".parse::<FamilySpec>().is_err());
        assert!("rank".parse::<FamilySpec>().is_err());
        assert!("rank:2:extra".parse::<FamilySpec>().is_err());
        assert!("teleport:rank:2".parse::<FamilySpec>().is_err());
    }

    #[test]
    fn make_family_validates() {
        let bad = |s: &str, dim| make_family(s.parse().unwrap(), dim).is_err();
        assert!(bad("energy_ball:linear:1", 4));
        assert!(bad("rank:5", 4));
        assert!(bad("mixtures:rank:1:0", 4));
        assert!(bad("kraus:rank:1:0", 4));
        assert!(bad("scaled:rank:1:-1", 4));
        assert!(make_family("rank:1".parse().unwrap(), 0).is_err());
    }

    #[test]
    fn samplers_are_deterministic_and_respect_constraints() {
        let fam = make_family("energy_ball:linear:2".parse().unwrap(), 8).unwrap();
        for i in 0..50 {
            let a = fam.sample(i, 7).unwrap();
            let b = fam.sample(i, 7).unwrap();
            assert_eq!(a.matrix(), b.matrix());
            assert!((a.trace() - 1.0).abs() < 1e-12);
            // Σ j λ_j is minimized by pairing the largest eigenvalue with the lowest level.
            let energy: f64 = a.eigenvalues().iter().enumerate().map(|(j, l)| (j + 1) as f64 * l).sum();
            assert!(energy <= 2.0 + 1e-10, "{energy}");
        }
        let base = make_family("rank:3".parse().unwrap(), 4).unwrap();
        let scaled = make_family("scaled:rank:3:1".parse().unwrap(), 4).unwrap();
        assert_eq!(base.sample(3, 1).unwrap().matrix(), scaled.sample(3, 1).unwrap().matrix());
    }

    #[test]
    fn energy_sampler_is_uniform_on_small_ball() {
        // Levels (1, 2) with bound 1.5: π_2 uniform on [0, 1/2], mean 1/4.
        let mut rng = substream(1, 1);
        let mut stats = SampleStats::default();
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| energy_spectrum(&[1.0, 2.0], 1.5, &mut rng, &mut stats).unwrap()[1])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.01, "{mean}");
        // Levels (1, 1.2) with bound 2: the energy constraint is inactive, no rejections needed.
        let mut stats = SampleStats::default();
        energy_spectrum(&[1.0, 1.2, 1.4], 2.0, &mut rng, &mut stats).unwrap();
        assert_eq!(stats.rejection_rate(), Some(0.0));
    }

    #[test]
    fn dominated_samples_lie_below_base() {
        let a = crate::linalg::random_positive(3, 3, 2).unwrap();
        let path = std::env::temp_dir().join("entroscope_dominated_base.json");
        crate::linalg::save_matrix(&path, a.matrix()).unwrap();
        let spec: FamilySpec = format!("dominated:fixed:{}", path.display()).parse().unwrap();
        let fam = make_family(spec, 3).unwrap();
        for i in 0..50 {
            let b = fam.sample(i, 0).unwrap();
            assert!(a.min_eigenvalue_of_difference(&b) >= -1e-10);
        }
        let maj = make_family("majorization:rank:3".parse().unwrap(), 3).unwrap();
        let base = make_family("rank:3".parse().unwrap(), 3).unwrap();
        for i in 0..20 {
            let (b, a) = (maj.sample(i, 5).unwrap(), base.sample(i, 5).unwrap());
            for (x, y) in b.eigenvalues().iter().zip(a.eigenvalues()) {
                assert!(*x <= y + 1e-12);
            }
        }
    }

    #[test]
    fn low_rank_family_has_zero_maxima() {
        let fam = make_family("rank:2".parse().unwrap(), 4).unwrap();
        let t = ua_sweep(&fam, &[3, 2], 5, &ApproxConfig::new(1).with_restarts(1)).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 3]);
        for r in &t.rows {
            assert_eq!(r.max_delta_hat, 0.0);
            assert_eq!(r.max_delta_tilde, 0.0);
        }
        assert!(t.rejection_rate.is_none());
        assert!(t.to_csv().starts_with("k,samples,max_delta_hat,max_delta_tilde,argmax_index\n"));
    }

    #[test]
    fn zero_scaled_family_has_zero_gaps() {
        let fam = make_family("scaled:rank:3:0".parse().unwrap(), 3).unwrap();
        let t = ua_sweep(&fam, &[1, 2], 3, &ApproxConfig::new(1).with_restarts(1)).unwrap();
        assert!(t.rows.iter().all(|r| r.max_delta_hat == 0.0 && r.max_delta_tilde == 0.0));
    }

    #[test]
    fn single_sample_table_matches_direct_run() {
        let fam = make_family("rank:3".parse().unwrap(), 3).unwrap();
        let cfg = ApproxConfig::new(1).with_restarts(2).with_seed(9);
        let t = ua_sweep(&fam, &[1, 2], 1, &cfg).unwrap();
        let a = fam.sample(0, 9).unwrap();
        assert!((t.rows[0].max_delta_hat - entropy_h(&a)).abs() < 1e-12);
        let direct = approx_hk(&a, &ApproxConfig { k: 2, ..cfg }).unwrap();
        assert_eq!(t.rows[1].max_delta_hat, direct.delta_hat);
        assert_eq!(t.rows[1].max_delta_tilde, direct.delta_tilde);
    }
}
