//! Two explicit constructions.
//!
//! The qutrit witness: a two-member decomposition of `I₃/3` into rank-2 states
//! whose gap is strictly below the spectral coarse-graining bound, so the
//! bound `Δ̃_k` is not tight.
//!
//! The block-diagonal sequence: `σ_i = (1 - λ_i) ρ₀ + λ_i ρ_i` with `ρ₀` pure,
//! `ρ_i = I/d_i` on mutually orthogonal blocks and `λ_i = 1 / ln d_i`. Every
//! `σ_i` has entropy at least one while `σ_i -> ρ₀` and `H(ρ₀) = 0`, and
//! mixtures of the `σ_i` have an entropy given by a closed formula.

use serde::Serialize;

use crate::approximator::{approx_hk, delta_tilde, ApproxConfig};
use crate::ensembles::Ensemble;
use crate::entropy::{entropy_h, eta0, WeightSequence};
use crate::error::{invalid, Result};
use crate::linalg::{c, frobenius, CVector, PositiveOperator};

#[derive(Clone, Debug, Serialize)]
pub struct Remark3Report {
    pub h_rho: f64,
    pub h_rho1: f64,
    pub h_rho2: f64,
    pub ensemble_value: f64,
    pub delta_tilde_2: f64,
    pub delta_hat_2: f64,
    pub strict_gap_confirmed: bool,
    /// `‖(4/9)ρ₁ + (5/9)ρ₂ - I/3‖_F`.
    pub average_error: f64,
}

/// Margin by which `delta_hat_2` must undercut `delta_tilde_2`.
pub const STRICT_GAP_MARGIN: f64 = 1e-3;

fn real3(x: f64, y: f64, z: f64) -> CVector {
    CVector::from_vec(vec![c(x, 0.0), c(y, 0.0), c(z, 0.0)])
}

/// The rank-2 pair: `ρ₁` mixes two trine vectors equally, `ρ₂` mixes the
/// third trine vector (weight 2/5) with the orthogonal axis (weight 3/5).
pub fn remark3_members() -> (PositiveOperator, PositiveOperator) {
    let s = 3f64.sqrt() / 2.0;
    let phi = [
        real3(1.0, 0.0, 0.0),
        real3(-0.5, s, 0.0),
        real3(-0.5, -s, 0.0),
        real3(0.0, 0.0, 1.0),
    ];
    let proj = |v: &CVector, w: f64| PositiveOperator::projector_onto(v).scaled(w);
    let rho1 = proj(&phi[0], 0.5).add(&proj(&phi[1], 0.5));
    let rho2 = proj(&phi[2], 0.4).add(&proj(&phi[3], 0.6));
    (rho1, rho2)
}

/// `{4/9: ρ₁, 5/9: ρ₂}`, a decomposition of `I₃/3`.
pub fn remark3_ensemble() -> Ensemble {
    let (rho1, rho2) = remark3_members();
    Ensemble::new(vec![4.0 / 9.0, 5.0 / 9.0], vec![rho1, rho2])
        .expect("weights sum to one and members are positive")
}

pub fn remark3_witness() -> Result<Remark3Report> {
    remark3_witness_with(&ApproxConfig::new(2))
}

/// Runs the witness with a caller-chosen estimator config (`k` is forced to 2
/// and the two-member ensemble is appended to the seeds).
pub fn remark3_witness_with(cfg: &ApproxConfig) -> Result<Remark3Report> {
    let rho = PositiveOperator::maximally_mixed(3);
    let (rho1, rho2) = remark3_members();
    let ensemble = remark3_ensemble();
    let average_error = frobenius(&(ensemble.average().matrix() - rho.matrix()));
    let mut cfg = cfg.clone();
    cfg.k = 2;
    cfg.extra_seeds.push(ensemble.clone());
    let res = approx_hk(&rho, &cfg)?;
    let delta_tilde_2 = delta_tilde(&rho, 2)?;
    Ok(Remark3Report {
        h_rho: entropy_h(&rho),
        h_rho1: entropy_h(&rho1),
        h_rho2: entropy_h(&rho2),
        ensemble_value: ensemble.value(),
        delta_tilde_2,
        delta_hat_2: res.delta_hat,
        strict_gap_confirmed: res.delta_hat < delta_tilde_2 - STRICT_GAP_MARGIN,
        average_error,
    })
}

/// Block dimensions `d_i >= 3` and mixing weights `π_i` of the sequence.
#[derive(Clone, Debug, Serialize)]
pub struct BlockSequenceSpec {
    pub block_dims: Vec<usize>,
    pub weights: WeightSequence,
}

/// Largest matrix materialized by [`blockdiag_entropy_direct`].
pub const DIRECT_DIM_CAP: usize = 64;

impl BlockSequenceSpec {
    /// Weights shorter than `block_dims` are padded with zeros; they must sum to one.
    pub fn new(block_dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(invalid("block_dims", "at least one block is required"));
        }
        if let Some(&d) = block_dims.iter().find(|&&d| d < 3) {
            return Err(invalid(
                "block_dims",
                format!("d = {d} < 3 gives λ = 1/ln d > 1"),
            ));
        }
        if weights.len() > block_dims.len() {
            return Err(invalid("weights", "more weights than blocks"));
        }
        let mut padded = weights;
        padded.resize(block_dims.len(), 0.0);
        let weights = WeightSequence::new(padded)?;
        if (weights.total() - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "weights",
                format!("must sum to 1, got {}", weights.total()),
            ));
        }
        Ok(Self {
            block_dims,
            weights,
        })
    }

    /// `λ_i = 1 / ln d_i`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.block_dims.iter().map(|&d| 1.0 / (d as f64).ln()).collect()
    }

    pub fn total_dim(&self) -> usize {
        1 + self.block_dims.iter().sum::<usize>()
    }
}

/// `H(Σ π_i σ_i) = 1 + η(Σ π_i (1 - λ_i)) + Σ π_i λ_i (-ln π_i) + Σ π_i λ_i (-ln λ_i)`.
pub fn blockdiag_entropy_closed_form(spec: &BlockSequenceSpec) -> f64 {
    let lambdas = spec.lambdas();
    let pi = spec.weights.values();
    let on_axis: f64 = pi.iter().zip(&lambdas).map(|(p, l)| p * (1.0 - l)).sum();
    let mut value = 1.0 + eta0(on_axis);
    for (&p, &l) in pi.iter().zip(&lambdas) {
        if p > 0.0 {
            value += p * l * (-p.ln()) + p * l * (-l.ln());
        }
    }
    value
}

/// Materializes `Σ π_i σ_i` as a `(1 + Σ d_i)`-dimensional matrix and
/// evaluates its entropy by eigendecomposition.
pub fn blockdiag_entropy_direct(spec: &BlockSequenceSpec) -> Result<f64> {
    Ok(entropy_h(&blockdiag_mixture(spec)?))
}

pub fn blockdiag_mixture(spec: &BlockSequenceSpec) -> Result<PositiveOperator> {
    let dim = spec.total_dim();
    if dim > DIRECT_DIM_CAP {
        return Err(invalid(
            "block_dims",
            format!("total dimension {dim} exceeds {DIRECT_DIM_CAP}"),
        ));
    }
    let mut total = PositiveOperator::zero(dim);
    let mut offset = 1;
    for ((&d, &p), &l) in spec
        .block_dims
        .iter()
        .zip(spec.weights.values())
        .zip(&spec.lambdas())
    {
        total = total.add(&sigma(dim, offset, d, l).scaled(p));
        offset += d;
    }
    Ok(total)
}

/// `σ = (1 - λ)|e₀⟩⟨e₀| + λ I_d/d` with the block occupying axes `offset..offset + d`.
fn sigma(dim: usize, offset: usize, d: usize, lambda: f64) -> PositiveOperator {
    let mut diag = vec![0.0; dim];
    diag[0] = 1.0 - lambda;
    for v in &mut diag[offset..offset + d] {
        *v = lambda / d as f64;
    }
    PositiveOperator::diagonal(&diag).expect("nonnegative diagonal")
}

/// `H(σ_d)` along `d = 3, 4, ...` next to `H(ρ₀)`.
#[derive(Clone, Debug, Serialize)]
pub struct DiscontinuityExhibit {
    pub block_dims: Vec<usize>,
    pub entropies: Vec<f64>,
    /// Trace distance `‖σ_d - ρ₀‖₁ = 2λ_d`, which tends to zero.
    pub distances: Vec<f64>,
    pub min_entropy: f64,
    pub h_rho0: f64,
    pub holds: bool,
}

pub fn discontinuity_exhibit(max_dim: usize) -> Result<DiscontinuityExhibit> {
    if max_dim < 3 || max_dim + 1 > DIRECT_DIM_CAP {
        return Err(invalid(
            "max_dim",
            format!("must lie in 3..={}", DIRECT_DIM_CAP - 1),
        ));
    }
    let block_dims: Vec<usize> = (3..=max_dim).collect();
    let mut entropies = Vec::new();
    let mut distances = Vec::new();
    for &d in &block_dims {
        let l = 1.0 / (d as f64).ln();
        let s = sigma(1 + d, 1, d, l);
        entropies.push(entropy_h(&s));
        let mut rho0 = vec![0.0; 1 + d];
        rho0[0] = 1.0;
        let diff = s.matrix() - PositiveOperator::diagonal(&rho0)?.matrix();
        distances.push(diff.diagonal().iter().map(|z| z.norm()).sum());
    }
    let h_rho0 = entropy_h(&PositiveOperator::diagonal(&[1.0, 0.0])?);
    let min_entropy = entropies.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DiscontinuityExhibit {
        block_dims,
        entropies,
        distances,
        min_entropy,
        h_rho0,
        holds: min_entropy >= 1.0 - 1e-10 && h_rho0 == 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Remark4Report {
    pub spec: BlockSequenceSpec,
    pub lambdas: Vec<f64>,
    pub closed_form: f64,
    pub direct: f64,
    pub abs_diff: f64,
    pub matches: bool,
    pub exhibit: DiscontinuityExhibit,
    /// The summability condition on `e^{-λ H(ρ_i)}` concerns the infinite
    /// sequence; any finite truncation meets it trivially.
    pub summability_condition: &'static str,
}

pub const CLOSED_FORM_TOL: f64 = 1e-10;

pub fn remark4_report(spec: &BlockSequenceSpec, exhibit_max_dim: usize) -> Result<Remark4Report> {
    let closed_form = blockdiag_entropy_closed_form(spec);
    let direct = blockdiag_entropy_direct(spec)?;
    let abs_diff = (closed_form - direct).abs();
    Ok(Remark4Report {
        spec: spec.clone(),
        lambdas: spec.lambdas(),
        closed_form,
        direct,
        abs_diff,
        matches: abs_diff <= CLOSED_FORM_TOL,
        exhibit: discontinuity_exhibit(exhibit_max_dim)?,
        summability_condition: "vacuous at finite truncation",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remark3_numbers() {
        let r = remark3_witness_with(&ApproxConfig::new(2).with_restarts(4)).unwrap();
        assert!((r.h_rho - 3f64.ln()).abs() < 1e-12);
        assert!(r.average_error <= 1e-12);
        assert!((0.55..=0.58).contains(&r.h_rho1), "{}", r.h_rho1);
        assert!((0.66..=0.68).contains(&r.h_rho2), "{}", r.h_rho2);
        assert!((0.62..=0.63).contains(&r.ensemble_value), "{}", r.ensemble_value);
        assert!((r.delta_tilde_2 - (3f64.ln() - 2.0 / 3.0 * 2f64.ln())).abs() < 1e-12);
        assert!(r.strict_gap_confirmed);
        assert!(r.delta_hat_2 <= r.h_rho - r.ensemble_value + 1e-12);
    }

    #[test]
    fn remark3_member_entropies_from_eigenvalues() {
        // ρ₁ has eigenvalues 1/2 ± 1/4 (overlap of the two trine vectors is -1/2).
        let h1 = eta0(0.75) + eta0(0.25);
        // ρ₂ has eigenvalues 2/5 and 3/5 on orthogonal vectors.
        let h2 = eta0(0.4) + eta0(0.6);
        let (rho1, rho2) = remark3_members();
        assert!((entropy_h(&rho1) - h1).abs() < 1e-12);
        assert!((entropy_h(&rho2) - h2).abs() < 1e-12);
    }

    #[test]
    fn single_block_closed_form() {
        let spec = BlockSequenceSpec::new(vec![3], vec![1.0]).unwrap();
        let l = 1.0 / 3f64.ln();
        let expected = 1.0 + eta0(1.0 - l) + l * (-l.ln());
        assert!((blockdiag_entropy_closed_form(&spec) - expected).abs() < 1e-14);
        assert!((blockdiag_entropy_direct(&spec).unwrap() - expected).abs() < 1e-10);
        let m = blockdiag_mixture(&spec).unwrap();
        let ev = m.eigenvalues();
        assert_eq!(ev.iter().filter(|v| (*v - (1.0 - l)).abs() < 1e-14).count(), 1);
        assert_eq!(ev.iter().filter(|v| (*v - l / 3.0).abs() < 1e-14).count(), 3);
    }

    #[test]
    fn two_block_closed_form_matches_direct() {
        let spec = BlockSequenceSpec::new(vec![3, 4], vec![0.5, 0.5]).unwrap();
        let r = remark4_report(&spec, 10).unwrap();
        assert!(r.matches, "{}", r.abs_diff);
    }

    #[test]
    fn padded_weights_and_concentrated_mass() {
        let spec = BlockSequenceSpec::new(vec![20, 5, 7], vec![1.0]).unwrap();
        assert_eq!(spec.weights.values(), &[1.0, 0.0, 0.0]);
        assert!(blockdiag_entropy_closed_form(&spec) >= 1.0);
        assert!((blockdiag_entropy_closed_form(&spec) - blockdiag_entropy_direct(&spec).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn spec_guards() {
        assert!(BlockSequenceSpec::new(vec![2], vec![1.0]).is_err());
        assert!(BlockSequenceSpec::new(vec![3, 4], vec![0.5]).is_err());
        assert!(BlockSequenceSpec::new(vec![], vec![]).is_err());
        let big = BlockSequenceSpec::new(vec![40, 30], vec![0.5, 0.5]).unwrap();
        assert!(blockdiag_entropy_direct(&big).is_err());
    }

    #[test]
    fn exhibit_never_closes_the_gap() {
        let e = discontinuity_exhibit(60).unwrap();
        assert!(e.holds);
        assert_eq!(e.h_rho0, 0.0);
        assert!(e.entropies.iter().all(|&h| h >= 1.0));
        assert!(e.distances.windows(2).all(|w| w[1] < w[0]));
        assert!(discontinuity_exhibit(2).is_err());
    }
}
