//! Finite ensembles `{π_i, A_i}` with a common average, the isometry
//! parametrization of rank-constrained decompositions, and constructions that
//! push, combine and perturb ensembles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_h, rel_entropy, Extended};
use crate::error::{invalid, Result};
use crate::linalg::{
    c, frobenius, polar_factor, CMatrix, KrausOperation, MatrixFile, PositiveOperator,
};

/// Blocks whose trace falls below this fraction of the total are dropped.
pub const ZERO_WEIGHT_TOL: f64 = 1e-12;

/// Weighted list of positive operators averaging to a cached operator.
#[derive(Clone, Debug)]
pub struct Ensemble {
    weights: Vec<f64>,
    members: Vec<PositiveOperator>,
    average: PositiveOperator,
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(invalid("weights", "ensemble must have at least one member"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(invalid("weights", format!("weight {w} is not a nonnegative real")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(invalid("weights", format!("must sum to 1, got {total}")));
    }
    Ok(())
}

fn weighted_sum(weights: &[f64], members: &[PositiveOperator]) -> CMatrix {
    let d = members[0].dim();
    weights
        .iter()
        .zip(members)
        .fold(CMatrix::zeros(d, d), |acc, (w, m)| acc + m.matrix().scale(*w))
}

impl Ensemble {
    /// Builds an ensemble and computes its average.
    pub fn new(weights: Vec<f64>, members: Vec<PositiveOperator>) -> Result<Self> {
        check_weights(&weights)?;
        Self::check_members(&weights, &members)?;
        let average = PositiveOperator::from_psd(weighted_sum(&weights, &members));
        Ok(Self {
            weights,
            members,
            average,
        })
    }

    /// Builds an ensemble that must average to `average` within `1e-9` (Frobenius).
    pub fn with_average(
        weights: Vec<f64>,
        members: Vec<PositiveOperator>,
        average: PositiveOperator,
    ) -> Result<Self> {
        check_weights(&weights)?;
        Self::check_members(&weights, &members)?;
        if members[0].dim() != average.dim() {
            return Err(invalid("average", "dimension differs from the members"));
        }
        let err = frobenius(&(weighted_sum(&weights, &members) - average.matrix()));
        if err > 1e-9 {
            return Err(invalid(
                "members",
                format!("weighted average misses the target by {err:.3e}"),
            ));
        }
        Ok(Self {
            weights,
            members,
            average,
        })
    }

    fn check_members(weights: &[f64], members: &[PositiveOperator]) -> Result<()> {
        if members.len() != weights.len() {
            return Err(invalid(
                "members",
                format!("{} members for {} weights", members.len(), weights.len()),
            ));
        }
        let d = members[0].dim();
        if members.iter().any(|m| m.dim() != d) {
            return Err(invalid("members", "members must share a dimension"));
        }
        Ok(())
    }

    /// `{1, A}`.
    pub fn singleton(a: PositiveOperator) -> Self {
        Self {
            weights: vec![1.0],
            members: vec![a.clone()],
            average: a,
        }
    }

    pub(crate) fn from_parts(
        weights: Vec<f64>,
        members: Vec<PositiveOperator>,
        average: PositiveOperator,
    ) -> Self {
        debug_assert_eq!(weights.len(), members.len());
        Self {
            weights,
            members,
            average,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[PositiveOperator] {
        &self.members
    }

    pub fn average(&self) -> &PositiveOperator {
        &self.average
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.average.dim()
    }

    /// Largest rank among members carrying positive weight.
    pub fn max_member_rank(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.members)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, m)| m.rank())
            .max()
            .unwrap_or(0)
    }

    /// `Σ π_i H(A_i)`.
    pub fn value(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.members)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, m)| w * entropy_h(m))
            .sum()
    }

    /// Every member and the average multiplied by `lambda >= 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            members: self.members.iter().map(|m| m.scaled(lambda)).collect(),
            average: self.average.scaled(lambda),
        }
    }

    /// Every operator conjugated by `c`: `{π_i, C A_i C*}`.
    pub fn conjugated(&self, c: &CMatrix) -> Self {
        Self {
            weights: self.weights.clone(),
            members: self.members.iter().map(|m| m.conjugate_by(c)).collect(),
            average: self.average.conjugate_by(c),
        }
    }

    pub fn to_file(&self) -> EnsembleFile {
        EnsembleFile {
            weights: self.weights.clone(),
            members: self
                .members
                .iter()
                .map(|m| MatrixFile::from_matrix(m.matrix()))
                .collect(),
        }
    }
}

/// On-disk ensemble format: `{"weights": [...], "members": [matrix objects]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub weights: Vec<f64>,
    pub members: Vec<MatrixFile>,
}

impl EnsembleFile {
    pub fn to_ensemble(&self) -> Result<Ensemble> {
        let members = self
            .members
            .iter()
            .map(MatrixFile::to_positive)
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(self.weights.clone(), members)
    }
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<Ensemble> {
    let text = std::fs::read_to_string(path)?;
    let file: EnsembleFile = serde_json::from_str(&text)?;
    file.to_ensemble()
}

/// Partition of the `m * k` rows of an isometry into `m` blocks of `k` rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    k: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockPlan {
    /// Block `i` holds rows `i*k .. (i+1)*k`.
    pub fn contiguous(m: usize, k: usize) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(invalid("plan", "need m >= 1 and k >= 1"));
        }
        Ok(Self {
            k,
            blocks: (0..m).map(|i| (i * k..(i + 1) * k).collect()).collect(),
        })
    }

    /// Arbitrary assignment; blocks must be disjoint, cover `0..m*k`, and hold `k` rows each.
    pub fn new(k: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if k == 0 || blocks.is_empty() {
            return Err(invalid("plan", "need m >= 1 and k >= 1"));
        }
        let n = blocks.len() * k;
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.len() != k {
                return Err(invalid("plan", format!("block of size {} (expected {k})", b.len())));
            }
            for &j in b {
                if j >= n || std::mem::replace(&mut seen[j], true) {
                    return Err(invalid("plan", format!("row {j} out of range or repeated")));
                }
            }
        }
        Ok(Self { k, blocks })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.len() * self.k
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
}

/// `A = Σ_l s_l |w_l><w_l|` restricted to the support (`s_l > EIG_TOL * Tr A`).
#[derive(Clone, Debug)]
pub struct SpectralFactor {
    pub values: Vec<f64>,
    /// `dim x r` matrix of support eigenvectors.
    pub vectors: CMatrix,
}

impl SpectralFactor {
    pub fn of(a: &PositiveOperator) -> Self {
        let s = a.spectrum();
        let r = s.rank(a.trace());
        Self {
            values: s.values[..r].to_vec(),
            vectors: s.basis.columns(0, r).into_owned(),
        }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// `W diag(√s)`.
    pub fn root(&self) -> CMatrix {
        let mut f = self.vectors.clone();
        for (l, s) in self.values.iter().enumerate() {
            f.column_mut(l).scale_mut(s.sqrt());
        }
        f
    }
}

/// Decomposition of `A` induced by an isometry `U` (`N x r`, `N = m k`).
///
/// Row `j` of `U` defines `|ψ_j> = Σ_l U_jl √s_l |w_l>`; member `i` is the
/// sum of `|ψ_j><ψ_j|` over block `i`, normalized to trace `Tr A`.
pub fn hjw_ensemble(a: &PositiveOperator, u: &CMatrix, plan: &BlockPlan) -> Result<Ensemble> {
    let factor = SpectralFactor::of(a);
    let r = factor.rank();
    if r == 0 {
        return Ok(Ensemble::singleton(a.clone()));
    }
    if u.ncols() != r {
        return Err(invalid("U", format!("has {} columns, rank(A) = {r}", u.ncols())));
    }
    if u.nrows() != plan.n_rows() {
        return Err(invalid(
            "U",
            format!("has {} rows, plan needs {}", u.nrows(), plan.n_rows()),
        ));
    }
    let iso_err = frobenius(&(u.adjoint() * u - CMatrix::identity(r, r)));
    if iso_err > 1e-8 {
        return Err(invalid("U", format!("columns not orthonormal (error {iso_err:.3e})")));
    }
    let psi = factor.root() * u.transpose();
    Ok(collect_blocks(a, &psi, plan.blocks()))
}

fn collect_blocks(a: &PositiveOperator, psi: &CMatrix, blocks: &[Vec<usize>]) -> Ensemble {
    let total = a.trace();
    let d = a.dim();
    let mut weights = Vec::with_capacity(blocks.len());
    let mut members = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut m = CMatrix::zeros(d, d);
        for &j in block {
            let col = psi.column(j);
            m += col * col.adjoint();
        }
        let tr: f64 = m.diagonal().iter().map(|z| z.re).sum();
        if tr <= ZERO_WEIGHT_TOL * total {
            continue;
        }
        weights.push(tr);
        members.push(PositiveOperator::from_psd(m.scale(total / tr)));
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ensemble::from_parts(weights, members, a.clone())
}

/// Groups the eigenvectors of `A` into consecutive blocks of `k` (eigenvalues
/// nonincreasing) and returns `{π_i, P_i A / π_i}` with `π_i = Tr P_i A / Tr A`.
pub fn spectral_coarse_ensemble(a: &PositiveOperator, k: usize) -> Result<Ensemble> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if a.rank() <= k || a.trace() <= 0.0 {
        return Ok(Ensemble::singleton(a.clone()));
    }
    let s = a.spectrum();
    let d = a.dim();
    let blocks: Vec<Vec<usize>> = (0..d)
        .collect::<Vec<_>>()
        .chunks(k)
        .map(<[usize]>::to_vec)
        .collect();
    let mut psi = s.basis.clone();
    for (l, v) in s.values.iter().enumerate() {
        psi.column_mut(l).scale_mut(v.sqrt());
    }
    Ok(collect_blocks(a, &psi, &blocks))
}

/// `Σ λ_i H(B_i‖A)` where `B_i` is member `i` rescaled to trace `Tr A` and
/// `λ_i = π_i Tr A_i / Tr A`. Equals `H(A) - Σ π_i H(A_i)` for exact decompositions.
pub fn ensemble_gap(e: &Ensemble) -> Extended {
    let a = e.average();
    let total = a.trace();
    if total <= 0.0 {
        return Extended::Finite(0.0);
    }
    e.weights()
        .iter()
        .zip(e.members())
        .filter(|(w, m)| **w > 0.0 && m.trace() > 0.0)
        .map(|(w, m)| {
            let lambda = w * m.trace() / total;
            let rescaled = m.scaled(total / m.trace());
            rel_entropy(&rescaled, a)
                .expect("members share the average's dimension")
                .scale(lambda)
        })
        .sum()
}

/// `{π_i, Φ(A_i)}` reweighted so every member has trace `Tr Φ(A)`.
pub fn push_ensemble(e: &Ensemble, phi: &KrausOperation) -> Result<Ensemble> {
    if phi.input_dim() != e.dim() {
        return Err(invalid(
            "kraus",
            format!("acts on dimension {}, ensemble has {}", phi.input_dim(), e.dim()),
        ));
    }
    let image = phi.apply(e.average());
    let total = image.trace();
    if total <= 0.0 {
        return Ok(Ensemble::singleton(image));
    }
    let mut weights = Vec::new();
    let mut members = Vec::new();
    for (w, m) in e.weights().iter().zip(e.members()) {
        let pm = phi.apply(m);
        let tr = pm.trace();
        let wt = w * tr / total;
        if wt <= ZERO_WEIGHT_TOL {
            continue;
        }
        weights.push(wt);
        members.push(pm.scaled(total / tr));
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(Ensemble::from_parts(weights, members, image))
}

/// Ensemble of sums: for ensembles `E_g = {p_gj, B_gj}` averaging to `A_g`,
/// returns `{Π_g p_{g j_g}, Σ_g B_{g j_g}}` averaging to `Σ_g A_g`.
///
/// Member ranks add; the member count is the product of the input counts.
pub fn sum_product(parts: &[Ensemble]) -> Result<Ensemble> {
    let Some(first) = parts.first() else {
        return Err(invalid("parts", "need at least one ensemble"));
    };
    if parts.iter().any(|p| p.dim() != first.dim()) {
        return Err(invalid("parts", "ensembles must share a dimension"));
    }
    let mut weights = first.weights().to_vec();
    let mut members = first.members().to_vec();
    let mut average = first.average().clone();
    for part in &parts[1..] {
        let mut w2 = Vec::with_capacity(weights.len() * part.len());
        let mut m2 = Vec::with_capacity(weights.len() * part.len());
        for (w, m) in weights.iter().zip(&members) {
            for (pw, pm) in part.weights().iter().zip(part.members()) {
                let wt = w * pw;
                if wt <= 0.0 {
                    continue;
                }
                w2.push(wt);
                m2.push(m.add(pm));
            }
        }
        weights = w2;
        members = m2;
        average = average.add(part.average());
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(Ensemble::from_parts(weights, members, average))
}

/// Isometry coordinates of an ensemble averaging to `A` whose members have rank `<= k`.
///
/// Returns `(U, plan)` with one block per member; unused rows of a block are zero.
/// `U` is re-orthonormalized, so its induced ensemble matches `e` up to the
/// reconstruction error of `e`.
pub fn isometry_coordinates(
    e: &Ensemble,
    factor: &SpectralFactor,
    k: usize,
) -> Result<(CMatrix, BlockPlan)> {
    let r = factor.rank();
    if r == 0 {
        return Err(invalid("ensemble", "average has rank zero"));
    }
    let n = e.len();
    let plan = BlockPlan::contiguous(n, k)?;
    let mut u = CMatrix::zeros(n * k, r);
    for (i, (w, m)) in e.weights().iter().zip(e.members()).enumerate() {
        let rank = m.rank();
        if rank > k {
            return Err(invalid(
                "ensemble",
                format!("member {i} has rank {rank} > k = {k}"),
            ));
        }
        let s = m.spectrum();
        for a in 0..rank {
            let amp = (w * s.values[a]).sqrt();
            for l in 0..r {
                let overlap = factor.vectors.column(l).dotc(&s.basis.column(a));
                u[(i * k + a, l)] = overlap * amp / factor.values[l].sqrt();
            }
        }
    }
    if frobenius(&u) == 0.0 {
        return Err(invalid("ensemble", "no overlap with the support of A"));
    }
    Ok((polar_factor(&u), plan))
}

/// Moves an ensemble of rank-`<= k` members onto a new average.
///
/// Each member is purified into `C^d ⊗ C^k`, the purifications are stacked
/// with orthogonal labels into one purification of the old average, the
/// purification of `target` with maximal overlap is found from the polar
/// decomposition of `√target Ψ₀`, and the labels are measured. Outcomes with
/// zero probability keep the original member with weight zero.
pub fn perturb_ensemble(e: &Ensemble, target: &PositiveOperator) -> Result<Ensemble> {
    let d = e.dim();
    if target.dim() != d {
        return Err(invalid(
            "target",
            format!("dimension {} does not match ensemble dimension {d}", target.dim()),
        ));
    }
    for (name, tr) in [("ensemble average", e.average().trace()), ("target", target.trace())] {
        if (tr - 1.0).abs() > 1e-9 {
            return Err(invalid(name, format!("must have unit trace, got {tr}")));
        }
    }
    let k = e.max_member_rank().max(1);
    let n = e.len();
    let labels = n.max(d.div_ceil(k));
    let mut psi0 = CMatrix::zeros(d, labels * k);
    for (i, (w, m)) in e.weights().iter().zip(e.members()).enumerate() {
        if *w <= 0.0 {
            continue;
        }
        let s = m.spectrum();
        // Trailing eigenvalues beyond k are numerical noise for rank-k members.
        let kept: f64 = s.values[..k.min(s.values.len())].iter().sum();
        let renorm = if kept > 0.0 { m.trace() / kept } else { 0.0 };
        for a in 0..k.min(s.values.len()) {
            let amp = (w * s.values[a] * renorm).sqrt();
            psi0.column_mut(i * k + a)
                .copy_from(&(s.basis.column(a) * c(amp, 0.0)));
        }
    }
    let root = target.sqrt();
    let coisometry = polar_factor(&(&root * &psi0));
    let psi = &root * coisometry;

    let mut weights = Vec::with_capacity(labels);
    let mut members = Vec::with_capacity(labels);
    for i in 0..labels {
        let block = psi.columns(i * k, k);
        let g = block * block.adjoint();
        let p: f64 = g.diagonal().iter().map(|z| z.re).sum();
        if p > ZERO_WEIGHT_TOL {
            weights.push(p);
            members.push(PositiveOperator::from_psd(g.unscale(p)));
        } else if i < n {
            weights.push(0.0);
            members.push(e.members()[i].clone());
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ensemble::with_average(weights, members, target.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{classical_h, coarse_grain, entropy_h};
    use crate::linalg::{random_positive, random_stiefel, rng, CVector};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn avg_err(e: &Ensemble, a: &PositiveOperator) -> f64 {
        frobenius(&(weighted_sum(e.weights(), e.members()) - a.matrix()))
    }

    pub(crate) fn remark3_like() -> Ensemble {
        let s3 = 3f64.sqrt() / 2.0;
        let v = |x: f64, y: f64, z: f64| CVector::from_vec(vec![c(x, 0.0), c(y, 0.0), c(z, 0.0)]);
        let p = |x: &CVector, w: f64| PositiveOperator::projector_onto(x).scaled(w);
        let rho1 = p(&v(1.0, 0.0, 0.0), 0.5).add(&p(&v(-0.5, s3, 0.0), 0.5));
        let rho2 = p(&v(-0.5, -s3, 0.0), 0.4).add(&p(&v(0.0, 0.0, 1.0), 0.6));
        Ensemble::new(vec![4.0 / 9.0, 5.0 / 9.0], vec![rho1, rho2]).unwrap()
    }

    #[test]
    fn identity_parametrization_gives_spectral_pure_ensemble() {
        let a = random_positive(3, 3, 2).unwrap();
        let u = CMatrix::identity(3, 3);
        let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(3, 1).unwrap()).unwrap();
        assert_eq!(e.len(), 3);
        for (w, v) in e.weights().iter().zip(a.eigenvalues()) {
            close(*w, *v, 1e-12);
        }
        close(ensemble_gap(&e).finite().unwrap(), entropy_h(&a), 1e-10);
    }

    #[test]
    fn hjw_reconstructs_average() {
        let mut r = rng(17);
        for t in 0..500u64 {
            let d = 2 + (t as usize % 4);
            let rank = 1 + (t as usize / 4) % d;
            let k = 1 + (t as usize / 16) % 3;
            let a = random_positive(d, rank, t).unwrap();
            let m = rank.div_ceil(k) + (t as usize % 3);
            let u = crate::linalg::random_stiefel_with(m * k, rank, &mut r).unwrap();
            let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(m, k).unwrap()).unwrap();
            assert!(avg_err(&e, &a) <= 1e-9);
            close(e.weights().iter().sum(), 1.0, 1e-12);
            assert!(e.members().iter().all(|x| x.rank() <= k));
        }
    }

    #[test]
    fn hjw_permutation_matches_coarse_graining() {
        let a = PositiveOperator::maximally_mixed(3);
        let mut u = CMatrix::zeros(4, 3);
        for i in 0..3 {
            u[(i, i)] = c(1.0, 0.0);
        }
        let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(2, 2).unwrap()).unwrap();
        close(e.weights()[0], 2.0 / 3.0, 1e-12);
        close(e.weights()[1], 1.0 / 3.0, 1e-12);
        let tilde = 3f64.ln() - 2.0 / 3.0 * 2f64.ln();
        close(ensemble_gap(&e).finite().unwrap(), tilde, 1e-12);
    }

    #[test]
    fn hjw_rejects_bad_shapes() {
        let a = random_positive(3, 2, 1).unwrap();
        let plan = BlockPlan::contiguous(2, 2).unwrap();
        assert!(hjw_ensemble(&a, &random_stiefel(4, 3, 0).unwrap(), &plan).is_err());
        assert!(hjw_ensemble(&a, &random_stiefel(5, 2, 0).unwrap(), &plan).is_err());
        assert!(hjw_ensemble(&a, &CMatrix::from_element(4, 2, c(1.0, 0.0)), &plan).is_err());
    }

    #[test]
    fn block_plan_validation() {
        assert!(BlockPlan::new(2, vec![vec![0, 3], vec![1, 2]]).is_ok());
        assert!(BlockPlan::new(2, vec![vec![0, 0], vec![1, 2]]).is_err());
        assert!(BlockPlan::new(2, vec![vec![0, 4], vec![1, 2]]).is_err());
        assert!(BlockPlan::contiguous(0, 2).is_err());
    }

    #[test]
    fn coarse_ensemble_cases() {
        let low = random_positive(4, 2, 3).unwrap();
        let e = spectral_coarse_ensemble(&low, 2).unwrap();
        assert_eq!(e.len(), 1);
        close(ensemble_gap(&e).finite().unwrap(), 0.0, 1e-12);

        let mixed = PositiveOperator::maximally_mixed(3);
        let e = spectral_coarse_ensemble(&mixed, 2).unwrap();
        close(e.weights()[0], 2.0 / 3.0, 1e-12);
        close(e.weights()[1], 1.0 / 3.0, 1e-12);
        close(ensemble_gap(&e).finite().unwrap(), 0.6365141682948128, 1e-12);

        let d = PositiveOperator::diagonal(&[0.5, 0.3, 0.1, 0.1]).unwrap();
        let e = spectral_coarse_ensemble(&d, 2).unwrap();
        close(e.weights()[0], 0.8, 1e-12);
        close(e.weights()[1], 0.2, 1e-12);
    }

    #[test]
    fn coarse_ensemble_gap_matches_classical_entropy() {
        for seed in 0..200u64 {
            let d = 2 + seed as usize % 5;
            let a = random_positive(d, 1 + seed as usize % d, seed)
                .unwrap()
                .scaled(0.5 + (seed % 3) as f64);
            for k in 1..=d {
                let e = spectral_coarse_ensemble(&a, k).unwrap();
                let want = classical_h(&coarse_grain(a.eigenvalues(), k).unwrap());
                close(ensemble_gap(&e).finite().unwrap(), want, 1e-9);
                assert!(avg_err(&e, &a) <= 1e-9);
            }
        }
    }

    #[test]
    fn gap_examples() {
        let a = random_positive(3, 3, 8).unwrap();
        close(ensemble_gap(&Ensemble::singleton(a.clone())).finite().unwrap(), 0.0, 1e-12);

        let e = remark3_like();
        let gap = ensemble_gap(&e).finite().unwrap();
        close(gap, 3f64.ln() - e.value(), 1e-10);
        close(gap, 0.4748, 5e-4);
    }

    #[test]
    fn gap_is_nonnegative_and_matches_value_identity() {
        let mut r = rng(5);
        for t in 0..100u64 {
            let d = 2 + t as usize % 3;
            let a = random_positive(d, d, t).unwrap().scaled(1.0 + (t % 4) as f64);
            let u = crate::linalg::random_stiefel_with(2 * d, d, &mut r).unwrap();
            let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(d, 2).unwrap()).unwrap();
            let gap = ensemble_gap(&e).finite().unwrap();
            assert!(gap >= 0.0);
            close(gap, entropy_h(&a) - e.value(), 1e-8);
        }
    }

    #[test]
    fn push_through_channels() {
        let a = random_positive(3, 3, 4).unwrap();
        let mut r = rng(6);
        let u = crate::linalg::random_stiefel_with(6, 3, &mut r).unwrap();
        let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(3, 2).unwrap()).unwrap();

        let same = push_ensemble(&e, &KrausOperation::identity(3)).unwrap();
        for (x, y) in same.members().iter().zip(e.members()) {
            assert!(frobenius(&(x.matrix() - y.matrix())) <= 1e-12);
        }

        let contraction = crate::linalg::random_contraction(3, &mut r);
        let single = KrausOperation::new(vec![contraction.clone()]).unwrap();
        let pushed = push_ensemble(&e, &single).unwrap();
        assert!(avg_err(&pushed, &a.conjugate_by(&contraction)) <= 1e-9);

        for n in 1..=3 {
            let phi = KrausOperation::random(3, n, false, &mut r).unwrap();
            let pushed = push_ensemble(&e, &phi).unwrap();
            assert!(avg_err(&pushed, &phi.apply(&a)) <= 1e-9);
            assert!(pushed.members().iter().all(|m| m.rank() <= 2 * n));
        }
    }

    #[test]
    fn sum_product_averages_and_ranks() {
        let a = random_positive(3, 3, 1).unwrap();
        let b = random_positive(3, 3, 2).unwrap();
        let ea = spectral_coarse_ensemble(&a, 1).unwrap().scaled(0.3);
        let eb = spectral_coarse_ensemble(&b, 2).unwrap().scaled(0.7);
        let p = sum_product(&[ea, eb]).unwrap();
        let target = a.scaled(0.3).add(&b.scaled(0.7));
        assert!(avg_err(&p, &target) <= 1e-12);
        assert!(p.members().iter().all(|m| m.rank() <= 3));
    }

    #[test]
    fn isometry_coordinates_roundtrip() {
        let e = remark3_like();
        let a = e.average().clone();
        let factor = SpectralFactor::of(&a);
        let (u, plan) = isometry_coordinates(&e, &factor, 2).unwrap();
        let back = hjw_ensemble(&a, &u, &plan).unwrap();
        close(back.value(), e.value(), 1e-10);
        assert!(isometry_coordinates(&e, &factor, 1).is_err());
    }

    #[test]
    fn perturbation_fixed_point() {
        let e = remark3_like();
        let same = perturb_ensemble(&e, e.average()).unwrap();
        assert_eq!(same.len(), e.len());
        for i in 0..e.len() {
            close(same.weights()[i], e.weights()[i], 1e-8);
            assert!(frobenius(&(same.members()[i].matrix() - e.members()[i].matrix())) <= 1e-8);
        }
    }

    #[test]
    fn perturbation_is_continuous() {
        let e = remark3_like();
        let sigma = random_positive(3, 3, 12).unwrap();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let target = e.average().scaled(1.0 - eps).add(&sigma.scaled(eps));
            let p = perturb_ensemble(&e, &target).unwrap();
            assert!(p.members().iter().all(|m| m.rank() <= 2));
            let dev = (0..e.len())
                .map(|i| {
                    let dm = frobenius(&(p.members()[i].matrix() - e.members()[i].matrix()));
                    dm.max((p.weights()[i] - e.weights()[i]).abs())
                })
                .fold(0.0, f64::max);
            assert!(dev < last, "deviation {dev} did not decrease from {last}");
            last = dev;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn perturbation_random_targets() {
        let mut r = rng(21);
        for t in 0..200u64 {
            let d = 2 + t as usize % 3;
            let k = 1 + t as usize % 2;
            let a = random_positive(d, d, t).unwrap();
            let u = crate::linalg::random_stiefel_with(d * k, d, &mut r).unwrap();
            let e = hjw_ensemble(&a, &u, &BlockPlan::contiguous(d, k).unwrap()).unwrap();
            let target = random_positive(d, 1 + t as usize % d, t + 1000).unwrap();
            let p = perturb_ensemble(&e, &target).unwrap();
            close(p.weights().iter().sum(), 1.0, 1e-12);
            assert!(avg_err(&p, &target) <= 1e-8);
            assert!(p.members().iter().all(|m| m.rank() <= k));
        }
        let e = remark3_like();
        assert!(perturb_ensemble(&e, &PositiveOperator::maximally_mixed(2)).is_err());
        assert!(perturb_ensemble(&e, &PositiveOperator::maximally_mixed(3).scaled(2.0)).is_err());
    }

    #[test]
    fn ensemble_file_roundtrip() {
        let e = remark3_like();
        let text = serde_json::to_string(&e.to_file()).unwrap();
        let back: EnsembleFile = serde_json::from_str(&text).unwrap();
        let e2 = back.to_ensemble().unwrap();
        close(e2.value(), e.value(), 1e-14);
        let bad: EnsembleFile = serde_json::from_str(
            r#"{"weights":[0.5,0.6],"members":[{"dim":1,"re":[[1]]},{"dim":1,"re":[[1]]}]}"#,
        )
        .unwrap();
        assert!(bad.to_ensemble().is_err());
    }
}
