//! Entropy functionals on the positive cone.
//!
//! All logarithms are natural. `H(A) = S(A) - η(Tr A)` is the homogeneous
//! extension of the von Neumann entropy; `H(A‖B)` is the relative entropy
//! extended with the `Tr(B - A)` correction, `+∞` off support.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::linalg::{partial_trace, PositiveOperator, Side, EIG_TOL};

/// Weight of `A` outside `supp B`, relative to `Tr A`, above which `H(A‖B) = +∞`.
pub const SUPPORT_TOL: f64 = 1e-9;

/// A nonnegative real or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    /// Panics on `+∞`; for call sites where finiteness is an invariant.
    pub fn expect_finite(self, what: &str) -> f64 {
        self.finite()
            .unwrap_or_else(|| panic!("{what}: expected a finite value, got +inf"))
    }

    pub fn scale(self, lambda: f64) -> Extended {
        match self {
            Extended::Finite(v) => Extended::Finite(lambda * v),
            Extended::Infinite if lambda == 0.0 => Extended::Finite(0.0),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

impl std::ops::Add for Extended {
    type Output = Extended;
    fn add(self, rhs: Extended) -> Extended {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
}

impl std::iter::Sum for Extended {
    fn sum<I: Iterator<Item = Extended>>(iter: I) -> Extended {
        iter.fold(Extended::Finite(0.0), |a, b| a + b)
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Extended::Finite(v) => s.serialize_f64(*v),
            Extended::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Extended::Finite(v)),
            Repr::Text(t) if t == "inf" => Ok(Extended::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {t:?}"))),
        }
    }
}

/// Finite list of nonnegative reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightSequence(Vec<f64>);

impl WeightSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(invalid("weights", format!("entry {i} = {v} is not a nonnegative real")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Copy sorted nonincreasing.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

impl TryFrom<Vec<f64>> for WeightSequence {
    type Error = crate::error::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightSequence> for Vec<f64> {
    fn from(w: WeightSequence) -> Vec<f64> {
        w.0
    }
}

/// `η(x) = -x ln x`, `η(0) = 0`.
pub fn eta(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid("x", format!("η needs x >= 0, got {x}")));
    }
    Ok(eta0(x))
}

/// η for inputs already known to be nonnegative; nonpositive inputs map to 0.
#[inline]
pub(crate) fn eta0(x: f64) -> f64 {
    if x > 0.0 {
        -x * x.ln()
    } else {
        0.0
    }
}

/// Binary entropy `η(x) + η(1 - x)`.
pub fn h2(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid("x", format!("h2 needs 0 <= x <= 1, got {x}")));
    }
    Ok(eta0(x) + eta0(1.0 - x))
}

/// `Σ η(x_i) - η(Σ x_i)` for clamped nonnegative inputs.
pub(crate) fn classical_h_raw(x: &[f64]) -> f64 {
    let total: f64 = x.iter().map(|v| v.max(0.0)).sum();
    let s: f64 = x.iter().map(|&v| eta0(v)).sum();
    (s - eta0(total)).max(0.0)
}

/// Classical entropy of an unnormalized weight sequence.
pub fn classical_h(x: &WeightSequence) -> f64 {
    classical_h_raw(x.values())
}

/// `S(A) = -Tr A ln A`.
pub fn entropy_s(a: &PositiveOperator) -> f64 {
    a.eigenvalues().iter().map(|&v| eta0(v)).sum()
}

/// `H(A) = S(A) - η(Tr A)`.
pub fn entropy_h(a: &PositiveOperator) -> f64 {
    classical_h_raw(a.eigenvalues())
}

/// Extended relative entropy `H(A‖B)`.
///
/// Evaluated in the eigenbases of both operators; returns `+∞` when the
/// weight of `A` outside the support of `B` exceeds `SUPPORT_TOL * Tr A`.
pub fn rel_entropy(a: &PositiveOperator, b: &PositiveOperator) -> Result<Extended> {
    if a.dim() != b.dim() {
        return Err(invalid(
            "B",
            format!("dimension {} does not match A's {}", b.dim(), a.dim()),
        ));
    }
    let sa = a.spectrum();
    let sb = b.spectrum();
    let b_tol = EIG_TOL * b.trace();
    let overlap = sa.basis.adjoint() * &sb.basis;

    let mut outside = 0.0;
    let mut cross = 0.0;
    for (i, &ai) in sa.values.iter().enumerate() {
        if ai <= 0.0 {
            continue;
        }
        for (j, &bj) in sb.values.iter().enumerate() {
            let w = ai * overlap[(i, j)].norm_sqr();
            if bj > b_tol {
                cross += w * bj.ln();
            } else {
                outside += w;
            }
        }
    }
    if outside > SUPPORT_TOL * a.trace() {
        return Ok(Extended::Infinite);
    }
    let a_log_a: f64 = -sa.values.iter().map(|&v| eta0(v)).sum::<f64>();
    let value = a_log_a - cross + b.trace() - a.trace();
    Ok(Extended::Finite(value.max(0.0)))
}

/// Sums of consecutive `k`-tuples of a nonincreasing sequence.
pub fn coarse_grain(values: &[f64], k: usize) -> Result<WeightSequence> {
    if k < 1 {
        return Err(invalid("k", "coarse-graining order must be at least 1"));
    }
    WeightSequence::new(values.chunks(k).map(|c| c.iter().sum()).collect())
}

fn padded_sorted(p: &WeightSequence, len: usize) -> Vec<f64> {
    let mut v = p.sorted_desc();
    v.resize(len, 0.0);
    v
}

/// `p ≺ q` in the Uhlmann sense: `q` is more chaotic, i.e. every leading
/// partial sum of `p` (sorted nonincreasing) dominates that of `q`.
pub fn uhlmann_less_chaotic(p: &WeightSequence, q: &WeightSequence) -> Result<bool> {
    let (tp, tq) = (p.total(), q.total());
    if (tp - tq).abs() > 1e-10 * tp.abs().max(tq.abs()).max(1.0) {
        return Err(invalid(
            "q",
            format!("totals differ ({tp} vs {tq}); normalize both sequences first"),
        ));
    }
    let n = p.len().max(q.len());
    let (ps, qs) = (padded_sorted(p, n), padded_sorted(q, n));
    let (mut sp, mut sq) = (0.0, 0.0);
    for i in 0..n {
        sp += ps[i];
        sq += qs[i];
        if sp - sq < -1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `q_i <= p_i` for all `i` after sorting both nonincreasing (zero padded).
pub fn dominates_elementwise(p: &WeightSequence, q: &WeightSequence) -> bool {
    let n = p.len().max(q.len());
    let (ps, qs) = (padded_sorted(p, n), padded_sorted(q, n));
    ps.iter().zip(&qs).all(|(pi, qi)| *qi <= pi + 1e-12)
}

/// Entanglement of a pure bipartite state: entropy of either reduced state.
pub fn entanglement_pure(omega: &PositiveOperator, dims: (usize, usize)) -> Result<f64> {
    Ok(reduced_entropies(omega, dims)?.0)
}

/// `(H(Tr_2 ω), H(Tr_1 ω))`; equal for pure `ω` by Schmidt symmetry.
pub fn reduced_entropies(omega: &PositiveOperator, dims: (usize, usize)) -> Result<(f64, f64)> {
    if omega.rank() != 1 {
        return Err(invalid(
            "omega",
            format!("must be rank one (pure), found rank {}", omega.rank()),
        ));
    }
    let first = entropy_h(&partial_trace(omega, dims, Side::Second)?);
    let second = entropy_h(&partial_trace(omega, dims, Side::First)?);
    Ok((first, second))
}
