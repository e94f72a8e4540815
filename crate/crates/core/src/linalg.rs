//! Dense Hermitian linear algebra on small complex matrices.
//!
//! Everything downstream works with [`PositiveOperator`]s: Hermitian positive
//! semidefinite matrices that cache their trace and, lazily, their spectrum.
//! Random sampling goes through a single counter-based generator ([`Rng`]) that
//! is always seeded explicitly.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Counter-based generator used for every random draw in the crate.
pub type Rng = ChaCha20Rng;

/// Relative tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Relative tolerance for eigenvalues: values in `[-EIG_TOL * trace, 0)` are
/// clamped to zero, values at or below `EIG_TOL * trace` lie outside the support.
pub const EIG_TOL: f64 = 1e-10;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Derives a child seed from a parent seed and a tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `(M + M*) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// A square complex matrix equal to its conjugate transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    entries: CMatrix,
}

impl HermitianMatrix {
    /// Validates Hermiticity within [`HERMITIAN_TOL`] relative to the largest entry
    /// and stores the exactly Hermitian part.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(invalid(
                "matrix",
                format!("not square ({}x{})", entries.nrows(), entries.ncols()),
            ));
        }
        if entries.nrows() == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("matrix", "contains non-finite entries"));
        }
        let scale = max_abs(&entries);
        let asym = max_abs(&(&entries - entries.adjoint()));
        if asym > HERMITIAN_TOL * scale {
            return Err(invalid(
                "matrix",
                format!("not Hermitian (asymmetry {asym:.3e}, scale {scale:.3e})"),
            ));
        }
        Ok(Self {
            entries: hermitian_part(&entries),
        })
    }

    pub(crate) fn from_hermitized(entries: CMatrix) -> Self {
        Self {
            entries: hermitian_part(&entries),
        }
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("re", "rows must all have length dim"));
        }
        Self::new(CMatrix::from_fn(d, d, |i, j| c(rows[i][j], 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_inner(self) -> CMatrix {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }
}

/// Eigenvalues in nonincreasing order together with an orthonormal eigenbasis.
///
/// For positive operators the values are clamped at zero; [`eigh`] on an
/// indefinite Hermitian matrix returns the raw (possibly negative) values.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// `dim x values.len()` matrix whose columns are the eigenvectors.
    pub basis: CMatrix,
}

impl Spectrum {
    /// Number of eigenvalues strictly above `EIG_TOL * scale`.
    pub fn rank(&self, scale: f64) -> usize {
        let tol = EIG_TOL * scale.abs();
        self.values.iter().filter(|&&v| v > tol).count()
    }

    /// Rebuilds `basis * diag(values) * basis*`.
    pub fn reconstruct(&self) -> CMatrix {
        let scaled = CMatrix::from_fn(self.basis.nrows(), self.values.len(), |i, j| {
            self.basis[(i, j)] * self.values[j]
        });
        &scaled * self.basis.adjoint()
    }
}

/// Eigendecomposition of a Hermitian matrix, values sorted nonincreasing.
pub fn eigh(a: &HermitianMatrix) -> Spectrum {
    let d = a.dim();
    let eig = SymmetricEigen::new(a.entries.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let basis = CMatrix::from_fn(d, d, |r, col| eig.eigenvectors[(r, order[col])]);
    Spectrum { values, basis }
}

/// Hermitian positive semidefinite matrix with cached trace and spectrum.
#[derive(Clone, Debug)]
pub struct PositiveOperator {
    matrix: HermitianMatrix,
    trace: f64,
    spectrum: OnceLock<Spectrum>,
}

impl PartialEq for PositiveOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl PositiveOperator {
    /// Validates positivity: the smallest eigenvalue must be at least
    /// `-EIG_TOL * trace`.
    pub fn new(matrix: HermitianMatrix) -> Result<Self> {
        let op = Self::new_unchecked(matrix);
        let raw = eigh(&op.matrix);
        let min = raw.values.last().copied().unwrap_or(0.0);
        if min < -EIG_TOL * op.trace.max(0.0) || op.trace < 0.0 {
            return Err(invalid(
                "matrix",
                format!("not positive semidefinite (smallest eigenvalue {min:.3e})"),
            ));
        }
        let _ = op.spectrum.set(clamp_spectrum(raw));
        Ok(op)
    }

    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        Self::new(HermitianMatrix::new(m)?)
    }

    /// For matrices that are positive by construction (Gram products, sums of
    /// positives, conjugations). The stored matrix is made exactly Hermitian.
    pub(crate) fn new_unchecked(matrix: HermitianMatrix) -> Self {
        let trace = matrix.trace();
        Self {
            matrix,
            trace,
            spectrum: OnceLock::new(),
        }
    }

    pub(crate) fn from_psd(m: CMatrix) -> Self {
        Self::new_unchecked(HermitianMatrix::from_hermitized(m))
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_psd(CMatrix::zeros(dim, dim))
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_psd(CMatrix::identity(dim, dim).unscale(dim as f64))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid("diagonal", format!("entry {v} is not a nonnegative real")));
        }
        let d = values.len();
        Ok(Self::from_psd(CMatrix::from_fn(d, d, |i, j| {
            if i == j {
                c(values[i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        })))
    }

    /// `|v><v|` for the given (not necessarily normalized) vector.
    pub fn projector_onto(v: &CVector) -> Self {
        Self::from_psd(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix.entries
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.matrix
    }

    /// Clamped spectrum, computed once.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum
            .get_or_init(|| clamp_spectrum(eigh(&self.matrix)))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum().values
    }

    pub fn rank(&self) -> usize {
        self.spectrum().rank(self.trace)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        debug_assert!(lambda >= 0.0);
        Self::from_psd(self.matrix.entries.scale(lambda))
    }

    /// Rescaled to unit trace; the zero operator is returned unchanged.
    pub fn normalized(&self) -> Self {
        if self.trace > 0.0 {
            self.scaled(1.0 / self.trace)
        } else {
            self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_psd(&self.matrix.entries + &other.matrix.entries)
    }

    /// `C A C*`.
    pub fn conjugate_by(&self, c: &CMatrix) -> Self {
        Self::from_psd(c * &self.matrix.entries * c.adjoint())
    }

    /// Principal square root via the spectrum.
    pub fn sqrt(&self) -> CMatrix {
        let s = self.spectrum();
        Spectrum {
            values: s.values.iter().map(|v| v.sqrt()).collect(),
            basis: s.basis.clone(),
        }
        .reconstruct()
    }

    /// Smallest eigenvalue of `self - other` (nonnegative iff `other <= self`).
    pub fn min_eigenvalue_of_difference(&self, other: &Self) -> f64 {
        let diff = HermitianMatrix::from_hermitized(&self.matrix.entries - &other.matrix.entries);
        eigh(&diff).values.last().copied().unwrap_or(0.0)
    }
}

fn clamp_spectrum(mut s: Spectrum) -> Spectrum {
    for v in &mut s.values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    s
}

pub fn complex_gaussian(rows: usize, cols: usize, rng: &mut Rng) -> CMatrix {
    let normal = StandardNormal;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = normal.sample(rng);
        let im: f64 = normal.sample(rng);
        c(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Orthonormalizes the columns of a full-column-rank matrix, fixing the phase
/// so that `R` has a positive diagonal (Haar measure for Gaussian input).
pub fn orthonormalize_columns(m: CMatrix) -> CMatrix {
    let cols = m.ncols();
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        let n = d.norm();
        if n > 0.0 {
            let phase = d / n;
            for i in 0..q.nrows() {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Trace-normalized `G G*` with `G` a `dim x rank` complex Gaussian matrix.
pub fn random_positive(dim: usize, rank: usize, seed: u64) -> Result<PositiveOperator> {
    random_positive_with(dim, rank, &mut rng(seed))
}

pub fn random_positive_with(dim: usize, rank: usize, rng: &mut Rng) -> Result<PositiveOperator> {
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    if rank == 0 || rank > dim {
        return Err(invalid("rank", format!("must lie in 1..={dim}, got {rank}")));
    }
    let g = complex_gaussian(dim, rank, rng);
    let a = PositiveOperator::from_psd(&g * g.adjoint());
    Ok(a.normalized())
}

/// `rows x cols` matrix with orthonormal columns, from a complex Gaussian matrix.
pub fn random_stiefel(rows: usize, cols: usize, seed: u64) -> Result<CMatrix> {
    random_stiefel_with(rows, cols, &mut rng(seed))
}

pub fn random_stiefel_with(rows: usize, cols: usize, rng: &mut Rng) -> Result<CMatrix> {
    if cols == 0 {
        return Err(invalid("cols", "must be at least 1"));
    }
    if rows < cols {
        return Err(invalid(
            "rows",
            format!("need rows >= cols, got {rows} < {cols}"),
        ));
    }
    Ok(orthonormalize_columns(complex_gaussian(rows, cols, rng)))
}

pub fn random_unitary(dim: usize, rng: &mut Rng) -> CMatrix {
    orthonormalize_columns(complex_gaussian(dim, dim, rng))
}

/// `W diag(s) V*` with Haar `W, V` and singular values uniform in `[0, 1]`.
pub fn random_contraction(dim: usize, rng: &mut Rng) -> CMatrix {
    use rand::Rng as _;
    let w = random_unitary(dim, rng);
    let v = random_unitary(dim, rng);
    let s: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let ws = CMatrix::from_fn(dim, dim, |i, j| w[(i, j)] * s[j]);
    ws * v.adjoint()
}

/// Which tensor factor is traced out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    First,
    Second,
}

/// Partial trace of an operator on `C^d1 ⊗ C^d2`.
pub fn partial_trace(
    a: &PositiveOperator,
    dims: (usize, usize),
    side: Side,
) -> Result<PositiveOperator> {
    let (d1, d2) = dims;
    if d1 == 0 || d2 == 0 || d1 * d2 != a.dim() {
        return Err(invalid(
            "dims",
            format!("{d1}x{d2} does not match operator dimension {}", a.dim()),
        ));
    }
    let m = a.matrix();
    let out = match side {
        Side::Second => CMatrix::from_fn(d1, d1, |i, j| {
            (0..d2).map(|k| m[(i * d2 + k, j * d2 + k)]).sum()
        }),
        Side::First => CMatrix::from_fn(d2, d2, |i, j| {
            (0..d1).map(|k| m[(k * d2 + i, k * d2 + j)]).sum()
        }),
    };
    Ok(PositiveOperator::from_psd(out))
}

/// Polar factor `W` of `Y = W |Y|`: for `Y = P S Q*` returns `P Q*`.
///
/// For a wide matrix (`rows <= cols`) the result is a co-isometry.
pub fn polar_factor(y: &CMatrix) -> CMatrix {
    let svd = y.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V*");
    u * v_t
}

/// Completely positive map `A -> Σ V_i A V_i*` with `Σ V_i* V_i <= I`.
#[derive(Clone, Debug)]
pub struct KrausOperation {
    ops: Vec<CMatrix>,
}

impl KrausOperation {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let Some(first) = ops.first() else {
            return Err(invalid("kraus", "at least one operator required"));
        };
        let (rows, cols) = first.shape();
        if ops.iter().any(|v| v.shape() != (rows, cols)) {
            return Err(invalid("kraus", "operators must share a shape"));
        }
        let kraus = Self { ops };
        let defect = HermitianMatrix::from_hermitized(
            CMatrix::identity(cols, cols) - kraus.sum_of_squares(),
        );
        let min = eigh(&defect).values.last().copied().unwrap_or(0.0);
        if min < -EIG_TOL {
            return Err(invalid(
                "kraus",
                format!("sum of V*V exceeds the identity by {:.3e}", -min),
            ));
        }
        Ok(kraus)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            ops: vec![CMatrix::identity(dim, dim)],
        }
    }

    /// `n` random Kraus operators on `C^dim`; trace preserving if requested,
    /// otherwise scaled by a uniform factor in `[0, 1]`.
    pub fn random(dim: usize, n: usize, trace_preserving: bool, rng: &mut Rng) -> Result<Self> {
        use rand::Rng as _;
        if n == 0 || dim == 0 {
            return Err(invalid("kraus", "need n >= 1 and dim >= 1"));
        }
        let stacked = random_stiefel_with(n * dim, dim, rng)?;
        let shrink = if trace_preserving {
            1.0
        } else {
            rng.random::<f64>().sqrt()
        };
        let ops = (0..n)
            .map(|i| stacked.rows(i * dim, dim).into_owned().scale(shrink))
            .collect();
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.ops[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.ops[0].nrows()
    }

    pub fn sum_of_squares(&self) -> CMatrix {
        let d = self.input_dim();
        self.ops
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, v| acc + v.adjoint() * v)
    }

    pub fn apply(&self, a: &PositiveOperator) -> PositiveOperator {
        let d = self.output_dim();
        let m = self
            .ops
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, v| acc + v * a.matrix() * v.adjoint());
        PositiveOperator::from_psd(m)
    }
}

/// On-disk matrix format: `{"dim": d, "re": [[...]], "im": [[...]]}`, `im` optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixFile {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let d = m.nrows();
        let re = (0..d).map(|i| (0..d).map(|j| m[(i, j)].re).collect()).collect();
        let is_real = m.iter().all(|z| z.im == 0.0);
        let im = (!is_real).then(|| (0..d).map(|i| (0..d).map(|j| m[(i, j)].im).collect()).collect());
        Self { dim: d, re, im }
    }

    pub fn to_hermitian(&self) -> Result<HermitianMatrix> {
        let d = self.dim;
        if d == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        check_rows("re", &self.re, d)?;
        if let Some(im) = &self.im {
            check_rows("im", im, d)?;
        }
        let m = CMatrix::from_fn(d, d, |i, j| {
            let im = self.im.as_ref().map_or(0.0, |im| im[i][j]);
            c(self.re[i][j], im)
        });
        HermitianMatrix::new(m)
    }

    pub fn to_positive(&self) -> Result<PositiveOperator> {
        PositiveOperator::new(self.to_hermitian()?)
    }
}

fn check_rows(field: &str, rows: &[Vec<f64>], d: usize) -> Result<()> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(invalid(field, format!("expected {d} rows of length {d}")));
    }
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<PositiveOperator> {
    let text = std::fs::read_to_string(path)?;
    let file: MatrixFile = serde_json::from_str(&text)?;
    file.to_positive()
}

pub fn save_matrix(path: impl AsRef<Path>, m: &CMatrix) -> Result<()> {
    let text = serde_json::to_string_pretty(&MatrixFile::from_matrix(m))?;
    std::fs::write(path, text)?;
    Ok(())
}
