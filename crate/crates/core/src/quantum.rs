//! Dense complex linear algebra on truncated tensor-product Hilbert spaces.
//!
//! Every value carries a `dims` tag listing its subsystem dimensions in tensor
//! order. The crate-wide ordering is qubit A ⊗ qubit B ⊗ cavity, with the qubit
//! basis `|g⟩ = 0`, `|e⟩ = 1` and the Fock basis ascending.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default tolerances. Every checking function also has a variant taking an
/// explicit tolerance.
pub mod tol {
    /// `O = O†` check for operators.
    pub const OPERATOR_HERMITIAN: f64 = 1e-12;
    /// Ket normalization after preparation.
    pub const KET_NORM: f64 = 1e-10;
    /// Density-matrix trace.
    pub const TRACE: f64 = 1e-8;
    /// Density-matrix Hermiticity.
    pub const DENSITY_HERMITIAN: f64 = 1e-10;
    /// Most negative eigenvalue accepted for a density matrix.
    pub const MIN_EIGENVALUE: f64 = -1e-9;
}

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check_dims(dims: &[usize], dim: usize) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid subsystem dimensions {dims:?}")));
    }
    let prod: usize = dims.iter().product();
    if prod != dim {
        return Err(Error::DimensionMismatch { expected: prod, found: dim });
    }
    Ok(())
}

fn max_hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned in
/// ascending order together with the matching column eigenvectors.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    // symmetrize first so round-off asymmetry does not leak into the solver
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// Principal square root of a positive semidefinite Hermitian matrix.
/// Eigenvalues below round-off level relative to the largest one are set to zero.
pub(crate) fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let floor = 16.0 * f64::EPSILON * n as f64 * vals.last().copied().unwrap_or(0.0).abs();
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let s = if v > floor { v.sqrt() } else { 0.0 };
        for i in 0..n {
            scaled[(i, k)] *= s;
        }
    }
    &scaled * vecs.adjoint()
}

/// A linear operator on a tensor-product space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dims: Vec<usize>,
    mat: CMatrix,
}

impl Operator {
    pub fn new(dims: Vec<usize>, mat: CMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidArgument("operator matrix must be square".into()));
        }
        check_dims(&dims, mat.nrows())?;
        Ok(Self { dims, mat })
    }

    /// Operator on a single subsystem whose dimension is the matrix size.
    pub fn from_matrix(mat: CMatrix) -> Result<Self> {
        let n = mat.nrows();
        Self::new(vec![n], mat)
    }

    pub fn identity(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), mat: CMatrix::identity(n, n) }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), mat: CMatrix::zeros(n, n) }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    pub fn dagger(&self) -> Self {
        Self { dims: self.dims.clone(), mat: self.mat.adjoint() }
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.mat)
    }

    pub fn is_hermitian(&self) -> bool {
        self.is_hermitian_within(tol::OPERATOR_HERMITIAN)
    }

    pub fn is_hermitian_within(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dims: self.dims.clone(), mat: self.mat.map(|z| z * s) }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(c(s, 0.0))
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::identity(&self.dims);
        for _ in 0..n {
            out.mat = &out.mat * &self.mat;
        }
        out
    }

    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        if ket.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: ket.dim() });
        }
        Ok(Ket { dims: self.dims.clone(), amps: &self.mat * &ket.amps })
    }

    /// Operator product `self · rhs`.
    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if rhs.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rhs.dim() });
        }
        Ok(Operator { dims: self.dims.clone(), mat: &self.mat * &rhs.mat })
    }

    /// Embed a single-subsystem operator at `position` of `dims`, identities elsewhere.
    pub fn embed(&self, position: usize, dims: &[usize]) -> Result<Operator> {
        if position >= dims.len() {
            return Err(Error::InvalidSubsystem { index: position, count: dims.len() });
        }
        if dims[position] != self.dim() {
            return Err(Error::DimensionMismatch { expected: dims[position], found: self.dim() });
        }
        let factors: Vec<Operator> = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| if k == position { self.clone() } else { Operator::identity(&[d]) })
            .collect();
        tensor(&factors)
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl std::ops::$trait<&Operator> for &Operator {
            type Output = Operator;
            fn $method(self, rhs: &Operator) -> Operator {
                assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
                Operator { dims: self.dims.clone(), mat: &self.mat $op &rhs.mat }
            }
        }
        impl std::ops::$trait<Operator> for Operator {
            type Output = Operator;
            fn $method(self, rhs: Operator) -> Operator {
                &self $op &rhs
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

/// A pure state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    dims: Vec<usize>,
    amps: CVector,
}

impl Ket {
    pub fn new(dims: Vec<usize>, amps: CVector) -> Result<Self> {
        check_dims(&dims, amps.len())?;
        Ok(Self { dims, amps })
    }

    pub fn from_amplitudes(amps: &[C64]) -> Self {
        Self { dims: vec![amps.len()], amps: CVector::from_column_slice(amps) }
    }

    pub fn basis(dims: &[usize], index: usize) -> Result<Self> {
        let n: usize = dims.iter().product();
        if index >= n {
            return Err(Error::InvalidArgument(format!("basis index {index} out of range {n}")));
        }
        let mut amps = CVector::zeros(n);
        amps[index] = c(1.0, 0.0);
        Ket::new(dims.to_vec(), amps)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> C64 {
        self.amps[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr().sqrt() - 1.0).abs() <= tol::KET_NORM
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::NotNormalized { norm_sqr: 0.0 });
        }
        Ok(Self { dims: self.dims.clone(), amps: self.amps.unscale(n) })
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix { dims: self.dims.clone(), mat: &self.amps * self.amps.adjoint() }
    }
}

/// A mixed state. Construction through [`DensityMatrix::new`] validates trace,
/// Hermiticity and positivity against [`tol`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(dims: Vec<usize>, mat: CMatrix) -> Result<Self> {
        let rho = Self::new_unchecked(dims, mat)?;
        rho.validate()?;
        Ok(rho)
    }

    /// Checks only the shape; used for intermediate states of an integration.
    pub fn new_unchecked(dims: Vec<usize>, mat: CMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidArgument("density matrix must be square".into()));
        }
        check_dims(&dims, mat.nrows())?;
        Ok(Self { dims, mat })
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_within(tol::TRACE, tol::DENSITY_HERMITIAN, tol::MIN_EIGENVALUE)
    }

    pub fn validate_within(&self, trace_tol: f64, herm_tol: f64, min_eig: f64) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
            return Err(Error::InvalidArgument(format!("density matrix trace {tr} is not 1")));
        }
        let dev = max_hermitian_deviation(&self.mat);
        if dev > herm_tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let lam = self.min_eigenvalue();
        if lam < min_eig {
            return Err(Error::NotPositive { min_eigenvalue: lam });
        }
        Ok(())
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Self { dims: dims.to_vec(), mat: CMatrix::identity(n, n).unscale(n as f64) }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.mat).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Eigenvalues (ascending) and eigenvectors as kets.
    pub fn spectral_decomposition(&self) -> Vec<(f64, Ket)> {
        let (vals, vecs) = hermitian_eigen(&self.mat);
        vals.into_iter()
            .enumerate()
            .map(|(k, v)| (v, Ket { dims: self.dims.clone(), amps: vecs.column(k).into_owned() }))
            .collect()
    }
}

/// Kronecker product of two values of the same kind.
pub trait Tensor: Sized {
    fn tensor(&self, rhs: &Self) -> Self;
}

fn concat(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

impl Tensor for Operator {
    fn tensor(&self, rhs: &Self) -> Self {
        Operator { dims: concat(&self.dims, &rhs.dims), mat: self.mat.kronecker(&rhs.mat) }
    }
}

impl Tensor for Ket {
    fn tensor(&self, rhs: &Self) -> Self {
        Ket { dims: concat(&self.dims, &rhs.dims), amps: self.amps.kronecker(&rhs.amps) }
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, rhs: &Self) -> Self {
        DensityMatrix { dims: concat(&self.dims, &rhs.dims), mat: self.mat.kronecker(&rhs.mat) }
    }
}

/// Kronecker product of `factors` in listed order.
pub fn tensor<T: Tensor + Clone>(factors: &[T]) -> Result<T> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("tensor needs at least one factor".into()))?;
    Ok(rest.iter().fold(first.clone(), |acc, f| acc.tensor(f)))
}

/// Reduced state of subsystem `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let dims = rho.dims();
    if keep >= dims.len() {
        return Err(Error::InvalidSubsystem { index: keep, count: dims.len() });
    }
    let d_keep = dims[keep];
    let d_before: usize = dims[..keep].iter().product();
    let d_after: usize = dims[keep + 1..].iter().product();
    let mut out = CMatrix::zeros(d_keep, d_keep);
    let idx = |b: usize, k: usize, a: usize| (b * d_keep + k) * d_after + a;
    for i in 0..d_keep {
        for j in 0..d_keep {
            let mut s = C64::default();
            for b in 0..d_before {
                for a in 0..d_after {
                    s += rho.mat[(idx(b, i, a), idx(b, j, a))];
                }
            }
            out[(i, j)] = s;
        }
    }
    DensityMatrix::new_unchecked(vec![d_keep], out)
}

/// States for which an expectation value is defined.
pub trait State {
    fn expect(&self, op: &Operator) -> Result<C64>;
}

impl State for Ket {
    fn expect(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: op.dim() });
        }
        Ok(self.amps.dotc(&(&op.mat * &self.amps)))
    }
}

impl State for DensityMatrix {
    fn expect(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: op.dim() });
        }
        Ok(trace_of_product(&self.mat, &op.mat))
    }
}

/// `Tr(A·B)` without forming the product.
pub(crate) fn trace_of_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut s = C64::default();
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// `Tr(ρO)` for a density matrix or `⟨ψ|O|ψ⟩` for a ket.
pub fn expect<S: State>(state: &S, op: &Operator) -> Result<C64> {
    state.expect(op)
}

/// Truncated annihilation operator on Fock levels `0..=n_max`.
pub fn destroy(n_max: usize) -> Result<Operator> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("destroy needs n_max ≥ 1".into()));
    }
    let n = n_max + 1;
    let mut m = CMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = c((k as f64).sqrt(), 0.0);
    }
    Operator::from_matrix(m)
}

pub fn number(n_max: usize) -> Result<Operator> {
    let a = destroy(n_max)?;
    Ok(&a.dagger() * &a)
}

/// Fock state `|n⟩` in a space with cutoff `n_max`.
pub fn fock(n_max: usize, n: usize) -> Result<Ket> {
    Ket::basis(&[n_max + 1], n)
}

/// Qubit ground state `|g⟩`.
pub fn ground() -> Ket {
    Ket::from_amplitudes(&[c(1.0, 0.0), c(0.0, 0.0)])
}

/// Qubit excited state `|e⟩`.
pub fn excited() -> Ket {
    Ket::from_amplitudes(&[c(0.0, 0.0), c(1.0, 0.0)])
}

/// `σ⁻ = |g⟩⟨e|`.
pub fn sigma_minus() -> Operator {
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 1)] = c(1.0, 0.0);
    Operator { dims: vec![2], mat: m }
}

pub fn sigma_plus() -> Operator {
    sigma_minus().dagger()
}

/// `σ_z = |e⟩⟨e| − |g⟩⟨g|`.
pub fn sigma_z() -> Operator {
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 0)] = c(-1.0, 0.0);
    m[(1, 1)] = c(1.0, 0.0);
    Operator { dims: vec![2], mat: m }
}
