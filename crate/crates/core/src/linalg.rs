//! Matrix-free low-rank kernels: randomized SVD, Gram eigenpacks and
//! conjugate gradients, plus a guarded dense SVD for oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hankel::{HankelOperator, HankelShape};
use crate::C64;

/// A linear map available only through products with it and its adjoint.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64>;
}

/// A [`LinearOperator`] assembled from a pair of closures.
pub struct LinOpPair<F, G> {
    pub forward: F,
    pub adjoint: G,
    pub dims: (usize, usize),
}

impl<F, G> LinOpPair<F, G>
where
    F: Fn(&[C64]) -> Vec<C64>,
    G: Fn(&[C64]) -> Vec<C64>,
{
    pub fn new(rows: usize, cols: usize, forward: F, adjoint: G) -> Self {
        Self { forward, adjoint, dims: (rows, cols) }
    }
}

impl<F, G> LinearOperator for LinOpPair<F, G>
where
    F: Fn(&[C64]) -> Vec<C64>,
    G: Fn(&[C64]) -> Vec<C64>,
{
    fn nrows(&self) -> usize {
        self.dims.0
    }

    fn ncols(&self) -> usize {
        self.dims.1
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        (self.forward)(x)
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        (self.adjoint)(y)
    }
}

impl LinearOperator for DMatrix<C64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        (self * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        (self.adjoint() * DVector::from_column_slice(y)).as_slice().to_vec()
    }
}

fn apply_columns(op: &(impl LinearOperator + ?Sized), x: &DMatrix<C64>, adjoint: bool) -> DMatrix<C64> {
    let rows = if adjoint { op.ncols() } else { op.nrows() };
    let mut out = DMatrix::zeros(rows, x.ncols());
    for (k, col) in x.column_iter().enumerate() {
        let col: Vec<C64> = col.iter().copied().collect();
        let y = if adjoint { op.apply_adjoint(&col) } else { op.apply(&col) };
        out.column_mut(k).copy_from_slice(&y);
    }
    out
}

fn orthonormalize(m: DMatrix<C64>) -> DMatrix<C64> {
    m.qr().q()
}

/// Orthonormal basis paired with nonnegative values, sorted descending.
///
/// Used for the rank-`R` truncations `T_R(H H^*) = U diag(values) U^*` and
/// `T_R(H^* H) = V diag(values) V^*`.
#[derive(Debug, Clone)]
pub struct EigPack {
    pub vectors: DMatrix<C64>,
    pub values: Vec<f64>,
}

impl EigPack {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Dense `vectors * diag(values) * vectors^*`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.rank(), |i, k| {
            self.vectors[(i, k)] * self.values[k]
        });
        scaled * self.vectors.adjoint()
    }
}

/// Rank-`R` factorization `U diag(s) V^*`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub v: DMatrix<C64>,
}

/// Parameters of the randomized range finder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchParams {
    pub oversampling: usize,
    pub power_iters: usize,
}

impl Default for SketchParams {
    fn default() -> Self {
        Self { oversampling: 10, power_iters: 2 }
    }
}

fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Randomized SVD of order `rank` with a Gaussian sketch and subspace
/// power iterations.
pub fn randomized_svd(
    op: &(impl LinearOperator + ?Sized),
    rank: usize,
    params: SketchParams,
    rng: &mut impl Rng,
) -> Result<TruncatedSvd> {
    let (rows, cols) = (op.nrows(), op.ncols());
    let bound = rows.min(cols);
    if rank > bound {
        return Err(Error::RankTooLarge { rank, bound });
    }
    let k = (rank + params.oversampling).min(bound).max(rank);
    if k == 0 {
        return Ok(TruncatedSvd { u: DMatrix::zeros(rows, 0), s: vec![], v: DMatrix::zeros(cols, 0) });
    }

    let omega = DMatrix::from_fn(cols, k, |_, _| complex_gaussian(rng));
    let mut q = orthonormalize(apply_columns(op, &omega, false));
    for _ in 0..params.power_iters {
        let w = orthonormalize(apply_columns(op, &q, true));
        q = orthonormalize(apply_columns(op, &w, false));
    }
    // B = Q^* A, formed as (A^* Q)^*.
    let b = apply_columns(op, &q, true).adjoint();
    let svd = thin_svd(&b)?;
    let u = &q * svd.u.columns(0, rank);
    let v = svd.v.columns(0, rank).into_owned();
    let s = svd.s[..rank].to_vec();
    Ok(TruncatedSvd { u, s, v })
}

/// Left and right rank-`R` Gram eigenpacks of `H(z)` from one randomized SVD.
pub fn gram_eigpacks(
    z: &[C64],
    shape: &HankelShape,
    rank: usize,
    params: SketchParams,
    rng: &mut impl Rng,
) -> Result<(EigPack, EigPack)> {
    if rank >= shape.d() {
        return Err(Error::RankTooLarge { rank, bound: shape.d().saturating_sub(1) });
    }
    let op = HankelOperator::new(shape.clone(), z)?;
    Ok(eigpacks_from_svd(randomized_svd(&op, rank, params, rng)?))
}

pub(crate) fn eigpacks_from_svd(svd: TruncatedSvd) -> (EigPack, EigPack) {
    let values: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    (
        EigPack { vectors: svd.u, values: values.clone() },
        EigPack { vectors: svd.v, values },
    )
}

/// Result of [`cg_solve`].
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<C64>,
    pub iters: usize,
    /// Relative residual `|Ax - b| / |b|` of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Conjugate gradients for a Hermitian positive definite operator.
pub fn cg_solve(
    apply_a: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    max_iters: usize,
    x0: Option<&[C64]>,
) -> Result<CgOutcome> {
    cg_solve_observed(apply_a, b, tol, max_iters, x0, |_, _| {})
}

/// [`cg_solve`] calling `observe(k, x_k)` after every iterate, starting with
/// the initial guess at `k = 0`.
pub fn cg_solve_observed(
    apply_a: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    max_iters: usize,
    x0: Option<&[C64]>,
    mut observe: impl FnMut(usize, &[C64]),
) -> Result<CgOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg tolerance must be positive, got {tol}")));
    }
    let n = b.len();
    let b_norm = norm(b);
    let zero = C64::new(0.0, 0.0);
    if b_norm == 0.0 {
        observe(0, &vec![zero; n]);
        return Ok(CgOutcome { x: vec![zero; n], iters: 0, residual: 0.0, converged: true });
    }
    let mut x = match x0 {
        Some(x0) => {
            crate::hankel::check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![zero; n],
    };
    observe(0, &x);
    let ax = apply_a(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rs = inner(&r, &r).re;
    if rs.sqrt() / b_norm <= tol {
        return Ok(CgOutcome { x, iters: 0, residual: rs.sqrt() / b_norm, converged: true });
    }
    let mut p = r.clone();
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        iters += 1;
        let ap = apply_a(&p);
        let curvature = inner(&p, &ap).re;
        if !curvature.is_finite() {
            return Err(Error::NonFinite("conjugate gradients"));
        }
        if curvature <= 0.0 {
            return Err(Error::NotPositiveDefinite(curvature));
        }
        let alpha = rs / curvature;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += pi * alpha;
            *ri -= api * alpha;
        }
        observe(iters, &x);
        let rs_new = inner(&r, &r).re;
        if !rs_new.is_finite() {
            return Err(Error::NonFinite("conjugate gradients"));
        }
        if rs_new.sqrt() / b_norm <= tol {
            converged = true;
            break;
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
        rs = rs_new;
    }
    // report the true residual, not the recursively updated one
    let ax = apply_a(&x);
    let residual = b.iter().zip(&ax).map(|(b, a)| (b - a).norm_sqr()).sum::<f64>().sqrt() / b_norm;
    Ok(CgOutcome { x, iters, residual, converged })
}

/// Full dense SVD with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct DenseSvd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub v: DMatrix<C64>,
}

/// Largest `min(rows, cols)` accepted by [`dense_svd`].
pub const DENSE_GUARD: usize = 256;

/// Dense SVD for oracles and small problems. Refuses matrices whose smaller
/// dimension exceeds [`DENSE_GUARD`].
pub fn dense_svd(m: &DMatrix<C64>) -> Result<DenseSvd> {
    let d = m.nrows().min(m.ncols());
    if d > DENSE_GUARD {
        return Err(Error::TooLarge { dim: d, guard: DENSE_GUARD });
    }
    thin_svd(m)
}

fn to_faer(m: &DMatrix<C64>) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_finite(m: &DMatrix<C64>, what: &'static str) -> Result<()> {
    if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

// nalgebra's complex SVD occasionally returns inconsistent factors for
// rank-deficient input, so decompositions go through faer.
pub(crate) fn thin_svd(m: &DMatrix<C64>) -> Result<DenseSvd> {
    check_finite(m, "svd input")?;
    let d = m.nrows().min(m.ncols());
    if d == 0 {
        return Ok(DenseSvd { u: DMatrix::zeros(m.nrows(), 0), s: vec![], v: DMatrix::zeros(m.ncols(), 0) });
    }
    let svd = to_faer(m).thin_svd().map_err(|_| Error::NoConvergence)?;
    let s = svd.S().column_vector();
    Ok(DenseSvd {
        u: from_faer(svd.U()),
        s: (0..d).map(|k| s[k].re).collect(),
        v: from_faer(svd.V()),
    })
}

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    check_finite(m, "eigenvalue input")?;
    to_faer(m).eigenvalues().map_err(|_| Error::NoConvergence)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    check_finite(m, "eigen input")?;
    let e = to_faer(m).self_adjoint_eigen(faer::Side::Lower).map_err(|_| Error::NoConvergence)?;
    let s = e.S().column_vector();
    Ok(((0..m.nrows()).map(|k| s[k].re).collect(), from_faer(e.U())))
}

/// Singular values only, descending.
pub fn dense_singular_values(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    let d = m.nrows().min(m.ncols());
    if d > DENSE_GUARD {
        return Err(Error::TooLarge { dim: d, guard: DENSE_GUARD });
    }
    check_finite(m, "svd input")?;
    if d == 0 {
        return Ok(vec![]);
    }
    to_faer(m).singular_values().map_err(|_| Error::NoConvergence)
}
