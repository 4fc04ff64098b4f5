//! Structured harmonic-mean IRLS.
//!
//! The solver minimizes `J(z, eps) = lambda * sum_i log(sigma_i(H(z))^2 + eps^2)
//! + |Phi z - y|^2` by a sequence of weighted least-squares problems
//!
//! ```text
//! z_k = argmin <z, W_k z> + 1/(2 lambda) |Phi z - y|^2
//! W_{k+1} = 2 Hvec^* [ T_R(H H^*) (+) T_R(H^* H) + eps_k^2 I ]^{-1} Hvec
//! ```
//!
//! where `(+)` is the Kronecker sum, acting on a matrix `M` as
//! `M -> A M + M B`. The weight is never formed: [`WeightOperator::apply`]
//! works on the two rank-`R` eigenpacks and FFT convolutions, at cost
//! `O(n R^2 + n R log n)` per product.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hankel::{check_len, weighted_gen_norm, Convolver, HankelOperator, HankelShape};
use crate::linalg::{
    cg_solve, dense_singular_values, eigpacks_from_svd, hermitian_eigen, randomized_svd, CgOutcome,
    EigPack,
    SketchParams, DENSE_GUARD,
};
use crate::spectral::SamplingOperator;
use crate::C64;

/// How the data-fidelity term is weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// Denoising with a fixed regularization parameter.
    Fixed(f64),
    /// Completion: `Phi z = y` is enforced exactly by eliminating the
    /// observed coordinates.
    ExactConstraint,
    /// Denoising with `lambda_k` set from the energy of `H(z_{k-1})` outside
    /// its best rank-`R` approximation, divided by `d * R`.
    Adaptive,
}

/// Scaling of the first weight matrix `W_0 = c I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialWeight {
    /// `c = eps_0^2`.
    #[default]
    EpsSquared,
    /// `c = eps_0^{-2}`.
    InverseEpsSquared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Rank estimate `R`.
    pub rank: usize,
    pub lambda_mode: LambdaMode,
    /// Decay base of the forced `alpha^{k^2}` term in the epsilon schedule.
    pub decay_alpha: f64,
    /// Stop once `|z_k - z_{k-1}| / |z_k| < tol`.
    pub tol: f64,
    pub max_outer: usize,
    pub cg_tol: f64,
    /// Defaults to `10 n` when unset.
    pub cg_max_iters: Option<usize>,
    pub seed: u64,
    pub sketch: SketchParams,
    pub initial_weight: InitialWeight,
}

impl SolverConfig {
    pub fn new(rank: usize, lambda_mode: LambdaMode) -> Self {
        Self {
            rank,
            lambda_mode,
            decay_alpha: 0.9,
            tol: 1e-6,
            max_outer: 500,
            cg_tol: 1e-10,
            cg_max_iters: None,
            seed: 0,
            sketch: SketchParams::default(),
            initial_weight: InitialWeight::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.decay_alpha > 0.0 && self.decay_alpha < 1.0) {
            return bad(format!("decay_alpha must lie in (0, 1), got {}", self.decay_alpha));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.cg_tol > 0.0) {
            return bad(format!("cg_tol must be positive, got {}", self.cg_tol));
        }
        if self.rank == 0 {
            return bad("rank estimate must be at least 1".into());
        }
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive and finite, got {l}"));
            }
        }
        Ok(())
    }
}

/// Outcome of [`irls_solve`].
#[derive(Debug, Clone)]
pub struct IrlsReport {
    pub z_hat: Vec<C64>,
    /// `J_lambda(z_k, eps_k)` per outer iteration; the pure surrogate in
    /// exact-constraint mode.
    pub objective_history: Vec<f64>,
    pub eps_history: Vec<f64>,
    pub iterate_change_history: Vec<f64>,
    /// The regularization parameter used at each iteration (zero in
    /// exact-constraint mode).
    pub lambda_history: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub cg_iters_total: usize,
    /// Inner solves that hit their iteration cap or broke down.
    pub cg_failures: usize,
    /// Set when the surrogate was evaluated from a rank-`R` estimate because
    /// `min(d1, d2)` exceeded the dense guard.
    pub surrogate_approximate: bool,
}

/// `sum_{i=1}^d log(sigma_i(H(z))^2 + eps^2)` from a dense SVD.
pub fn logdet_surrogate(z: &[C64], shape: &HankelShape, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let s = dense_singular_values(&shape.materialize(z)?)?;
    Ok(surrogate_from_values(&s, shape.d(), eps))
}

fn surrogate_from_values(s: &[f64], d: usize, eps: f64) -> f64 {
    let e2 = eps * eps;
    let head: f64 = s.iter().map(|s| (s * s + e2).ln()).sum();
    head + (d - s.len()) as f64 * e2.ln()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")))
    }
}

/// Surrogate evaluation that falls back to the top-`rank` singular values
/// (treating the tail as zero) past the dense guard.
fn surrogate_value(
    z: &[C64],
    shape: &HankelShape,
    eps: f64,
    rank: usize,
    sketch: SketchParams,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, bool)> {
    if shape.d() <= DENSE_GUARD {
        return Ok((logdet_surrogate(z, shape, eps)?, false));
    }
    check_eps(eps)?;
    let op = HankelOperator::new(shape.clone(), z)?;
    let svd = randomized_svd(&op, rank, sketch, rng)?;
    Ok((surrogate_from_values(&svd.s, shape.d(), eps), true))
}

fn residual_sq(phi: &SamplingOperator, z: &[C64], y: &[C64]) -> Result<f64> {
    Ok(phi.apply(z)?.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum())
}

/// `lambda * logdet_surrogate(z, eps) + |Phi z - y|^2`.
pub fn objective(
    z: &[C64],
    shape: &HankelShape,
    eps: f64,
    lambda: f64,
    phi: &SamplingOperator,
    y: &[C64],
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let fidelity = residual_sq(phi, z, y)?;
    if lambda == 0.0 {
        return Ok(fidelity);
    }
    Ok(lambda * logdet_surrogate(z, shape, eps)? + fidelity)
}

/// `min(eps_prev, |z_prev - z| + alpha^{k^2})`.
pub fn epsilon_update(eps_prev: f64, z_prev: &[C64], z: &[C64], decay_alpha: f64, k: usize) -> f64 {
    let step = z_prev.iter().zip(z).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let forced = decay_alpha.powf((k as f64) * (k as f64));
    eps_prev.min(step + forced)
}

/// The weight `W` in factored form: left and right rank-`R` eigenpacks of
/// `H(z)`, the smoothing `eps`, and cached spectra of the basis vectors.
#[derive(Clone)]
pub struct WeightOperator {
    left: EigPack,
    right: EigPack,
    eps: f64,
    shape: HankelShape,
    conv: Convolver,
    /// spectra of reversed `conj(U_l)`, for rows of `U^* H(v)`
    u_corr: Vec<Vec<C64>>,
    /// spectra of reversed `V_l`, for columns of `H(v) V`
    v_corr: Vec<Vec<C64>>,
    /// spectra of `U_l`, for antidiagonal sums of `U X`
    u_spec: Vec<Vec<C64>>,
    /// spectra of `conj(V_l)`, for antidiagonal sums of `Y V^*`
    v_conj_spec: Vec<Vec<C64>>,
}

impl std::fmt::Debug for WeightOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightOperator")
            .field("shape", &self.shape)
            .field("rank", &self.left.rank())
            .field("eps", &self.eps)
            .field("values", &self.left.values)
            .finish()
    }
}

fn column(m: &DMatrix<C64>, l: usize) -> Vec<C64> {
    m.column(l).iter().copied().collect()
}

impl WeightOperator {
    pub fn from_eigpacks(left: EigPack, right: EigPack, eps: f64, shape: HankelShape) -> Result<Self> {
        check_eps(eps)?;
        if left.vectors.nrows() != shape.d1() || right.vectors.nrows() != shape.d2() {
            return Err(Error::InvalidShape("eigenpack dimensions do not match the shape".into()));
        }
        check_len(left.rank(), right.rank())?;
        let conv = Convolver::new(shape.n());
        let rank = left.rank();
        let mut u_corr = Vec::with_capacity(rank);
        let mut v_corr = Vec::with_capacity(rank);
        let mut u_spec = Vec::with_capacity(rank);
        let mut v_conj_spec = Vec::with_capacity(rank);
        for l in 0..rank {
            let u = column(&left.vectors, l);
            let v = column(&right.vectors, l);
            u_corr.push(conv.spectrum_of(u.iter().rev().map(|c| c.conj())));
            v_corr.push(conv.spectrum_rev(&v));
            u_spec.push(conv.spectrum(&u));
            v_conj_spec.push(conv.spectrum_of(v.iter().map(|c| c.conj())));
        }
        Ok(Self { left, right, eps, shape, conv, u_corr, v_corr, u_spec, v_conj_spec })
    }

    pub fn left(&self) -> &EigPack {
        &self.left
    }

    pub fn right(&self) -> &EigPack {
        &self.right
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }

    /// `W v`.
    ///
    /// With `M = H(v)`, `C = U^* M V` and `e = 1/eps^2`, the inverse of the
    /// regularized Kronecker sum is
    ///
    /// ```text
    /// e M + U (Dl - e) U^* M + M V (Dm - e) V^* + U K V^*
    /// K_ij = C_ij (1/(l_i + m_j + eps^2) - 1/(l_i + eps^2) - 1/(m_j + eps^2) + e)
    /// ```
    ///
    /// with `Dl = diag(1/(l_i + eps^2))`, `Dm = diag(1/(m_j + eps^2))`. The
    /// antidiagonal sums of each rank-one term are convolutions.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.shape.check_generator(v)?;
        let (d1, d2, n) = (self.shape.d1(), self.shape.d2(), self.shape.n());
        let rank = self.left.rank();
        let e2 = self.eps * self.eps;
        let e = 1.0 / e2;
        let conv = &self.conv;
        let v_spec = conv.spectrum(v);

        // H(v) V and rows of U^* H(v)
        let mv: Vec<Vec<C64>> = self.v_corr.iter().map(|s| conv.correlate(&v_spec, s, d2)).collect();
        let um: Vec<Vec<C64>> = self.u_corr.iter().map(|s| conv.correlate(&v_spec, s, d1)).collect();

        let lam = &self.left.values;
        let mu = &self.right.values;
        let mut k = DMatrix::<C64>::zeros(rank, rank);
        for i in 0..rank {
            let ui = self.left.vectors.column(i);
            for j in 0..rank {
                let cij: C64 = ui.iter().zip(&mv[j]).map(|(a, b)| a.conj() * b).sum();
                let scale = 1.0 / (lam[i] + mu[j] + e2) - 1.0 / (lam[i] + e2) - 1.0 / (mu[j] + e2) + e;
                k[(i, j)] = cij * scale;
            }
        }

        let mut acc = vec![C64::new(0.0, 0.0); conv.fft_len()];
        for l in 0..rank {
            let sx = 1.0 / (lam[l] + e2) - e;
            let x_spec = conv.spectrum_of(um[l].iter().map(|c| c * sx));

            let sy = 1.0 / (mu[l] + e2) - e;
            let mut y: Vec<C64> = mv[l].iter().map(|c| c * sy).collect();
            for i in 0..rank {
                let kil = k[(i, l)];
                for (yr, u) in y.iter_mut().zip(self.left.vectors.column(i).iter()) {
                    *yr += u * kil;
                }
            }
            let y_spec = conv.spectrum(&y);
            for (a, ((us, xs), (vs, ys))) in acc.iter_mut().zip(
                self.u_spec[l].iter().zip(&x_spec).zip(self.v_conj_spec[l].iter().zip(&y_spec)),
            ) {
                *a += us * xs + vs * ys;
            }
        }
        let low_rank = conv.inverse_window(acc, 0, n);
        Ok(low_rank
            .iter()
            .zip(v)
            .zip(self.shape.weights())
            .map(|((lr, x), &w)| (x * (e * w as f64) + lr) * 2.0)
            .collect())
    }
}

/// Builds the weight operator for iterate `z` from one randomized SVD of
/// `H(z)`.
pub fn build_weight_operator(
    z: &[C64],
    shape: &HankelShape,
    rank: usize,
    eps: f64,
    sketch: SketchParams,
    rng: &mut impl rand::Rng,
) -> Result<WeightOperator> {
    check_eps(eps)?;
    let (left, right) = crate::linalg::gram_eigpacks(z, shape, rank, sketch, rng)?;
    WeightOperator::from_eigpacks(left, right, eps, shape.clone())
}

/// Dense `W` by literal construction with Kronecker products. Oracle only;
/// refuses `d1 * d2 > 400`.
pub fn dense_weight_matrix(z: &[C64], shape: &HankelShape, rank: usize, eps: f64) -> Result<DMatrix<C64>> {
    check_eps(eps)?;
    let (d1, d2, n) = (shape.d1(), shape.d2(), shape.n());
    if d1 * d2 > 400 {
        return Err(Error::TooLarge { dim: d1 * d2, guard: 400 });
    }
    let h = shape.materialize(z)?;
    let truncate = |g: DMatrix<C64>| -> Result<DMatrix<C64>> {
        let (values, vectors) = hermitian_eigen(&g)?;
        let dim = vectors.nrows();
        let mut out = DMatrix::zeros(dim, dim);
        for k in (0..dim).rev().take(rank) {
            let q = vectors.column(k);
            out += &q * q.adjoint() * C64::new(values[k].max(0.0), 0.0);
        }
        Ok(out)
    };
    let a = truncate(&h * h.adjoint())?;
    let b = truncate(h.adjoint() * &h)?;

    // vec index p = i + d1 * j
    let dim = d1 * d2;
    let mut kron = DMatrix::<C64>::zeros(dim, dim);
    for j in 0..d2 {
        for i in 0..d1 {
            let p = i + d1 * j;
            for ip in 0..d1 {
                kron[(p, ip + d1 * j)] += a[(i, ip)];
            }
            for jp in 0..d2 {
                kron[(p, i + d1 * jp)] += b[(jp, j)];
            }
            kron[(p, p)] += C64::new(eps * eps, 0.0);
        }
    }
    let mut hvec = DMatrix::<C64>::zeros(dim, n);
    for j in 0..d2 {
        for i in 0..d1 {
            hvec[(i + d1 * j, i + j)] = C64::new(1.0, 0.0);
        }
    }
    let solved = kron
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(f64::NAN))?
        .solve(&hvec);
    Ok(hvec.adjoint() * solved * C64::new(2.0, 0.0))
}

/// The current weight: the scaled identity of the first iteration, or a
/// harmonic-mean operator afterwards.
#[derive(Debug, Clone)]
pub enum Weight {
    Scaled(f64),
    Harmonic(WeightOperator),
}

impl Weight {
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        match self {
            Weight::Scaled(c) => Ok(v.iter().map(|x| x * *c).collect()),
            Weight::Harmonic(w) => w.apply(v),
        }
    }
}

/// Solves one weighted least-squares step, warm-started at `x0`.
///
/// With `lambda = Some(l)`, solves `(W + Phi^* Phi / (2 l)) z = Phi^* y / (2 l)`.
/// With `None`, minimizes `<z, W z>` subject to `Phi z = y` over the
/// unobserved coordinates; observed ones are copied from `y`.
pub fn solve_subproblem(
    weight: &Weight,
    phi: &SamplingOperator,
    y: &[C64],
    lambda: Option<f64>,
    tol: f64,
    max_iters: usize,
    x0: &[C64],
) -> Result<CgOutcome> {
    check_len(phi.n(), x0.len())?;
    let filled = phi.adjoint(y)?;
    match lambda {
        Some(l) => {
            let c = 1.0 / (2.0 * l);
            let rhs: Vec<C64> = filled.iter().map(|v| v * c).collect();
            let apply = |v: &[C64]| {
                let mut out = weight.apply(v).expect("generator length");
                for &i in phi.indices() {
                    out[i] += v[i] * c;
                }
                out
            };
            cg_solve(apply, &rhs, tol, max_iters, Some(x0))
        }
        None => {
            let free = phi.complement();
            if free.is_empty() {
                return Ok(CgOutcome { x: filled, iters: 0, residual: 0.0, converged: true });
            }
            let scatter = |u: &[C64]| {
                let mut full = vec![C64::new(0.0, 0.0); phi.n()];
                for (&i, &val) in free.iter().zip(u) {
                    full[i] = val;
                }
                full
            };
            let w_obs = weight.apply(&filled)?;
            let rhs: Vec<C64> = free.iter().map(|&i| -w_obs[i]).collect();
            let apply = |u: &[C64]| {
                let wu = weight.apply(&scatter(u)).expect("generator length");
                free.iter().map(|&i| wu[i]).collect::<Vec<_>>()
            };
            let u0: Vec<C64> = free.iter().map(|&i| x0[i]).collect();
            let out = cg_solve(apply, &rhs, tol, max_iters, Some(&u0))?;
            let mut z = filled;
            for (&i, &val) in free.iter().zip(&out.x) {
                z[i] = val;
            }
            Ok(CgOutcome { x: z, ..out })
        }
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Energy of `H(z)` outside its top singular values `s`.
fn tail_energy(z: &[C64], shape: &HankelShape, s: &[f64]) -> f64 {
    let total = weighted_gen_norm(z, shape).powi(2);
    (total - s.iter().map(|s| s * s).sum::<f64>()).max(0.0)
}

fn adaptive_lambda(z: &[C64], shape: &HankelShape, s: &[f64], rank: usize) -> f64 {
    tail_energy(z, shape, s) / (shape.d() * rank) as f64
}

fn relative_change(z: &[C64], z_prev: &[C64]) -> f64 {
    let step = norm(&z.iter().zip(z_prev).map(|(a, b)| a - b).collect::<Vec<_>>());
    let z_norm = norm(z);
    if z_norm > 0.0 {
        step / z_norm
    } else {
        step
    }
}

/// One inner solve with its bookkeeping; `None` on a breakdown.
#[allow(clippy::too_many_arguments)]
fn run_subproblem(
    weight: &Weight,
    phi: &SamplingOperator,
    y: &[C64],
    lambda: Option<f64>,
    tol: f64,
    max_iters: usize,
    x0: &[C64],
    report: &mut IrlsReport,
) -> Result<Option<Vec<C64>>> {
    match solve_subproblem(weight, phi, y, lambda, tol, max_iters, x0) {
        Ok(out) => {
            report.cg_iters_total += out.iters;
            if !out.converged {
                report.cg_failures += 1;
            }
            Ok(Some(out.x))
        }
        Err(Error::NotPositiveDefinite(_)) | Err(Error::NonFinite(_)) => {
            report.cg_failures += 1;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs structured harmonic-mean IRLS on data `y = Phi x (+ noise)`.
pub fn irls_solve(
    phi: &SamplingOperator,
    y: &[C64],
    shape: &HankelShape,
    config: &SolverConfig,
) -> Result<IrlsReport> {
    config.validate()?;
    check_len(shape.n(), phi.n())?;
    check_len(phi.m(), y.len())?;
    let rank = config.rank;
    if rank >= shape.d() {
        return Err(Error::RankTooLarge { rank, bound: shape.d() - 1 });
    }
    let n = shape.n();
    let exact = config.lambda_mode == LambdaMode::ExactConstraint;
    let cg_max = config.cg_max_iters.unwrap_or(10 * n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let filled = phi.adjoint(y)?;
    let mut report = IrlsReport {
        z_hat: filled.clone(),
        objective_history: vec![],
        eps_history: vec![],
        iterate_change_history: vec![],
        lambda_history: vec![],
        outer_iters: 0,
        converged: true,
        cg_iters_total: 0,
        cg_failures: 0,
        surrogate_approximate: false,
    };
    if norm(&filled) == 0.0 {
        return Ok(report);
    }

    let op = HankelOperator::new(shape.clone(), &filled)?;
    let top = randomized_svd(&op, rank, config.sketch, &mut rng)?;
    let eps0 = top.s[0];
    if exact && phi.is_identity() {
        // singleton feasible set
        let (f, approx) = surrogate_value(&filled, shape, eps0, rank, config.sketch, &mut rng)?;
        report.objective_history.push(f);
        report.eps_history.push(eps0);
        report.iterate_change_history.push(0.0);
        report.lambda_history.push(0.0);
        report.outer_iters = 1;
        report.surrogate_approximate = approx;
        return Ok(report);
    }

    let mut weight = Weight::Scaled(match config.initial_weight {
        InitialWeight::EpsSquared => eps0 * eps0,
        InitialWeight::InverseEpsSquared => 1.0 / (eps0 * eps0),
    });
    let mut eps = eps0;
    // z_0 = 0: no prior iterate exists, so the first step counts as a full move
    let mut z_prev = vec![C64::new(0.0, 0.0); n];
    let mut lambda_ref_s = top.s;
    let mut lambda_ref_z = filled.clone();
    let mut lambda_cap = f64::INFINITY;
    let mut best: Option<(f64, Vec<C64>)> = None;
    let mut prev_change: Option<f64> = None;
    report.converged = false;

    for k in 1..=config.max_outer {
        let lambda = match config.lambda_mode {
            LambdaMode::Fixed(l) => Some(l),
            LambdaMode::ExactConstraint => None,
            LambdaMode::Adaptive => {
                // clamped: the raw rule alternates between over- and
                // under-smoothing on consecutive iterates
                let l = adaptive_lambda(&lambda_ref_z, shape, &lambda_ref_s, rank).min(lambda_cap);
                lambda_cap = l;
                // no unexplained energy: the data already has rank R
                Some(l).filter(|&l| l > f64::MIN_POSITIVE)
            }
        };
        let cg_tol = match prev_change {
            Some(c) => config.cg_tol.max(0.1 * c),
            None => config.cg_tol,
        };
        let warm = if k == 1 { filled.clone() } else { z_prev.clone() };
        let Some(mut z) = run_subproblem(&weight, phi, y, lambda, cg_tol, cg_max, &warm, &mut report)? else {
            break;
        };
        let mut change = relative_change(&z, &z_prev);
        if change < config.tol && cg_tol > config.cg_tol {
            // a loose inner solve can return the warm start unchanged
            match run_subproblem(&weight, phi, y, lambda, config.cg_tol, cg_max, &z, &mut report)? {
                Some(tight) => z = tight,
                None => break,
            }
            change = relative_change(&z, &z_prev);
        }
        eps = epsilon_update(eps, &z_prev, &z, config.decay_alpha, k);
        if !(eps * eps > f64::MIN_POSITIVE) {
            // eps^2 underflows only at a fixed point, once alpha^(k^2) does
            report.converged = true;
            break;
        }

        let lambda_used = lambda.unwrap_or(0.0);
        let (surrogate, approx) = surrogate_value(&z, shape, eps, rank, config.sketch, &mut rng)?;
        report.surrogate_approximate |= approx;
        let value = if exact { surrogate } else { lambda_used * surrogate + residual_sq(phi, &z, y)? };
        if !value.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        report.objective_history.push(value);
        report.eps_history.push(eps);
        report.iterate_change_history.push(change);
        report.lambda_history.push(lambda_used);
        report.outer_iters = k;
        if best.as_ref().is_none_or(|(v, _)| value <= *v) {
            best = Some((value, z.clone()));
        }

        if change < config.tol {
            report.converged = true;
            break;
        }
        if k == config.max_outer {
            break;
        }
        let (left, right) = eigpacks_from_svd(randomized_svd(
            &HankelOperator::new(shape.clone(), &z)?,
            rank,
            config.sketch,
            &mut rng,
        )?);
        lambda_ref_s = left.values.iter().map(|v| v.sqrt()).collect();
        lambda_ref_z = z.clone();
        weight = Weight::Harmonic(WeightOperator::from_eigpacks(left, right, eps, shape.clone())?);
        prev_change = Some(change);
        z_prev = z;
    }

    report.z_hat = match best {
        Some((_, z)) => z,
        None => z_prev,
    };
    Ok(report)
}
