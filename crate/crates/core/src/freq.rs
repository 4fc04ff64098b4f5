//! Frequency retrieval: ESPRIT, Prony's method, amplitude fitting, the
//! wraparound frequency MSE and the recover-then-estimate pipeline.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hankel::HankelShape;
use crate::irls::{irls_solve, InitialWeight, IrlsReport, LambdaMode, SolverConfig};
use crate::linalg::{dense_svd, eigenvalues, thin_svd, DenseSvd};
use crate::spectral::{wrap_distance, SamplingOperator};
use crate::C64;

/// Which estimator produced a [`FreqEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// IRLS recovery followed by ESPRIT.
    StrucHmirlsEsprit,
    Esprit,
    Prony,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::StrucHmirlsEsprit => "struchmirls+esprit",
            Method::Esprit => "vanilla-esprit",
            Method::Prony => "prony",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "struchmirls+esprit" | "struchmirls" => Ok(Method::StrucHmirlsEsprit),
            "vanilla-esprit" | "esprit" => Ok(Method::Esprit),
            "prony" => Ok(Method::Prony),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Moduli of the eigenvalues (ESPRIT) or polynomial roots (Prony),
    /// aligned with the sorted frequencies.
    pub root_moduli: Vec<f64>,
    /// Condition number of the least-squares system that was solved.
    pub condition: f64,
}

/// Estimated frequencies, sorted ascending in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqEstimate {
    pub freqs: Vec<f64>,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

fn from_roots(roots: &[C64], method: Method, condition: f64) -> FreqEstimate {
    let mut pairs: Vec<(f64, f64)> = roots
        .iter()
        .map(|z| {
            let f = (z.arg() / TAU).rem_euclid(1.0);
            // rem_euclid can round up to exactly 1.0
            (if f >= 1.0 { 0.0 } else { f }, z.norm())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    FreqEstimate {
        freqs: pairs.iter().map(|p| p.0).collect(),
        method,
        diagnostics: Diagnostics { root_moduli: pairs.iter().map(|p| p.1).collect(), condition },
    }
}

/// Minimum-norm least squares `a x = b` from a thin SVD, dropping singular
/// values at or below `cutoff`.
fn svd_solve(svd: &DenseSvd, b: &DMatrix<C64>, cutoff: f64) -> DMatrix<C64> {
    let mut ub = svd.u.adjoint() * b;
    for (k, &s) in svd.s.iter().enumerate() {
        let scale = if s > cutoff { 1.0 / s } else { 0.0 };
        ub.row_mut(k).scale_mut(scale);
    }
    &svd.v * ub
}

/// Least squares `a x = b` by SVD; returns the solution and the condition
/// number, or an error when `a` is numerically rank deficient.
fn lstsq(a: DMatrix<C64>, b: DMatrix<C64>, what: &str) -> Result<(DMatrix<C64>, f64)> {
    let svd = thin_svd(&a)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let smin = svd.s.last().copied().unwrap_or(0.0);
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::RankDeficient(format!("{what} (sigma_min/sigma_max = {:e})", smin / smax)));
    }
    Ok((svd_solve(&svd, &b, 0.0), smax / smin))
}

/// ESPRIT on the left signal subspace of `H(z)`, with least-squares shift
/// invariance.
pub fn esprit(z: &[C64], shape: &HankelShape, r: usize) -> Result<FreqEstimate> {
    if r == 0 || r >= shape.d() || shape.d1() < r + 1 {
        return Err(Error::RankTooLarge { rank: r, bound: shape.d().saturating_sub(1) });
    }
    let h = shape.materialize(z)?;
    let svd = dense_svd(&h)?;
    if !(svd.s[0] > 0.0) || svd.s[r - 1] <= 1e-12 * svd.s[0] {
        return Err(Error::RankDeficient(format!("signal subspace of H(z) has rank < {r}")));
    }
    let d1 = shape.d1();
    let us = svd.u.columns(0, r);
    let upper = us.rows(0, d1 - 1).into_owned();
    let lower = us.rows(1, d1 - 1).into_owned();
    let (psi, cond) = lstsq(upper, lower, "shifted signal subspace")?;
    Ok(from_roots(&eigenvalues(&psi)?, Method::Esprit, cond))
}

/// Prony's method: least-squares linear prediction of order `r`, then the
/// roots of the prediction polynomial.
pub fn prony(z: &[C64], r: usize) -> Result<FreqEstimate> {
    let n = z.len();
    if r == 0 || n < 2 * r {
        return Err(Error::InvalidArgument(format!("prony needs n >= 2r (n={n}, r={r})")));
    }
    // x[t] + a_1 x[t-1] + ... + a_r x[t-r] = 0 for t = r..n
    let rows = n - r;
    let a = DMatrix::from_fn(rows, r, |t, k| z[t + r - 1 - k]);
    let b = DMatrix::from_fn(rows, 1, |t, _| -z[t + r]);
    let (coef, cond) = lstsq(a, b, "linear prediction system")?;
    // companion matrix of p(x) = x^r + a_1 x^{r-1} + ... + a_r
    let comp = DMatrix::from_fn(r, r, |i, j| {
        if i == 0 {
            -coef[(j, 0)]
        } else if i == j + 1 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(from_roots(&eigenvalues(&comp)?, Method::Prony, cond))
}

/// Least-squares amplitudes for the given frequencies, with the condition
/// number of the Vandermonde system.
pub fn estimate_amplitudes(z: &[C64], freqs: &[f64]) -> Result<(Vec<C64>, f64)> {
    if freqs.is_empty() {
        return Ok((vec![], 1.0));
    }
    let v = DMatrix::from_fn(z.len(), freqs.len(), |t, i| {
        C64::from_polar(1.0, (freqs[i] * t as f64).rem_euclid(1.0) * TAU)
    });
    let svd = thin_svd(&v)?;
    let (smax, smin) = (svd.s[0], svd.s[svd.s.len() - 1]);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let x = svd_solve(&svd, &DMatrix::from_column_slice(z.len(), 1, z), 1e-14 * smax);
    Ok((x.as_slice().to_vec(), cond))
}

/// Mean squared wraparound distance under the best matching of estimates to
/// truth: exhaustive for up to three frequencies, sorted order beyond.
pub fn freq_mse(est: &FreqEstimate, truth: &[f64]) -> Result<f64> {
    mse_matched(&est.freqs, truth)
}

pub fn mse_matched(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), got: est.len() });
    }
    let r = est.len();
    if r == 0 {
        return Ok(0.0);
    }
    let cost = |perm: &[usize]| {
        perm.iter().enumerate().map(|(i, &j)| wrap_distance(est[i], truth[j]).powi(2)).sum::<f64>()
            / r as f64
    };
    if r <= 3 {
        let mut best = f64::INFINITY;
        permutations(r, &mut |p| best = best.min(cost(p)));
        return Ok(best);
    }
    let mut e = est.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    Ok(e.iter().zip(&t).map(|(a, b)| wrap_distance(*a, *b).powi(2)).sum::<f64>() / r as f64)
}

fn permutations(r: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(k: usize, perm: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            visit(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            rec(k + 1, perm, visit);
            perm.swap(k, i);
        }
    }
    rec(0, &mut (0..r).collect(), visit);
}

/// Two-stage estimation: IRLS recovery of the generator from `y = Phi x`,
/// then ESPRIT on the recovered signal.
///
/// With a full mask the solver denoises using `config.lambda_mode`; with a
/// partial mask a fixed or adaptive mode is kept as given, so pass
/// [`LambdaMode::ExactConstraint`] for noiseless completion.
pub fn denoise_then_estimate(
    y: &[C64],
    phi: &SamplingOperator,
    shape: &HankelShape,
    config: &SolverConfig,
    r: usize,
) -> Result<(FreqEstimate, IrlsReport)> {
    if r == 0 || r >= shape.d() || shape.d1() < r + 1 {
        return Err(Error::RankTooLarge { rank: r, bound: shape.d().saturating_sub(1) });
    }
    let report = irls_solve(phi, y, shape, config)?;
    let mut est = esprit(&report.z_hat, shape, r)?;
    est.method = Method::StrucHmirlsEsprit;
    Ok((est, report))
}

/// Solver settings used by the two-stage pipeline when only the model order
/// is known. Denoising starts from `W = I / eps_0^2`; the literal `eps_0^2 I`
/// shrinks the first iterate to almost zero, which starves the adaptive rule.
pub fn pipeline_config(r: usize, completion: bool) -> SolverConfig {
    if completion {
        return SolverConfig::new(r, LambdaMode::ExactConstraint);
    }
    let mut config = SolverConfig::new(r, LambdaMode::Adaptive);
    config.initial_weight = InitialWeight::InverseEpsSquared;
    config
}
