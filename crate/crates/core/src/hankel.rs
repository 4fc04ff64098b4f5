//! The Hankel embedding `z -> H(z)` and FFT-based products with it.
//!
//! `H(z)` is the `d1 x d2` matrix with `H(z)[i, j] = z[i + j - 1]` (1-based),
//! generated by `z` of length `n = d1 + d2 - 1`. Matrices are never formed
//! outside of [`HankelShape::materialize`], which exists for test oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;
use crate::C64;

/// Dimensions of a Hankel embedding and its antidiagonal multiplicities.
#[derive(Clone, PartialEq, Eq)]
pub struct HankelShape {
    n: usize,
    d1: usize,
    d2: usize,
    weights: Vec<usize>,
}

impl fmt::Debug for HankelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HankelShape(n={}, d1={}, d2={})", self.n, self.d1, self.d2)
    }
}

impl HankelShape {
    /// Shape for a generator of length `n`. Without `d1` the balanced split
    /// `d1 = n / 2 + 1` is used.
    pub fn new(n: usize, d1: Option<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidShape("generator length must be positive".into()));
        }
        let d1 = d1.unwrap_or(n / 2 + 1);
        if d1 == 0 || d1 > n {
            return Err(Error::InvalidShape(format!("d1={d1} outside 1..={n}")));
        }
        let d2 = n + 1 - d1;
        let weights = (0..n).map(|j| (j + 1).min(d1).min(d2).min(n - j)).collect();
        Ok(Self { n, d1, d2, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// `min(d1, d2)`, the number of singular values of `H(z)`.
    pub fn d(&self) -> usize {
        self.d1.min(self.d2)
    }

    /// Number of matrix entries on each antidiagonal.
    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    pub(crate) fn check_generator(&self, z: &[C64]) -> Result<()> {
        check_len(self.n, z.len())
    }

    /// Dense `H(z)`. Only meant for oracles and small diagnostics.
    pub fn materialize(&self, z: &[C64]) -> Result<DMatrix<C64>> {
        self.check_generator(z)?;
        Ok(DMatrix::from_fn(self.d1, self.d2, |i, j| z[i + j]))
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// Entry `(i, j)` of `H(z)`, 1-based.
pub fn hankel_entry(z: &[C64], shape: &HankelShape, i: usize, j: usize) -> Result<C64> {
    shape.check_generator(z)?;
    if i == 0 || j == 0 || i > shape.d1 || j > shape.d2 {
        return Err(Error::IndexOutOfRange { i, j, d1: shape.d1, d2: shape.d2 });
    }
    Ok(z[i + j - 2])
}

/// `H(z) v`.
pub fn hankel_matvec(z: &[C64], shape: &HankelShape, v: &[C64]) -> Result<Vec<C64>> {
    HankelOperator::new(shape.clone(), z)?.matvec(v)
}

/// `H(z)^* u`.
pub fn hankel_adjoint_matvec(z: &[C64], shape: &HankelShape, u: &[C64]) -> Result<Vec<C64>> {
    HankelOperator::new(shape.clone(), z)?.adjoint_matvec(u)
}

/// Adjoint of `z -> vec(H(z))` applied to `vec(m)`: sums over antidiagonals.
pub fn hankel_vec_adjoint(m: &DMatrix<C64>, shape: &HankelShape) -> Result<Vec<C64>> {
    if m.nrows() != shape.d1 || m.ncols() != shape.d2 {
        return Err(Error::InvalidShape(format!(
            "matrix is {}x{}, shape expects {}x{}",
            m.nrows(),
            m.ncols(),
            shape.d1,
            shape.d2
        )));
    }
    let mut out = vec![C64::new(0.0, 0.0); shape.n];
    for j in 0..shape.d2 {
        for i in 0..shape.d1 {
            out[i + j] += m[(i, j)];
        }
    }
    Ok(out)
}

/// `sqrt(sum_j w[j] |z[j]|^2)`, equal to the Frobenius norm of `H(z)`.
pub fn weighted_gen_norm(z: &[C64], shape: &HankelShape) -> f64 {
    z.iter()
        .zip(&shape.weights)
        .map(|(x, &w)| w as f64 * x.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// A discrete Fourier transform of fixed length.
///
/// Implementations need only be accurate; no particular bit layout of the
/// results is relied upon. `inverse` is unnormalized.
pub trait Transform: Send + Sync {
    fn len(&self) -> usize;
    fn forward(&self, buf: &mut [C64]);
    fn inverse(&self, buf: &mut [C64]);
}

/// [`Transform`] backed by `rustfft`.
pub struct RustFftTransform {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RustFftTransform {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { fwd: planner.plan_fft_forward(len), inv: planner.plan_fft_inverse(len) }
    }
}

impl Transform for RustFftTransform {
    fn len(&self) -> usize {
        self.fwd.len()
    }

    fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
    }
}

/// Zero-padded circular convolutions long enough to be exact for
/// generators of length `n`.
///
/// Every product needed here (Hankel matvecs and antidiagonal sums of
/// rank-one matrices) has a linear-convolution support that fits in any
/// transform length `>= n` without aliasing into the samples we read.
#[derive(Clone)]
pub struct Convolver {
    n: usize,
    transform: Arc<dyn Transform>,
}

impl Convolver {
    pub fn new(n: usize) -> Self {
        Self::with_transform(n, Arc::new(RustFftTransform::new(n.next_power_of_two())))
    }

    pub fn with_transform(n: usize, transform: Arc<dyn Transform>) -> Self {
        assert!(transform.len() >= n, "transform shorter than the generator");
        Self { n, transform }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fft_len(&self) -> usize {
        self.transform.len()
    }

    /// Spectrum of `x` zero-padded to the transform length.
    pub fn spectrum(&self, x: &[C64]) -> Vec<C64> {
        self.spectrum_of(x.iter().copied())
    }

    /// Spectrum of `x` reversed.
    pub fn spectrum_rev(&self, x: &[C64]) -> Vec<C64> {
        self.spectrum_of(x.iter().rev().copied())
    }

    pub fn spectrum_of(&self, x: impl Iterator<Item = C64>) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.transform.len()];
        for (b, v) in buf.iter_mut().zip(x) {
            *b = v;
        }
        self.transform.forward(&mut buf);
        buf
    }

    /// Inverse transform of `spec` (consumed), returning `len` samples
    /// starting at `offset`, normalized.
    pub fn inverse_window(&self, mut spec: Vec<C64>, offset: usize, len: usize) -> Vec<C64> {
        self.transform.inverse(&mut spec);
        let scale = 1.0 / self.transform.len() as f64;
        spec[offset..offset + len].iter().map(|c| c * scale).collect()
    }

    /// `out[i] = sum_j a[i + j] b[j]` for `i < n - b.len() + 1`, given the
    /// spectrum of `a` (length `n`) and of `b` reversed.
    pub fn correlate(&self, a_spec: &[C64], b_rev_spec: &[C64], b_len: usize) -> Vec<C64> {
        let prod = a_spec.iter().zip(b_rev_spec).map(|(x, y)| x * y).collect();
        self.inverse_window(prod, b_len - 1, self.n + 1 - b_len)
    }
}

/// `H(z)` as a matrix-free operator with the spectrum of `z` cached.
#[derive(Clone)]
pub struct HankelOperator {
    shape: HankelShape,
    conv: Convolver,
    spec: Vec<C64>,
    spec_conj: Vec<C64>,
}

impl HankelOperator {
    pub fn new(shape: HankelShape, z: &[C64]) -> Result<Self> {
        let conv = Convolver::new(shape.n);
        Self::with_convolver(shape, z, conv)
    }

    pub fn with_convolver(shape: HankelShape, z: &[C64], conv: Convolver) -> Result<Self> {
        shape.check_generator(z)?;
        check_len(shape.n, conv.n())?;
        let spec = conv.spectrum(z);
        let spec_conj = conv.spectrum_of(z.iter().map(|c| c.conj()));
        Ok(Self { shape, conv, spec, spec_conj })
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        check_len(self.shape.d2, v.len())?;
        Ok(self.conv.correlate(&self.spec, &self.conv.spectrum_rev(v), v.len()))
    }

    /// `(H^* u)[j] = sum_i conj(z[i + j]) u[i]`.
    pub fn adjoint_matvec(&self, u: &[C64]) -> Result<Vec<C64>> {
        check_len(self.shape.d1, u.len())?;
        Ok(self.conv.correlate(&self.spec_conj, &self.conv.spectrum_rev(u), u.len()))
    }
}

impl LinearOperator for HankelOperator {
    fn nrows(&self) -> usize {
        self.shape.d1
    }

    fn ncols(&self) -> usize {
        self.shape.d2
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matvec(x).expect("length checked by caller")
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.adjoint_matvec(y).expect("length checked by caller")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub(crate) fn real(xs: &[f64]) -> Vec<C64> {
        xs.iter().map(|&x| c(x, 0.0)).collect()
    }

    pub(crate) fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<C64> {
        (0..len).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    pub(crate) fn rel_err(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    fn direct_matvec(z: &[C64], shape: &HankelShape, v: &[C64]) -> Vec<C64> {
        (0..shape.d1()).map(|i| (0..shape.d2()).map(|j| z[i + j] * v[j]).sum()).collect()
    }

    fn direct_adjoint(z: &[C64], shape: &HankelShape, u: &[C64]) -> Vec<C64> {
        (0..shape.d2()).map(|j| (0..shape.d1()).map(|i| z[i + j].conj() * u[i]).sum()).collect()
    }

    #[test]
    fn shape_examples() {
        let s = HankelShape::new(3, Some(2)).unwrap();
        assert_eq!((s.d1(), s.d2()), (2, 2));
        assert_eq!(s.weights(), &[1, 2, 1]);

        let s = HankelShape::new(127, None).unwrap();
        assert_eq!((s.d1(), s.d2()), (64, 64));

        let s = HankelShape::new(5, Some(1)).unwrap();
        assert_eq!(s.d2(), 5);
        assert_eq!(s.weights(), &[1, 1, 1, 1, 1]);

        assert!(HankelShape::new(5, Some(0)).is_err());
        assert!(HankelShape::new(5, Some(6)).is_err());
        assert!(HankelShape::new(0, None).is_err());
    }

    #[test]
    fn weights_sum_to_matrix_size() {
        for n in 1..40 {
            for d1 in 1..=n {
                let s = HankelShape::new(n, Some(d1)).unwrap();
                assert_eq!(s.weights().iter().sum::<usize>(), s.d1() * s.d2());
                // brute-force antidiagonal count
                for (j, &w) in s.weights().iter().enumerate() {
                    let count = (0..s.d1())
                        .flat_map(|a| (0..s.d2()).map(move |b| (a, b)))
                        .filter(|(a, b)| a + b == j)
                        .count();
                    assert_eq!(w, count);
                }
            }
        }
    }

    #[test]
    fn entries() {
        let s = HankelShape::new(3, Some(2)).unwrap();
        let z = real(&[1.0, 2.0, 3.0]);
        let m = s.materialize(&z).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &real(&[1.0, 2.0, 2.0, 3.0])));
        assert_eq!(hankel_entry(&z, &s, 1, 2).unwrap(), c(2.0, 0.0));
        assert!(hankel_entry(&z, &s, 3, 1).is_err());
        assert!(hankel_entry(&z, &s, 0, 1).is_err());

        let zi = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)];
        assert_eq!(hankel_entry(&zi, &s, 2, 2).unwrap(), c(-1.0, 0.0));
        let zero = vec![C64::new(0.0, 0.0); 3];
        assert!(s.materialize(&zero).unwrap().iter().all(|x| *x == C64::new(0.0, 0.0)));
    }

    #[test]
    fn matvec_examples() {
        let s = HankelShape::new(3, Some(2)).unwrap();
        let z = real(&[1.0, 2.0, 3.0]);
        let close = |a: Vec<C64>, b: Vec<C64>| assert!(rel_err(&a, &b) < 1e-14, "{a:?} vs {b:?}");
        close(hankel_matvec(&z, &s, &real(&[1.0, 0.0])).unwrap(), real(&[1.0, 2.0]));
        close(hankel_matvec(&z, &s, &real(&[1.0, 1.0])).unwrap(), real(&[3.0, 5.0]));
        close(hankel_adjoint_matvec(&z, &s, &real(&[1.0, 0.0])).unwrap(), real(&[1.0, 2.0]));
        let zi = vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)];
        close(
            hankel_adjoint_matvec(&zi, &s, &real(&[1.0, 0.0])).unwrap(),
            vec![c(0.0, -1.0), c(0.0, 0.0)],
        );
        assert!(matches!(
            hankel_matvec(&z, &s, &real(&[1.0])),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn fft_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=64 {
            for _ in 0..3 {
                let d1 = rng.random_range(1..=n);
                let s = HankelShape::new(n, Some(d1)).unwrap();
                let z = random_vec(&mut rng, n);
                let v = random_vec(&mut rng, s.d2());
                let u = random_vec(&mut rng, s.d1());
                let e1 = rel_err(&hankel_matvec(&z, &s, &v).unwrap(), &direct_matvec(&z, &s, &v));
                let e2 =
                    rel_err(&hankel_adjoint_matvec(&z, &s, &u).unwrap(), &direct_adjoint(&z, &s, &u));
                assert!(e1 <= 1e-12 && e2 <= 1e-12, "n={n} d1={d1}: {e1:e} {e2:e}");
            }
        }
    }

    #[test]
    fn vec_adjoint_examples() {
        let s = HankelShape::new(3, Some(2)).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &real(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(hankel_vec_adjoint(&m, &s).unwrap(), real(&[1.0, 0.0, 0.0]));
        let m = DMatrix::from_row_slice(2, 2, &real(&[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(hankel_vec_adjoint(&m, &s).unwrap(), real(&[0.0, 2.0, 0.0]));
        assert!(hankel_vec_adjoint(&DMatrix::zeros(3, 2), &s).is_err());
    }

    #[test]
    fn vec_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(1..30);
            let s = HankelShape::new(n, Some(rng.random_range(1..=n))).unwrap();
            let z = random_vec(&mut rng, n);
            let m = DMatrix::from_fn(s.d1(), s.d2(), |_, _| {
                c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let hz = s.materialize(&z).unwrap();
            let lhs: C64 = hz.iter().zip(m.iter()).map(|(a, b)| a.conj() * b).sum();
            let rhs = dot(&z, &hankel_vec_adjoint(&m, &s).unwrap());
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));

            // H_vec^* H_vec = diag(w)
            let back = hankel_vec_adjoint(&hz, &s).unwrap();
            for ((b, x), &w) in back.iter().zip(&z).zip(s.weights()) {
                assert!((b - x * w as f64).norm() <= 1e-12 * (1.0 + x.norm() * w as f64));
            }
        }
    }

    #[test]
    fn weighted_norm() {
        let s = HankelShape::new(3, Some(2)).unwrap();
        assert!((weighted_gen_norm(&real(&[1.0, 2.0, 3.0]), &s) - 18f64.sqrt()).abs() < 1e-15);
        assert_eq!(weighted_gen_norm(&real(&[0.0, 0.0, 0.0]), &s), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = HankelShape::new(15, Some(6)).unwrap();
        let z = random_vec(&mut rng, 15);
        let fro = s.materialize(&z).unwrap().norm();
        assert!((weighted_gen_norm(&z, &s) - fro).abs() <= 1e-12 * fro);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn generator(max_n: usize) -> impl Strategy<Value = (usize, usize, Vec<(f64, f64)>)> {
            (1..=max_n).prop_flat_map(|n| {
                (Just(n), 1..=n, proptest::collection::vec((-1.0..1.0, -1.0..1.0), 3 * n))
            })
        }

        proptest! {
            #[test]
            fn adjoint_consistency((n, d1, raw) in generator(48)) {
                let s = HankelShape::new(n, Some(d1)).unwrap();
                let vals: Vec<C64> = raw.iter().map(|&(a, b)| c(a, b)).collect();
                let z = &vals[..n];
                let v = &vals[n..n + s.d2()];
                let u = &vals[2 * n..2 * n + s.d1()];
                let lhs = dot(&hankel_matvec(z, &s, v).unwrap(), u);
                let rhs = dot(v, &hankel_adjoint_matvec(z, &s, u).unwrap());
                prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(rhs.norm()).max(1e-300));
            }
        }
    }
}
