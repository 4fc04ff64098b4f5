//! Sum-of-exponentials signals, random problem instances, subsampling and
//! noise injection.

use std::f64::consts::TAU;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hankel::check_len;
use crate::C64;

/// Frequencies in cycles per sample, in `[0, 1)`, with complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSpectrum {
    freqs: Vec<f64>,
    amps: Vec<C64>,
}

/// Circular distance on the unit frequency interval.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

impl LineSpectrum {
    pub fn new(freqs: Vec<f64>, amps: Vec<C64>) -> Result<Self> {
        check_len(freqs.len(), amps.len())?;
        if let Some(f) = freqs.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(Error::InvalidArgument(format!("frequency {f} outside [0, 1)")));
        }
        let mut sorted = freqs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("frequencies must be pairwise distinct".into()));
        }
        Ok(Self { freqs, amps })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn order(&self) -> usize {
        self.freqs.len()
    }
}

/// `x[t] = sum_i amps[i] exp(2 pi i freqs[i] t)` for `t = 0..n`.
pub fn synth_signal(spec: &LineSpectrum, n: usize) -> Vec<C64> {
    (0..n)
        .map(|t| {
            spec.freqs
                .iter()
                .zip(&spec.amps)
                .map(|(&f, &a)| {
                    // reduce the phase before scaling so large t stays accurate
                    let phase = (f * t as f64).rem_euclid(1.0) * TAU;
                    a * C64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

/// Frequency pairs closer than this (circularly) are redrawn.
pub const MIN_FREQ_SEPARATION: f64 = 1e-12;

/// Random instance: `f_i ~ U[0, 1)`, `|a_i| = 1 + 10^{c_i}` with
/// `c_i ~ U[0, 1]`, phases uniform on `[0, 2 pi)`.
pub fn random_instance(r: usize, n: usize, rng: &mut impl Rng) -> Result<(LineSpectrum, Vec<C64>)> {
    if r == 0 {
        return Err(Error::InvalidArgument("model order must be at least 1".into()));
    }
    let mut freqs: Vec<f64> = Vec::with_capacity(r);
    while freqs.len() < r {
        let f: f64 = rng.random_range(0.0..1.0);
        if freqs.iter().all(|&g| wrap_distance(f, g) >= MIN_FREQ_SEPARATION) {
            freqs.push(f);
        }
    }
    let amps = (0..r)
        .map(|_| {
            let c: f64 = rng.random_range(0.0..=1.0);
            let phase: f64 = rng.random_range(0.0..TAU);
            C64::from_polar(1.0 + 10f64.powf(c), phase)
        })
        .collect();
    let spec = LineSpectrum::new(freqs, amps)?;
    let x = synth_signal(&spec, n);
    Ok((spec, x))
}

/// The subsampling map `z -> z[T]` for a sorted index set `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOperator {
    n: usize,
    indices: Vec<usize>,
}

impl SamplingOperator {
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate sample index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("sample index {bad} >= n={n}")));
        }
        Ok(Self { n, indices })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, indices: (0..n).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_identity(&self) -> bool {
        self.indices.len() == self.n
    }

    /// Indices not in the mask, sorted.
    pub fn complement(&self) -> Vec<usize> {
        let mut observed = vec![false; self.n];
        for &i in &self.indices {
            observed[i] = true;
        }
        (0..self.n).filter(|&i| !observed[i]).collect()
    }

    pub fn apply(&self, z: &[C64]) -> Result<Vec<C64>> {
        check_len(self.n, z.len())?;
        Ok(self.indices.iter().map(|&i| z[i]).collect())
    }

    pub fn adjoint(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len(self.indices.len(), y.len())?;
        let mut z = vec![C64::new(0.0, 0.0); self.n];
        for (&i, &v) in self.indices.iter().zip(y) {
            z[i] = v;
        }
        Ok(z)
    }
}

/// Uniformly random `m`-subset of `0..n`.
pub fn random_mask(n: usize, m: usize, rng: &mut impl Rng) -> Result<SamplingOperator> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("sample count {m} outside 1..={n}")));
    }
    SamplingOperator::new(n, index::sample(rng, n, m).into_vec())
}

/// Adds circular complex Gaussian noise at the given SNR (in dB, relative to
/// the mean sample power). Returns the noisy signal and the per-sample noise
/// standard deviation.
pub fn add_noise(z: &[C64], snr_db: f64, rng: &mut impl Rng) -> Result<(Vec<C64>, f64)> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    let power = z.iter().map(|c| c.norm_sqr()).sum::<f64>() / z.len() as f64;
    if power == 0.0 {
        return Err(Error::InvalidArgument("cannot set an SNR for a zero signal".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok((z.to_vec(), 0.0));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let scale = sigma * std::f64::consts::FRAC_1_SQRT_2;
    let noisy = z
        .iter()
        .map(|&x| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            x + C64::new(re, im) * scale
        })
        .collect();
    Ok((noisy, sigma))
}
