//! Structured harmonic-mean IRLS for low-rank Hankel matrices.
//!
//! All computation happens in generator space: a Hankel matrix `H(z)` of
//! size `d1 x d2` is represented by its generator `z` of length
//! `n = d1 + d2 - 1`, and every product with `H(z)` goes through FFT
//! convolutions. Indices are 0-based in storage; formulas in the docs use
//! the 1-based convention `H(z)[i, j] = z[i + j - 1]`.
//!
//! The crate is organised bottom-up:
//!
//! * [`hankel`]: the embedding, its adjoints and fast products.
//! * [`spectral`]: sum-of-exponentials signals, sampling masks, noise.
//! * [`linalg`]: randomized SVD, Gram eigenpacks, conjugate gradients.
//! * [`irls`]: the surrogate objective, the weight operator and the solver.
//! * [`freq`]: ESPRIT, Prony and the two-stage estimation pipeline.
//! * [`experiments`]: phase-transition and SNR-sweep harnesses.
//! * [`io`]: the CSV and text formats used by the command line tool.

pub mod error;
pub mod experiments;
pub mod freq;
pub mod hankel;
pub mod io;
pub mod irls;
pub mod linalg;
pub mod spectral;

pub use error::{Error, Result};
pub use freq::{denoise_then_estimate, esprit, freq_mse, prony, FreqEstimate, Method};
pub use hankel::HankelShape;
pub use irls::{irls_solve, IrlsReport, LambdaMode, SolverConfig, WeightOperator};
pub use linalg::EigPack;
pub use spectral::{LineSpectrum, SamplingOperator};

/// Complex double precision scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
