//! Benchmark fixtures shared by the criterion targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use struchmirls::irls::build_weight_operator;
use struchmirls::linalg::SketchParams;
use struchmirls::spectral::random_instance;
use struchmirls::{HankelShape, Result, WeightOperator, C64};

/// Weight operator of a random rank-`rank` signal of length `n`, and a
/// random vector to apply it to.
pub fn weight_fixture(n: usize, rank: usize, seed: u64) -> Result<(WeightOperator, Vec<C64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = HankelShape::new(n, None)?;
    let (_, z) = random_instance(rank, n, &mut rng)?;
    let op = build_weight_operator(&z, &shape, rank, 1e-2, SketchParams::default(), &mut rng)?;
    Ok((op, random_vector(n, &mut rng)))
}

pub fn random_vector(n: usize, rng: &mut impl Rng) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}
