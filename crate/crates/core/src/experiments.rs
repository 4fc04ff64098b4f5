//! Phase-transition and SNR-sweep harnesses.
//!
//! Every trial draws its randomness from a stream seeded by the master seed
//! and the trial's cell key, so a trial can be re-run on its own and the
//! aggregate does not depend on how the work pool schedules it. Per-trial
//! results are collected in grid order and summed sequentially.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::freq::{esprit, freq_mse, pipeline_config, prony, denoise_then_estimate, Method};
use crate::hankel::HankelShape;
use crate::io::{csv_writer_with_header, fmt_f64};
use crate::irls::{irls_solve, LambdaMode, SolverConfig};
use crate::spectral::{add_noise, random_instance, random_mask, synth_signal, LineSpectrum, SamplingOperator};
use crate::C64;

const PHASE_TAG: u64 = 1;
const SNR_TAG: u64 = 2;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the stream for one cell: the master seed folded with each key
/// component in turn.
pub fn cell_seed(master: u64, key: &[u64]) -> u64 {
    key.iter().fold(splitmix(master), |acc, &k| splitmix(acc.rotate_left(23) ^ splitmix(k)))
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::InvalidArgument("worker count must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    builder.build().map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))
}

fn rel_error(z: &[C64], x: &[C64]) -> f64 {
    let num: f64 = z.iter().zip(x).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = x.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

#[derive(Debug, Clone)]
pub struct PhaseTransitionConfig {
    pub n: usize,
    pub d1: Option<usize>,
    pub r_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub trials: usize,
    /// Recovery counts as a success when the relative error is below this.
    pub success_threshold: f64,
    pub master_seed: u64,
    /// Solver template; `rank` and `seed` are set per trial.
    pub solver: SolverConfig,
    /// Defaults to the number of logical cores.
    pub workers: Option<usize>,
}

impl PhaseTransitionConfig {
    pub const DEFAULT_N: usize = 127;

    /// Desk-scale grid: `r` in `1..=20`, `m` in `2..=60`, 50 trials.
    pub fn desk() -> Self {
        Self {
            n: Self::DEFAULT_N,
            d1: None,
            r_values: (1..=20).collect(),
            m_values: (2..=60).collect(),
            trials: 50,
            success_threshold: 1e-3,
            master_seed: 0,
            solver: SolverConfig::new(1, LambdaMode::ExactConstraint),
            workers: None,
        }
    }

    /// Every sample count `1..=n` against `r` in `1..=20`.
    pub fn full_grid() -> Self {
        let mut c = Self::desk();
        c.m_values = (1..=c.n).collect();
        c
    }

    pub fn shape(&self) -> Result<HankelShape> {
        HankelShape::new(self.n, self.d1)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape()?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.r_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::InvalidArgument("empty experiment grid".into()));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::InvalidArgument("success threshold must be positive".into()));
        }
        if let Some(&r) = self.r_values.iter().find(|&&r| r == 0 || r >= shape.d()) {
            return Err(Error::RankTooLarge { rank: r, bound: shape.d() - 1 });
        }
        if let Some(&m) = self.m_values.iter().find(|&&m| m == 0 || m > self.n) {
            return Err(Error::InvalidArgument(format!("sample count {m} outside 1..={}", self.n)));
        }
        let mut probe = self.solver.clone();
        probe.rank = 1;
        probe.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCell {
    pub m: usize,
    pub r: usize,
    pub success_rate: f64,
}

/// Relative recovery error of one trial. Numerical breakdowns of the
/// solver count as failed recoveries and are reported as infinity.
pub fn phase_trial(config: &PhaseTransitionConfig, m: usize, r: usize, trial: usize) -> Result<f64> {
    let shape = config.shape()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(
        config.master_seed,
        &[PHASE_TAG, m as u64, r as u64, trial as u64],
    ));
    let (_, x) = random_instance(r, config.n, &mut rng)?;
    let phi = random_mask(config.n, m, &mut rng)?;
    let y = phi.apply(&x)?;
    let mut solver = config.solver.clone();
    solver.rank = r;
    solver.seed = rng.random();
    match irls_solve(&phi, &y, &shape, &solver) {
        Ok(report) => Ok(rel_error(&report.z_hat, &x)),
        Err(e) if e.is_numerical() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Success rate for every `(m, r)` pair, `m` varying slowest.
pub fn run_phase_transition(config: &PhaseTransitionConfig) -> Result<Vec<PhaseCell>> {
    config.validate()?;
    let cells: Vec<(usize, usize)> =
        config.m_values.iter().flat_map(|&m| config.r_values.iter().map(move |&r| (m, r))).collect();
    let tasks: Vec<(usize, usize, usize)> =
        cells.iter().flat_map(|&(m, r)| (0..config.trials).map(move |t| (m, r, t))).collect();
    let errors: Vec<f64> = pool(config.workers)?.install(|| {
        tasks.par_iter().map(|&(m, r, t)| phase_trial(config, m, r, t)).collect::<Result<Vec<f64>>>()
    })?;
    Ok(cells
        .iter()
        .zip(errors.chunks(config.trials))
        .map(|(&(m, r), errs)| {
            let hits = errs.iter().filter(|&&e| e < config.success_threshold).count();
            PhaseCell { m, r, success_rate: hits as f64 / config.trials as f64 }
        })
        .collect())
}

pub fn write_phase_csv(w: impl Write, cells: &[PhaseCell], seed: u64) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, Some(seed))?;
    wtr.write_record(["m", "r", "success_rate"])?;
    for c in cells {
        wtr.write_record([c.m.to_string(), c.r.to_string(), fmt_f64(c.success_rate)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SnrSweepConfig {
    pub n: usize,
    pub d1: Option<usize>,
    /// `+inf` gives a noiseless row.
    pub snr_values: Vec<f64>,
    pub trials: usize,
    pub truth: LineSpectrum,
    pub master_seed: u64,
    /// Settings of the IRLS stage; `seed` is set per trial.
    pub solver: SolverConfig,
    pub workers: Option<usize>,
}

impl SnrSweepConfig {
    pub const METHODS: [Method; 3] = [Method::StrucHmirlsEsprit, Method::Esprit, Method::Prony];

    /// Two unit-amplitude lines at 0.35 and 0.40, 64 samples, SNR from
    /// -5 to 30 dB in 5 dB steps, 100 realizations.
    pub fn desk() -> Self {
        let truth = LineSpectrum::new(vec![0.35, 0.40], vec![C64::new(1.0, 0.0); 2]).expect("valid spectrum");
        Self {
            n: 64,
            d1: None,
            snr_values: (-1..=6).map(|k| 5.0 * k as f64).collect(),
            trials: 100,
            solver: pipeline_config(truth.order(), false),
            truth,
            master_seed: 0,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = HankelShape::new(self.n, self.d1)?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.snr_values.is_empty() {
            return Err(Error::InvalidArgument("empty SNR grid".into()));
        }
        if self.snr_values.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::InvalidArgument("SNR values must be real or +inf".into()));
        }
        let r = self.truth.order();
        if r >= shape.d() || shape.d1() < r + 1 {
            return Err(Error::RankTooLarge { rank: r, bound: shape.d() - 1 });
        }
        self.solver.validate()
    }
}

/// Called with `(snr_index, trial, method, noisy)` for every dispatch.
pub type NoiseObserver<'a> = dyn Fn(usize, usize, Method, &[C64]) + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub method: Method,
    pub mean_freq_mse: f64,
}

/// Frequency MSE of each method in [`SnrSweepConfig::METHODS`] on one noise
/// realization. `observe` sees the exact vector handed to each method.
pub fn snr_trial(
    config: &SnrSweepConfig,
    snr_index: usize,
    trial: usize,
    observe: &NoiseObserver<'_>,
) -> Result<[f64; 3]> {
    let shape = HankelShape::new(config.n, config.d1)?;
    let snr = config.snr_values[snr_index];
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(
        config.master_seed,
        &[SNR_TAG, snr.to_bits(), trial as u64],
    ));
    let x = synth_signal(&config.truth, config.n);
    let (y, _) = add_noise(&x, snr, &mut rng)?;
    let r = config.truth.order();
    let truth = config.truth.freqs();
    let mut out = [0.0; 3];
    for (slot, method) in out.iter_mut().zip(SnrSweepConfig::METHODS) {
        observe(snr_index, trial, method, &y);
        let est = match method {
            Method::StrucHmirlsEsprit => {
                let mut solver = config.solver.clone();
                solver.seed = rng.random();
                denoise_then_estimate(&y, &SamplingOperator::identity(config.n), &shape, &solver, r)?.0
            }
            Method::Esprit => esprit(&y, &shape, r)?,
            Method::Prony => prony(&y, r)?,
        };
        *slot = freq_mse(&est, truth)?;
    }
    Ok(out)
}

pub fn run_snr_sweep(config: &SnrSweepConfig) -> Result<Vec<SnrRow>> {
    run_snr_sweep_observed(config, &|_, _, _, _| {})
}

/// [`run_snr_sweep`] with a hook on every dispatched noisy vector.
pub fn run_snr_sweep_observed(
    config: &SnrSweepConfig,
    observe: &NoiseObserver<'_>,
) -> Result<Vec<SnrRow>> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> =
        (0..config.snr_values.len()).flat_map(|s| (0..config.trials).map(move |t| (s, t))).collect();
    let mses: Vec<[f64; 3]> = pool(config.workers)?.install(|| {
        tasks.par_iter().map(|&(s, t)| snr_trial(config, s, t, observe)).collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::with_capacity(config.snr_values.len() * 3);
    for (s, block) in mses.chunks(config.trials).enumerate() {
        for (k, method) in SnrSweepConfig::METHODS.into_iter().enumerate() {
            let total: CompensatedSum = block.iter().map(|m| m[k]).collect();
            rows.push(SnrRow {
                snr_db: config.snr_values[s],
                method,
                mean_freq_mse: total.value() / config.trials as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_snr_csv(w: impl Write, rows: &[SnrRow], seed: u64) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, Some(seed))?;
    wtr.write_record(["snr_db", "method", "mean_freq_mse"])?;
    for row in rows {
        wtr.write_record([fmt_f64(row.snr_db), row.method.as_str().to_string(), fmt_f64(row.mean_freq_mse)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn small_phase() -> PhaseTransitionConfig {
        PhaseTransitionConfig {
            n: 31,
            r_values: vec![1, 2],
            m_values: vec![8, 31],
            trials: 3,
            master_seed: 11,
            ..PhaseTransitionConfig::desk()
        }
    }

    #[test]
    fn cell_seeds_differ_by_key() {
        let a = cell_seed(1, &[1, 2, 3]);
        assert_eq!(a, cell_seed(1, &[1, 2, 3]));
        assert_ne!(a, cell_seed(1, &[1, 3, 2]));
        assert_ne!(a, cell_seed(2, &[1, 2, 3]));
        assert_ne!(cell_seed(0, &[0]), cell_seed(0, &[0, 0]));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0);
        assert_eq!(xs.into_iter().collect::<CompensatedSum>().value(), 2.0);
    }

    #[test]
    fn phase_grid_shape_and_full_column() {
        let cfg = small_phase();
        let cells = run_phase_transition(&cfg).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[0].m, cells[0].r), (8, 1));
        assert_eq!((cells[3].m, cells[3].r), (31, 2));
        for c in &cells {
            assert!((0.0..=1.0).contains(&c.success_rate));
            if c.m == cfg.n {
                assert_eq!(c.success_rate, 1.0);
            }
        }
    }

    #[test]
    fn single_trial_matches_grid() {
        let cfg = small_phase();
        let cells = run_phase_transition(&cfg).unwrap();
        let hits = (0..cfg.trials).filter(|&t| phase_trial(&cfg, 8, 2, t).unwrap() < cfg.success_threshold).count();
        assert_eq!(cells[1].success_rate, hits as f64 / cfg.trials as f64);
    }

    #[test]
    fn phase_config_rejects_bad_grids() {
        let mut cfg = small_phase();
        cfg.r_values = vec![16];
        assert!(matches!(run_phase_transition(&cfg), Err(Error::RankTooLarge { .. })));
        let mut cfg = small_phase();
        cfg.m_values = vec![32];
        assert!(run_phase_transition(&cfg).is_err());
        let mut cfg = small_phase();
        cfg.trials = 0;
        assert!(run_phase_transition(&cfg).is_err());
    }

    #[test]
    fn snr_noise_is_paired_across_methods() {
        let cfg = SnrSweepConfig { snr_values: vec![0.0, 10.0], trials: 3, ..SnrSweepConfig::desk() };
        let seen: Mutex<Vec<(usize, usize, Method, Vec<C64>)>> = Mutex::new(vec![]);
        run_snr_sweep_observed(&cfg, &|s, t, m, y| seen.lock().unwrap().push((s, t, m, y.to_vec()))).unwrap();
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen.len(), 2 * 3 * 3);
        for s in 0..2 {
            for t in 0..3 {
                let vs: Vec<_> = seen.iter().filter(|e| e.0 == s && e.1 == t).collect();
                assert_eq!(vs.len(), 3);
                assert!(vs.iter().all(|e| e.3 == vs[0].3));
            }
        }
        let first = &seen.iter().find(|e| e.0 == 0 && e.1 == 0).unwrap().3;
        let other = &seen.iter().find(|e| e.0 == 0 && e.1 == 1).unwrap().3;
        assert_ne!(first, other);
    }

    #[test]
    fn noiseless_snr_row_is_exact() {
        let cfg = SnrSweepConfig { snr_values: vec![f64::INFINITY, -5.0], trials: 2, ..SnrSweepConfig::desk() };
        let rows = run_snr_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert!(row.mean_freq_mse >= 0.0 && row.mean_freq_mse <= 0.25);
            if row.snr_db.is_infinite() {
                assert!(row.mean_freq_mse < 1e-12, "{row:?}");
            }
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_phase_csv(&mut buf, &[PhaseCell { m: 3, r: 1, success_rate: 0.5 }], 7).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.ends_with("m,r,success_rate\n3,1,5.0000000000000000e-1\n"), "{s}");
        let mut buf = Vec::new();
        let row = SnrRow { snr_db: f64::INFINITY, method: Method::Prony, mean_freq_mse: 0.0 };
        write_snr_csv(&mut buf, &[row], 7).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("seed=7\nsnr_db,method,mean_freq_mse\ninf,prony,0.0000000000000000e0\n"), "{s}");
    }
}
