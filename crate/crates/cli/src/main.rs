//! `struchmirls`: Hankel completion, denoising, frequency estimation and the
//! experiment harnesses from the command line.
//!
//! Exit codes: 0 on success, 1 when the solver breaks down numerically, 2 on
//! bad input (arguments, files, preconditions).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use struchmirls::experiments::{
    run_phase_transition, run_snr_sweep, write_phase_csv, write_snr_csv, PhaseTransitionConfig, SnrSweepConfig,
};
use struchmirls::freq::pipeline_config;
use struchmirls::io::{
    apply_solver_key, parse_lambda, read_generator, read_key_values, read_mask, write_estimate, write_generator,
    write_report,
};
use struchmirls::irls::InitialWeight;
use struchmirls::{
    denoise_then_estimate, esprit, irls_solve, prony, Error, HankelShape, IrlsReport, LambdaMode, Method,
    SamplingOperator, SolverConfig, C64,
};

#[derive(Parser)]
#[command(name = "struchmirls", version, about = "Structured IRLS for low-rank Hankel recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in the unobserved samples of a signal from a sample mask.
    Complete {
        /// Generator CSV (`index,re,im`); entries outside the mask are ignored.
        signal: PathBuf,
        /// Observed indices, one per line.
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Low-rank Hankel approximation of a fully observed signal.
    Denoise {
        signal: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate `rank` frequencies from a signal.
    Estimate {
        signal: PathBuf,
        /// Only with the struchmirls method: complete from these samples first.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = "struchmirls")]
        method: Method,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand)]
enum Experiment {
    /// Empirical completion success rate over a grid of (m, r).
    PhaseTransition {
        /// Comma-separated model orders.
        #[arg(long, value_delimiter = ',')]
        r_values: Option<Vec<usize>>,
        /// Comma-separated sample counts.
        #[arg(long, value_delimiter = ',')]
        m_values: Option<Vec<usize>>,
        /// Use every sample count from 1 to n.
        #[arg(long)]
        full_grid: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Frequency MSE against SNR for the pipeline and the baselines.
    SnrSweep {
        /// Comma-separated SNR values in dB; `inf` for noiseless.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_values: Option<Vec<f64>>,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Signal length; checked against the input when given.
    #[arg(long)]
    n: Option<usize>,
    /// Number of Hankel rows (default n/2 + 1).
    #[arg(long)]
    d1: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent. Solver reports go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` file; command line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    rank: Option<usize>,
    /// A positive value, `adaptive` or `exact`.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { code: if e.is_numerical() { 1 } else { 2 }, msg: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError { code: 2, msg: e.to_string() }
    }
}

fn input_error(msg: impl Into<String>) -> CliError {
    CliError { code: 2, msg: msg.into() }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: struchmirls::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.msg = format!("{}: {}", path.display(), err.msg);
        err
    })
}

/// Settings from `--config`, consumed key by key; leftovers are an error.
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Ok(FileConfig(with_path(p, read_key_values(open(p)?))?)),
            None => Ok(FileConfig(BTreeMap::new())),
        }
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| input_error(format!("config: invalid value {v:?} for {key}"))),
        }
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| input_error(format!("config: invalid entry {s:?} in {key}"))))
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }

    fn apply_solver(&mut self, config: &mut SolverConfig) -> CliResult<()> {
        let keys: Vec<String> = self.0.keys().cloned().collect();
        for key in keys {
            let value = self.0[&key].clone();
            if apply_solver_key(config, &key, &value).map_err(|e| input_error(format!("config: {e}")))? {
                self.0.remove(&key);
            }
        }
        Ok(())
    }

    fn finish(self) -> CliResult<()> {
        match self.0.keys().next() {
            Some(k) => Err(input_error(format!("config: unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}

/// Defaults, then the config file, then flags.
fn resolve_solver(mut config: SolverConfig, file: &mut FileConfig, args: &SolverArgs) -> CliResult<SolverConfig> {
    file.apply_solver(&mut config)?;
    if let Some(r) = args.rank {
        config.rank = r;
    }
    if let Some(l) = &args.lambda {
        config.lambda_mode = parse_lambda(l)?;
    }
    if let Some(a) = args.alpha {
        config.decay_alpha = a;
    }
    if let Some(t) = args.tol {
        config.tol = t;
    }
    if let Some(k) = args.max_outer {
        config.max_outer = k;
    }
    config.validate()?;
    Ok(config)
}

/// The default rank of zero is invalid, which makes `--rank` mandatory.
fn require_rank(args: &SolverArgs, file: &FileConfig) -> CliResult<()> {
    if args.rank.is_none() && !file.0.contains_key("rank") {
        return Err(input_error("--rank is required"));
    }
    Ok(())
}

struct Input {
    z: Vec<C64>,
    shape: HankelShape,
}

fn load_signal(path: &Path, common: &CommonArgs, file: &mut FileConfig) -> CliResult<Input> {
    let z = with_path(path, read_generator(open(path)?))?;
    let n = common.n.or(file.take("n")?);
    if let Some(n) = n {
        if n != z.len() {
            return Err(input_error(format!("--n {n} does not match the {} samples in {}", z.len(), path.display())));
        }
    }
    let d1 = common.d1.or(file.take("d1")?);
    let shape = HankelShape::new(z.len(), d1)?;
    Ok(Input { z, shape })
}

fn load_mask(path: &Path, n: usize) -> CliResult<SamplingOperator> {
    let idx = with_path(path, read_mask(open(path)?))?;
    with_path(path, SamplingOperator::new(n, idx))
}

fn seed_of(common: &CommonArgs, file: &mut FileConfig) -> CliResult<Option<u64>> {
    Ok(common.seed.or(file.take("seed")?))
}

fn report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.report.csv"))
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> struchmirls::Result<()>) -> CliResult<()> {
    match out {
        Some(p) => {
            let f = File::create(p).map_err(|e| input_error(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn emit_report(out: Option<&Path>, report: &IrlsReport, seed: u64) -> CliResult<()> {
    if !report.converged {
        eprintln!(
            "warning: no convergence after {} outer iterations (last change {:e})",
            report.outer_iters,
            report.iterate_change_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    if report.cg_failures > 0 {
        eprintln!("warning: {} inner solves stopped early", report.cg_failures);
    }
    if let Some(p) = out {
        emit(Some(&report_path(p)), |w| write_report(w, report, Some(seed)))?;
    }
    Ok(())
}

fn solve(
    signal: &Path,
    mask: Option<&Path>,
    solver: &SolverArgs,
    common: &CommonArgs,
    default_lambda: LambdaMode,
) -> CliResult<()> {
    let mut file = FileConfig::load(common.config.as_deref())?;
    require_rank(solver, &file)?;
    let input = load_signal(signal, common, &mut file)?;
    let seed = seed_of(common, &mut file)?;
    let mut config = resolve_solver(SolverConfig::new(0, default_lambda), &mut file, solver)?;
    file.finish()?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if config.lambda_mode == LambdaMode::Adaptive {
        config.initial_weight = InitialWeight::InverseEpsSquared;
    }
    let phi = match mask {
        Some(p) => load_mask(p, input.z.len())?,
        None => SamplingOperator::identity(input.z.len()),
    };
    let y = phi.apply(&input.z)?;
    let report = irls_solve(&phi, &y, &input.shape, &config)?;
    let out = common.out.as_deref();
    emit(out, |w| write_generator(w, &report.z_hat, Some(config.seed)))?;
    emit_report(out, &report, config.seed)
}

fn estimate(
    signal: &Path,
    mask: Option<&Path>,
    method: Method,
    solver: &SolverArgs,
    common: &CommonArgs,
) -> CliResult<()> {
    let mut file = FileConfig::load(common.config.as_deref())?;
    require_rank(solver, &file)?;
    let input = load_signal(signal, common, &mut file)?;
    let seed = seed_of(common, &mut file)?;
    let mut config = resolve_solver(pipeline_config(0, mask.is_some()), &mut file, solver)?;
    file.finish()?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let out = common.out.as_deref();
    let est = match method {
        Method::StrucHmirlsEsprit => {
            let phi = match mask {
                Some(p) => load_mask(p, input.z.len())?,
                None => SamplingOperator::identity(input.z.len()),
            };
            let y = phi.apply(&input.z)?;
            let (est, report) = denoise_then_estimate(&y, &phi, &input.shape, &config, config.rank)?;
            emit_report(out, &report, config.seed)?;
            est
        }
        _ if mask.is_some() => return Err(input_error(format!("--mask requires the struchmirls method, not {method}"))),
        Method::Esprit => esprit(&input.z, &input.shape, config.rank)?,
        Method::Prony => prony(&input.z, config.rank)?,
    };
    emit(out, |w| write_estimate(w, &est, Some(config.seed)))
}

struct ExperimentCommon {
    n: Option<usize>,
    d1: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
}

fn experiment_common(file: &mut FileConfig, exp: &ExperimentArgs, common: &CommonArgs) -> CliResult<ExperimentCommon> {
    Ok(ExperimentCommon {
        n: common.n.or(file.take("n")?),
        d1: common.d1.or(file.take("d1")?),
        trials: exp.trials.or(file.take("trials")?),
        seed: common.seed.or(file.take("seed")?),
        workers: exp.workers.or(file.take("workers")?),
    })
}

fn phase_transition(
    r_values: Option<&[usize]>,
    m_values: Option<&[usize]>,
    full_grid: bool,
    threshold: Option<f64>,
    exp: &ExperimentArgs,
    solver: &SolverArgs,
    common: &CommonArgs,
) -> CliResult<()> {
    let mut file = FileConfig::load(common.config.as_deref())?;
    let shared = experiment_common(&mut file, exp, common)?;
    let full_grid = full_grid || file.take::<bool>("full_grid")?.unwrap_or(false);
    let mut config = PhaseTransitionConfig::desk();
    if let Some(n) = shared.n {
        config.n = n;
    }
    if full_grid {
        config.m_values = (1..=config.n).collect();
    }
    let file_r = file.take_list("r_values")?;
    let file_m = file.take_list("m_values")?;
    if let Some(v) = r_values.map(<[usize]>::to_vec).or(file_r) {
        config.r_values = v;
    }
    if let Some(v) = m_values.map(<[usize]>::to_vec).or(file_m) {
        config.m_values = v;
    }
    if let Some(t) = threshold.or(file.take("threshold")?) {
        config.success_threshold = t;
    }
    config.d1 = shared.d1;
    config.trials = shared.trials.unwrap_or(config.trials);
    config.master_seed = shared.seed.unwrap_or(0);
    config.workers = shared.workers;
    let mut template = config.solver.clone();
    template.rank = 1;
    config.solver = resolve_solver(template, &mut file, solver)?;
    file.finish()?;
    let cells = run_phase_transition(&config)?;
    emit(common.out.as_deref(), |w| write_phase_csv(w, &cells, config.master_seed))
}

fn snr_sweep(
    snr_values: Option<&[f64]>,
    exp: &ExperimentArgs,
    solver: &SolverArgs,
    common: &CommonArgs,
) -> CliResult<()> {
    let mut file = FileConfig::load(common.config.as_deref())?;
    let shared = experiment_common(&mut file, exp, common)?;
    let mut config = SnrSweepConfig::desk();
    if let Some(n) = shared.n {
        config.n = n;
    }
    let file_snr = file.take_list("snr_values")?;
    if let Some(v) = snr_values.map(<[f64]>::to_vec).or(file_snr) {
        config.snr_values = v;
    }
    config.d1 = shared.d1;
    config.trials = shared.trials.unwrap_or(config.trials);
    config.master_seed = shared.seed.unwrap_or(0);
    config.workers = shared.workers;
    config.solver = resolve_solver(config.solver.clone(), &mut file, solver)?;
    file.finish()?;
    let rows = run_snr_sweep(&config)?;
    emit(common.out.as_deref(), |w| write_snr_csv(w, &rows, config.master_seed))
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Complete { signal, mask, solver, common } => {
            solve(signal, Some(mask), solver, common, LambdaMode::ExactConstraint)
        }
        Command::Denoise { signal, solver, common } => solve(signal, None, solver, common, LambdaMode::Adaptive),
        Command::Estimate { signal, mask, method, solver, common } => {
            estimate(signal, mask.as_deref(), *method, solver, common)
        }
        Command::Experiment(Experiment::PhaseTransition {
            r_values,
            m_values,
            full_grid,
            threshold,
            exp,
            solver,
            common,
        }) => phase_transition(r_values.as_deref(), m_values.as_deref(), *full_grid, *threshold, exp, solver, common),
        Command::Experiment(Experiment::SnrSweep { snr_values, exp, solver, common }) => {
            snr_sweep(snr_values.as_deref(), exp, solver, common)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
