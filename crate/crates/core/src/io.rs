//! Text formats: generators, masks, spectra, solver reports, frequency
//! estimates and `key=value` configuration files.
//!
//! Every CSV written here starts with a `# struchmirls v<version>, seed=<s>`
//! comment line, followed by a column header. Floats are printed with 17
//! significant digits so that values round-trip exactly. Readers skip `#`
//! comment lines and accept the column header as optional.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use crate::error::{Error, Result};
use crate::freq::FreqEstimate;
use crate::irls::{IrlsReport, LambdaMode, SolverConfig};
use crate::spectral::LineSpectrum;
use crate::C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The comment line every CSV output starts with.
pub fn header_line(seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# struchmirls v{VERSION}, seed={s}"),
        None => format!("# struchmirls v{VERSION}"),
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        csv_err(e)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(line, format!("{other:?}")),
    }
}

/// Reads numeric CSV rows with exactly `width` fields, skipping comments and
/// an optional header (a first row whose first field is not numeric).
fn read_rows(reader: impl Read, width: usize) -> Result<Vec<(usize, StringRecord)>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if k == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(rec: &StringRecord, i: usize, line: usize, what: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| parse_err(line, format!("invalid {what} {raw:?}")))
}

fn finite(x: f64, line: usize, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(parse_err(line, format!("{what} is not finite")))
    }
}

pub(crate) fn csv_writer_with_header<W: Write>(mut w: W, seed: Option<u64>) -> Result<csv::Writer<W>> {
    writeln!(w, "{}", header_line(seed))?;
    Ok(WriterBuilder::new().terminator(Terminator::Any(b'\n')).flexible(true).from_writer(w))
}

fn finish<W: Write>(wtr: csv::Writer<W>) -> Result<()> {
    let mut inner = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    inner.flush()?;
    Ok(())
}

/// Reads a generator from `index,re,im` rows. Rows may come in any order but
/// the indices must be exactly `0..n`.
pub fn read_generator(reader: impl Read) -> Result<Vec<C64>> {
    let rows = read_rows(reader, 3)?;
    let mut slots: Vec<Option<C64>> = vec![None; rows.len()];
    for (line, rec) in &rows {
        let idx: usize = field(rec, 0, *line, "index")?;
        let re = finite(field(rec, 1, *line, "real part")?, *line, "real part")?;
        let im = finite(field(rec, 2, *line, "imaginary part")?, *line, "imaginary part")?;
        let slot = slots
            .get_mut(idx)
            .ok_or_else(|| parse_err(*line, format!("index {idx} out of range for {} rows", rows.len())))?;
        if slot.is_some() {
            return Err(parse_err(*line, format!("duplicate index {idx}")));
        }
        *slot = Some(C64::new(re, im));
    }
    if slots.is_empty() {
        return Err(parse_err(0, "empty generator"));
    }
    Ok(slots.into_iter().map(|v| v.expect("indices form a permutation")).collect())
}

pub fn write_generator(w: impl Write, z: &[C64], seed: Option<u64>) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, seed)?;
    wtr.write_record(["index", "re", "im"])?;
    for (i, v) in z.iter().enumerate() {
        wtr.write_record([i.to_string(), fmt_f64(v.re), fmt_f64(v.im)])?;
    }
    finish(wtr)
}

/// Reads a mask: one 0-based index per line; blank and `#` lines ignored.
pub fn read_mask(reader: impl BufRead) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| parse_err(k + 1, format!("invalid index {t:?}")))?);
    }
    Ok(out)
}

pub fn write_mask(mut w: impl Write, indices: &[usize]) -> Result<()> {
    for i in indices {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a line spectrum from `f,re_amp,im_amp` rows.
pub fn read_spectrum(reader: impl Read) -> Result<LineSpectrum> {
    let rows = read_rows(reader, 3)?;
    let mut freqs = Vec::with_capacity(rows.len());
    let mut amps = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        freqs.push(finite(field(rec, 0, *line, "frequency")?, *line, "frequency")?);
        let re = finite(field(rec, 1, *line, "amplitude")?, *line, "amplitude")?;
        let im = finite(field(rec, 2, *line, "amplitude")?, *line, "amplitude")?;
        amps.push(C64::new(re, im));
    }
    LineSpectrum::new(freqs, amps)
}

pub fn write_spectrum(w: impl Write, spec: &LineSpectrum, seed: Option<u64>) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, seed)?;
    wtr.write_record(["f", "re_amp", "im_amp"])?;
    for (f, a) in spec.freqs().iter().zip(spec.amps()) {
        wtr.write_record([fmt_f64(*f), fmt_f64(a.re), fmt_f64(a.im)])?;
    }
    finish(wtr)
}

/// Per-iteration history as `iter,objective,eps,change`, iterations from 1.
pub fn write_report(w: impl Write, report: &IrlsReport, seed: Option<u64>) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, seed)?;
    wtr.write_record(["iter", "objective", "eps", "change"])?;
    for k in 0..report.outer_iters {
        wtr.write_record([
            (k + 1).to_string(),
            fmt_f64(report.objective_history[k]),
            fmt_f64(report.eps_history[k]),
            fmt_f64(report.iterate_change_history[k]),
        ])
        ?;
    }
    finish(wtr)
}

/// One row `method,f_1,...,f_r`.
pub fn write_estimate(w: impl Write, est: &FreqEstimate, seed: Option<u64>) -> Result<()> {
    let mut wtr = csv_writer_with_header(w, seed)?;
    let mut head = vec!["method".to_string()];
    head.extend((1..=est.freqs.len()).map(|i| format!("f_{i}")));
    wtr.write_record(&head)?;
    let mut row = vec![est.method.as_str().to_string()];
    row.extend(est.freqs.iter().map(|f| fmt_f64(*f)));
    wtr.write_record(&row)?;
    finish(wtr)
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored, later keys override earlier ones.
pub fn read_key_values(reader: impl BufRead) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let (key, value) = t.split_once('=').ok_or_else(|| parse_err(k + 1, format!("expected key=value, got {t:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_err(k + 1, "empty key"));
        }
        out.insert(key.replace('-', "_"), value.trim().to_string());
    }
    Ok(out)
}

/// `<v>`, `adaptive` or `exact`.
pub fn parse_lambda(s: &str) -> Result<LambdaMode> {
    match s.trim() {
        "adaptive" => Ok(LambdaMode::Adaptive),
        "exact" => Ok(LambdaMode::ExactConstraint),
        v => match v.parse::<f64>() {
            Ok(l) if l > 0.0 && l.is_finite() => Ok(LambdaMode::Fixed(l)),
            _ => Err(Error::InvalidArgument(format!("lambda must be a positive number, adaptive or exact, got {v:?}"))),
        },
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("invalid value {value:?} for {key}")))
}

/// Applies one solver key to `config`. Returns `false` for keys the solver
/// does not own, so callers can handle them.
pub fn apply_solver_key(config: &mut SolverConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "rank" => config.rank = parse_value(key, value)?,
        "lambda" => config.lambda_mode = parse_lambda(value)?,
        "alpha" | "decay_alpha" => config.decay_alpha = parse_value(key, value)?,
        "tol" => config.tol = parse_value(key, value)?,
        "max_outer" => config.max_outer = parse_value(key, value)?,
        "cg_tol" => config.cg_tol = parse_value(key, value)?,
        "cg_max_iters" => config.cg_max_iters = Some(parse_value(key, value)?),
        "seed" => config.seed = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}
