//! Data and result files.
//!
//! A series file is a CSV with one header row `feature,t₁,…,t_T` and one row
//! per feature: its name followed by `T` values. Times must be strictly
//! increasing. Times already inside `[0, 1]` are used as-is, anything else
//! is min-max rescaled onto `[0, 1]`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use tacifa_core::model::Series;
use tacifa_core::postprocess::{Prediction, WarpSummary};
use tacifa_core::sampler::Diagnostics;
use tacifa_core::{ModelState, SeriesPair};

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub names: Vec<String>,
    /// Times as written in the file.
    pub times: Vec<f64>,
    /// `p × T`.
    pub values: DMatrix<f64>,
}

impl SeriesTable {
    /// Times mapped onto `[0, 1]`.
    pub fn unit_times(&self) -> Vec<f64> {
        normalize_times(&self.times)
    }
}

pub fn normalize_times(times: &[f64]) -> Vec<f64> {
    if times.iter().all(|t| (0.0..=1.0).contains(t)) {
        return times.to_vec();
    }
    let lo = times[0];
    let hi = times[times.len() - 1];
    if times.len() == 1 || hi == lo {
        return vec![0.0; times.len()];
    }
    times.iter().map(|t| ((t - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .with_context(|| format!("row {row}, column {col}: `{cell}` is not a number"))?;
    if !v.is_finite() {
        bail!("row {row}, column {col}: value `{cell}` is not finite");
    }
    Ok(v)
}

/// Reads a series table. Rows and columns in errors are 1-based and count
/// the header.
pub fn read_series<R: std::io::Read>(reader: R) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.context("row 1: unreadable header")?,
        None => bail!("file is empty"),
    };
    if header.len() < 2 {
        bail!("row 1: header needs `feature` followed by at least one time");
    }
    let times = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, cell)| parse_cell(cell, 1, c + 1))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        bail!("row 1, column {}: times must be strictly increasing ({} after {})", i + 3, times[i + 1], times[i]);
    }
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.with_context(|| format!("row {row}: unreadable record"))?;
        if rec.len() != header.len() {
            bail!("row {row}: expected {} columns, found {}", header.len(), rec.len());
        }
        names.push(rec[0].trim().to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            values.push(parse_cell(cell, row, c + 1)?);
        }
    }
    if names.is_empty() {
        bail!("no feature rows after the header");
    }
    let values = DMatrix::from_row_slice(names.len(), times.len(), &values);
    Ok(SeriesTable { names, times, values })
}

pub fn read_series_file(path: &Path) -> Result<SeriesTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_series(f).with_context(|| format!("reading {}", path.display()))
}

pub fn write_series<W: Write>(writer: W, names: &[String], times: &[f64], values: &DMatrix<f64>) -> Result<()> {
    if names.len() != values.nrows() || times.len() != values.ncols() {
        bail!("table shape {}×{} does not match {} names and {} times", values.nrows(), values.ncols(), names.len(), times.len());
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut head = vec!["feature".to_string()];
    head.extend(times.iter().map(|t| format!("{t:?}")));
    w.write_record(&head)?;
    for (l, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(values.row(l).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_file(path: &Path, names: &[String], times: &[f64], values: &DMatrix<f64>) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_series(f, names, times, values)
}

/// Loads two series files into a pair. Feature names must agree row by row.
pub fn read_pair(x_path: &Path, y_path: &Path) -> Result<(SeriesPair, Vec<String>)> {
    let x = read_series_file(x_path)?;
    let y = read_series_file(y_path)?;
    if x.names.len() != y.names.len() {
        bail!("{} has {} features but {} has {}", x_path.display(), x.names.len(), y_path.display(), y.names.len());
    }
    if let Some(i) = x.names.iter().zip(&y.names).position(|(a, b)| a != b) {
        bail!(
            "feature names differ at row {}: `{}` in {} and `{}` in {}",
            i + 2,
            x.names[i],
            x_path.display(),
            y.names[i],
            y_path.display()
        );
    }
    let pair = SeriesPair::new(x.values.clone(), y.values.clone(), x.unit_times(), y.unit_times())?;
    Ok((pair, x.names))
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|l| format!("f{l}")).collect()
}

fn csv_file(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(f))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn series_name(s: Series) -> &'static str {
    match s {
        Series::X => "x",
        Series::Y => "y",
    }
}

/// A `p × r` matrix with a `feature` column and `c1..cr` headers.
pub fn write_matrix(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_file(path)?;
    let mut head = vec!["feature".to_string()];
    head.extend((1..=m.ncols()).map(|c| format!("c{c}")));
    w.write_record(&head)?;
    for (l, name) in names.iter().enumerate().take(m.nrows()) {
        let mut rec = vec![name.clone()];
        rec.extend(m.row(l).iter().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_warp(path: &Path, warp: &WarpSummary, truth: Option<&[f64]>) -> Result<()> {
    let mut w = csv_file(path)?;
    let mut head = vec!["t", "mean", "lo", "hi"];
    if truth.is_some() {
        head.push("truth");
    }
    w.write_record(&head)?;
    for g in 0..warp.grid.len() {
        let mut rec = vec![num(warp.grid[g]), num(warp.mean[g]), num(warp.lo[g]), num(warp.hi[g])];
        if let Some(tr) = truth {
            rec.push(num(tr[g]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(path: &Path, d: &Diagnostics) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record([
        "iteration",
        "kappa_accepted",
        "lambda_accepted",
        "step_kappa",
        "step_lambda",
        "rank",
        "rank1",
        "rank2",
        "log_likelihood",
    ])?;
    for r in &d.iterations {
        w.write_record([
            r.iteration.to_string(),
            (r.kappa_accepted as u8).to_string(),
            r.lambda_accepted.to_string(),
            num(r.step_kappa),
            num(r.step_lambda),
            r.rank.to_string(),
            r.rank1.to_string(),
            r.rank2.to_string(),
            num(r.log_likelihood),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prune_events(path: &Path, d: &Diagnostics) -> Result<()> {
    let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    let mut w = csv_file(path)?;
    w.write_record(["iteration", "shared", "individual1", "individual2"])?;
    for e in &d.prune_events {
        w.write_record([e.iteration.to_string(), join(&e.shared), join(&e.ind1), join(&e.ind2)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, names: &[String], pred: &Prediction) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["series", "feature", "time", "truth", "mean", "lo", "hi"])?;
    for e in &pred.entries {
        w.write_record([
            series_name(e.series).to_string(),
            names[e.feature].clone(),
            num(e.time),
            num(e.truth),
            num(e.mean),
            num(e.lo),
            num(e.hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, pred: &Prediction) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["mse_x", "mse_y", "coverage_x", "coverage_y"])?;
    w.write_record([num(pred.mse.0), num(pred.mse.1), num(pred.coverage.0), num(pred.coverage.1)])?;
    w.flush()?;
    Ok(())
}

pub fn write_syn(path: &Path, syn: &tacifa_core::postprocess::SynSummary) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["mean", "lo", "hi", "plug_in"])?;
    w.write_record([num(syn.mean), num(syn.lo), num(syn.hi), num(syn.plug_in)])?;
    w.flush()?;
    Ok(())
}

pub fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["sample", header])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (sample, parameter block, row, column) in long format.
pub fn write_chain(path: &Path, samples: &[ModelState]) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["sample", "block", "row", "col", "value"])?;
    for (i, s) in samples.iter().enumerate() {
        let blocks: [(&str, &DMatrix<f64>); 6] = [
            ("lambda", &s.lambda),
            ("gamma1", &s.gamma1),
            ("gamma2", &s.gamma2),
            ("beta_shared", &s.beta_shared),
            ("beta1", &s.beta1),
            ("beta2", &s.beta2),
        ];
        for (name, m) in blocks {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    w.write_record([i.to_string(), name.into(), r.to_string(), c.to_string(), num(m[(r, c)])])?;
                }
            }
        }
        let vectors: [(&str, &[f64]); 5] = [
            ("xi1", s.xi1.as_slice()),
            ("xi2", s.xi2.as_slice()),
            ("sigma1_sq", s.sigma1_sq.as_slice()),
            ("sigma2_sq", s.sigma2_sq.as_slice()),
            ("kappa", &s.warp.kappa),
        ];
        for (name, v) in vectors {
            for (r, x) in v.iter().enumerate() {
                w.write_record([i.to_string(), name.into(), r.to_string(), "0".into(), num(*x)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
