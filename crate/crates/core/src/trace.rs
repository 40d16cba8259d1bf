//! Per-iterate metric rows and their CSV encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const SCHEMA_LINE: &str = "# schema=1";
pub const HEADER: &str =
    "k,sigma,alpha,beta,gamma,eta,T,M,delta_x,delta_y,delta_z,eps_level,potential,psi_sigma,oracle_calls,wall_ms";
const FIELDS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub k: u64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub t: u64,
    pub m: u64,
    pub delta_x: f64,
    pub delta_y: f64,
    pub delta_z: f64,
    pub eps_level: f64,
    pub potential: Option<f64>,
    pub psi_sigma: Option<f64>,
    pub oracle_calls: u64,
    pub wall_ms: f64,
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        [
            self.k.to_string(),
            real(self.sigma),
            real(self.alpha),
            real(self.beta),
            real(self.gamma),
            real(self.eta),
            self.t.to_string(),
            self.m.to_string(),
            real(self.delta_x),
            real(self.delta_y),
            real(self.delta_z),
            real(self.eps_level),
            opt_real(self.potential),
            opt_real(self.psi_sigma),
            self.oracle_calls.to_string(),
            real(self.wall_ms),
        ]
        .join(",")
    }

    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != FIELDS {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {FIELDS} fields, found {}", parts.len()),
            });
        }
        let bad = |name: &str, raw: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {name} '{raw}'"),
        };
        let int = |i: usize, name: &str| parts[i].parse::<u64>().map_err(|_| bad(name, parts[i]));
        let num = |i: usize, name: &str| parts[i].parse::<f64>().map_err(|_| bad(name, parts[i]));
        let opt = |i: usize, name: &str| {
            if parts[i].is_empty() {
                Ok(None)
            } else {
                num(i, name).map(Some)
            }
        };
        Ok(MetricRow {
            k: int(0, "k")?,
            sigma: num(1, "sigma")?,
            alpha: num(2, "alpha")?,
            beta: num(3, "beta")?,
            gamma: num(4, "gamma")?,
            eta: num(5, "eta")?,
            t: int(6, "T")?,
            m: int(7, "M")?,
            delta_x: num(8, "delta_x")?,
            delta_y: num(9, "delta_y")?,
            delta_z: num(10, "delta_z")?,
            eps_level: num(11, "eps_level")?,
            potential: opt(12, "potential")?,
            psi_sigma: opt(13, "psi_sigma")?,
            oracle_calls: int(14, "oracle_calls")?,
            wall_ms: num(15, "wall_ms")?,
        })
    }
}

/// Streams rows to a CSV sink, header first.
pub struct TraceWriter<W: Write> {
    out: W,
    last: Option<(u64, u64)>,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        TraceWriter::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{SCHEMA_LINE}")?;
        writeln!(out, "{HEADER}")?;
        Ok(TraceWriter { out, last: None })
    }

    pub fn write_row(&mut self, row: &MetricRow) -> Result<()> {
        if let Some((k, calls)) = self.last {
            if row.k <= k || row.oracle_calls < calls {
                return Err(Error::argument(format!(
                    "row k={} breaks trace ordering after k={k}",
                    row.k
                )));
            }
        }
        self.last = Some((row.k, row.oracle_calls));
        writeln!(self.out, "{}", row.to_csv())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_trace(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = TraceWriter::create(path)?;
    for row in rows {
        w.write_row(row)?;
    }
    w.flush()
}

pub fn read_trace(path: &Path) -> Result<Vec<MetricRow>> {
    parse_trace(BufReader::new(File::open(path)?))
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing or unexpected header".into(),
                });
            }
            seen_header = true;
            continue;
        }
        rows.push(MetricRow::parse(&line, line_no)?);
    }
    if !seen_header {
        return Err(Error::Parse {
            line: 0,
            message: "empty trace file".into(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Sigma,
    DeltaX,
    DeltaY,
    DeltaZ,
    EpsLevel,
    Potential,
    PsiSigma,
}

impl Column {
    fn get(self, row: &MetricRow) -> Option<f64> {
        match self {
            Column::Sigma => Some(row.sigma),
            Column::DeltaX => Some(row.delta_x),
            Column::DeltaY => Some(row.delta_y),
            Column::DeltaZ => Some(row.delta_z),
            Column::EpsLevel => Some(row.eps_level),
            Column::Potential => row.potential,
            Column::PsiSigma => row.psi_sigma,
        }
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sigma" => Column::Sigma,
            "delta_x" => Column::DeltaX,
            "delta_y" => Column::DeltaY,
            "delta_z" => Column::DeltaZ,
            "eps_level" => Column::EpsLevel,
            "potential" => Column::Potential,
            "psi_sigma" => Column::PsiSigma,
            other => return Err(Error::argument(format!("no fittable column '{other}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log(min_{j<=k} column_j)` against `log k` over the
/// rows whose `k` lies in `window`. Rows with `k = 0` are skipped.
pub fn fit_rate(rows: &[MetricRow], column: Column, window: RangeInclusive<u64>) -> Result<RateFit> {
    let mut best = f64::INFINITY;
    let mut pts = Vec::new();
    for row in rows {
        let Some(v) = column.get(row) else { continue };
        if !(v > 0.0) {
            return Err(Error::argument(format!("nonpositive value {v} at k={}", row.k)));
        }
        best = best.min(v);
        if row.k > 0 && window.contains(&row.k) {
            pts.push(((row.k as f64).ln(), best.ln()));
        }
    }
    if pts.len() < 10 {
        return Err(Error::argument(format!("need at least 10 rows in window, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64, v: f64) -> MetricRow {
        MetricRow {
            k,
            sigma: 0.1,
            alpha: 0.01,
            beta: 0.5,
            gamma: 0.01,
            eta: 1.0,
            t: 1,
            m: 1,
            delta_x: v,
            delta_y: v,
            delta_z: v,
            eps_level: v,
            potential: None,
            psi_sigma: Some(-v),
            oracle_calls: 6 * k,
            wall_ms: 0.0,
        }
    }

    fn roundtrip(rows: &[MetricRow]) -> Vec<MetricRow> {
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        for r in rows {
            w.write_row(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        parse_trace(bytes.as_slice()).unwrap()
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = TraceWriter::new(Vec::new()).unwrap().into_inner().unwrap();
        assert_eq!(String::from_utf8(bytes.clone()).unwrap(), format!("{SCHEMA_LINE}\n{HEADER}\n"));
        assert!(parse_trace(bytes.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn single_row_keeps_all_digits() {
        let mut r = row(3, 0.1 + 0.2);
        r.potential = Some(1.0 / 3.0);
        r.wall_ms = 12.345678901234567;
        assert_eq!(roundtrip(&[r]), vec![r]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{SCHEMA_LINE}\n{HEADER}\n{}\n1,2,3\n", row(0, 1.0).to_csv());
        match parse_trace(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let mut fields: Vec<String> = row(0, 1.0).to_csv().split(',').map(String::from).collect();
        fields[1] = "x".into();
        let text = format!("{HEADER}\n{}", fields.join(","));
        assert!(matches!(parse_trace(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn writer_rejects_out_of_order_rows() {
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        w.write_row(&row(2, 1.0)).unwrap();
        assert!(w.write_row(&row(2, 1.0)).is_err());
    }

    #[test]
    fn exact_power_law_slope() {
        let rows: Vec<_> = (1..=200).map(|k| row(k, (k as f64).powf(-1.0 / 3.0))).collect();
        let fit = fit_rate(&rows, Column::DeltaX, 1..=200).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-6);
        assert!((fit.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_has_zero_slope() {
        let rows: Vec<_> = (0..50).map(|k| row(k, 2.5)).collect();
        let fit = fit_rate(&rows, Column::EpsLevel, 0..=u64::MAX).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.intercept - 2.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_nonpositive_and_short_windows() {
        let mut rows: Vec<_> = (1..30).map(|k| row(k, 1.0)).collect();
        assert!(fit_rate(&rows, Column::DeltaX, 1..=5).is_err());
        rows[4].delta_x = 0.0;
        assert!(fit_rate(&rows, Column::DeltaX, 1..=30).is_err());
        assert!(fit_rate(&rows, Column::Potential, 1..=30).is_err());
    }
}
