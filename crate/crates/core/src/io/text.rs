use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::{format_err, io_err};
use crate::degradation::{BlurKernel, SrfMatrix, SRF_ROW_SUM_TOL};
use crate::error::Result;
use crate::miae::LossRecord;

/// Largest row-sum deviation the SRF loader silently repairs.
pub const SRF_RENORM_LIMIT: f64 = 1e-3;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn parse_floats<'a>(
    fields: impl Iterator<Item = &'a str>,
    path: &Path,
    line: usize,
) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {line}: cannot parse {f:?} as a number")))
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_kernel(text: &str, path: &Path) -> Result<BlurKernel> {
    let mut lines = content_lines(text);
    let (n, first) = lines.next().ok_or_else(|| format_err(path, "empty kernel file"))?;
    let k: usize = first
        .parse()
        .map_err(|_| format_err(path, format!("line {n}: expected the kernel size, got {first:?}")))?;
    if k % 2 == 0 {
        return Err(format_err(path, format!("kernel size must be odd, got {k}")));
    }
    let mut weights = Vec::with_capacity(k * k);
    for row in 0..k {
        let (n, line) = lines
            .next()
            .ok_or_else(|| format_err(path, format!("expected {k} kernel rows, found {row}")))?;
        let vals = parse_floats(line.split_whitespace(), path, n)?;
        if vals.len() != k {
            return Err(format_err(path, format!("line {n}: expected {k} values, found {}", vals.len())));
        }
        weights.extend(vals);
    }
    if let Some((n, _)) = lines.next() {
        return Err(format_err(path, format!("line {n}: unexpected content after the kernel")));
    }
    BlurKernel::new(k, weights).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_kernel(path: &Path) -> Result<BlurKernel> {
    parse_kernel(&read_text(path)?, path)
}

pub fn write_kernel(path: &Path, kernel: &BlurKernel) -> Result<()> {
    let k = kernel.size();
    let mut s = format!("{k}\n");
    for row in kernel.weights().chunks_exact(k) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    write_text(path, &s)
}

/// Parses one SRF row per line. Rows whose sums are off by at most
/// [`SRF_RENORM_LIMIT`] are rescaled with a warning.
pub fn parse_srf(text: &str, path: &Path) -> Result<SrfMatrix> {
    let mut weights = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, line) in content_lines(text) {
        let mut vals = parse_floats(line.split(','), path, n)?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(format_err(path, format!("line {n}: expected {c} values, found {}", vals.len())))
            }
            _ => {}
        }
        if let Some(v) = vals.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(format_err(path, format!("line {n}: weight {v} is negative or not finite")));
        }
        let sum: f64 = vals.iter().sum();
        let off = (sum - 1.0).abs();
        if off > SRF_RENORM_LIMIT {
            return Err(format_err(path, format!("line {n}: row sums to {sum}, not 1")));
        }
        if off > SRF_ROW_SUM_TOL {
            warn!("{}: line {n}: row sums to {sum}; renormalizing", path.display());
            vals.iter_mut().for_each(|v| *v /= sum);
        }
        weights.extend(vals);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| format_err(path, "empty SRF file"))?;
    SrfMatrix::new(rows, cols, weights).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_srf(path: &Path) -> Result<SrfMatrix> {
    parse_srf(&read_text(path)?, path)
}

pub fn write_srf(path: &Path, srf: &SrfMatrix) -> Result<()> {
    let mut s = String::new();
    for m in 0..srf.rows() {
        let cells: Vec<String> = srf.row(m).iter().map(f64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

const LOSS_HEADER: &str = "iteration,learning_rate,loss";

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut s = format!("{LOSS_HEADER}\n");
    for r in history {
        writeln!(s, "{},{},{}", r.iteration, r.learning_rate, r.loss).expect("string write");
    }
    write_text(path, &s)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, h)) if h == LOSS_HEADER => {}
        _ => return Err(format_err(path, format!("missing header {LOSS_HEADER:?}"))),
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(format_err(path, format!("line {n}: expected 3 fields")));
            }
            let iteration = f[0]
                .parse()
                .map_err(|_| format_err(path, format!("line {n}: bad iteration {:?}", f[0])))?;
            let v = parse_floats(f[1..].iter().copied(), path, n)?;
            Ok(LossRecord {
                iteration,
                learning_rate: v[0],
                loss: v[1],
            })
        })
        .collect()
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// One `band,psnr_db` row per band, no header.
pub fn write_psnr_csv(path: &Path, per_band: &[f64]) -> Result<()> {
    let mut s = String::new();
    for (b, v) in per_band.iter().enumerate() {
        writeln!(s, "{b},{}", fmt_db(*v)).expect("string write");
    }
    write_text(path, &s)
}

/// One `rank,sam_deg` row per pixel in ascending order, no header.
pub fn write_sam_csv(path: &Path, sorted: &[f64]) -> Result<()> {
    let mut s = String::new();
    for (i, v) in sorted.iter().enumerate() {
        writeln!(s, "{i},{v}").expect("string write");
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{make_box_srf, make_gaussian_kernel};

    #[test]
    fn kernel_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.krn");
        let k = make_gaussian_kernel(7, 1.7).unwrap();
        write_kernel(&p, &k).unwrap();
        assert_eq!(read_kernel(&p).unwrap(), k);
    }

    #[test]
    fn kernel_rejects_even_size_and_ragged_rows() {
        let p = Path::new("k");
        assert!(parse_kernel("2\n0 0\n0 1\n", p).is_err());
        assert!(parse_kernel("3\n0 0 0\n0 1\n0 0 0\n", p).is_err());
        assert!(parse_kernel("1\n1.5\n", p).is_err());
        assert_eq!(parse_kernel("1\n1\n", p).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn srf_round_trip_and_repair() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let r = make_box_srf(7, 3).unwrap();
        write_srf(&p, &r).unwrap();
        assert_eq!(read_srf(&p).unwrap(), r);

        let fixed = parse_srf("0.5,0.5004\n1,0\n", Path::new("r")).unwrap();
        assert!((fixed.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(parse_srf("0.5,0.52\n", Path::new("r")).is_err());
        assert!(parse_srf("1.1,-0.1\n", Path::new("r")).is_err());
        assert!(parse_srf("1,0\n1\n", Path::new("r")).is_err());
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = vec![
            LossRecord { iteration: 0, learning_rate: 5e-3, loss: 1.0 / 3.0 },
            LossRecord { iteration: 1, learning_rate: 4.9e-3, loss: 0.25 },
        ];
        write_loss_csv(&p, &h).unwrap();
        assert_eq!(read_loss_csv(&p).unwrap(), h);
    }

    #[test]
    fn metric_csvs_have_one_row_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("psnr.csv");
        write_psnr_csv(&p, &[30.0, f64::INFINITY]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "0,30\n1,inf\n");
        let q = dir.path().join("sam.csv");
        write_sam_csv(&q, &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!(std::fs::read_to_string(&q).unwrap().lines().count(), 3);
    }
}
