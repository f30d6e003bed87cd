//! CSV and binary export of trajectories, oscillator draws and kernel tables.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kalman::MeasuredTrajectory;
use crate::reservoirs::OscillatorParams;

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"QWTRAJ01";

/// Full-precision float (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Column names `t, u, y_1..y_s, pi_1..pi_2n`.
pub fn trajectory_header(tr: &MeasuredTrajectory) -> Vec<String> {
    let mut h = vec!["t".to_string(), "u".to_string()];
    h.extend((1..=tr.outputs.ncols()).map(|i| format!("y_{i}")));
    h.extend((1..=tr.means.ncols()).map(|i| format!("pi_{i}")));
    h
}

/// Row-major table matching [`trajectory_header`].
pub fn trajectory_table(tr: &MeasuredTrajectory) -> DMatrix<f64> {
    let (s, m) = (tr.outputs.ncols(), tr.means.ncols());
    let has_means = tr.means.nrows() == tr.steps();
    DMatrix::from_fn(tr.steps(), 2 + s + if has_means { m } else { 0 }, |k, j| match j {
        0 => tr.times[k],
        1 => tr.inputs[k],
        j if j < 2 + s => tr.outputs[(k, j - 2)],
        j => tr.means[(k, j - 2 - s)],
    })
}

pub fn trajectory_csv(tr: &MeasuredTrajectory) -> String {
    let table = trajectory_table(tr);
    let mut header = trajectory_header(tr);
    header.truncate(table.ncols());
    csv(&header, table.row_iter().map(|r| r.iter().copied().collect()))
}

/// `QWTRAJ01`, then rows and columns as little-endian u64, then the table
/// as row-major little-endian f64.
pub fn trajectory_binary(tr: &MeasuredTrajectory) -> Vec<u8> {
    encode_binary(&trajectory_table(tr))
}

pub fn encode_binary(table: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * table.len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&(table.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(table.ncols() as u64).to_le_bytes());
    for row in table.row_iter() {
        for x in row.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 24 || &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(Error::InvalidParameter("missing QWTRAJ01 header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let body = &bytes[24..];
    if body.len() != 8 * rows * cols {
        return Err(Error::Dimension(format!("{rows}x{cols} table needs {} bytes, found {}", 8 * rows * cols, body.len())));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// One row per oscillator: `channel,index,alpha_sq,omega,s1,s2`.
pub fn oscillators_csv(channels: &[OscillatorParams]) -> String {
    let mut out = String::from("channel,index,alpha_sq,omega,s1,s2\n");
    for (c, ch) in channels.iter().enumerate() {
        for (i, o) in ch.oscillators.iter().enumerate() {
            let _ = writeln!(
                out,
                "{c},{i},{},{},{},{}",
                fmt_f64(o.alpha_sq),
                fmt_f64(o.omega),
                fmt_f64(o.s1),
                fmt_f64(o.s2)
            );
        }
    }
    out
}

/// `t,t_prime,k` rows.
pub fn kernel_csv(rows: &[(f64, f64, f64)]) -> String {
    csv(
        &["t".into(), "t_prime".into(), "k".into()],
        rows.iter().map(|&(t, tp, k)| vec![t, tp, k]),
    )
}

/// Parses a numeric CSV with a header line. Empty cells read as NaN.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let row = line
            .split(',')
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidParameter(format!("CSV line {}: {e}", i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Dimension(format!("CSV line {} has {} cells, expected {}", i + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::NoiseMode;

    fn sample() -> MeasuredTrajectory {
        MeasuredTrajectory {
            dt: 0.1,
            times: vec![0.1, 0.2],
            inputs: vec![1.0, 0.0],
            outputs: DMatrix::from_row_slice(2, 1, &[0.1 + 0.2, -1e-300]),
            means: DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 2.0, std::f64::consts::PI, -0.0]),
            noise: NoiseMode::Off,
            min_uncertainty_margin: None,
            max_asymmetry: None,
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let tr = sample();
        let (header, rows) = read_csv(&trajectory_csv(&tr)).unwrap();
        assert_eq!(header, vec!["t", "u", "y_1", "pi_1", "pi_2"]);
        let table = trajectory_table(&tr);
        for (k, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(v.to_bits(), table[(k, j)].to_bits());
            }
        }
    }

    #[test]
    fn binary_round_trips() {
        let tr = sample();
        let bytes = trajectory_binary(&tr);
        assert_eq!(&bytes[..8], b"QWTRAJ01");
        assert_eq!(decode_binary(&bytes).unwrap(), trajectory_table(&tr));
        assert!(decode_binary(&bytes[..30]).is_err());
        assert!(decode_binary(b"NOTMAGIC").is_err());
    }

    #[test]
    fn means_are_optional() {
        let mut tr = sample();
        tr.means = DMatrix::zeros(0, 2);
        assert!(trajectory_csv(&tr).starts_with("t,u,y_1\n"));
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(read_csv("a,b\n1,2\n3\n").is_err());
        assert!(read_csv("a\nx\n").is_err());
        let (_, rows) = read_csv("a,b\n1,\n").unwrap();
        assert!(rows[0][1].is_nan());
    }
}
