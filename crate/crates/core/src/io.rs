//! On-disk formats for user matrices (signals, codes) and dictionaries.
//!
//! User matrix, stored as a pair of files sharing a stem:
//!
//! * `<stem>.users.txt`: one user id per line, row order.
//! * `<stem>.csv`: one line per row, comma-separated values printed with
//!   Rust's shortest round-trip float formatting, no header; or
//! * `<stem>.bin`: magic `PACEMAT1` (8 bytes), `rows: u64`, `cols: u64`,
//!   then `rows * cols` IEEE-754 `f64` values, row-major. All integers and
//!   floats little-endian.
//!
//! Dictionary:
//!
//! * CSV: line 1 `k,channels,slots,lambda,seed`; line 2 the values; then one
//!   line per atom holding its `channels * slots` values channel-major.
//! * Binary: magic `PACEDIC1`, `k: u64`, `channels: u64`, `slots: u64`,
//!   `lambda: f64`, `seed: u64`, then `k * channels * slots` `f64` values,
//!   atom-major, little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{PaceError, Result};

const MATRIX_MAGIC: &[u8; 8] = b"PACEMAT1";
const DICT_MAGIC: &[u8; 8] = b"PACEDIC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Csv,
    Binary,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Binary => "bin",
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "bin" | "binary" => Ok(MatrixFormat::Binary),
            other => Err(format!("unknown matrix format {other:?} (csv|bin)")),
        }
    }
}

/// Rows of real values keyed by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMatrix {
    pub users: Vec<String>,
    pub matrix: Array2<f64>,
}

impl UserMatrix {
    pub fn new(users: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if users.len() != matrix.nrows() {
            return Err(PaceError::Shape(format!(
                "{} users for {} rows",
                users.len(),
                matrix.nrows()
            )));
        }
        Ok(UserMatrix { users, matrix })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn position(&self, user: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user)
    }

    /// Sub-matrix of the given users, in the given order.
    pub fn select(&self, users: &[String]) -> Result<UserMatrix> {
        let index: std::collections::HashMap<&str, usize> = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect();
        let mut matrix = Array2::zeros((users.len(), self.ncols()));
        for (r, u) in users.iter().enumerate() {
            let &i = index
                .get(u.as_str())
                .ok_or_else(|| PaceError::Shape(format!("user {u:?} has no row")))?;
            matrix.row_mut(r).assign(&self.matrix.row(i));
        }
        Ok(UserMatrix {
            users: users.to_vec(),
            matrix,
        })
    }
}

pub fn users_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "users.txt")
}

pub fn matrix_path(stem: &Path, format: MatrixFormat) -> PathBuf {
    with_suffix(stem, format.extension())
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| PaceError::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| PaceError::io(path, e))?;
    Ok(BufWriter::with_capacity(1 << 20, f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| PaceError::io(path, e))?;
    Ok(BufReader::with_capacity(1 << 20, f))
}

pub fn write_users(path: &Path, users: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for u in users {
        writeln!(w, "{u}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_users(path: &Path) -> Result<Vec<String>> {
    let mut users = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| PaceError::io(path, e))?;
        if !line.is_empty() {
            users.push(line);
        }
    }
    Ok(users)
}

fn write_csv_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        write!(w, "{v:?}")?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn parse_csv_row(path: &Path, line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                PaceError::format(path, format!("line {lineno}: bad value {tok:?}"))
            })
        })
        .collect()
}

pub fn write_matrix(path: &Path, matrix: &Array2<f64>, format: MatrixFormat) -> Result<()> {
    let mut w = create(path)?;
    match format {
        MatrixFormat::Csv => {
            for row in matrix.rows() {
                write_csv_row(&mut w, row.iter().copied())?;
            }
        }
        MatrixFormat::Binary => {
            w.write_all(MATRIX_MAGIC)?;
            w.write_all(&(matrix.nrows() as u64).to_le_bytes())?;
            w.write_all(&(matrix.ncols() as u64).to_le_bytes())?;
            for v in matrix.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| PaceError::format(path, "truncated header"))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| PaceError::format(path, format!("expected {n} values")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<Array2<f64>> {
    let mut r = open(path)?;
    match format {
        MatrixFormat::Csv => {
            let mut data = Vec::new();
            let mut cols = None;
            let mut rows = 0;
            for (i, line) in r.lines().enumerate() {
                let line = line.map_err(|e| PaceError::io(path, e))?;
                if line.is_empty() {
                    continue;
                }
                let row = parse_csv_row(path, &line, i + 1)?;
                match cols {
                    None => cols = Some(row.len()),
                    Some(c) if c != row.len() => {
                        return Err(PaceError::format(
                            path,
                            format!("line {}: {} values, expected {c}", i + 1, row.len()),
                        ))
                    }
                    _ => {}
                }
                data.extend(row);
                rows += 1;
            }
            Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
                .map_err(|e| PaceError::format(path, e.to_string()))
        }
        MatrixFormat::Binary => {
            let mut magic = [0u8; 8];
            r.read_exact(&mut magic)
                .map_err(|_| PaceError::format(path, "missing magic"))?;
            if &magic != MATRIX_MAGIC {
                return Err(PaceError::format(path, "not a PACEMAT1 file"));
            }
            let rows = read_u64(&mut r, path)? as usize;
            let cols = read_u64(&mut r, path)? as usize;
            let data = read_f64s(&mut r, rows * cols, path)?;
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| PaceError::format(path, e.to_string()))
        }
    }
}

pub fn write_user_matrix(stem: &Path, m: &UserMatrix, format: MatrixFormat) -> Result<()> {
    write_users(&users_path(stem), &m.users)?;
    write_matrix(&matrix_path(stem, format), &m.matrix, format)
}

pub fn read_user_matrix(stem: &Path, format: MatrixFormat) -> Result<UserMatrix> {
    let users = read_users(&users_path(stem))?;
    let matrix = read_matrix(&matrix_path(stem, format), format)?;
    if matrix.nrows() != users.len() && !(users.is_empty() && matrix.is_empty()) {
        return Err(PaceError::format(
            matrix_path(stem, format),
            format!("{} rows for {} users", matrix.nrows(), users.len()),
        ));
    }
    Ok(UserMatrix { users, matrix })
}

/// Looks for `<stem>.csv` then `<stem>.bin`.
pub fn detect_format(stem: &Path) -> Option<MatrixFormat> {
    [MatrixFormat::Csv, MatrixFormat::Binary]
        .into_iter()
        .find(|f| matrix_path(stem, *f).exists())
}

pub fn write_dictionary(path: &Path, dict: &Dictionary, format: MatrixFormat) -> Result<()> {
    let mut w = create(path)?;
    match format {
        MatrixFormat::Csv => {
            writeln!(w, "k,channels,slots,lambda,seed")?;
            writeln!(
                w,
                "{},{},{},{:?},{}",
                dict.k(),
                dict.channels,
                dict.slots,
                dict.lambda,
                dict.seed
            )?;
            for atom in dict.atoms.rows() {
                write_csv_row(&mut w, atom.iter().copied())?;
            }
        }
        MatrixFormat::Binary => {
            w.write_all(DICT_MAGIC)?;
            for v in [dict.k() as u64, dict.channels as u64, dict.slots as u64] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&dict.lambda.to_le_bytes())?;
            w.write_all(&dict.seed.to_le_bytes())?;
            for v in dict.atoms.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dictionary(path: &Path, format: MatrixFormat) -> Result<Dictionary> {
    let mut r = open(path)?;
    let (k, channels, slots, lambda, seed, data) = match format {
        MatrixFormat::Csv => {
            let mut lines = r.lines();
            let mut next = |what: &str| -> Result<String> {
                lines
                    .next()
                    .ok_or_else(|| PaceError::format(path, format!("missing {what}")))?
                    .map_err(|e| PaceError::io(path, e))
            };
            let header = next("header")?;
            if header.trim() != "k,channels,slots,lambda,seed" {
                return Err(PaceError::format(path, format!("bad header {header:?}")));
            }
            let meta = next("metadata")?;
            let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(PaceError::format(path, "metadata needs 5 fields"));
            }
            let bad = |f: &str| PaceError::format(path, format!("bad metadata field {f:?}"));
            let k: usize = fields[0].parse().map_err(|_| bad(fields[0]))?;
            let channels: usize = fields[1].parse().map_err(|_| bad(fields[1]))?;
            let slots: usize = fields[2].parse().map_err(|_| bad(fields[2]))?;
            let lambda: f64 = fields[3].parse().map_err(|_| bad(fields[3]))?;
            let seed: u64 = fields[4].parse().map_err(|_| bad(fields[4]))?;
            let mut data = Vec::with_capacity(k * channels * slots);
            for i in 0..k {
                let line = next("atom row")?;
                let row = parse_csv_row(path, &line, i + 3)?;
                if row.len() != channels * slots {
                    return Err(PaceError::format(
                        path,
                        format!("atom {i}: {} values, expected {}", row.len(), channels * slots),
                    ));
                }
                data.extend(row);
            }
            (k, channels, slots, lambda, seed, data)
        }
        MatrixFormat::Binary => {
            let mut magic = [0u8; 8];
            r.read_exact(&mut magic)
                .map_err(|_| PaceError::format(path, "missing magic"))?;
            if &magic != DICT_MAGIC {
                return Err(PaceError::format(path, "not a PACEDIC1 file"));
            }
            let k = read_u64(&mut r, path)? as usize;
            let channels = read_u64(&mut r, path)? as usize;
            let slots = read_u64(&mut r, path)? as usize;
            let lambda = f64::from_bits(read_u64(&mut r, path)?);
            let seed = read_u64(&mut r, path)?;
            let data = read_f64s(&mut r, k * channels * slots, path)?;
            (k, channels, slots, lambda, seed, data)
        }
    };
    let atoms = Array2::from_shape_vec((k, channels * slots), data)
        .map_err(|e| PaceError::format(path, e.to_string()))?;
    Dictionary::from_atoms(atoms, channels, slots, lambda, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn user_matrix_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = UserMatrix::new(
            vec!["a".into(), "b".into()],
            array![[0.1, -2.5e-300, 3.0], [f64::MIN_POSITIVE, 1.0 / 3.0, -0.0]],
        )
        .unwrap();
        for format in [MatrixFormat::Csv, MatrixFormat::Binary] {
            let stem = dir.path().join(format!("sig_{}", format.extension()));
            write_user_matrix(&stem, &m, format).unwrap();
            assert_eq!(detect_format(&stem), Some(format));
            let back = read_user_matrix(&stem, format).unwrap();
            assert_eq!(back.users, m.users);
            for (x, y) in back.matrix.iter().zip(m.matrix.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_matrix(&p, MatrixFormat::Csv).is_err());
    }

    #[test]
    fn select_reorders_rows() {
        let m = UserMatrix::new(vec!["a".into(), "b".into()], array![[1.0], [2.0]]).unwrap();
        let s = m.select(&["b".into(), "a".into()]).unwrap();
        assert_eq!(s.matrix, array![[2.0], [1.0]]);
        assert!(m.select(&["zz".into()]).is_err());
    }
}
