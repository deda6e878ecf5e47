//! Dense row-major matrices and their on-disk formats.
//!
//! Binary tensor files (`.cimt`) are little-endian:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 4         | magic `CIMT`                            |
//! | 4      | 1         | version (1)                             |
//! | 5      | 1         | dtype: 1 u8, 2 i8, 3 i32, 4 i64, 5 f64  |
//! | 6      | 1         | ndim (1 or 2)                           |
//! | 7      | 1         | reserved, 0                             |
//! | 8      | 8 * ndim  | dims as u64                             |
//! | ...    |           | row-major payload                       |
//!
//! CSV tensors are one row per line, comma separated; a first line that does
//! not parse as numbers is taken as a header and skipped, and lines starting
//! with `#` are comments.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::{CimError, Result};

pub const MAGIC: &[u8; 4] = b"CIMT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Tensor2<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(CimError::shape(format!(
                "{rows}x{cols} tensor needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Tensor2 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Tensor2::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Exact integer matrix product, the reference every macro result is
/// checked against.
pub fn exact_matmul(x: &Tensor2<u8>, w: &Tensor2<i8>) -> Result<Tensor2<i64>> {
    if x.cols() != w.rows() {
        return Err(CimError::shape(format!(
            "cannot multiply {:?} by {:?}",
            x.shape(),
            w.shape()
        )));
    }
    Ok(Tensor2::from_fn(x.rows(), w.cols(), |m, n| {
        (0..x.cols())
            .map(|k| i64::from(x.get(m, k)) * i64::from(w.get(k, n)))
            .sum()
    }))
}

/// Scalar types storable in tensor files.
pub trait Element: Copy + Display + FromStr + Send + Sync + 'static {
    const DTYPE: u8;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! element {
    ($t:ty, $code:expr) => {
        impl Element for $t {
            const DTYPE: u8 = $code;
            const SIZE: usize = std::mem::size_of::<$t>();
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("slice length matches element size"))
            }
        }
    };
}

element!(u8, 1);
element!(i8, 2);
element!(i32, 3);
element!(i64, 4);
element!(f64, 5);

pub fn encode<T: Element>(t: &Tensor2<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + t.data.len() * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE, 2, 0]);
    out.extend_from_slice(&(t.rows as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols as u64).to_le_bytes());
    for &v in &t.data {
        v.write_le(&mut out);
    }
    out
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor2<T>> {
    let fmt = |m: &str| CimError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fmt("missing CIMT magic"));
    }
    if bytes[4] != VERSION {
        return Err(fmt(&format!("unsupported tensor version {}", bytes[4])));
    }
    if bytes[5] != T::DTYPE {
        return Err(fmt(&format!(
            "tensor dtype code {} does not match expected {}",
            bytes[5],
            T::DTYPE
        )));
    }
    let ndim = usize::from(bytes[6]);
    if !(1..=2).contains(&ndim) {
        return Err(fmt(&format!("unsupported tensor rank {ndim}")));
    }
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(fmt("truncated tensor header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let (rows, cols) = if ndim == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
    let count = rows.checked_mul(cols).ok_or_else(|| fmt("tensor dims overflow"))?;
    let payload = &bytes[header..];
    if payload.len() != count * T::SIZE {
        return Err(fmt(&format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * T::SIZE
        )));
    }
    let data = payload.chunks_exact(T::SIZE).map(T::read_le).collect();
    Tensor2::new(rows, cols, data)
}

pub fn parse_csv<T: Element>(text: &str) -> Result<Tensor2<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<T>, _> = line.split(',').map(|f| f.trim().parse::<T>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(_) => return Err(CimError::Format(format!("line {}: cannot parse '{line}'", lineno + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(CimError::Format(format!(
            "ragged CSV: row {bad} has {} fields, expected {cols}",
            rows[bad].len()
        )));
    }
    Tensor2::new(rows.len(), cols, rows.into_iter().flatten().collect())
}

pub fn to_csv<T: Element>(t: &Tensor2<T>, header: Option<&[String]>) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        s.push_str(&h.join(","));
        s.push('\n');
    }
    for r in 0..t.rows {
        let line: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn is_binary(path: &Path) -> bool {
    !matches!(path.extension().and_then(|e| e.to_str()), Some("csv") | Some("txt"))
}

/// Reads a tensor, choosing the format from the extension (`.csv`/`.txt`
/// are text, anything else binary).
pub fn read_tensor<T: Element>(path: &Path) -> Result<Tensor2<T>> {
    let bytes = std::fs::read(path).map_err(|e| CimError::io(path, e))?;
    if is_binary(path) {
        decode(&bytes)
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| CimError::Format(format!("{} is not UTF-8", path.display())))?;
        parse_csv(&text)
    }
}

pub fn write_tensor<T: Element>(path: &Path, t: &Tensor2<T>) -> Result<()> {
    let bytes = if is_binary(path) {
        encode(t)
    } else {
        to_csv(t, None).into_bytes()
    };
    let mut f = std::fs::File::create(path).map_err(|e| CimError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CimError::io(path, e))
}
