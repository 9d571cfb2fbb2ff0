//! `SPDF1` tensor-field text files.
//!
//! ```text
//! SPDF1 <p> <N> <n>
//! <site> <obs> <N² row-major values>
//! ...
//! ```
//!
//! Values are written with 17 significant digits, so a write/read round trip
//! is bit-exact. Records may appear in any order; they are returned sorted by
//! `(site, obs)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{SpdMatrix, SPD_EPS};

pub const MAGIC: &str = "SPDF1";

/// What to do with a matrix that fails SPD validation on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpdCheck {
    #[default]
    Reject,
    /// Floor the eigenvalues at the SPD tolerance and report the site.
    Warn,
}

/// A non-SPD matrix that was repaired under [`SpdCheck::Warn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Repaired {
    pub site: usize,
    pub obs: usize,
    pub min_eig: f64,
}

/// `data[site][obs]`, plus any matrices repaired on load.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub data: Vec<Vec<SpdMatrix>>,
    pub repaired: Vec<Repaired>,
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_tensor_field(path: &Path, data: &[Vec<SpdMatrix>]) -> Result<()> {
    let p = data.len();
    let n = data.first().map_or(0, Vec::len);
    let dim = data.first().and_then(|r| r.first()).map_or(0, SpdMatrix::dim);
    for row in data {
        if row.len() != n {
            return Err(Error::DimMismatch { expected: n, found: row.len() });
        }
        if let Some(x) = row.iter().find(|x| x.dim() != dim) {
            return Err(Error::DimMismatch { expected: dim, found: x.dim() });
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    put(format!("{MAGIC} {p} {dim} {n}"))?;
    for (i, row) in data.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            let m = x.as_matrix();
            let mut line = format!("{i} {j}");
            for r in 0..dim {
                for c in 0..dim {
                    line.push(' ');
                    line.push_str(&fmt_f64(m[(r, c)]));
                }
            }
            put(line)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn floor_eigenvalues(m: &DMatrix<f64>) -> (SpdMatrix, f64) {
    let s = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(s);
    let min = e.eigenvalues.min();
    let tol = SPD_EPS * e.eigenvalues.max().max(1.0);
    let mut v = e.eigenvectors.clone();
    for (mut col, &l) in v.column_iter_mut().zip(e.eigenvalues.iter()) {
        col *= l.max(tol).sqrt();
    }
    let rebuilt = &v * v.transpose();
    // rounding can leave the floor a hair short; nudge onto the diagonal
    let fixed = SpdMatrix::new(rebuilt.clone())
        .or_else(|_| SpdMatrix::new(rebuilt + DMatrix::identity(m.nrows(), m.nrows()) * tol))
        .expect("eigenvalues floored above tolerance");
    (fixed, min)
}

fn parse_header(line: Option<&str>) -> Result<(usize, usize, usize)> {
    let line = line.unwrap_or("");
    let mut it = line.split_whitespace();
    let magic = it.next().unwrap_or("");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic.to_string()));
    }
    let mut num = |name: &str| -> Result<usize> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::CorruptRecord { index: 0, why: format!("header field {name} missing or invalid") })
    };
    let (p, dim, n) = (num("p")?, num("N")?, num("n")?);
    if it.next().is_some() {
        return Err(Error::CorruptRecord { index: 0, why: "trailing header fields".into() });
    }
    Ok((p, dim, n))
}

/// Reads and validates an `SPDF1` file. Record indices in errors count data
/// lines from 0.
pub fn read_tensor_field(path: &Path, check: SpdCheck) -> Result<TensorField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let (p, dim, n) = parse_header(lines.next())?;
    if p == 0 || dim == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    let total = p * n;
    let mut slots: Vec<Option<DMatrix<f64>>> = vec![None; total];
    let mut count = 0;
    for line in lines {
        let index = count;
        let bad = |why: String| Error::CorruptRecord { index, why };
        if count >= total {
            return Err(bad(format!("more than p·n = {total} records")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 + dim * dim {
            return Err(bad(format!("expected {} fields, found {}", 2 + dim * dim, fields.len())));
        }
        let site: usize = fields[0].parse().map_err(|_| bad(format!("bad site id {:?}", fields[0])))?;
        let obs: usize = fields[1].parse().map_err(|_| bad(format!("bad observation id {:?}", fields[1])))?;
        if site >= p || obs >= n {
            return Err(bad(format!("ids ({site}, {obs}) out of range")));
        }
        let mut values = Vec::with_capacity(dim * dim);
        for t in &fields[2..] {
            let v: f64 = t.parse().map_err(|_| bad(format!("bad value {t:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {t}")));
            }
            values.push(v);
        }
        let slot = &mut slots[site * n + obs];
        if slot.is_some() {
            return Err(bad(format!("duplicate record ({site}, {obs})")));
        }
        *slot = Some(DMatrix::from_row_slice(dim, dim, &values));
        count += 1;
    }
    if count < total {
        return Err(Error::CorruptRecord {
            index: count,
            why: format!("file ends after {count} of {total} records"),
        });
    }

    let mut repaired = Vec::new();
    let mut data = Vec::with_capacity(p);
    let mut it = slots.into_iter();
    for site in 0..p {
        let mut row = Vec::with_capacity(n);
        for obs in 0..n {
            let m = it.next().flatten().expect("all slots filled");
            match SpdMatrix::new(m.clone()) {
                Ok(x) => row.push(x),
                Err(Error::NotSpd { min_eig, .. }) => match check {
                    SpdCheck::Reject => return Err(Error::NotSpdRecord { site, obs, min_eig }),
                    SpdCheck::Warn => {
                        let (x, min_eig) = floor_eigenvalues(&m);
                        repaired.push(Repaired { site, obs, min_eig });
                        row.push(x);
                    }
                },
                Err(e) => return Err(e),
            }
        }
        data.push(row);
    }
    Ok(TensorField { data, repaired })
}
