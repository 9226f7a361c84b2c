//! Matrix Market coordinate I/O (real, general or symmetric).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{DenseSym, LinsolveError, SparseSym};

fn err(msg: impl Into<String>) -> LinsolveError {
    LinsolveError::MatrixMarket(msg.into())
}

/// Writes the lower triangle of `m` as a symmetric coordinate file.
pub fn write_sparse_sym<W: Write>(m: &SparseSym, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.n, m.n, m.nnz())?;
    for (r, c, v) in m.iter() {
        writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

/// Writes the lower triangle of a dense symmetric matrix (explicit zeros skipped,
/// diagonal always written).
pub fn write_dense_sym<W: Write>(m: &DenseSym, out: &mut W) -> std::io::Result<()> {
    let mut body = String::new();
    let mut nnz = 0;
    for j in 0..m.n {
        for i in j..m.n {
            let v = m.get(i, j);
            if v != 0.0 || i == j {
                nnz += 1;
                let _ = writeln!(body, "{} {} {:.17e}", i + 1, j + 1, v);
            }
        }
    }
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.n, m.n, nnz)?;
    out.write_all(body.as_bytes())
}

/// Reads a square coordinate file into lower-triangle storage. `general`
/// files must be symmetric; their upper entries are checked then dropped.
pub fn read_sparse_sym<R: BufRead>(input: R) -> Result<SparseSym, LinsolveError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| err("empty input"))?.map_err(|e| err(e.to_string()))?;
    let h: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(err(format!("unsupported header: {header}")));
    }
    if h[3] != "real" && h[3] != "integer" {
        return Err(err(format!("unsupported field {}", h[3])));
    }
    let symmetric = match h[4].as_str() {
        "symmetric" => true,
        "general" => false,
        s => return Err(err(format!("unsupported symmetry {s}"))),
    };
    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut upper = Vec::new();
    for line in lines {
        let line = line.map_err(|e| err(e.to_string()))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        if size.is_none() {
            if f.len() != 3 {
                return Err(err(format!("bad size line: {t}")));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad size line: {t}")));
            let (r, c, nz) = (p(f[0])?, p(f[1])?, p(f[2])?);
            if r != c {
                return Err(err("matrix is not square"));
            }
            size = Some((r, c, nz));
            continue;
        }
        if f.len() != 3 {
            return Err(err(format!("bad entry line: {t}")));
        }
        let n = size.unwrap().0;
        let i: usize = f[0].parse().map_err(|_| err(format!("bad row index: {t}")))?;
        let j: usize = f[1].parse().map_err(|_| err(format!("bad column index: {t}")))?;
        let v: f64 = f[2].parse().map_err(|_| err(format!("bad value: {t}")))?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(err(format!("index out of range: {t}")));
        }
        let (i, j) = (i - 1, j - 1);
        if symmetric || i >= j {
            if symmetric && i < j {
                return Err(err(format!("symmetric file has upper-triangle entry: {t}")));
            }
            entries.push((i, j, v));
        } else {
            upper.push((j, i, v));
        }
    }
    let (n, _, nz) = size.ok_or_else(|| err("missing size line"))?;
    if entries.len() + upper.len() != nz {
        return Err(err(format!("expected {nz} entries, found {}", entries.len() + upper.len())));
    }
    let m = SparseSym::from_triplets(n, &entries);
    if !symmetric {
        let mirror = SparseSym::from_triplets(n, &upper);
        let d = m.to_dense();
        let u = mirror.to_dense();
        for i in 0..n {
            for j in 0..i {
                if d[i][j] != u[i][j] {
                    return Err(err(format!("general matrix is not symmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = SparseSym::from_triplets(3, &[(0, 0, 1.5), (2, 0, -2.0), (1, 1, 1e-300), (2, 2, 3.0)]);
        let mut buf = Vec::new();
        write_sparse_sym(&m, &mut buf).unwrap();
        let back = read_sparse_sym(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn general_must_be_symmetric() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 1.0\n2 1 2.0\n";
        assert!(read_sparse_sym(text.as_bytes()).is_err());
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 2 1.0\n2 1 1.0\n1 1 4\n";
        let m = read_sparse_sym(text.as_bytes()).unwrap();
        assert_eq!(m.to_dense(), vec![vec![4.0, 1.0], vec![1.0, 0.0]]);
    }
}
