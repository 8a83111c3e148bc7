//! Dense CSV fixtures: a `rows,cols` header line followed by one line per row.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::Dense;

pub fn write_dense_csv<W: Write>(mut w: W, mat: &Dense) -> Result<()> {
    use super::LinearOperator;
    let (m, n) = (mat.rows(), mat.cols());
    writeln!(w, "{m},{n}")?;
    for row in mat.data().chunks_exact(n) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_dense_csv<R: BufRead>(r: R) -> Result<Dense> {
    let mut lines = r
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty fixture".into()))??;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("bad header {header:?}: {e}")))?;
    let [m, n] = dims[..] else {
        return Err(Error::Parse(format!("header must be rows,cols: {header:?}")));
    };
    let mut data = Vec::with_capacity(m * n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {i}: {e}")))?;
        if row.len() != n {
            return Err(Error::Parse(format!(
                "row {i} has {} values, expected {n}",
                row.len()
            )));
        }
        data.extend(row);
    }
    if data.len() != m * n {
        return Err(Error::Parse(format!(
            "expected {m} rows, found {}",
            data.len() / n.max(1)
        )));
    }
    Dense::new(m, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = Dense::from_rows(&[vec![1.0, -2.5e-17], vec![3.0, 0.1]]).unwrap();
        let mut buf = Vec::new();
        write_dense_csv(&mut buf, &a).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("2,2\n"));
        let b = read_dense_csv(&buf[..]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(read_dense_csv("2,2\n1,2\n3\n".as_bytes()).is_err());
        assert!(read_dense_csv("2,2\n1,2\n".as_bytes()).is_err());
        assert!(read_dense_csv("x,2\n".as_bytes()).is_err());
        assert!(read_dense_csv("".as_bytes()).is_err());
    }
}
