//! Matrix persistence.
//!
//! `LGA1` binary layout: the 4-byte magic `LGA1`, `rows` and `cols` as
//! little-endian `u64`, then `rows × cols` little-endian IEEE-754 doubles in
//! row-major order. The CSV form starts with a `rows,cols` line followed by
//! one matrix row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const LGA1_MAGIC: &[u8; 4] = b"LGA1";

pub fn write_lga1<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    w.write_all(LGA1_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lga1<R: Read>(mut r: R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LGA1_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word);
    let len = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Format(format!("dimensions {rows}x{cols} overflow")))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after matrix payload".into()));
    }
    Matrix::from_vec(rows as usize, cols as usize, data)
}

pub fn save_lga1(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lga1(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_lga1(path: impl AsRef<Path>) -> Result<Matrix> {
    read_lga1(BufReader::new(File::open(path)?))
}

/// Values are printed with Rust's shortest round-trip formatting, so a
/// write/read cycle is bit-exact for finite entries.
pub fn write_csv<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    writeln!(w, "{},{}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or(Error::Parse { line: 1, message: "missing rows,cols header".into() })??;
    let dims: Vec<&str> = header.trim().split(',').collect();
    let parse_dim =
        |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Parse { line: 1, message: format!("bad dimension {s:?}: {e}") });
    if dims.len() != 2 {
        return Err(Error::Parse { line: 1, message: format!("expected `rows,cols`, got {header:?}") });
    }
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line_no = i + 2;
        let line = lines.next().ok_or(Error::Parse { line: line_no, message: "unexpected end of file".into() })??;
        let before = data.len();
        for field in line.trim().split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::Parse { line: line_no, message: format!("bad number {field:?}: {e}") })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse { line: line_no, message: format!("expected {cols} values, got {}", data.len() - before) });
        }
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn save_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    read_csv(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lga1_layout_is_bit_exact() {
        let m = Matrix::from_rows(&[vec![1.0, -2.5], vec![0.0, 3.25]]).unwrap();
        let mut buf = Vec::new();
        write_lga1(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LGA1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), -2.5);
        assert_eq!(buf.len(), 4 + 16 + 32);
    }

    #[test]
    fn lga1_rejects_bad_magic_and_truncation() {
        assert!(matches!(read_lga1(&b"LGA0\0\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
        let m = Matrix::identity(2);
        let mut buf = Vec::new();
        write_lga1(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_lga1(&buf[..]).is_err());
    }

    #[test]
    fn csv_reports_line_of_bad_row() {
        let text = "2,2\n1,2\n3,x\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(rows in 1usize..6, cols in 1usize..6,
                                   seed in prop::collection::vec(-1e300f64..1e300, 36)) {
            let data: Vec<f64> = seed.into_iter().take(rows * cols).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let mut bin = Vec::new();
            write_lga1(&m, &mut bin).unwrap();
            prop_assert_eq!(read_lga1(&bin[..]).unwrap(), m.clone());
            let mut text = Vec::new();
            write_csv(&m, &mut text).unwrap();
            prop_assert_eq!(read_csv(&text[..]).unwrap(), m);
        }
    }
}
