//! Reference computations shared by the integration tests. They go through
//! nalgebra and plain loops rather than the crate's own linear algebra.

#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use lorga::Matrix;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Matrix::from_vec(r, c, data).unwrap()
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `dim × count` matrix with orthonormal columns, via QR of a Gaussian draw.
pub fn orthonormal<R: Rng>(rng: &mut R, dim: usize, count: usize) -> DMatrix<f64> {
    let q = gaussian(rng, dim, count).qr().q();
    q.columns(0, count).into_owned()
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// `‖η² G AᵀA + η² B Bᵀ G − ζ G‖_F`
pub fn criterion(g: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, eta: f64, zeta: f64) -> f64 {
    let e2 = eta * eta;
    (g * a.transpose() * a * e2 + b * (b.transpose() * g) * e2 - g * zeta).norm()
}

/// `max |a − b| / max(|a|, |b|)` over all entries.
pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// Writes straight to the process stdout, bypassing the test harness's
/// output capture, so verdict lines show up in every run.
pub fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn verdict(id: u32, name: &str, passed: bool, detail: &str) {
    report(&format!("{} criterion {id:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" }));
}

/// Every regular file below `dir`, as sorted paths relative to it.
pub fn files_below(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Parses a CSV with a header row into named numeric columns.
pub fn read_numeric_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}
