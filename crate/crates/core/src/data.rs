//! Desk-scale datasets. Samples are columns, matching [`crate::nn`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::random::gaussian_matrix;
use crate::linalg::{derive_seed, seeded_rng, Matrix};
use crate::nn::{Activation, Layer, LinearLayer, LossKind, Network, NetworkSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d_in × n`
    pub inputs: Matrix,
    /// `d_out × n`
    pub targets: Matrix,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.cols() != targets.cols() {
            return Err(Error::invalid(format!("{} input columns but {} target columns", inputs.cols(), targets.cols())));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset { inputs: self.inputs.select_columns(indices), targets: self.targets.select_columns(indices) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    /// Inputs `x ~ N(0, I)`, targets `teacher(x) + σ·ε`. The teacher is a
    /// dense network with the given dims, initialised from `teacher_seed`;
    /// when `shift_rank > 0` every teacher weight is moved by a random
    /// rank-`shift_rank` matrix of scale `shift_scale`, which makes the task
    /// a fine-tuning problem for a student initialised from the same seed.
    TeacherStudent {
        dims: Vec<usize>,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_activation")]
        activation: Activation,
        #[serde(default)]
        teacher_seed: Option<u64>,
        #[serde(default)]
        shift_rank: usize,
        #[serde(default)]
        shift_scale: f64,
    },
    /// Gaussian blobs with one-hot targets. Centres are drawn from
    /// `N(0, 4·I)`; samples are `centre + spread·N(0, I)`.
    Blobs { classes: usize, dim: usize, spread: f64 },
    /// Tabular data with a header row. All non-target columns are inputs.
    Csv { path: PathBuf, target_column: TargetColumn },
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        match &self.kind {
            DatasetKind::TeacherStudent { dims, noise_sigma, shift_scale, .. } => {
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(Error::invalid("teacher dims need at least two positive entries"));
                }
                if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return Err(Error::invalid("noise_sigma must be finite and >= 0"));
                }
                if !shift_scale.is_finite() {
                    return Err(Error::invalid("shift_scale must be finite"));
                }
            }
            DatasetKind::Blobs { classes, dim, spread } => {
                if *classes == 0 || *dim == 0 {
                    return Err(Error::invalid("blobs need classes >= 1 and dim >= 1"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(Error::invalid("spread must be finite and >= 0"));
                }
            }
            DatasetKind::Csv { .. } => {}
        }
        Ok(())
    }
}

/// The hidden network behind a teacher–student spec.
pub fn teacher(spec: &DatasetSpec) -> Result<Network> {
    spec.validate()?;
    let DatasetKind::TeacherStudent { dims, activation, teacher_seed, shift_rank, shift_scale, .. } = &spec.kind else {
        return Err(Error::invalid("only teacher_student datasets have a teacher"));
    };
    let net_spec = NetworkSpec {
        layer_dims: dims.clone(),
        activation: *activation,
        loss: LossKind::Mse,
        init_seed: teacher_seed.unwrap_or_else(|| derive_seed(spec.seed, 1)),
        bias: false,
    };
    let base = Network::new(net_spec.clone())?;
    if *shift_rank == 0 || *shift_scale == 0.0 {
        return Ok(base);
    }
    let mut rng = seeded_rng(derive_seed(spec.seed, 2));
    let layers = base
        .layers()
        .iter()
        .map(|layer| {
            let w = layer.effective_weight();
            let (d_out, d_in) = w.shape();
            let k = (*shift_rank).min(d_out.min(d_in));
            let u = gaussian_matrix(&mut rng, d_out, k, (1.0 / d_out as f64).sqrt());
            let v = gaussian_matrix(&mut rng, d_in, k, (1.0 / d_in as f64).sqrt());
            let mut shifted = w;
            shifted.axpy(*shift_scale, &u.matmul_t(&v)?)?;
            Ok(Layer::Dense(LinearLayer::new(shifted, None)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_layers(net_spec, layers)
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_samples;
    match &spec.kind {
        DatasetKind::TeacherStudent { dims, noise_sigma, .. } => {
            let net = teacher(spec)?;
            let mut rng = seeded_rng(derive_seed(spec.seed, 3));
            let x = gaussian_matrix(&mut rng, dims[0], n, 1.0);
            let mut y = net.predict(&x)?;
            if *noise_sigma > 0.0 {
                y.axpy(*noise_sigma, &gaussian_matrix(&mut rng, y.rows(), n, 1.0))?;
            }
            Dataset::new(x, y)
        }
        DatasetKind::Blobs { classes, dim, spread } => {
            let mut rng = seeded_rng(derive_seed(spec.seed, 4));
            let centres = gaussian_matrix(&mut rng, *dim, *classes, 2.0);
            let mut x = Matrix::zeros(*dim, n);
            let mut t = Matrix::zeros(*classes, n);
            for j in 0..n {
                let c = rng.random_range(0..*classes);
                t[(c, j)] = 1.0;
                for i in 0..*dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(i, j)] = centres[(i, c)] + spread * z;
                }
            }
            Dataset::new(x, t)
        }
        DatasetKind::Csv { path, target_column } => {
            let ds = load_csv_dataset(path, target_column)?;
            if ds.len() < n {
                return Err(Error::invalid(format!("{} has {} rows, n_samples asks for {n}", path.display(), ds.len())));
            }
            let idx: Vec<usize> = (0..n).collect();
            Ok(ds.select(&idx))
        }
    }
}

/// Seeded shuffle into two disjoint parts of sizes `round(f₀·n)` and the rest.
pub fn split(ds: &Dataset, fractions: [f64; 2], seed: u64) -> Result<(Dataset, Dataset)> {
    if fractions.iter().any(|f| f.is_nan() || *f < 0.0) || (fractions[0] + fractions[1] - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let n = ds.len();
    let first = (fractions[0] * n as f64).round() as usize;
    if first == 0 || first == n {
        return Err(Error::invalid(format!("split of {n} samples by {fractions:?} leaves a part empty")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    Ok((ds.select(&idx[..first]), ds.select(&idx[first..])))
}

/// Writes a header row (`x0,…,y0,…`) followed by one sample per line, with
/// shortest round-trip float formatting.
pub fn write_csv_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let mut header: Vec<String> = (0..ds.inputs.rows()).map(|i| format!("x{i}")).collect();
    header.extend((0..ds.targets.rows()).map(|i| format!("y{i}")));
    writeln!(w, "{}", header.join(","))?;
    for j in 0..ds.len() {
        let fields: Vec<String> =
            ds.inputs.column(j).iter().chain(ds.targets.column(j).iter()).map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn save_csv_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_csv_dataset(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    read_csv_dataset(BufReader::new(File::open(path)?), target)
}

/// Parses a headed CSV table; `target` selects the single target column.
pub fn read_csv_dataset<R: Read>(r: R, target: &TargetColumn) -> Result<Dataset> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or(Error::Parse { line: 1, message: "missing header row".into() })??;
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let tcol = match target {
        TargetColumn::Index(i) if *i < names.len() => *i,
        TargetColumn::Name(name) => {
            names.iter().position(|n| n == name).ok_or_else(|| Error::invalid(format!("target column {name:?} not in header")))?
        }
        TargetColumn::Index(i) => {
            return Err(Error::invalid(format!("target column {i} out of range ({} columns)", names.len())))
        }
    };
    if names.len() < 2 {
        return Err(Error::Parse { line: 1, message: "need at least one input and one target column".into() });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", names.len(), fields.len()),
            });
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| Error::Parse { line: line_no, message: format!("column {:?}: bad number {f:?}: {e}", names[c]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, message: format!("column {:?}: non-finite value", names[c]) });
            }
            if c == tcol {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    let d = names.len() - 1;
    // Rows were read sample-major; transpose into columns.
    let x = Matrix::from_vec(n, d, xs)?.transpose();
    Dataset::new(x, Matrix::from_vec(1, n, ys)?)
}
