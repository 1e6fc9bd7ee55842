//! Dataset loading, synthetic generators and preprocessing.
//!
//! Every preprocessing step is recorded as a [`Transform`] carrying its fitted
//! parameters, so the same chain can be replayed on new observations before
//! they are scored against a stored model.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

/// A fitted preprocessing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Column z-score. Columns listed in `constant_columns` had zero variance
    /// and are mapped to 0.
    Standardize {
        means: Vec<f64>,
        stds: Vec<f64>,
        constant_columns: Vec<usize>,
    },
    /// Projection onto the leading principal axes (`components` is k×d).
    Pca {
        means: Vec<f64>,
        components: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
    },
    /// Division by the mean row norm λ.
    Rescale { lambda: f64 },
}

impl Transform {
    /// Replays this step on a single raw row.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Standardize { means, stds, .. } => {
                check_dim(means.len(), row.len())?;
                Ok(row
                    .iter()
                    .zip(means.iter().zip(stds))
                    .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                    .collect())
            }
            Transform::Pca {
                means, components, ..
            } => {
                check_dim(means.len(), row.len())?;
                Ok(components
                    .iter()
                    .map(|c| {
                        c.iter()
                            .zip(row.iter().zip(means))
                            .map(|(w, (v, m))| w * (v - m))
                            .sum()
                    })
                    .collect())
            }
            Transform::Rescale { lambda } => Ok(row.iter().map(|v| v / lambda).collect()),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Transform::Pca { components, .. } => components.len(),
            _ => input_dim,
        }
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Replays a transform chain on every row of `x`.
pub fn apply_transforms(transforms: &[Transform], x: &Matrix) -> Result<Matrix> {
    let mut rows = x.to_rows();
    for t in transforms {
        rows = rows
            .iter()
            .map(|r| t.apply_row(r))
            .collect::<Result<Vec<_>>>()?;
    }
    if rows.is_empty() {
        let d = transforms
            .iter()
            .fold(x.ncols(), |d, t| t.output_dim(d));
        return Ok(Matrix::zeros(0, d));
    }
    Matrix::from_rows(&rows)
}

/// Observation matrix with optional ground truth and preprocessing provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub feature_names: Vec<String>,
    /// Primary ground-truth labelling, one entry per row.
    pub labels: Option<Vec<String>>,
    /// Further labelling columns (name, values), e.g. a coarser class hierarchy.
    pub extra_labels: Vec<(String, Vec<String>)>,
    pub lambda_scale: f64,
    pub preprocessing_log: Vec<Transform>,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("dataset needs n >= 1 and d >= 1".into()));
        }
        if !x.is_finite() {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(Error::LengthMismatch {
                    left: l.len(),
                    right: x.nrows(),
                });
            }
        }
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            x,
            feature_names,
            labels,
            extra_labels: Vec::new(),
            lambda_scale: 1.0,
            preprocessing_log: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Integer codes of the primary labels, in order of first appearance.
    pub fn label_codes(&self) -> Option<Vec<usize>> {
        self.labels.as_deref().map(encode_labels)
    }

    /// Integer codes for a named label column (primary or extra).
    pub fn label_codes_for(&self, name: &str) -> Option<Vec<usize>> {
        self.extra_labels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| encode_labels(v))
    }

    fn with_x(&self, x: Matrix, transform: Transform) -> Self {
        let mut out = self.clone();
        if x.ncols() != self.d() {
            out.feature_names = (0..x.ncols()).map(|j| format!("pc{}", j + 1)).collect();
        }
        out.x = x;
        out.preprocessing_log.push(transform);
        out
    }
}

/// Maps arbitrary string labels to contiguous codes by first appearance.
pub fn encode_labels(labels: &[String]) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l.as_str()) {
            Some(p) => p,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

/// Relabels integer ids to contiguous codes by first appearance.
pub fn encode_ids(ids: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    ids.iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Loads a headed CSV. Every column other than `label_column` must be numeric.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let labels: Vec<&str> = label_column.into_iter().collect();
    load_csv_with_labels(path, &labels)
}

/// Loads a headed CSV where several columns hold labels; the first listed
/// becomes [`Dataset::labels`], all of them are kept in `extra_labels`.
pub fn load_csv_with_labels(path: impl AsRef<Path>, label_columns: &[&str]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_with_labels(file, path, label_columns)
}

/// CSV parsing behind [`load_csv_with_labels`]; `path` only labels errors.
pub fn read_csv_with_labels<R: std::io::Read>(
    input: R,
    path: &Path,
    label_columns: &[&str],
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut label_idx = Vec::with_capacity(label_columns.len());
    for name in label_columns {
        match headers.iter().position(|h| h == name) {
            Some(i) => label_idx.push(i),
            None => {
                return Err(Error::MissingLabelColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
            }
        }
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !label_idx.contains(i))
        .collect();

    let mut data = Vec::new();
    let mut label_values: Vec<Vec<String>> = vec![Vec::new(); label_idx.len()];
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::ParseCell {
                    path: path.to_path_buf(),
                    row: row + 1,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                })?;
            data.push(v);
        }
        for (slot, &j) in label_values.iter_mut().zip(&label_idx) {
            slot.push(record.get(j).unwrap_or("").trim().to_string());
        }
        n += 1;
    }
    let x = Matrix::from_vec(n, feature_idx.len(), data)?;
    let mut ds = Dataset::new(x, label_values.first().cloned())?;
    ds.feature_names = feature_idx.iter().map(|&j| headers[j].clone()).collect();
    ds.extra_labels = label_columns
        .iter()
        .map(|s| s.to_string())
        .zip(label_values)
        .collect();
    Ok(ds)
}

const CRABS_CSV: &str = include_str!("../data/crabs.csv");
const OLIVE_CSV: &str = include_str!("../data/olive.csv");

/// Names accepted by [`load_builtin`].
pub const BUILTIN_DATASETS: [&str; 2] = ["crabs", "olive"];

/// Bundled real datasets. `crabs`: 200×5 morphology, labels `group` (4
/// species/sex groups, primary), `sp`, `sex`. `olive`: 572×8 fatty acids,
/// labels `area` (9, primary) and `region` (3).
pub fn load_builtin(name: &str) -> Result<Dataset> {
    let (text, labels): (&str, &[&str]) = match name {
        "crabs" => (CRABS_CSV, &["group", "sp", "sex"]),
        "olive" => (OLIVE_CSV, &["area", "region"]),
        other => {
            return Err(Error::Config(format!(
                "unknown built-in dataset '{other}' (expected crabs or olive)"
            )))
        }
    };
    read_csv_with_labels(text.as_bytes(), Path::new(name), labels)
}

/// Shortest round-trip text for CSV output: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the dataset (features plus a `label` column when labelled).
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<output>".into(),
        message: e.to_string(),
    };
    let mut header = ds.feature_names.clone();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[i].clone());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut means = vec![0.0; d];
    for r in x.rows_iter() {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.rows_iter() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (n - 1.0).max(1.0);
    let stds = var.iter().map(|s| (s / denom).sqrt()).collect();
    (means, stds)
}

/// Column-wise z-score with the n−1 sample standard deviation.
pub fn standardize(ds: &Dataset) -> Dataset {
    let (means, mut stds) = column_stats(&ds.x);
    let mut constant_columns = Vec::new();
    for (j, s) in stds.iter_mut().enumerate() {
        // relative tolerance so columns that are constant up to rounding count as constant
        let scale = means[j].abs().max(1.0);
        if !(*s > 1e-12 * scale) {
            *s = 0.0;
            constant_columns.push(j);
        }
    }
    let t = Transform::Standardize {
        means,
        stds,
        constant_columns,
    };
    let x = apply_transforms(std::slice::from_ref(&t), &ds.x).expect("same dimension");
    ds.with_x(x, t)
}

/// Divides every row by λ = mean L2 row norm; λ is stored in `lambda_scale`.
pub fn rescale_mean_norm(ds: &Dataset) -> Result<Dataset> {
    let lambda = ds.x.rows_iter().map(norm).sum::<f64>() / ds.n() as f64;
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(
            "all rows have zero norm; rescale factor undefined".into(),
        ));
    }
    let t = Transform::Rescale { lambda };
    let x = apply_transforms(std::slice::from_ref(&t), &ds.x)?;
    let mut out = ds.with_x(x, t);
    out.lambda_scale = ds.lambda_scale * lambda;
    Ok(out)
}

/// Projects onto the top `n_components` eigenvectors of the sample covariance.
/// Each axis is oriented so its largest-magnitude loading is positive.
pub fn pca_project(ds: &Dataset, n_components: usize) -> Result<Dataset> {
    pca_project_range(ds, 0, n_components)
}

/// Like [`pca_project`], but drops the `skip` leading components first, so
/// `skip = 1, n_components = 2` keeps the second and third.
pub fn pca_project_range(ds: &Dataset, skip: usize, n_components: usize) -> Result<Dataset> {
    let d = ds.d();
    if n_components == 0 || skip + n_components > d {
        return Err(Error::InvalidInput(format!(
            "components {}..{} out of range for dimension {d}",
            skip + 1,
            skip + n_components
        )));
    }
    let (means, _) = column_stats(&ds.x);
    let denom = (ds.n() as f64 - 1.0).max(1.0);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in ds.x.rows_iter() {
        for a in 0..d {
            let da = r[a] - means[a];
            for b in a..d {
                cov[(a, b)] += da * (r[b] - means[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for &k in order.iter().skip(skip).take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[k]);
    }
    let t = Transform::Pca {
        means,
        components,
        eigenvalues,
    };
    let x = apply_transforms(std::slice::from_ref(&t), &ds.x)?;
    Ok(ds.with_x(x, t))
}

fn gaussian_blob(
    rng: &mut ChaCha8Rng,
    n: usize,
    center: [f64; 2],
    stds: [f64; 2],
    angle: f64,
    out: &mut Vec<f64>,
) {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let (s, c) = angle.sin_cos();
    for _ in 0..n {
        let u = unit.sample(rng) * stds[0];
        let v = unit.sample(rng) * stds[1];
        out.push(center[0] + c * u - s * v);
        out.push(center[1] + s * u + c * v);
    }
}

/// Geometry of the local-densities generator.
pub mod local_densities {
    /// Points per cluster.
    pub const CLUSTER_SIZE: usize = 100;
    /// (center, axis stds, rotation) of the two elongated clusters; axis ratio 8:1.
    pub const CIGARS: [([f64; 2], [f64; 2], f64); 2] = [
        ([-3.0, 1.6], [1.2, 0.15], 0.35),
        ([3.0, 1.6], [1.2, 0.15], -0.35),
    ];
    /// Center of the broad sparse cluster.
    pub const SPARSE_CENTER: [f64; 2] = [0.0, -1.6];
    /// Center of the compact dense cluster, inside the sparse one but off its
    /// center so the two only partially overlap.
    pub const DENSE_CENTER: [f64; 2] = [0.7, -1.6];
    pub const SPARSE_STD: f64 = 0.9;
    pub const DENSE_STD: f64 = 0.15;
}

/// Four 2-D clusters of 100 points: two rotated cigars, a broad sparse
/// Gaussian and a compact dense Gaussian nested inside it.
pub fn gen_local_densities(seed: u64) -> Dataset {
    use local_densities::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(8 * CLUSTER_SIZE);
    let mut labels = Vec::with_capacity(4 * CLUSTER_SIZE);
    for (k, (center, stds, angle)) in CIGARS.iter().enumerate() {
        gaussian_blob(&mut rng, CLUSTER_SIZE, *center, *stds, *angle, &mut data);
        labels.extend(std::iter::repeat_n(format!("cigar{}", k + 1), CLUSTER_SIZE));
    }
    gaussian_blob(
        &mut rng,
        CLUSTER_SIZE,
        SPARSE_CENTER,
        [SPARSE_STD; 2],
        0.0,
        &mut data,
    );
    labels.extend(std::iter::repeat_n("sparse".to_string(), CLUSTER_SIZE));
    gaussian_blob(
        &mut rng,
        CLUSTER_SIZE,
        DENSE_CENTER,
        [DENSE_STD; 2],
        0.0,
        &mut data,
    );
    labels.extend(std::iter::repeat_n("dense".to_string(), CLUSTER_SIZE));
    let x = Matrix::from_vec(4 * CLUSTER_SIZE, 2, data).expect("sized");
    Dataset::new(x, Some(labels)).expect("finite")
}

/// Geometry of the two-spirals generator.
pub mod two_spirals {
    pub const ARM_SIZE: usize = 200;
    /// Radial noise std of each arm.
    pub const NOISE: [f64; 2] = [0.1, 0.025];
    /// Angle range of the ideal curve; 1.5 turns.
    pub const THETA_START: f64 = std::f64::consts::PI / 2.0;
    pub const THETA_END: f64 = THETA_START + 3.0 * std::f64::consts::PI;

    /// Ideal radius at angle `theta` (Archimedean: r = θ).
    pub fn radius(theta: f64) -> f64 {
        theta
    }
}

/// Two interleaved Archimedean spirals of 200 points each; the second is
/// rotated by π. Points are spread uniformly in arc length and perturbed
/// radially with the arm's noise std.
pub fn gen_two_spirals(seed: u64) -> Dataset {
    use two_spirals::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0);
    let mut data = Vec::with_capacity(4 * ARM_SIZE);
    let mut labels = Vec::with_capacity(2 * ARM_SIZE);
    let (a2, b2) = (THETA_START * THETA_START, THETA_END * THETA_END);
    for (arm, noise) in NOISE.iter().enumerate() {
        let radial = Normal::new(0.0, *noise).expect("valid normal");
        let rotation = arm as f64 * PI;
        for _ in 0..ARM_SIZE {
            // arc length of r ∝ θ grows like θ², so sample θ² uniformly
            let theta = (a2 + u.sample(&mut rng) * (b2 - a2)).sqrt();
            let r = radius(theta) + radial.sample(&mut rng);
            let phi = theta + rotation;
            data.push(r * phi.cos());
            data.push(r * phi.sin());
        }
        labels.extend(std::iter::repeat_n(format!("spiral{}", arm + 1), ARM_SIZE));
    }
    let x = Matrix::from_vec(2 * ARM_SIZE, 2, data).expect("sized");
    Dataset::new(x, Some(labels)).expect("finite")
}
