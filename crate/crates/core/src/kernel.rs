//! Per-observation Gaussian components and the wave function they sum to.
//!
//! Three variants are supported:
//!
//! * [`KernelVariant::GlobalSigma`]: one isotropic width for every component,
//!   unnormalized (the normalizer cancels in the potential).
//! * [`KernelVariant::PerPointSigma`]: isotropic, width σ_i = mean distance to
//!   the K nearest neighbours of observation i, normalized.
//! * [`KernelVariant::PerPointCovariance`]: full local covariance of the K
//!   nearest neighbours about the observation, eigenvalues floored at σ²_k'nn,i / d,
//!   normalized.
//!
//! All density arithmetic is carried out in log space.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dist, Matrix};

/// Log of the standard normalizer (2π)^(d/2).
pub(crate) fn half_log_2pi(d: usize) -> f64 {
    0.5 * d as f64 * (2.0 * PI).ln()
}

/// Numerically stable log Σ exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    GlobalSigma,
    PerPointSigma,
    PerPointCovariance,
}

impl KernelVariant {
    pub fn is_normalized(self) -> bool {
        !matches!(self, KernelVariant::GlobalSigma)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            KernelVariant::GlobalSigma => "global",
            KernelVariant::PerPointSigma => "knn",
            KernelVariant::PerPointCovariance => "cov",
        }
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" | "global_sigma" => Ok(KernelVariant::GlobalSigma),
            "knn" | "per_point_sigma" => Ok(KernelVariant::PerPointSigma),
            "cov" | "per_point_covariance" => Ok(KernelVariant::PerPointCovariance),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected global, knn or cov)"
            ))),
        }
    }
}

/// Neighbour count for a percentage of the sample: K = round(p·n/100).
pub fn neighbour_count(knn_percent: f64, n: usize) -> usize {
    (knn_percent * n as f64 / 100.0).round().max(0.0) as usize
}

fn check_k(k: usize, n: usize, min: usize) -> Result<()> {
    if k < min || k + 1 > n {
        return Err(Error::InvalidNeighbourCount { k, n, min });
    }
    Ok(())
}

/// Every observation's other rows sorted by (distance, row index).
///
/// Built once per dataset and reused for any neighbour count.
#[derive(Debug, Clone)]
pub struct NeighbourTable {
    n: usize,
    /// Row i holds n−1 (distance, index) pairs.
    entries: Vec<(f64, usize)>,
}

impl NeighbourTable {
    pub fn new(x: &Matrix) -> Self {
        let n = x.nrows();
        let mut entries = Vec::with_capacity(n * n.saturating_sub(1));
        for i in 0..n {
            let start = entries.len();
            for j in (0..n).filter(|&j| j != i) {
                entries.push((dist(x.row(i), x.row(j)), j));
            }
            entries[start..].sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Self { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The `k` nearest neighbours of row `i`, self excluded.
    pub fn nearest(&self, i: usize, k: usize) -> &[(f64, usize)] {
        let w = self.n - 1;
        &self.entries[i * w..i * w + k]
    }

    /// σ_i = mean distance to the K nearest neighbours, for every row.
    pub fn mean_distances(&self, k: usize) -> Result<Vec<f64>> {
        check_k(k, self.n, 1)?;
        Ok((0..self.n)
            .map(|i| self.nearest(i, k).iter().map(|e| e.0).sum::<f64>() / k as f64)
            .collect())
    }
}

/// Mean over observations of the mean K-NN distance: a single global length scale.
pub fn sigma_global_quantile(x: &Matrix, knn_percent: f64) -> Result<f64> {
    let table = NeighbourTable::new(x);
    let k = neighbour_count(knn_percent, x.nrows());
    let s = table.mean_distances(k)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Per-observation length scales σ_i. Zero scales (duplicated points) are an error.
pub fn sigma_per_point(x: &Matrix, knn_percent: f64) -> Result<Vec<f64>> {
    let table = NeighbourTable::new(x);
    sigma_per_point_with(&table, neighbour_count(knn_percent, x.nrows()))
}

pub(crate) fn sigma_per_point_with(table: &NeighbourTable, k: usize) -> Result<Vec<f64>> {
    let s = table.mean_distances(k)?;
    let bad: Vec<usize> = s
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > 0.0))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::DegenerateKernel { rows: bad });
    }
    Ok(s)
}

/// Scatter of the K nearest neighbours about each observation itself,
/// divided by K−1. Each matrix is d×d, row-major.
pub fn local_covariance(x: &Matrix, knn_percent: f64) -> Result<Vec<Vec<f64>>> {
    let table = NeighbourTable::new(x);
    local_covariance_with(x, &table, neighbour_count(knn_percent, x.nrows()))
}

pub(crate) fn local_covariance_with(
    x: &Matrix,
    table: &NeighbourTable,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    check_k(k, x.nrows(), 2)?;
    let d = x.ncols();
    let mut out = Vec::with_capacity(x.nrows());
    let mut diff = vec![0.0; d];
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let mut c = vec![0.0; d * d];
        for &(_, j) in table.nearest(i, k) {
            for (t, (a, b)) in diff.iter_mut().zip(x.row(j).iter().zip(xi)) {
                *t = a - b;
            }
            for a in 0..d {
                for b in a..d {
                    c[a * d + b] += diff[a] * diff[b];
                }
            }
        }
        let denom = (k - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = c[a * d + b] / denom;
                c[a * d + b] = v;
                c[b * d + a] = v;
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Floors the eigenvalues of every Σ_i at σ²_k'nn,i / d with K' = round(r·K).
pub fn threshold_covariance(
    covariances: &[Vec<f64>],
    x: &Matrix,
    knn_percent: f64,
    threshold_ratio: f64,
) -> Result<Vec<LocalCovariance>> {
    let table = NeighbourTable::new(x);
    let k = neighbour_count(knn_percent, x.nrows());
    let floors = covariance_floors(&table, k, threshold_ratio, x.ncols())?;
    covariances
        .iter()
        .zip(&floors)
        .map(|(c, f)| LocalCovariance::thresholded(c, x.ncols(), *f))
        .collect()
}

/// σ²_th,i for every row.
pub(crate) fn covariance_floors(
    table: &NeighbourTable,
    k: usize,
    threshold_ratio: f64,
    d: usize,
) -> Result<Vec<f64>> {
    if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold ratio must lie in (0, 1], got {threshold_ratio}"
        )));
    }
    let k_prime = (threshold_ratio * k as f64).round() as usize;
    let s = sigma_per_point_with(table, k_prime)?;
    Ok(s.iter().map(|v| v * v / d as f64).collect())
}

/// A symmetric positive-definite local covariance with its cached eigen
/// decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovarianceDoc", into = "CovarianceDoc")]
pub struct LocalCovariance {
    d: usize,
    /// Reconstructed matrix, row-major.
    matrix: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Eigenvectors stored as rows: `eigenvectors[k*d..(k+1)*d]` is the k-th axis.
    eigenvectors: Vec<f64>,
    log_det_2pi: f64,
    trace: f64,
    inv_trace: f64,
    floor: f64,
}

#[derive(Serialize, Deserialize)]
struct CovarianceDoc {
    d: usize,
    matrix: Vec<f64>,
    floor: f64,
}

impl TryFrom<CovarianceDoc> for LocalCovariance {
    type Error = Error;

    fn try_from(doc: CovarianceDoc) -> Result<Self> {
        LocalCovariance::thresholded(&doc.matrix, doc.d, doc.floor)
    }
}

impl From<LocalCovariance> for CovarianceDoc {
    fn from(c: LocalCovariance) -> Self {
        CovarianceDoc {
            d: c.d,
            matrix: c.matrix,
            floor: c.floor,
        }
    }
}

impl LocalCovariance {
    /// Eigen-decomposes `matrix` (d×d row-major, symmetrized first), clamps
    /// every eigenvalue to at least `floor` and rebuilds the matrix in the
    /// same eigenbasis.
    pub fn thresholded(matrix: &[f64], d: usize, floor: f64) -> Result<Self> {
        if matrix.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                actual: matrix.len(),
            });
        }
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::InvalidInput(format!(
                "covariance eigenvalue floor must be positive, got {floor}"
            )));
        }
        let m = DMatrix::from_fn(d, d, |a, b| 0.5 * (matrix[a * d + b] + matrix[b * d + a]));
        let eig = SymmetricEigen::new(m);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
        let mut eigenvectors = vec![0.0; d * d];
        for k in 0..d {
            for a in 0..d {
                eigenvectors[k * d + a] = eig.eigenvectors[(a, k)];
            }
        }
        let mut rebuilt = vec![0.0; d * d];
        for k in 0..d {
            let v = &eigenvectors[k * d..(k + 1) * d];
            for a in 0..d {
                for b in 0..d {
                    rebuilt[a * d + b] += eigenvalues[k] * v[a] * v[b];
                }
            }
        }
        for a in 0..d {
            for b in a + 1..d {
                let s = 0.5 * (rebuilt[a * d + b] + rebuilt[b * d + a]);
                rebuilt[a * d + b] = s;
                rebuilt[b * d + a] = s;
            }
        }
        let log_det: f64 = eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Self {
            d,
            matrix: rebuilt,
            log_det_2pi: log_det + d as f64 * (2.0 * PI).ln(),
            trace: eigenvalues.iter().sum(),
            inv_trace: eigenvalues.iter().map(|l| 1.0 / l).sum(),
            eigenvalues,
            eigenvectors,
            floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row k is the k-th eigenvector.
    pub fn eigenvectors(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// tr(Σ).
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// tr(Σ⁻¹).
    pub fn inv_trace(&self) -> f64 {
        self.inv_trace
    }

    /// log |2πΣ|.
    pub fn log_det_2pi(&self) -> f64 {
        self.log_det_2pi
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    /// Coordinates of `r` in the eigenbasis.
    #[inline]
    pub(crate) fn rotate(&self, r: &[f64], out: &mut [f64]) {
        let d = self.d;
        for (k, o) in out.iter_mut().enumerate() {
            let v = &self.eigenvectors[k * d..(k + 1) * d];
            *o = v.iter().zip(r).map(|(a, b)| a * b).sum();
        }
    }

    /// Maps eigenbasis coordinates back: out += Σ_k c_k v_k.
    #[inline]
    pub(crate) fn unrotate_add(&self, coeffs: &[f64], out: &mut [f64]) {
        let d = self.d;
        for (k, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let v = &self.eigenvectors[k * d..(k + 1) * d];
            for (o, a) in out.iter_mut().zip(v) {
                *o += c * a;
            }
        }
    }
}

/// Per-observation Gaussian components defining Ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub variant: KernelVariant,
    pub centers: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_sigma: Option<f64>,
    /// Per-point σ_i (PerPointSigma), or the threshold scales σ_k'nn,i (PerPointCovariance).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigmas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariances: Vec<LocalCovariance>,
    pub knn_percent: f64,
    pub threshold_ratio: f64,
}

/// Default ratio K'/K for the covariance eigenvalue floor.
pub const DEFAULT_THRESHOLD_RATIO: f64 = 1.0;

impl KernelModel {
    /// Builds a model of the requested variant from observations.
    pub fn fit(
        variant: KernelVariant,
        x: &Matrix,
        knn_percent: f64,
        threshold_ratio: f64,
    ) -> Result<Self> {
        let table = NeighbourTable::new(x);
        Self::fit_with_table(variant, x, &table, knn_percent, threshold_ratio)
    }

    pub fn fit_with_table(
        variant: KernelVariant,
        x: &Matrix,
        table: &NeighbourTable,
        knn_percent: f64,
        threshold_ratio: f64,
    ) -> Result<Self> {
        let k = neighbour_count(knn_percent, x.nrows());
        match variant {
            KernelVariant::GlobalSigma => {
                let s = table.mean_distances(k)?;
                let sigma = s.iter().sum::<f64>() / s.len() as f64;
                let mut m = Self::with_global_sigma(x.clone(), sigma)?;
                m.knn_percent = knn_percent;
                Ok(m)
            }
            KernelVariant::PerPointSigma => {
                let sigmas = sigma_per_point_with(table, k)?;
                let mut m = Self::with_sigmas(x.clone(), sigmas)?;
                m.knn_percent = knn_percent;
                Ok(m)
            }
            KernelVariant::PerPointCovariance => {
                let raw = local_covariance_with(x, table, k)?;
                let d = x.ncols();
                let floors = covariance_floors(table, k, threshold_ratio, d)?;
                let covariances = raw
                    .iter()
                    .zip(&floors)
                    .map(|(c, f)| LocalCovariance::thresholded(c, d, *f))
                    .collect::<Result<Vec<_>>>()?;
                let sigmas = floors.iter().map(|f| (f * d as f64).sqrt()).collect();
                Ok(Self {
                    variant,
                    centers: x.clone(),
                    global_sigma: None,
                    sigmas,
                    covariances,
                    knn_percent,
                    threshold_ratio,
                })
            }
        }
    }

    pub fn with_global_sigma(centers: Matrix, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::DegenerateKernel {
                rows: (0..centers.nrows()).collect(),
            });
        }
        Ok(Self {
            variant: KernelVariant::GlobalSigma,
            centers,
            global_sigma: Some(sigma),
            sigmas: Vec::new(),
            covariances: Vec::new(),
            knn_percent: f64::NAN,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
        })
    }

    pub fn with_sigmas(centers: Matrix, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != centers.nrows() {
            return Err(Error::LengthMismatch {
                left: sigmas.len(),
                right: centers.nrows(),
            });
        }
        let bad: Vec<usize> = (0..sigmas.len())
            .filter(|&i| !(sigmas[i] > 0.0 && sigmas[i].is_finite()))
            .collect();
        if !bad.is_empty() {
            return Err(Error::DegenerateKernel { rows: bad });
        }
        Ok(Self {
            variant: KernelVariant::PerPointSigma,
            centers,
            global_sigma: None,
            sigmas,
            covariances: Vec::new(),
            knn_percent: f64::NAN,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
        })
    }

    pub fn with_covariances(centers: Matrix, covariances: Vec<LocalCovariance>) -> Result<Self> {
        if covariances.len() != centers.nrows() {
            return Err(Error::LengthMismatch {
                left: covariances.len(),
                right: centers.nrows(),
            });
        }
        if let Some(c) = covariances.iter().find(|c| c.dim() != centers.ncols()) {
            return Err(Error::DimensionMismatch {
                expected: centers.ncols(),
                actual: c.dim(),
            });
        }
        let sigmas = covariances
            .iter()
            .map(|c| (c.floor() * c.dim() as f64).sqrt())
            .collect();
        Ok(Self {
            variant: KernelVariant::PerPointCovariance,
            centers,
            global_sigma: None,
            sigmas,
            covariances,
            knn_percent: f64::NAN,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
        })
    }

    pub fn n(&self) -> usize {
        self.centers.nrows()
    }

    pub fn d(&self) -> usize {
        self.centers.ncols()
    }

    /// σ of component `i` for the isotropic variants.
    #[inline]
    pub(crate) fn iso_sigma(&self, i: usize) -> f64 {
        match self.global_sigma {
            Some(s) => s,
            None => self.sigmas[i],
        }
    }

    /// log ψ_i(x). The global variant is unnormalized (peak value 1).
    pub fn component_log_density(&self, i: usize, x: &[f64]) -> Result<f64> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        self.check_point(x)?;
        Ok(self.log_component_unchecked(i, x))
    }

    pub(crate) fn log_component_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        let c = self.centers.row(i);
        let d = self.d();
        match self.variant {
            KernelVariant::GlobalSigma => {
                let s = self.iso_sigma(i);
                -crate::matrix::sq_dist(x, c) / (2.0 * s * s)
            }
            KernelVariant::PerPointSigma => {
                let s = self.sigmas[i];
                -crate::matrix::sq_dist(x, c) / (2.0 * s * s) - d as f64 * s.ln() - half_log_2pi(d)
            }
            KernelVariant::PerPointCovariance => {
                let cov = &self.covariances[i];
                let r: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
                let mut u = vec![0.0; d];
                cov.rotate(&r, &mut u);
                let maha: f64 = u
                    .iter()
                    .zip(cov.eigenvalues())
                    .map(|(v, l)| v * v / l)
                    .sum();
                -0.5 * maha - 0.5 * cov.log_det_2pi()
            }
        }
    }

    /// All component log-densities at `x`.
    pub fn log_components(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.log_component_unchecked(i, x))
            .collect()
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// log Ψ(x): log-mean of components for normalized variants, log-sum for
    /// the global variant.
    pub fn log_wavefunction(&self, x: &[f64]) -> f64 {
        let lse = log_sum_exp(&self.log_components(x));
        if self.variant.is_normalized() {
            lse - (self.n() as f64).ln()
        } else {
            lse
        }
    }

    /// Ψ(x) in linear scale; 0 when it underflows.
    pub fn wavefunction(&self, x: &[f64]) -> f64 {
        self.log_wavefunction(x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_rows(&points.iter().map(|p| vec![*p]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn global_quantile_collinear() {
        let s = sigma_global_quantile(&line(&[0.0, 1.0, 2.0]), 100.0 / 3.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_quantile_two_points() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert!((sigma_global_quantile(&x, 50.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_points_give_degenerate_global_model() {
        let x = line(&[0.0, 0.0, 1.0, 1.0]);
        let s = sigma_global_quantile(&x, 25.0).unwrap();
        assert_eq!(s, 0.0);
        assert!(KernelModel::fit(KernelVariant::GlobalSigma, &x, 25.0, 1.0).is_err());
    }

    #[test]
    fn k_bounds_are_enforced() {
        let x = line(&[0.0, 1.0, 3.0]);
        assert!(matches!(
            sigma_per_point(&x, 1.0),
            Err(Error::InvalidNeighbourCount { k: 0, .. })
        ));
        assert!(sigma_per_point(&x, 100.0).is_err());
    }

    #[test]
    fn per_point_sigma_hand_case() {
        let s = sigma_per_point(&line(&[0.0, 1.0, 3.0]), 100.0 / 3.0).unwrap();
        assert_eq!(s, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn per_point_sigma_equilateral() {
        let h = 3f64.sqrt() / 2.0;
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        for s in sigma_per_point(&x, 200.0 / 3.0).unwrap() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn per_point_sigma_duplicates_reported() {
        let x = line(&[0.0, 0.0, 5.0]);
        match sigma_per_point(&x, 100.0 / 3.0) {
            Err(Error::DegenerateKernel { rows }) => assert_eq!(rows, vec![0, 1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn local_covariance_hand_cases() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [9.0, 9.0]]).unwrap();
        let c = local_covariance(&x, 50.0).unwrap();
        assert_eq!(c[0], vec![2.0, 0.0, 0.0, 0.0]);

        let a = 0.7;
        let y = line(&[0.0, a, -a, 20.0]);
        let c = local_covariance(&y, 50.0).unwrap();
        assert!((c[0][0] - 2.0 * a * a).abs() < 1e-12);

        let z = line(&[0.0, 0.0, 0.0, 20.0]);
        assert_eq!(local_covariance(&z, 50.0).unwrap()[0], vec![0.0]);
        assert!(local_covariance(&y, 25.0).is_err());
    }

    #[test]
    fn threshold_clamps_small_eigenvalues() {
        let c = LocalCovariance::thresholded(&[2.0, 0.0, 0.0, 0.0], 2, 0.5).unwrap();
        let m = c.matrix();
        assert!((m[0] - 2.0).abs() < 1e-12);
        assert!((m[3] - 0.5).abs() < 1e-12);
        assert!(m[1].abs() < 1e-12);

        let z = LocalCovariance::thresholded(&[0.0; 4], 2, 0.3).unwrap();
        assert!((z.matrix()[0] - 0.3).abs() < 1e-12 && (z.matrix()[3] - 0.3).abs() < 1e-12);

        let big = [3.0, 1.0, 1.0, 2.0];
        let u = LocalCovariance::thresholded(&big, 2, 0.1).unwrap();
        for (a, b) in u.matrix().iter().zip(big) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_covariance_uses_ratio_neighbours() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]]).unwrap();
        let raw = local_covariance(&x, 50.0).unwrap();
        let out = threshold_covariance(&raw, &x, 50.0, 1.0).unwrap();
        // row 0: K'=2 neighbours at distance 1 → σ²/d = 0.5
        assert!((out[0].floor() - 0.5).abs() < 1e-12);
        assert!((out[0].matrix()[3] - 0.5).abs() < 1e-12);
        assert!(threshold_covariance(&raw, &x, 50.0, 0.2).is_err());
    }

    #[test]
    fn normal_peak_values() {
        let m = KernelModel::with_sigmas(line(&[0.0]), vec![1.0]).unwrap();
        let v = m.component_log_density(0, &[0.0]).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((m.wavefunction(&[0.0]) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);

        let g = KernelModel::with_global_sigma(line(&[0.0, 4.0]), 0.5).unwrap();
        assert_eq!(g.component_log_density(1, &[4.0]).unwrap(), 0.0);
        assert!(g.component_log_density(2, &[4.0]).is_err());
    }

    #[test]
    fn far_field_underflows_gracefully() {
        let m = KernelModel::with_sigmas(line(&[0.0]), vec![1.0]).unwrap();
        let lp = m.log_wavefunction(&[100.0]);
        assert!(lp.is_finite() && lp < -4000.0);
        assert_eq!(m.wavefunction(&[100.0]), 0.0);
    }

    #[test]
    fn variant_round_trip_names() {
        for v in [
            KernelVariant::GlobalSigma,
            KernelVariant::PerPointSigma,
            KernelVariant::PerPointCovariance,
        ] {
            assert_eq!(v.short_name().parse::<KernelVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<KernelVariant>().is_err());
    }

    #[test]
    fn model_json_round_trip_rebuilds_cache() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.2], [-1.0, 0.1], [0.3, 2.0], [2.0, 2.0]])
            .unwrap();
        let m = KernelModel::fit(KernelVariant::PerPointCovariance, &x, 40.0, 1.0).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: KernelModel = serde_json::from_str(&text).unwrap();
        for i in 0..5 {
            let a = m.component_log_density(i, &[0.4, 0.4]).unwrap();
            let b = back.component_log_density(i, &[0.4, 0.4]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
