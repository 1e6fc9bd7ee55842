//! Cluster-level probabilities over a normalized kernel model.
//!
//! With clusters partitioning the n kernels:
//!
//! * joint      P(k, x) = (1/n) Σ_{i∈k} ψ_i(x)
//! * prior      P(k)    = #k / n
//! * posterior  P(k|x)  = P(k, x) / Σ_k' P(k', x)
//! * likelihood P(x|k)  = P(k, x) / P(k)
//!
//! Everything is computed from log-densities; linear-scale accessors
//! exponentiate at the end.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::fmt_f64;
use crate::error::{Error, Result};
use crate::kernel::{log_sum_exp, KernelModel};
use crate::matrix::Matrix;
use crate::potential::grid_points;

/// Default training quantile used as the outlier threshold.
pub const DEFAULT_OUTLIER_QUANTILE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticModel {
    pub kernel: KernelModel,
    /// Kernel indices of every cluster.
    pub cluster_members: Vec<Vec<usize>>,
}

/// Outcome of allocating a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Winning cluster id (model ids) per point.
    pub assignment: Vec<usize>,
    /// P(k_w | x_i).
    pub winner_posterior: Vec<f64>,
    /// Model cluster ids that won at least one point, ascending; position in
    /// this table is the compact id.
    pub active_clusters: Vec<usize>,
}

impl Allocation {
    /// Number of clusters that won at least one point.
    pub fn k_effective(&self) -> usize {
        self.active_clusters.len()
    }

    /// Assignment renumbered to 0..k_effective.
    pub fn compact_assignment(&self) -> Vec<usize> {
        let mut remap = vec![usize::MAX; self.active_clusters.last().map_or(0, |m| m + 1)];
        for (new, &old) in self.active_clusters.iter().enumerate() {
            remap[old] = new;
        }
        self.assignment.iter().map(|&a| remap[a]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum OutlierThreshold {
    /// Flag points whose score is below this density.
    Absolute(f64),
    /// Flag the lowest ⌈q·n⌉ scores of the evaluated set.
    Quantile(f64),
}

impl Default for OutlierThreshold {
    fn default() -> Self {
        OutlierThreshold::Quantile(DEFAULT_OUTLIER_QUANTILE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// max_k P(x_i|k).
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    /// Density threshold actually applied.
    pub threshold: f64,
}

impl ProbabilisticModel {
    pub fn new(kernel: KernelModel, cluster_members: Vec<Vec<usize>>) -> Result<Self> {
        if !kernel.variant.is_normalized() {
            return Err(Error::UnnormalizedKernel);
        }
        let n = kernel.n();
        let mut seen = vec![false; n];
        for (k, members) in cluster_members.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyCluster(k));
            }
            for &i in members {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, n });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidInput(format!(
                        "kernel {i} belongs to more than one cluster"
                    )));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "kernel {i} belongs to no cluster"
            )));
        }
        Ok(Self {
            kernel,
            cluster_members,
        })
    }

    /// Builds cluster member sets from a per-kernel assignment.
    pub fn from_assignment(kernel: KernelModel, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != kernel.n() {
            return Err(Error::LengthMismatch {
                left: assignment.len(),
                right: kernel.n(),
            });
        }
        let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        Self::new(kernel, members)
    }

    pub fn k(&self) -> usize {
        self.cluster_members.len()
    }

    fn check_cluster(&self, k: usize) -> Result<()> {
        if k >= self.k() {
            return Err(Error::IndexOutOfRange {
                index: k,
                n: self.k(),
            });
        }
        Ok(())
    }

    /// log P(k, x) for every cluster.
    pub fn log_joints(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.kernel.check_point(x)?;
        Ok(self.log_joints_unchecked(x))
    }

    fn log_joints_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let comps = self.kernel.log_components(x);
        let ln_n = (self.kernel.n() as f64).ln();
        let mut buf = Vec::new();
        self.cluster_members
            .iter()
            .map(|m| {
                buf.clear();
                buf.extend(m.iter().map(|&i| comps[i]));
                log_sum_exp(&buf) - ln_n
            })
            .collect()
    }

    pub fn log_joint(&self, k: usize, x: &[f64]) -> Result<f64> {
        self.check_cluster(k)?;
        Ok(self.log_joints(x)?[k])
    }

    pub fn joint(&self, k: usize, x: &[f64]) -> Result<f64> {
        self.log_joint(k, x).map(f64::exp)
    }

    pub fn prior(&self, k: usize) -> Result<f64> {
        self.check_cluster(k)?;
        Ok(self.cluster_members[k].len() as f64 / self.kernel.n() as f64)
    }

    pub fn priors(&self) -> Vec<f64> {
        let n = self.kernel.n() as f64;
        self.cluster_members
            .iter()
            .map(|m| m.len() as f64 / n)
            .collect()
    }

    /// P(k|x) for every cluster; never NaN, even when every joint underflows.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lj = self.log_joints(x)?;
        Ok(normalize_logs(&lj))
    }

    pub fn log_likelihood(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.log_joint(k, x)? - self.prior(k)?.ln())
    }

    pub fn likelihood(&self, x: &[f64], k: usize) -> Result<f64> {
        self.log_likelihood(x, k).map(f64::exp)
    }

    /// Assigns every row of `points` to argmax_k P(k|x); ties go to the lower id.
    pub fn allocate(&self, points: &Matrix) -> Result<Allocation> {
        self.kernel.check_point(&vec![0.0; points.ncols()])?;
        let rows: Vec<(usize, f64)> = (0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let lj = self.log_joints_unchecked(points.row(i));
                let w = argmax(&lj);
                let lse = log_sum_exp(&lj);
                (w, (lj[w] - lse).exp().min(1.0))
            })
            .collect();
        let mut used = vec![false; self.k()];
        for &(w, _) in &rows {
            used[w] = true;
        }
        Ok(Allocation {
            assignment: rows.iter().map(|r| r.0).collect(),
            winner_posterior: rows.iter().map(|r| r.1).collect(),
            active_clusters: (0..self.k()).filter(|&k| used[k]).collect(),
        })
    }

    /// log max_k P(x|k) per row.
    pub fn log_outlier_scores(&self, points: &Matrix) -> Result<Vec<f64>> {
        self.kernel.check_point(&vec![0.0; points.ncols()])?;
        let log_priors: Vec<f64> = self.priors().iter().map(|p| p.ln()).collect();
        Ok((0..points.nrows())
            .into_par_iter()
            .map(|i| {
                self.log_joints_unchecked(points.row(i))
                    .iter()
                    .zip(&log_priors)
                    .map(|(j, p)| j - p)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect())
    }

    /// Scores max_k P(x|k) and flags the points below `threshold`.
    pub fn outlier_flags(&self, points: &Matrix, threshold: OutlierThreshold) -> Result<OutlierReport> {
        let log_scores = self.log_outlier_scores(points)?;
        let scores: Vec<f64> = log_scores.iter().map(|s| s.exp()).collect();
        match threshold {
            OutlierThreshold::Absolute(t) => {
                if !t.is_finite() || t < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "outlier threshold must be a finite non-negative density, got {t}"
                    )));
                }
                Ok(OutlierReport {
                    flags: scores.iter().map(|&s| s < t).collect(),
                    scores,
                    threshold: t,
                })
            }
            OutlierThreshold::Quantile(q) => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidInput(format!(
                        "outlier quantile must lie in [0, 1], got {q}"
                    )));
                }
                let n = scores.len();
                let count = ((q * n as f64).ceil() as usize).min(n);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| log_scores[a].total_cmp(&log_scores[b]).then(a.cmp(&b)));
                let mut flags = vec![false; n];
                for &i in &order[..count] {
                    flags[i] = true;
                }
                let threshold = match count {
                    0 => 0.0,
                    c => scores[order[c - 1]],
                };
                Ok(OutlierReport {
                    scores,
                    flags,
                    threshold,
                })
            }
        }
    }

    /// Evaluates P(k|x) for every cluster and max_k P(x|k) on a 2-D grid as
    /// CSV (`x,y,p0..,max_likelihood`).
    pub fn write_probability_map<W: Write>(
        &self,
        x_range: (f64, f64),
        y_range: (f64, f64),
        resolution: (usize, usize),
        out: W,
    ) -> Result<()> {
        if self.kernel.d() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: self.kernel.d(),
            });
        }
        let wrap = |e: csv::Error| Error::Csv {
            path: "<probability map>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..self.k()).map(|k| format!("p{k}")));
        header.push("max_likelihood".into());
        w.write_record(&header).map_err(wrap)?;
        let log_priors: Vec<f64> = self.priors().iter().map(|p| p.ln()).collect();
        for p in grid_points(x_range, y_range, resolution) {
            let lj = self.log_joints_unchecked(&p);
            let mut rec = vec![fmt_f64(p[0]), fmt_f64(p[1])];
            rec.extend(normalize_logs(&lj).into_iter().map(fmt_f64));
            let best = lj
                .iter()
                .zip(&log_priors)
                .map(|(j, p)| j - p)
                .fold(f64::NEG_INFINITY, f64::max);
            rec.push(fmt_f64(best.exp()));
            w.write_record(&rec).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<probability map>", e))?;
        Ok(())
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// exp(l_k − logsumexp(l)); uniform when every entry is −∞.
fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    if lse == f64::NEG_INFINITY {
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    logs.iter().map(|l| (l - lse).exp()).collect()
}
