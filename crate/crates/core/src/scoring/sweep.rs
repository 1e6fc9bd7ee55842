use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cramers_v, jaccard, pearson};
use crate::dataio::fmt_f64;
use crate::error::{Error, Result};
use crate::kernel::{KernelVariant, NeighbourTable};
use crate::matrix::Matrix;
use crate::pipeline::{FitParams, Landscape};

/// %KNN values 2.5, 5, …, 50.
pub fn default_knn_grid() -> Vec<f64> {
    (1..=20).map(|i| 2.5 * i as f64).collect()
}

/// `points` geometric steps from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let r = (hi / lo).ln() / (points - 1) as f64;
            (0..points).map(|i| lo * (r * i as f64).exp()).collect()
        }
    }
}

/// 16 E_th values from the descent potential tolerance up to 3. Each cell
/// uses max(grid value, its own default threshold), so the first row is the
/// default row.
pub fn default_eth_grid(eps_v: f64) -> Vec<f64> {
    geometric_grid(eps_v, 3.0, 16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub knn: f64,
    /// Grid value of the row.
    pub eth: f64,
    /// Threshold actually applied: max(eth, default for this %KNN).
    pub eth_used: f64,
    /// `None` for the global-σ kernel or a failed cell.
    pub anll: Option<f64>,
    pub k_effective: usize,
    /// Clusters before probabilistic allocation.
    pub k_graph: usize,
    pub js: Option<f64>,
    pub cramers_v: Option<f64>,
    pub trivial: bool,
    pub converged: bool,
    pub failed: bool,
    #[serde(skip)]
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCorrelation {
    pub eth: f64,
    pub rho: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variant: KernelVariant,
    pub knn_grid: Vec<f64>,
    pub eth_grid: Vec<f64>,
    /// Row-major over (knn, eth).
    pub cells: Vec<SweepCell>,
    /// Pearson correlation of displayed ANLL against JS along %KNN, per row.
    pub correlations: Vec<Option<RowCorrelation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub knn_grid: Vec<f64>,
    /// Defaults to [`default_eth_grid`].
    pub eth_grid: Option<Vec<f64>>,
    pub fit: FitParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            knn_grid: default_knn_grid(),
            eth_grid: None,
            fit: FitParams::default(),
        }
    }
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    if g.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Config(format!("{name} grid values must be positive")));
    }
    if g.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!("{name} grid must be ascending")));
    }
    Ok(())
}

impl SweepConfig {
    pub fn eth_values(&self) -> Vec<f64> {
        self.eth_grid
            .clone()
            .unwrap_or_else(|| default_eth_grid(self.fit.descent.eps_v))
    }

    pub fn validate(&self) -> Result<()> {
        check_grid("%KNN", &self.knn_grid)?;
        if self.knn_grid.iter().any(|&k| k > 100.0) {
            return Err(Error::Config("%KNN values must not exceed 100".into()));
        }
        check_grid("E_th", &self.eth_values())?;
        self.fit.descent.validate()
    }
}

/// Runs every (%KNN, E_th) cell. Cells of one %KNN share a descent; distinct
/// %KNN values run in parallel. A failing descent marks its cells failed.
pub fn sweep(x: &Matrix, truth: Option<&[usize]>, config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    if let Some(t) = truth {
        if t.len() != x.nrows() {
            return Err(Error::LengthMismatch {
                left: t.len(),
                right: x.nrows(),
            });
        }
    }
    let eth_grid = config.eth_values();
    let table = NeighbourTable::new(x);
    let rows: Vec<Vec<SweepCell>> = config
        .knn_grid
        .par_iter()
        .map(|&knn| {
            let params = FitParams {
                knn_percent: knn,
                ..config.fit
            };
            column(x, &table, &params, &eth_grid, truth)
        })
        .collect();
    let cells: Vec<SweepCell> = rows.into_iter().flatten().collect();
    let mut result = SweepResult {
        variant: config.fit.variant,
        knn_grid: config.knn_grid.clone(),
        eth_grid,
        cells,
        correlations: Vec::new(),
    };
    result.correlations = (0..result.eth_grid.len())
        .map(|e| result.row_correlation(e))
        .collect();
    Ok(result)
}

fn column(
    x: &Matrix,
    table: &NeighbourTable,
    params: &FitParams,
    eth_grid: &[f64],
    truth: Option<&[usize]>,
) -> Vec<SweepCell> {
    let failed = |eth: f64| SweepCell {
        knn: params.knn_percent,
        eth,
        eth_used: eth,
        anll: None,
        k_effective: 0,
        k_graph: 0,
        js: None,
        cramers_v: None,
        trivial: false,
        converged: false,
        failed: true,
        assignment: Vec::new(),
    };
    let land = match Landscape::build_with_table(x, table, params) {
        Ok(l) => l,
        Err(e) => {
            log::warn!("%KNN {}: {e}", params.knn_percent);
            return eth_grid.iter().map(|&e| failed(e)).collect();
        }
    };
    eth_grid
        .iter()
        .map(|&eth| {
            let used = eth.max(land.default_e_th);
            match land.at_threshold(used) {
                Ok(fit) => {
                    let labels = fit.labels();
                    let k = fit.k_effective();
                    SweepCell {
                        knn: params.knn_percent,
                        eth,
                        eth_used: used,
                        anll: fit.anll,
                        k_effective: k,
                        k_graph: fit.clustering.k(),
                        js: truth.map(|t| jaccard(t, &labels).expect("lengths checked")),
                        cramers_v: truth.map(|t| cramers_v(t, &labels).expect("lengths checked")),
                        trivial: k <= 1,
                        converged: land.descent.converged,
                        failed: false,
                        assignment: labels,
                    }
                }
                Err(e) => {
                    log::warn!("%KNN {}, E_th {eth}: {e}", params.knn_percent);
                    failed(eth)
                }
            }
        })
        .collect()
}

impl SweepResult {
    pub fn n_knn(&self) -> usize {
        self.knn_grid.len()
    }

    pub fn n_eth(&self) -> usize {
        self.eth_grid.len()
    }

    pub fn cell(&self, knn_index: usize, eth_index: usize) -> &SweepCell {
        &self.cells[knn_index * self.n_eth() + eth_index]
    }

    /// Largest ANLL over non-trivial cells.
    pub fn max_anll(&self) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| !c.trivial)
            .filter_map(|c| c.anll)
            .reduce(f64::max)
    }

    /// ANLL as reported: trivial single-cluster cells take the sweep maximum.
    pub fn display_anll(&self, knn_index: usize, eth_index: usize) -> Option<f64> {
        let c = self.cell(knn_index, eth_index);
        if c.trivial {
            self.max_anll().or(c.anll)
        } else {
            c.anll
        }
    }

    /// ANLL (displayed) along %KNN for one E_th row.
    pub fn anll_row(&self, eth_index: usize) -> Vec<Option<f64>> {
        (0..self.n_knn())
            .map(|k| self.display_anll(k, eth_index))
            .collect()
    }

    fn row_correlation(&self, eth_index: usize) -> Option<RowCorrelation> {
        let (a, j): (Vec<f64>, Vec<f64>) = (0..self.n_knn())
            .filter_map(|k| Some((self.display_anll(k, eth_index)?, self.cell(k, eth_index).js?)))
            .unzip();
        let (rho, p_value) = pearson(&a, &j).ok()?;
        Some(RowCorrelation {
            eth: self.eth_grid[eth_index],
            rho,
            p_value,
        })
    }

    /// Re-scores every cell against another labelling.
    pub fn rescore(&self, truth: &[usize]) -> Result<Vec<(Option<f64>, Option<f64>)>> {
        self.cells
            .iter()
            .map(|c| {
                if c.failed {
                    return Ok((None, None));
                }
                Ok((Some(jaccard(truth, &c.assignment)?), Some(cramers_v(truth, &c.assignment)?)))
            })
            .collect()
    }

    /// Long-form CSV: knn, eth, eth_used, anll, anll_display, k, k_graph, js,
    /// cv, trivial, converged, failed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let wrap = |e: csv::Error| Error::Csv {
            path: "<sweep>".into(),
            message: e.to_string(),
        };
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "knn", "eth", "eth_used", "anll", "anll_display", "k", "k_graph", "js", "cv",
            "trivial", "converged", "failed",
        ])
        .map_err(wrap)?;
        for ki in 0..self.n_knn() {
            for ei in 0..self.n_eth() {
                let c = self.cell(ki, ei);
                w.write_record([
                    fmt_f64(c.knn),
                    fmt_f64(c.eth),
                    fmt_f64(c.eth_used),
                    opt(c.anll),
                    opt(self.display_anll(ki, ei)),
                    c.k_effective.to_string(),
                    c.k_graph.to_string(),
                    opt(c.js),
                    opt(c.cramers_v),
                    c.trivial.to_string(),
                    c.converged.to_string(),
                    c.failed.to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::io("<sweep>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    /// Interior local minimum of ANLL along %KNN at the default threshold.
    LocalMinimum,
    /// Low-ANLL block at high E_th.
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: CandidateKind,
    pub knn: f64,
    pub eth: f64,
    pub k: usize,
    pub anll: f64,
    /// ANLL varies by less than 10% over the first three E_th cells.
    pub stable_valley: bool,
    pub js: Option<f64>,
    pub cramers_v: Option<f64>,
}

/// Relative spread below which a run of E_th cells counts as stable.
pub const STABLE_VARIATION: f64 = 0.10;
/// Minimum run length (cells) for stability and plateau side.
pub const STABLE_RUN: usize = 3;

fn relative_spread(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= 0.0 {
        0.0
    } else {
        (hi - lo) / hi
    }
}

/// Ranked candidate models: local minima of the default row by ascending
/// %KNN, then hierarchical plateaus.
pub fn select_models(sweep: &SweepResult) -> Vec<Candidate> {
    let mut out = Vec::new();
    if sweep.n_eth() == 0 {
        return out;
    }
    let row = sweep.anll_row(0);
    let n = row.len();
    let mut i = 1;
    while i + 1 < n {
        let Some(v) = row[i] else {
            i += 1;
            continue;
        };
        // extent of a run of equal values (duplicated grid points)
        let mut end = i;
        while end + 1 < n && row[end + 1] == Some(v) {
            end += 1;
        }
        let left = row[i - 1];
        let right = if end + 1 < n { row[end + 1] } else { None };
        let cell = sweep.cell(i, 0);
        if !cell.trivial
            && left.is_some_and(|l| l > v)
            && right.is_some_and(|r| r > v)
        {
            let column: Vec<f64> = (0..sweep.n_eth().min(STABLE_RUN))
                .filter_map(|e| sweep.display_anll(i, e))
                .collect();
            out.push(Candidate {
                kind: CandidateKind::LocalMinimum,
                knn: cell.knn,
                eth: cell.eth_used,
                k: cell.k_effective,
                anll: v,
                stable_valley: column.len() >= STABLE_RUN
                    && relative_spread(&column) < STABLE_VARIATION,
                js: cell.js,
                cramers_v: cell.cramers_v,
            });
        }
        i = end + 1;
    }
    out.extend(plateaus(sweep));
    out
}

/// Connected regions (4-neighbourhood) of eligible cells in the upper half
/// of the E_th grid that contain a full 3×3 block. Eligible: non-trivial, not
/// failed, ANLL at most the lower quartile of all non-trivial cells, and the
/// same K as the block. One candidate per region: its lowest-ANLL cell.
fn plateaus(sweep: &SweepResult) -> Vec<Candidate> {
    let (nk, ne) = (sweep.n_knn(), sweep.n_eth());
    if nk < STABLE_RUN || ne < STABLE_RUN {
        return Vec::new();
    }
    let mut all: Vec<f64> = sweep
        .cells
        .iter()
        .filter(|c| !c.trivial && !c.failed)
        .filter_map(|c| c.anll)
        .collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.sort_by(f64::total_cmp);
    let low = all[(all.len() - 1) / 4];
    let first_high = ne / 2;
    let eligible = |k: usize, e: usize| {
        let c = sweep.cell(k, e);
        e >= first_high && !c.trivial && !c.failed && c.anll.is_some_and(|a| a <= low)
    };
    let mut region = vec![usize::MAX; nk * ne];
    let mut out = Vec::new();
    for k0 in 0..nk {
        for e0 in 0..ne {
            if region[k0 * ne + e0] != usize::MAX || !eligible(k0, e0) {
                continue;
            }
            let kk = sweep.cell(k0, e0).k_effective;
            let id = k0 * ne + e0;
            let mut members = Vec::new();
            let mut stack = vec![(k0, e0)];
            region[id] = id;
            while let Some((k, e)) = stack.pop() {
                members.push((k, e));
                let nbrs = [
                    (k.wrapping_sub(1), e),
                    (k + 1, e),
                    (k, e.wrapping_sub(1)),
                    (k, e + 1),
                ];
                for (a, b) in nbrs {
                    if a < nk
                        && b < ne
                        && region[a * ne + b] == usize::MAX
                        && eligible(a, b)
                        && sweep.cell(a, b).k_effective == kk
                    {
                        region[a * ne + b] = id;
                        stack.push((a, b));
                    }
                }
            }
            let inside = |a: usize, b: usize| region[a * ne + b] == id;
            let has_block = members.iter().any(|&(k, e)| {
                k + STABLE_RUN <= nk
                    && e + STABLE_RUN <= ne
                    && (k..k + STABLE_RUN).all(|a| (e..e + STABLE_RUN).all(|b| inside(a, b)))
            });
            if !has_block {
                continue;
            }
            let &(bk, be) = members
                .iter()
                .min_by(|x, y| {
                    let ax = sweep.cell(x.0, x.1).anll.unwrap_or(f64::INFINITY);
                    let ay = sweep.cell(y.0, y.1).anll.unwrap_or(f64::INFINITY);
                    ax.total_cmp(&ay).then(x.cmp(y))
                })
                .expect("non-empty region");
            let c = sweep.cell(bk, be);
            out.push(Candidate {
                kind: CandidateKind::Hierarchical,
                knn: c.knn,
                eth: c.eth_used,
                k: c.k_effective,
                anll: c.anll.unwrap_or(f64::NAN),
                stable_valley: true,
                js: c.js,
                cramers_v: c.cramers_v,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub knn: f64,
    pub ratio: f64,
    pub anll: Option<f64>,
    pub js: Option<f64>,
    pub k: usize,
    pub failed: bool,
}

/// ANLL, JS and K maps over (%KNN, threshold ratio r) for the covariance
/// kernel at each cell's default E_th.
pub fn ratio_sweep(
    x: &Matrix,
    truth: Option<&[usize]>,
    knn_grid: &[f64],
    ratio_grid: &[f64],
    fit: &FitParams,
) -> Result<Vec<RatioCell>> {
    check_grid("%KNN", knn_grid)?;
    check_grid("ratio", ratio_grid)?;
    let table = NeighbourTable::new(x);
    let jobs: Vec<(f64, f64)> = knn_grid
        .iter()
        .flat_map(|&k| ratio_grid.iter().map(move |&r| (k, r)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(knn, ratio)| {
            let params = FitParams {
                variant: KernelVariant::PerPointCovariance,
                knn_percent: knn,
                threshold_ratio: ratio,
                ..*fit
            };
            let res = Landscape::build_with_table(x, &table, &params)
                .and_then(|l| l.at_threshold(l.default_e_th));
            match res {
                Ok(f) => {
                    let labels = f.labels();
                    RatioCell {
                        knn,
                        ratio,
                        anll: f.anll,
                        js: truth.map(|t| jaccard(t, &labels).expect("lengths checked")),
                        k: f.k_effective(),
                        failed: false,
                    }
                }
                Err(e) => {
                    log::warn!("%KNN {knn}, r {ratio}: {e}");
                    RatioCell {
                        knn,
                        ratio,
                        anll: None,
                        js: None,
                        k: 0,
                        failed: true,
                    }
                }
            }
        })
        .collect())
}
