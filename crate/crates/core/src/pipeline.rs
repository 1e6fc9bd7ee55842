//! End-to-end fitting: preprocessing, kernel, descent, wells, merging and the
//! probabilistic model.

use serde::{Deserialize, Serialize};

use crate::dataio::{pca_project_range, rescale_mean_norm, standardize, Dataset};
use crate::descent::{default_energy_threshold, descend, DescentConfig, DescentResult};
use crate::error::Result;
use crate::graphalloc::{allocate_wells, merge_by_threshold, Clustering, GraphParams};
use crate::kernel::{KernelModel, KernelVariant, NeighbourTable, DEFAULT_THRESHOLD_RATIO};
use crate::matrix::Matrix;
use crate::potential::PotentialField;
use crate::probmodel::{Allocation, ProbabilisticModel};
use crate::scoring::anll_from_posteriors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocessing {
    pub standardize: bool,
    /// Keep this many principal components after standardizing.
    pub pca_components: Option<usize>,
    /// Leading principal components dropped before keeping `pca_components`.
    pub pca_skip: usize,
    pub rescale: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            standardize: true,
            pca_components: None,
            pca_skip: 0,
            rescale: true,
        }
    }
}

impl Preprocessing {
    /// Applies z-scoring, PCA and mean-norm rescaling in that order.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let mut out = if self.standardize {
            standardize(ds)
        } else {
            ds.clone()
        };
        if let Some(c) = self.pca_components {
            out = pca_project_range(&out, self.pca_skip, c)?;
        }
        if self.rescale {
            out = rescale_mean_norm(&out)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    pub variant: KernelVariant,
    pub knn_percent: f64,
    pub threshold_ratio: f64,
    pub descent: DescentConfig,
    pub graph: GraphParams,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            variant: KernelVariant::PerPointSigma,
            knn_percent: 10.0,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
            descent: DescentConfig::default(),
            graph: GraphParams::default(),
        }
    }
}

/// Everything that does not depend on E_th: kernel, descent and wells.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub observations: Matrix,
    pub kernel: KernelModel,
    pub energy_offset: f64,
    pub descent: DescentResult,
    pub wells: Clustering,
    pub default_e_th: f64,
}

/// Result of cutting a landscape at one energy threshold.
#[derive(Debug, Clone)]
pub struct Fit {
    pub clustering: Clustering,
    /// Absent for the unnormalized global-σ kernel.
    pub model: Option<ProbabilisticModel>,
    pub allocation: Option<Allocation>,
    pub anll: Option<f64>,
}

impl Fit {
    /// Clusters after probabilistic allocation when available, otherwise the
    /// graph clusters.
    pub fn k_effective(&self) -> usize {
        match &self.allocation {
            Some(a) => a.k_effective(),
            None => self.clustering.k(),
        }
    }

    /// Final labels: probabilistic winners (compacted) when available.
    pub fn labels(&self) -> Vec<usize> {
        match &self.allocation {
            Some(a) => a.compact_assignment(),
            None => self.clustering.assignment.clone(),
        }
    }
}

impl Landscape {
    pub fn build(x: &Matrix, params: &FitParams) -> Result<Self> {
        let table = NeighbourTable::new(x);
        Self::build_with_table(x, &table, params)
    }

    /// Same as [`Self::build`], reusing a neighbour table across scales.
    pub fn build_with_table(x: &Matrix, table: &NeighbourTable, params: &FitParams) -> Result<Self> {
        let kernel = KernelModel::fit_with_table(
            params.variant,
            x,
            table,
            params.knn_percent,
            params.threshold_ratio,
        )?;
        let field = PotentialField::new(&kernel).calibrate_offset(x.rows_iter())?;
        let result = descend(&field, x, &params.descent)?;
        let wells = allocate_wells(x, &result, &field, &params.graph)?;
        let default_e_th = default_energy_threshold(&result, &params.descent);
        Ok(Self {
            observations: x.clone(),
            energy_offset: field.energy_offset(),
            kernel,
            descent: result,
            wells,
            default_e_th,
        })
    }

    pub fn field(&self) -> PotentialField<'_> {
        PotentialField::with_offset(&self.kernel, self.energy_offset)
    }

    /// Merges wells at `e_th` and, for normalized kernels, builds and applies
    /// the probabilistic model to the observations.
    pub fn at_threshold(&self, e_th: f64) -> Result<Fit> {
        let clustering = merge_by_threshold(&self.wells, &self.descent.final_points, e_th)?;
        if !self.kernel.variant.is_normalized() {
            return Ok(Fit {
                clustering,
                model: None,
                allocation: None,
                anll: None,
            });
        }
        let model = ProbabilisticModel::new(self.kernel.clone(), clustering.member_sets.clone())?;
        let allocation = model.allocate(&self.observations)?;
        let anll = anll_from_posteriors(&allocation.winner_posterior);
        Ok(Fit {
            clustering,
            model: Some(model),
            allocation: Some(allocation),
            anll: Some(anll),
        })
    }
}

/// Builds a landscape and cuts it at `e_th` (default threshold when `None`).
pub fn fit(x: &Matrix, params: &FitParams, e_th: Option<f64>) -> Result<(Landscape, Fit)> {
    let land = Landscape::build(x, params)?;
    let e = e_th.unwrap_or(land.default_e_th);
    let fit = land.at_threshold(e)?;
    Ok((land, fit))
}
