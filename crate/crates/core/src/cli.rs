//! Command-line orchestration: `generate`, `fit`, `sweep`, `allocate`,
//! `score`.
//!
//! Every run is described by one JSON [`RunConfig`]; flags override it. All
//! report files of a command are rendered in memory first and then committed
//! together by [`OutputSet::commit`], which writes temporaries and renames
//! them, so a failing run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    fmt_f64, gen_local_densities, gen_two_spirals, load_builtin, load_csv_with_labels,
    apply_transforms, encode_labels, Dataset, Transform, BUILTIN_DATASETS,
};
use crate::descent::DescentConfig;
use crate::error::{Error, Result};
use crate::graphalloc::GraphParams;
use crate::kernel::{neighbour_count, KernelModel, KernelVariant, DEFAULT_THRESHOLD_RATIO};
use crate::matrix::Matrix;
use crate::pipeline::{FitParams, Landscape, Preprocessing};
use crate::probmodel::{OutlierThreshold, ProbabilisticModel};
use crate::scoring::{
    cramers_v, default_knn_grid, jaccard, ratio_sweep, select_models, sweep, SweepConfig,
};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "PQC_WORKERS";

/// Generator names accepted by `generate` and generator datasets.
pub const GENERATORS: [&str; 2] = ["local-densities", "two-spirals"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic data seeded by [`RunConfig::seed`].
    Generator { name: String },
    /// Headed CSV; every non-label column is a feature.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default)]
        extra_label_columns: Vec<String>,
    },
    /// Bundled real data: `crabs` or `olive`.
    Builtin { name: String },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generator {
            name: GENERATORS[0].into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbabilityMapConfig {
    /// Grid points per axis.
    pub resolution: usize,
    /// Padding around the data bounding box, as a fraction of its extent.
    pub margin: f64,
}

impl Default for ProbabilityMapConfig {
    fn default() -> Self {
        Self {
            resolution: 100,
            margin: 0.1,
        }
    }
}

/// One run, fully specified. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub preprocessing: Preprocessing,
    pub variant: KernelVariant,
    /// %KNN of a single fit.
    pub knn_percent: f64,
    /// %KNN axis of a sweep; `None` uses 2.5..50 in steps of 2.5.
    pub knn_grid: Option<Vec<f64>>,
    /// E_th of a single fit; `None` uses the descent-derived default.
    pub eth: Option<f64>,
    /// E_th axis of a sweep; `None` is geometric from eps_v to 3.
    pub eth_grid: Option<Vec<f64>>,
    /// Threshold ratio r of the covariance eigenvalue floor.
    pub threshold_ratio: f64,
    /// When set, `sweep` also maps (%KNN, r) for the covariance kernel.
    pub ratio_grid: Option<Vec<f64>>,
    pub descent: DescentConfig,
    pub graph: GraphParams,
    pub outlier: OutlierThreshold,
    pub probability_map: ProbabilityMapConfig,
    /// Label column scored by JS/Cv; `None` is the primary labels.
    pub score_label: Option<String>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            preprocessing: Preprocessing::default(),
            variant: KernelVariant::PerPointSigma,
            knn_percent: 10.0,
            knn_grid: None,
            eth: None,
            eth_grid: None,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
            ratio_grid: None,
            descent: DescentConfig::default(),
            graph: GraphParams::default(),
            outlier: OutlierThreshold::default(),
            probability_map: ProbabilityMapConfig::default(),
            score_label: None,
            out_dir: PathBuf::from("pqc-out"),
            seed: 0,
        }
    }
}

fn check_grid(name: &str, grid: &Option<Vec<f64>>, problems: &mut Vec<String>) {
    let Some(g) = grid else { return };
    if g.is_empty() {
        problems.push(format!("{name} is empty"));
    } else if g.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        problems.push(format!("{name} values must be positive and finite"));
    } else if g.windows(2).any(|w| w[1] < w[0]) {
        problems.push(format!("{name} must be ascending"));
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every problem with the configuration; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        match &self.dataset {
            DatasetSpec::Generator { name } if !GENERATORS.contains(&name.as_str()) => p.push(
                format!("dataset: unknown generator '{name}' (expected {})", GENERATORS.join(" or ")),
            ),
            DatasetSpec::Builtin { name } if !BUILTIN_DATASETS.contains(&name.as_str()) => p.push(
                format!("dataset: unknown built-in '{name}' (expected {})", BUILTIN_DATASETS.join(" or ")),
            ),
            DatasetSpec::Csv { path, .. } if path.as_os_str().is_empty() => {
                p.push("dataset: csv path is empty".into())
            }
            _ => {}
        }
        if self.preprocessing.pca_components == Some(0) {
            p.push("preprocessing: pca_components must be at least 1".into());
        }
        if !(self.knn_percent > 0.0 && self.knn_percent <= 100.0) {
            p.push(format!("knn_percent must lie in (0, 100], got {}", self.knn_percent));
        }
        check_grid("knn_grid", &self.knn_grid, &mut p);
        if self.knn_grid.as_ref().is_some_and(|g| g.iter().any(|v| *v > 100.0)) {
            p.push("knn_grid values must not exceed 100".into());
        }
        if let Some(e) = self.eth {
            if !(e.is_finite() && e > 0.0) {
                p.push(format!("eth must be positive and finite, got {e}"));
            }
        }
        check_grid("eth_grid", &self.eth_grid, &mut p);
        check_grid("ratio_grid", &self.ratio_grid, &mut p);
        if !(self.threshold_ratio.is_finite() && self.threshold_ratio > 0.0) {
            p.push(format!("threshold_ratio must be positive, got {}", self.threshold_ratio));
        }
        if let Err(e) = self.descent.validate() {
            p.push(e.to_string());
        }
        if self.graph.similarity_neighbours == 0 || self.graph.path_neighbours == 0 {
            p.push("graph: neighbour counts must be at least 1".into());
        }
        match self.outlier {
            OutlierThreshold::Quantile(q) if !(0.0..=1.0).contains(&q) => {
                p.push(format!("outlier: quantile must lie in [0, 1], got {q}"))
            }
            OutlierThreshold::Absolute(t) if !(t.is_finite() && t >= 0.0) => {
                p.push(format!("outlier: absolute threshold must be non-negative, got {t}"))
            }
            _ => {}
        }
        if self.probability_map.resolution < 2 {
            p.push("probability_map: resolution must be at least 2".into());
        }
        if !(self.probability_map.margin.is_finite() && self.probability_map.margin >= 0.0) {
            p.push("probability_map: margin must be non-negative".into());
        }
        if self.out_dir.as_os_str().is_empty() {
            p.push("out_dir is empty".into());
        }
        p
    }

    pub fn validate(&self) -> std::result::Result<(), CliError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(p))
        }
    }

    pub fn fit_params(&self) -> FitParams {
        FitParams {
            variant: self.variant,
            knn_percent: self.knn_percent,
            threshold_ratio: self.threshold_ratio,
            descent: self.descent,
            graph: self.graph,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            knn_grid: self.knn_grid.clone().unwrap_or_else(default_knn_grid),
            eth_grid: self.eth_grid.clone(),
            fit: self.fit_params(),
        }
    }

    /// Raw (unpreprocessed) dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Generator { name } => generate(name, self.seed),
            DatasetSpec::Builtin { name } => load_builtin(name),
            DatasetSpec::Csv {
                path,
                label_column,
                extra_label_columns,
            } => {
                let cols: Vec<&str> = label_column
                    .iter()
                    .chain(extra_label_columns)
                    .map(String::as_str)
                    .collect();
                load_csv_with_labels(path, &cols)
            }
        }
    }

    /// Integer truth for scoring, if the dataset carries the requested labels.
    pub fn truth(&self, ds: &Dataset) -> Result<Option<Vec<usize>>> {
        match &self.score_label {
            None => Ok(ds.label_codes()),
            Some(name) => ds
                .label_codes_for(name)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("score_label '{name}' is not a label column"))),
        }
    }
}

/// Synthetic dataset by name.
pub fn generate(name: &str, seed: u64) -> Result<Dataset> {
    match name {
        "local-densities" => Ok(gen_local_densities(seed)),
        "two-spirals" => Ok(gen_two_spirals(seed)),
        other => Err(Error::Config(format!(
            "unknown generator '{other}' (expected {})",
            GENERATORS.join(" or ")
        ))),
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Validation(Vec<String>),
    /// Exit code 3.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(p) => {
                write!(f, "invalid configuration:")?;
                for line in p {
                    write!(f, "\n  - {line}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Validation(vec![msg]),
            other => CliError::Runtime(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Report files rendered in memory and committed together.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every file as a hidden temporary, then renames them all into
    /// place. Temporaries are removed if any write fails.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(Error::io(&tmp, e));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
            written.push(dest);
        }
        Ok(written)
    }
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let wrap = |e: csv::Error| Error::Csv {
        path: "<report>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::Csv {
        path: "<report>".into(),
        message: e.to_string(),
    })
}

/// Everything `allocate` needs to score new points without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredModel {
    pub variant: KernelVariant,
    pub knn_percent: f64,
    pub threshold_ratio: f64,
    pub e_th: f64,
    pub energy_offset: f64,
    /// Preprocessing chain from raw features to model space.
    pub transforms: Vec<Transform>,
    pub feature_names: Vec<String>,
    pub kernel: KernelModel,
    /// Kernel indices of every cluster.
    pub cluster_members: Vec<Vec<usize>>,
    /// Density below which a point is flagged as an outlier.
    pub outlier_threshold: Option<f64>,
}

impl StoredModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn raw_dim(&self) -> usize {
        match self.transforms.first() {
            Some(Transform::Standardize { means, .. }) | Some(Transform::Pca { means, .. }) => {
                means.len()
            }
            _ => self.kernel.d(),
        }
    }

    pub fn probabilistic(&self) -> Result<ProbabilisticModel> {
        ProbabilisticModel::new(self.kernel.clone(), self.cluster_members.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub js: f64,
    pub cramers_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub n: usize,
    pub d: usize,
    pub variant: KernelVariant,
    pub knn_percent: f64,
    pub neighbours: usize,
    pub e_th: f64,
    pub default_e_th: f64,
    pub anll: Option<f64>,
    /// Clusters winning at least one point.
    pub k: usize,
    /// Clusters after merging, before probabilistic allocation.
    pub k_graph: usize,
    pub wells: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Fraction of points whose probabilistic winner differs from the graph
    /// cluster.
    pub allocation_disagreement: Option<f64>,
    pub js: Option<f64>,
    pub cramers_v: Option<f64>,
    pub label_scores: Vec<LabelScore>,
    pub outliers: usize,
    pub warnings: Vec<String>,
}

/// A fitted run and its rendered reports.
#[derive(Debug)]
pub struct FitOutcome {
    pub metrics: FitMetrics,
    pub model: StoredModel,
    pub outputs: OutputSet,
}

fn score_pair(truth: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    Ok((jaccard(truth, labels)?, cramers_v(truth, labels)?))
}

/// Runs one fit and renders its reports without touching the filesystem.
pub fn run_fit(config: &RunConfig) -> CliResult<FitOutcome> {
    config.validate()?;
    let raw = config.load_dataset()?;
    let truth = config.truth(&raw)?;
    let ds = config.preprocessing.apply(&raw)?;
    let x = &ds.x;
    let params = config.fit_params();
    let land = Landscape::build(x, &params)?;
    let e_th = config.eth.unwrap_or(land.default_e_th).max(land.default_e_th);
    let fit = land.at_threshold(e_th)?;
    let mut warnings = Vec::new();
    if !land.descent.converged {
        warnings.push(format!(
            "descent did not converge within {} iterations",
            config.descent.max_iterations
        ));
    }
    if config.eth.is_some_and(|e| e < land.default_e_th) {
        warnings.push(format!(
            "eth raised to the default threshold {}",
            land.default_e_th
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let labels = fit.labels();
    let (js, cv) = match &truth {
        Some(t) => {
            let (j, c) = score_pair(t, &labels)?;
            (Some(j), Some(c))
        }
        None => (None, None),
    };
    let mut label_scores = Vec::new();
    for (name, values) in &ds.extra_labels {
        let (j, c) = score_pair(&encode_labels(values), &labels)?;
        label_scores.push(LabelScore {
            label: name.clone(),
            js: j,
            cramers_v: c,
        });
    }

    let mut outputs = OutputSet::default();
    outputs.add_json("config.json", config)?;

    let outlier_report = match &fit.model {
        Some(m) => Some(m.outlier_flags(x, config.outlier)?),
        None => None,
    };
    let model = StoredModel {
        variant: config.variant,
        knn_percent: config.knn_percent,
        threshold_ratio: config.threshold_ratio,
        e_th,
        energy_offset: land.energy_offset,
        transforms: ds.preprocessing_log.clone(),
        feature_names: raw.feature_names.clone(),
        kernel: land.kernel.clone(),
        cluster_members: fit.clustering.member_sets.clone(),
        outlier_threshold: outlier_report.as_ref().map(|r| r.threshold),
    };
    outputs.add_json("model.json", &model)?;

    let graph = &fit.clustering.assignment;
    let alloc = fit.allocation.as_ref();
    let truth_names = ds.labels.as_ref();
    let mut header = vec!["index", "cluster", "graph_cluster", "winner_posterior"];
    if truth_names.is_some() {
        header.push("label");
    }
    let rows = (0..ds.n()).map(|i| {
        let mut r = vec![
            i.to_string(),
            alloc.map_or(graph[i], |a| a.assignment[i]).to_string(),
            graph[i].to_string(),
            alloc.map_or(String::new(), |a| fmt_f64(a.winner_posterior[i])),
        ];
        if let Some(l) = truth_names {
            r.push(l[i].clone());
        }
        r
    });
    outputs.add("assignment.csv", csv_bytes(&header, rows)?);

    if let Some(rep) = &outlier_report {
        let rows = (0..ds.n()).map(|i| {
            vec![
                i.to_string(),
                fmt_f64(rep.scores[i]),
                (rep.flags[i] as u8).to_string(),
            ]
        });
        outputs.add("outliers.csv", csv_bytes(&["index", "score", "outlier"], rows)?);
    }

    if let (Some(m), 2) = (&fit.model, ds.d()) {
        let (xr, yr) = padded_box(x, config.probability_map.margin);
        let r = config.probability_map.resolution;
        let mut buf = Vec::new();
        m.write_probability_map(xr, yr, (r, r), &mut buf)?;
        outputs.add("probability_map.csv", buf);
    }

    let allocation_disagreement = alloc.map(|a| {
        let diff = a
            .assignment
            .iter()
            .zip(graph)
            .filter(|(p, g)| p != g)
            .count();
        diff as f64 / ds.n() as f64
    });
    let metrics = FitMetrics {
        n: ds.n(),
        d: ds.d(),
        variant: config.variant,
        knn_percent: config.knn_percent,
        neighbours: neighbour_count(config.knn_percent, ds.n()),
        e_th,
        default_e_th: land.default_e_th,
        anll: fit.anll,
        k: fit.k_effective(),
        k_graph: fit.clustering.k(),
        wells: land.wells.well_energy.nrows(),
        converged: land.descent.converged,
        iterations: land.descent.iterations_used,
        allocation_disagreement,
        js,
        cramers_v: cv,
        label_scores,
        outliers: outlier_report.map_or(0, |r| r.flags.iter().filter(|f| **f).count()),
        warnings,
    };
    outputs.add_json("metrics.json", &metrics)?;
    Ok(FitOutcome {
        metrics,
        model,
        outputs,
    })
}

/// Bounding box of 2-D points padded by `margin` × extent on each side.
pub fn padded_box(x: &Matrix, margin: f64) -> ((f64, f64), (f64, f64)) {
    let axis = |j: usize| {
        let c = x.column(j);
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = margin * (hi - lo).max(f64::EPSILON);
        (lo - pad, hi + pad)
    };
    (axis(0), axis(1))
}

/// Fits and writes `config.json`, `model.json`, `assignment.csv`,
/// `outliers.csv`, `probability_map.csv` (2-D only) and `metrics.json`.
pub fn cmd_fit(config: &RunConfig) -> CliResult<FitMetrics> {
    let outcome = run_fit(config)?;
    outcome.outputs.commit(&config.out_dir)?;
    Ok(outcome.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub variant: KernelVariant,
    pub knn_grid: Vec<f64>,
    pub eth_grid: Vec<f64>,
    pub candidates: Vec<crate::scoring::Candidate>,
    pub correlations: Vec<Option<crate::scoring::RowCorrelation>>,
    pub failed_cells: usize,
    pub non_converged_cells: usize,
}

/// Sweeps (%KNN, E_th) and writes `config.json`, `sweep.csv`,
/// `candidates.json` and, with a ratio grid, `ratio_sweep.csv`.
pub fn cmd_sweep(config: &RunConfig) -> CliResult<SweepSummary> {
    config.validate()?;
    let raw = config.load_dataset()?;
    let truth = config.truth(&raw)?;
    let ds = config.preprocessing.apply(&raw)?;
    let sc = config.sweep_config();
    let result = sweep(&ds.x, truth.as_deref(), &sc)?;
    let summary = SweepSummary {
        variant: result.variant,
        knn_grid: result.knn_grid.clone(),
        eth_grid: result.eth_grid.clone(),
        candidates: select_models(&result),
        correlations: result.correlations.clone(),
        failed_cells: result.cells.iter().filter(|c| c.failed).count(),
        non_converged_cells: result.cells.iter().filter(|c| !c.converged).count(),
    };
    if summary.failed_cells > 0 {
        log::warn!("{} sweep cells failed", summary.failed_cells);
    }
    let mut outputs = OutputSet::default();
    outputs.add_json("config.json", config)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    outputs.add("sweep.csv", buf);
    outputs.add_json("candidates.json", &summary)?;
    if let Some(ratios) = &config.ratio_grid {
        let mut params = config.fit_params();
        params.variant = KernelVariant::PerPointCovariance;
        let cells = ratio_sweep(&ds.x, truth.as_deref(), &sc.knn_grid, ratios, &params)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let rows = cells.iter().map(|c| {
            vec![
                fmt_f64(c.knn),
                fmt_f64(c.ratio),
                opt(c.anll),
                opt(c.js),
                c.k.to_string(),
                (c.failed as u8).to_string(),
            ]
        });
        outputs.add(
            "ratio_sweep.csv",
            csv_bytes(&["knn", "ratio", "anll", "js", "k", "failed"], rows)?,
        );
    }
    outputs.commit(&config.out_dir)?;
    Ok(summary)
}

/// Allocation of new points against a stored model.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAllocation {
    pub assignment: Vec<usize>,
    pub winner_posterior: Vec<f64>,
    pub outlier_scores: Vec<f64>,
    pub outlier_flags: Vec<bool>,
}

/// Scores `points` (raw features unless `preprocessed`) against a stored
/// model. No descent is run.
pub fn allocate_points(model: &StoredModel, points: &Matrix, preprocessed: bool) -> Result<PointAllocation> {
    let expected = if preprocessed {
        model.kernel.d()
    } else {
        model.raw_dim()
    };
    if points.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: points.ncols(),
        });
    }
    let z = if preprocessed {
        points.clone()
    } else {
        apply_transforms(&model.transforms, points)?
    };
    let pm = model.probabilistic()?;
    let alloc = pm.allocate(&z)?;
    let outlier_scores: Vec<f64> = pm.log_outlier_scores(&z)?.iter().map(|s| s.exp()).collect();
    let outlier_flags = match model.outlier_threshold {
        Some(t) => outlier_scores.iter().map(|s| *s < t).collect(),
        None => vec![false; outlier_scores.len()],
    };
    Ok(PointAllocation {
        assignment: alloc.assignment,
        winner_posterior: alloc.winner_posterior,
        outlier_scores,
        outlier_flags,
    })
}

/// Allocates a CSV of points and writes `allocation.csv` into `out_dir`.
pub fn cmd_allocate(
    model_path: &Path,
    points_csv: &Path,
    ignore_columns: &[String],
    preprocessed: bool,
    out_dir: &Path,
) -> CliResult<PointAllocation> {
    let model = StoredModel::load(model_path)?;
    let labels: Vec<&str> = ignore_columns.iter().map(String::as_str).collect();
    let ds = load_csv_with_labels(points_csv, &labels)?;
    let result = allocate_points(&model, &ds.x, preprocessed)?;
    let rows = (0..ds.n()).map(|i| {
        vec![
            i.to_string(),
            result.assignment[i].to_string(),
            fmt_f64(result.winner_posterior[i]),
            fmt_f64(result.outlier_scores[i]),
            (result.outlier_flags[i] as u8).to_string(),
        ]
    });
    let mut outputs = OutputSet::default();
    outputs.add(
        "allocation.csv",
        csv_bytes(
            &["index", "cluster", "winner_posterior", "outlier_score", "outlier"],
            rows,
        )?,
    );
    outputs.commit(out_dir)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub js: f64,
    pub cramers_v: f64,
}

fn read_column(path: &Path, column: &str) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let j = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::MissingLabelColumn {
            path: path.to_path_buf(),
            column: column.to_string(),
        })?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.get(j).unwrap_or("").trim().to_string())
                .map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
        })
        .collect()
}

/// JS and Cramér's V between a label column and an assignment column.
pub fn cmd_score(
    labels_csv: &Path,
    label_column: &str,
    assignment_csv: &Path,
    assignment_column: &str,
) -> CliResult<ScoreReport> {
    let truth = encode_labels(&read_column(labels_csv, label_column)?);
    let pred = encode_labels(&read_column(assignment_csv, assignment_column)?);
    let (js, cv) = score_pair(&truth, &pred)?;
    Ok(ScoreReport {
        n: truth.len(),
        js,
        cramers_v: cv,
    })
}

/// Writes a generated dataset as CSV to `out`, or returns its bytes for
/// stdout when `out` is `None`.
pub fn cmd_generate(name: &str, seed: u64, out: Option<&Path>) -> CliResult<Vec<u8>> {
    let ds = generate(name, seed)?;
    let mut buf = Vec::new();
    crate::dataio::write_csv(&ds, &mut buf)?;
    if let Some(path) = out {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let file = path
            .file_name()
            .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
        let mut set = OutputSet::default();
        set.add(&file.to_string_lossy(), buf.clone());
        set.commit(dir)?;
    }
    Ok(buf)
}

#[derive(Debug, Parser)]
#[command(name = "pqc", version, about = "Probabilistic quantum clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by `fit` and `sweep`; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel variant: global, knn or cov.
    #[arg(long)]
    pub variant: Option<KernelVariant>,
    /// %KNN of a fit.
    #[arg(long)]
    pub knn: Option<f64>,
    /// Energy threshold of a fit.
    #[arg(long)]
    pub eth: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunFlags {
    /// Config file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(k) = self.knn {
            c.knn_percent = k;
        }
        if let Some(e) = self.eth {
            c.eth = Some(e);
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        Ok(c)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (local-densities or two-spirals) as CSV.
    Generate {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one model and write its reports.
    Fit(RunFlags),
    /// Sweep %KNN × E_th and rank candidate models.
    Sweep(RunFlags),
    /// Allocate new points with a stored model; no descent.
    Allocate {
        /// model.json written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Headed CSV of points.
        #[arg(long)]
        points: PathBuf,
        /// Non-feature column of the points file; repeatable.
        #[arg(long = "label-column")]
        label_columns: Vec<String>,
        /// Points are already in model space (skip preprocessing).
        #[arg(long)]
        preprocessed: bool,
        #[arg(long, default_value = "pqc-out")]
        out: PathBuf,
    },
    /// Jaccard score and Cramér's V of an assignment against labels.
    Score {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long, default_value = "cluster")]
        assignment_column: String,
    },
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Executes a parsed command; the caller maps errors to exit codes.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { name, seed, out } => {
            let bytes = cmd_generate(&name, seed, out.as_deref())?;
            if out.is_none() {
                use std::io::Write;
                std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
        Command::Fit(flags) => {
            let config = flags.resolve()?;
            print_json(&cmd_fit(&config)?);
        }
        Command::Sweep(flags) => {
            let config = flags.resolve()?;
            print_json(&cmd_sweep(&config)?);
        }
        Command::Allocate {
            model,
            points,
            label_columns,
            preprocessed,
            out,
        } => {
            let r = cmd_allocate(&model, &points, &label_columns, preprocessed, &out)?;
            log::info!("allocated {} points into {}", r.assignment.len(), out.display());
        }
        Command::Score {
            labels,
            label_column,
            assignment,
            assignment_column,
        } => print_json(&cmd_score(&labels, &label_column, &assignment, &assignment_column)?),
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
