//! Schrödinger potential V(x) and its analytic gradient.
//!
//! With Ψ-weights w_i = ψ_i / Σ_j ψ_j and ⟨·⟩ the weighted mean:
//!
//! * isotropic variants: V = E − d/2 + ⟨F_i⟩ with F_i = |x−x_i|² / 2σ_i², and
//!   ∇V = ⟨g_i⟩(1 + ⟨F_i⟩) − ⟨F_i g_i⟩ with g_i = (x−x_i)/σ_i²;
//! * covariance variant: σ_i² is replaced by s_i = tr(Σ_i)/d, the mean
//!   eigenvalue, so that Σ_i = σ²I gives back the isotropic potential.
//!   V = E + ⟨G_i⟩ with G_i = ½ s_i (|Σ_i⁻¹(x−x_i)|² − tr(Σ_i⁻¹)), and
//!   ∇V = ⟨s_i Σ_i⁻²(x−x_i) − G_i Σ_i⁻¹(x−x_i)⟩ + ⟨G_i⟩⟨Σ_i⁻¹(x−x_i)⟩.
//!
//! Components whose log-weight sits more than [`LOG_WEIGHT_CUTOFF`] below the
//! largest one are skipped; their relative contribution is below e^-50.

use std::io::Write;

use crate::dataio::fmt_f64;
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, KernelVariant};

/// Log-weight gap beyond which a component is ignored.
pub const LOG_WEIGHT_CUTOFF: f64 = 50.0;

/// A kernel model together with the energy offset E.
#[derive(Debug, Clone, Copy)]
pub struct PotentialField<'a> {
    model: &'a KernelModel,
    energy_offset: f64,
}

impl<'a> PotentialField<'a> {
    pub fn new(model: &'a KernelModel) -> Self {
        Self {
            model,
            energy_offset: 0.0,
        }
    }

    pub fn with_offset(model: &'a KernelModel, energy_offset: f64) -> Self {
        Self {
            model,
            energy_offset,
        }
    }

    pub fn model(&self) -> &'a KernelModel {
        self.model
    }

    pub fn energy_offset(&self) -> f64 {
        self.energy_offset
    }

    /// V(x).
    pub fn potential(&self, x: &[f64]) -> f64 {
        self.energy_offset + self.eval(x, None)
    }

    /// ∇V(x); independent of E.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.eval(x, Some(&mut g));
        g
    }

    /// V(x) and ∇V(x) from a single pass over the components.
    pub fn potential_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.energy_offset + self.eval(x, Some(grad))
    }

    /// Checked variant of [`Self::potential`].
    pub fn try_potential(&self, x: &[f64]) -> Result<f64> {
        self.model.check_point(x)?;
        Ok(self.potential(x))
    }

    /// Sets E so that the minimum of V over `points` is exactly 0.
    pub fn calibrate_offset<'p>(
        mut self,
        points: impl IntoIterator<Item = &'p [f64]>,
    ) -> Result<Self> {
        let min = points
            .into_iter()
            .map(|p| self.eval(p, None))
            .fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(Error::InvalidInput(
                "offset calibration needs at least one point".into(),
            ));
        }
        self.energy_offset = -min;
        Ok(self)
    }

    /// V(x) − E, filling `grad` when requested.
    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self.model.variant {
            KernelVariant::GlobalSigma | KernelVariant::PerPointSigma => {
                eval_isotropic(self.model, x, grad)
            }
            KernelVariant::PerPointCovariance => eval_covariance(self.model, x, grad),
        }
    }

    /// Samples (x, y, V, ∂V/∂x, ∂V/∂y) over a regular 2-D grid as CSV.
    pub fn write_grid_csv<W: Write>(
        &self,
        x_range: (f64, f64),
        y_range: (f64, f64),
        resolution: (usize, usize),
        out: W,
    ) -> Result<()> {
        if self.model.d() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: self.model.d(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::Csv {
            path: "<grid>".into(),
            message: e.to_string(),
        };
        w.write_record(["x", "y", "v", "dv_dx", "dv_dy"])
            .map_err(wrap)?;
        for p in grid_points(x_range, y_range, resolution) {
            let mut g = [0.0; 2];
            let v = self.potential_and_gradient(&p, &mut g);
            w.write_record([p[0], p[1], v, g[0], g[1]].map(fmt_f64))
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<grid>", e))?;
        Ok(())
    }
}

/// Row-major lattice over a 2-D box; x varies fastest.
pub fn grid_points(
    x_range: (f64, f64),
    y_range: (f64, f64),
    (nx, ny): (usize, usize),
) -> Vec<[f64; 2]> {
    let step = |(a, b): (f64, f64), n: usize, i: usize| {
        if n <= 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([step(x_range, nx, i), step(y_range, ny, j)]);
        }
    }
    out
}

fn eval_isotropic(model: &KernelModel, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = model.n();
    let d = model.d();
    let normalized = model.variant.is_normalized();
    let mut logs = Vec::with_capacity(n);
    let mut fs = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let s = model.iso_sigma(i);
        let q = crate::matrix::sq_dist(x, model.centers.row(i));
        let f = q / (2.0 * s * s);
        let mut l = -f;
        if normalized {
            l -= d as f64 * s.ln();
        }
        max = max.max(l);
        logs.push(l);
        fs.push(f);
    }
    let floor = max - LOG_WEIGHT_CUTOFF;
    let mut z = 0.0;
    let mut f_mean = 0.0;
    for i in 0..n {
        if logs[i] < floor {
            logs[i] = 0.0;
            continue;
        }
        let w = (logs[i] - max).exp();
        logs[i] = w;
        z += w;
        f_mean += w * fs[i];
    }
    f_mean /= z;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        let c = model.centers.as_slice();
        for i in 0..n {
            let w = logs[i];
            if w == 0.0 {
                continue;
            }
            let s2 = model.iso_sigma(i).powi(2);
            // ⟨g⟩(1+⟨F⟩) − ⟨F g⟩ accumulated as Σ w g (1 + ⟨F⟩ − F) / Z
            let coef = w * (1.0 + f_mean - fs[i]) / (s2 * z);
            let ci = &c[i * d..(i + 1) * d];
            for ((gv, xv), cv) in g.iter_mut().zip(x).zip(ci) {
                *gv += coef * (xv - cv);
            }
        }
    }
    -0.5 * d as f64 + f_mean
}

fn eval_covariance(model: &KernelModel, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = model.n();
    let d = model.d();
    let covs = &model.covariances;
    // cheap upper bound on log ψ_i from the largest eigenvalue
    let mut upper = Vec::with_capacity(n);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, cov) in covs.iter().enumerate() {
        let q = crate::matrix::sq_dist(x, model.centers.row(i));
        let ub = -0.5 * q / cov.max_eigenvalue() - 0.5 * cov.log_det_2pi();
        if ub > best.0 {
            best = (ub, i);
        }
        upper.push(ub);
    }
    let mut r = vec![0.0; d];
    let mut rot = vec![0.0; n * d];
    let mut logs = vec![f64::NEG_INFINITY; n];
    let mut exact_at = |i: usize, rot: &mut [f64], logs: &mut [f64]| {
        for ((t, a), b) in r.iter_mut().zip(x).zip(model.centers.row(i)) {
            *t = a - b;
        }
        let u = &mut rot[i * d..(i + 1) * d];
        covs[i].rotate(&r, u);
        let maha: f64 = u
            .iter()
            .zip(covs[i].eigenvalues())
            .map(|(v, l)| v * v / l)
            .sum();
        logs[i] = -0.5 * maha - 0.5 * covs[i].log_det_2pi();
        logs[i]
    };
    let anchor = exact_at(best.1, &mut rot, &mut logs);
    let floor = anchor - LOG_WEIGHT_CUTOFF;
    let mut max = anchor;
    for i in 0..n {
        if i != best.1 && upper[i] >= floor {
            max = max.max(exact_at(i, &mut rot, &mut logs));
        }
    }
    let floor = max - LOG_WEIGHT_CUTOFF;
    let mut z = 0.0;
    let mut g_mean = 0.0;
    let mut weights = vec![0.0; n];
    let mut gs = vec![0.0; n];
    for i in 0..n {
        if logs[i] < floor {
            continue;
        }
        let w = (logs[i] - max).exp();
        let cov = &covs[i];
        let u = &rot[i * d..(i + 1) * d];
        let sq: f64 = u
            .iter()
            .zip(cov.eigenvalues())
            .map(|(v, l)| v * v / (l * l))
            .sum();
        let gi = 0.5 * cov.trace() / d as f64 * (sq - cov.inv_trace());
        weights[i] = w;
        gs[i] = gi;
        z += w;
        g_mean += w * gi;
    }
    g_mean /= z;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut coeffs = vec![0.0; d];
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let cov = &covs[i];
            let u = &rot[i * d..(i + 1) * d];
            let scale = w / z;
            for ((c, v), l) in coeffs.iter_mut().zip(u).zip(cov.eigenvalues()) {
                *c = scale * (cov.trace() / d as f64 * v / (l * l) + (g_mean - gs[i]) * v / l);
            }
            cov.unrotate_add(&coeffs, g);
        }
    }
    g_mean
}
