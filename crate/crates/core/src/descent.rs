//! ADAM descent of replica points down the potential.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::fmt_f64;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::potential::PotentialField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub max_iterations: usize,
    /// Position criterion: max_i |Δy_i| ≤ eps_y.
    pub eps_y: f64,
    /// Potential criterion: max_i |ΔV(y_i)| ≤ eps_v.
    pub eps_v: f64,
    /// A replica meeting both criteria on this many consecutive iterations is
    /// frozen and no longer evaluated; 0 keeps every replica moving.
    pub freeze_after: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            max_iterations: 2000,
            eps_y: 1e-3,
            eps_v: 1e-3,
            freeze_after: 5,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("descent: {what}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon_adam > 0.0) {
            return bad("epsilon_adam must be positive");
        }
        if !(self.eps_y > 0.0 && self.eps_v > 0.0) {
            return bad("eps_y and eps_v must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentResult {
    /// V at the starting observations, y_i(0) = x_i.
    pub initial_potentials: Vec<f64>,
    pub final_points: Matrix,
    pub final_potentials: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub last_max_step: f64,
    pub last_max_dv: f64,
}

/// Receives (iteration, replica, position, V) after every evaluation.
pub type Observer<'o> = &'o mut dyn FnMut(usize, usize, &[f64], f64);

/// Runs full-batch ADAM from y_i(0) = x_i until both stopping criteria hold.
pub fn descend(field: &PotentialField<'_>, x: &Matrix, config: &DescentConfig) -> Result<DescentResult> {
    descend_observed(field, x, config, None)
}

pub fn descend_observed(
    field: &PotentialField<'_>,
    x: &Matrix,
    config: &DescentConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<DescentResult> {
    config.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    let mut y = x.clone();
    let mut prev = x.clone();
    let mut m = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    let mut grads = vec![0.0; n * d];
    let mut pots = vec![0.0; n];
    let mut prev_pots = vec![0.0; n];
    let mut last_max_step = f64::INFINITY;
    let mut last_max_dv = f64::INFINITY;
    let mut converged = false;
    let mut t = 0usize;
    let mut initial_potentials = Vec::new();
    let mut calm = vec![0usize; n];
    let mut frozen = vec![false; n];

    loop {
        let ys = y.as_slice();
        pots.par_iter_mut()
            .zip(grads.par_chunks_mut(d))
            .enumerate()
            .filter(|(i, _)| !frozen[*i])
            .for_each(|(i, (p, g))| *p = field.potential_and_gradient(&ys[i * d..(i + 1) * d], g));
        if t == 0 {
            initial_potentials = pots.clone();
        }
        if let Some(obs) = observer.as_mut() {
            for i in 0..n {
                obs(t, i, y.row(i), pots[i]);
            }
        }
        if t > 0 {
            last_max_step = 0.0;
            last_max_dv = 0.0;
            for i in 0..n {
                if frozen[i] {
                    continue;
                }
                let step = crate::matrix::dist(y.row(i), prev.row(i));
                let dv = (pots[i] - prev_pots[i]).abs();
                last_max_step = last_max_step.max(step);
                last_max_dv = last_max_dv.max(dv);
                if step <= config.eps_y && dv <= config.eps_v {
                    calm[i] += 1;
                    frozen[i] = config.freeze_after > 0 && calm[i] >= config.freeze_after;
                } else {
                    calm[i] = 0;
                }
            }
            if last_max_step <= config.eps_y && last_max_dv <= config.eps_v {
                converged = true;
                break;
            }
        }
        if t >= config.max_iterations {
            break;
        }
        if let Some(bad) = (0..n * d).find(|&k| !frozen[k / d] && !grads[k].is_finite()) {
            return Err(Error::NonFiniteGradient {
                index: bad / d.max(1),
                iteration: t,
            });
        }
        t += 1;
        prev.clone_from(&y);
        prev_pots.copy_from_slice(&pots);
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        for (k, g) in grads.iter().enumerate() {
            let (i, j) = (k / d, k % d);
            if frozen[i] {
                continue;
            }
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            let step = config.learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + config.epsilon_adam);
            y.set(i, j, y.get(i, j) - step);
        }
    }

    if !converged {
        log::warn!(
            "descent stopped after {t} iterations without converging (max step {last_max_step:.3e}, max dV {last_max_dv:.3e})"
        );
    }
    Ok(DescentResult {
        initial_potentials,
        final_points: y,
        final_potentials: pots,
        iterations_used: t,
        converged,
        last_max_step,
        last_max_dv,
    })
}

/// E_th = max(ε_V, last max ΔV): the smallest threshold that cannot merge
/// wells only because descent had not settled.
pub fn default_energy_threshold(result: &DescentResult, config: &DescentConfig) -> f64 {
    if result.last_max_dv.is_finite() {
        config.eps_v.max(result.last_max_dv)
    } else {
        config.eps_v
    }
}

/// Runs descent while streaming the trajectory as CSV
/// (`iteration,replica,y0..,v`).
pub fn descend_with_trajectory<W: Write>(
    field: &PotentialField<'_>,
    x: &Matrix,
    config: &DescentConfig,
    out: W,
) -> Result<DescentResult> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "replica".to_string()];
    header.extend((0..x.ncols()).map(|j| format!("y{j}")));
    header.push("v".into());
    let wrap = |e: csv::Error| Error::Csv {
        path: "<trajectory>".into(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(wrap)?;
    let mut failure: Option<csv::Error> = None;
    let mut obs = |t: usize, i: usize, p: &[f64], v: f64| {
        if failure.is_some() {
            return;
        }
        let mut rec = vec![t.to_string(), i.to_string()];
        rec.extend(p.iter().map(|x| fmt_f64(*x)));
        rec.push(fmt_f64(v));
        if let Err(e) = w.write_record(&rec) {
            failure = Some(e);
        }
    };
    let res = descend_observed(field, x, config, Some(&mut obs))?;
    if let Some(e) = failure {
        return Err(wrap(e));
    }
    w.flush().map_err(|e| Error::io("<trajectory>", e))?;
    Ok(res)
}
