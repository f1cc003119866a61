//! Forward-process diagnostics: accuracy under noise and the finite-difference
//! sensitivities of logits, gradients and stabilized gradients.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, ClassifierHandle, Preprocess};
use crate::denoiser::{AnalyticDenoiser, GuidancePath};
use crate::error::{check_dim, Error, Result};
use crate::guidance::{StabilizerConfig, StabilizerState};
use crate::linalg::dist;
use crate::nn::Objective;
use crate::numfmt::sig17;
use crate::rng::{self, standard_normal_vec};
use crate::synthdata::LabeledDataset;

/// `|a - b| / |x - x'|`, undefined when the inputs coincide.
fn ratio(a: &[f64], b: &[f64], x: &[f64], xp: &[f64]) -> Option<f64> {
    let den = dist(x, xp);
    (den > 0.0).then(|| dist(a, b) / den)
}

/// Logit sensitivity between two inputs.
pub fn logit_sensitivity(h: &ClassifierHandle, x_t: &[f64], x_prev: &[f64]) -> Result<Option<f64>> {
    check_dim(x_t.len(), x_prev.len())?;
    Ok(ratio(&h.predict_logits(x_t)?, &h.predict_logits(x_prev)?, x_t, x_prev))
}

/// Gradient sensitivity between `x_t` (at step `t`) and `x_prev` (at `t - 1`).
#[allow(clippy::too_many_arguments)]
pub fn gradient_sensitivity(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    t: usize,
    x_t: &[f64],
    x_prev: &[f64],
    y: usize,
    path: GuidancePath,
    objective: Objective,
) -> Result<Option<f64>> {
    if t < 2 {
        return Err(Error::StepOutOfRange { t, max: dn.schedule().steps() });
    }
    let a = dn.guided_log_prob_gradient(h, x_t, t, y, path, objective)?;
    let b = dn.guided_log_prob_gradient(h, x_prev, t - 1, y, path, objective)?;
    Ok(ratio(&a, &b, x_t, x_prev))
}

/// Per-step gradients along a trajectory (`traj[t - 1] = x_t`).
fn trajectory_gradients(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    traj: &[Vec<f64>],
    y: usize,
    path: GuidancePath,
    objective: Objective,
) -> Result<Vec<Vec<f64>>> {
    traj.iter()
        .enumerate()
        .map(|(i, x)| dn.guided_log_prob_gradient(h, x, i + 1, y, path, objective))
        .collect()
}

/// Walks `t = T..1` feeding gradients to a fresh stabilizer; entry `t` holds
/// the ratio between the outputs at `t` and `t - 1` (entries 0 and 1 are `None`).
fn stabilized_ratios(traj: &[Vec<f64>], grads: &[Vec<f64>], cfg: &StabilizerConfig) -> Result<Vec<Option<f64>>> {
    let steps = traj.len();
    let mut out = vec![None; steps + 1];
    let mut state = StabilizerState::new(traj.first().map_or(0, Vec::len));
    let mut later: Option<Vec<f64>> = None;
    for t in (1..=steps).rev() {
        let nu = state.stabilize(cfg, &grads[t - 1])?;
        if let Some(prev) = &later {
            out[t + 1] = ratio(prev, &nu, &traj[t], &traj[t - 1]);
        }
        later = Some(nu);
    }
    Ok(out)
}

/// Stabilized gradient sensitivity along one shared-noise trajectory.
pub fn stabilized_gradient_sensitivity(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    trajectory: &[Vec<f64>],
    y: usize,
    path: GuidancePath,
    objective: Objective,
    stabilizer: &StabilizerConfig,
) -> Result<Vec<Option<f64>>> {
    if trajectory.len() != dn.schedule().steps() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} points for {} steps",
            trajectory.len(),
            dn.schedule().steps()
        )));
    }
    let grads = trajectory_gradients(h, dn, trajectory, y, path, objective)?;
    stabilized_ratios(trajectory, &grads, stabilizer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Logit,
    Gradient,
    Stabilized(StabilizerConfig),
}

impl Metric {
    pub fn label(&self, path: GuidancePath) -> &'static str {
        match (self, path) {
            (Metric::Logit, _) => "S_l",
            (Metric::Gradient, GuidancePath::Raw) => "S_g",
            (Metric::Gradient, _) => "S_g_hat",
            (Metric::Stabilized(_), _) => "S_g_stabilized",
        }
    }

    pub fn stabilizer(&self) -> StabilizerConfig {
        match self {
            Metric::Stabilized(s) => *s,
            _ => StabilizerConfig::Identity,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Logit => f.write_str("logit"),
            Metric::Gradient => f.write_str("gradient"),
            Metric::Stabilized(s) => write!(f, "stabilized({s})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub metric: String,
    pub path: String,
    pub stabilizer: String,
    /// `t = 2..=T`, ascending.
    pub points: Vec<CurvePoint>,
    pub degenerate: bool,
}

impl SensitivityCurve {
    fn from_samples(metric: &Metric, path: GuidancePath, per_sample: &[Vec<Option<f64>>], steps: usize) -> Self {
        let points: Vec<CurvePoint> = (2..=steps)
            .map(|t| {
                let vals: Vec<f64> = per_sample.iter().filter_map(|s| s[t]).collect();
                let n = vals.len();
                let (mean, std) = if n == 0 {
                    (f64::NAN, f64::NAN)
                } else {
                    let m = vals.iter().sum::<f64>() / n as f64;
                    let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
                    (m, v.sqrt())
                };
                CurvePoint { t, mean, std, count: n, undefined: per_sample.len() - n }
            })
            .collect();
        let degenerate = points.iter().all(|p| p.count == 0);
        Self {
            metric: metric.label(path).into(),
            path: path.to_string(),
            stabilizer: metric.stabilizer().to_string(),
            points,
            degenerate,
        }
    }

    pub fn mean_at(&self, t: usize) -> Option<f64> {
        self.points.iter().find(|p| p.t == t).map(|p| p.mean).filter(|m| m.is_finite())
    }

    /// Average of per-step means over `t` in `range`.
    pub fn average(&self, range: impl std::ops::RangeBounds<usize>) -> f64 {
        let v: Vec<f64> =
            self.points.iter().filter(|p| range.contains(&p.t) && p.mean.is_finite()).map(|p| p.mean).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_curves_csv(std::slice::from_ref(self), path)
    }
}

pub fn write_curves_csv(curves: &[SensitivityCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "mean", "std", "count", "metric", "path", "stabilizer"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                p.t.to_string(),
                sig17(p.mean),
                sig17(p.std),
                p.count.to_string(),
                c.metric.clone(),
                c.path.clone(),
                c.stabilizer.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Several curves over the same shared-noise trajectories. Each sample's
/// target is its own label; gradients are computed once per sample and
/// shared by every gradient-based metric.
pub fn curves(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    data: &LabeledDataset,
    path: GuidancePath,
    objective: Objective,
    metrics: &[Metric],
    seed: u64,
) -> Result<Vec<SensitivityCurve>> {
    check_dim(dn.dim(), data.dim())?;
    check_dim(h.dim(), data.dim())?;
    for m in metrics {
        m.stabilizer().validate()?;
    }
    let steps = dn.schedule().steps();
    let d = data.dim();
    let noise = standard_normal_vec(&mut rng::stream(seed, "sensitivity-noise", 0), data.len() * d);
    let need_grads = metrics.iter().any(|m| !matches!(m, Metric::Logit));
    let per_sample: Vec<Vec<Vec<Option<f64>>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let traj = dn.schedule().coupled_trajectory(data.point(i), &noise[i * d..(i + 1) * d])?;
            let y = data.label(i);
            let grads = if need_grads { Some(trajectory_gradients(h, dn, &traj, y, path, objective)?) } else { None };
            let mut logits = None;
            metrics
                .iter()
                .map(|m| match m {
                    Metric::Logit => {
                        if logits.is_none() {
                            logits = Some(
                                traj.iter()
                                    .enumerate()
                                    .map(|(k, x)| dn.path_logits(h, x, k + 1, path))
                                    .collect::<Result<Vec<_>>>()?,
                            );
                        }
                        Ok(pairwise(&traj, logits.as_ref().expect("computed")))
                    }
                    Metric::Gradient => Ok(pairwise(&traj, grads.as_ref().expect("computed"))),
                    Metric::Stabilized(s) => stabilized_ratios(&traj, grads.as_ref().expect("computed"), s),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let rows: Vec<Vec<Option<f64>>> = per_sample.iter().map(|s| s[j].clone()).collect();
            SensitivityCurve::from_samples(m, path, &rows, steps)
        })
        .collect())
}

fn pairwise(traj: &[Vec<f64>], vals: &[Vec<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; traj.len() + 1];
    for t in 2..=traj.len() {
        out[t] = ratio(&vals[t - 1], &vals[t - 2], &traj[t - 1], &traj[t - 2]);
    }
    out
}

pub fn curve(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    data: &LabeledDataset,
    metric: Metric,
    path: GuidancePath,
    objective: Objective,
    seed: u64,
) -> Result<SensitivityCurve> {
    Ok(curves(h, dn, data, path, objective, &[metric], seed)?.remove(0))
}

/// Accuracy after forward noise to each `t` (raw) or after denoising (x0pred).
pub fn accuracy_curve(
    h: &ClassifierHandle,
    dn: &AnalyticDenoiser,
    data: &LabeledDataset,
    path: GuidancePath,
    ts: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    ts.iter()
        .map(|&t| {
            let pre = match path {
                GuidancePath::Raw => Preprocess::ForwardNoise { schedule: dn.schedule(), t },
                GuidancePath::X0Pred(_) => Preprocess::X0Pred { denoiser: dn, t },
            };
            Ok((t, accuracy(h, data, pre, seed)?))
        })
        .collect()
}
