//! Exact posterior-mean denoiser for a known Gaussian mixture.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHandle;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, log_sum_exp};
use crate::nn::Objective;
use crate::schedule::Schedule;
use crate::synthdata::GmmSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Full,
    StopGradient,
}

/// Where the classifier gradient is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidancePath {
    #[default]
    Raw,
    X0Pred(JacobianMode),
}

impl fmt::Display for GuidancePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidancePath::Raw => "raw",
            GuidancePath::X0Pred(JacobianMode::Full) => "x0pred",
            GuidancePath::X0Pred(JacobianMode::StopGradient) => "x0pred-stopgrad",
        })
    }
}

impl FromStr for GuidancePath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(GuidancePath::Raw),
            "x0pred" | "x0pred-full" => Ok(GuidancePath::X0Pred(JacobianMode::Full)),
            "x0pred-stopgrad" => Ok(GuidancePath::X0Pred(JacobianMode::StopGradient)),
            other => Err(Error::InvalidArgument(format!(
                "unknown path '{other}' (expected raw, x0pred, x0pred-stopgrad)"
            ))),
        }
    }
}

impl Serialize for GuidancePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GuidancePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
struct Pooled {
    log_weight: f64,
    mean: Vec<f64>,
}

/// Per-step, per-component constants of the noised marginal.
#[derive(Debug, Clone)]
struct StepComponent {
    /// `sqrt(abar) mu`
    shift: Vec<f64>,
    /// `(abar Sigma + (1 - abar) I)^-1`
    cinv: Vec<f64>,
    /// `sqrt(abar) Sigma C^-1`
    gain: Vec<f64>,
    log_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Vec<f64>,
    /// Row-major `d x d`, entry `(i, j) = d mean_i / d x_j`.
    pub jacobian: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    spec: GmmSpec,
    schedule: Schedule,
    dim: usize,
    comps: Vec<Pooled>,
    steps: Vec<Vec<StepComponent>>,
}

impl AnalyticDenoiser {
    pub fn new(spec: &GmmSpec, schedule: &Schedule) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut comps = Vec::new();
        let mut covs = Vec::new();
        for class in &spec.classes {
            for c in &class.components {
                let w = class.prior * c.weight;
                if w > 0.0 {
                    comps.push(Pooled { log_weight: w.ln(), mean: c.mean.clone() });
                    covs.push(linalg::to_dmatrix(d, &c.cov_flat()));
                }
            }
        }
        let eye = nalgebra::DMatrix::<f64>::identity(d, d);
        let norm_const = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        let steps = (1..=schedule.steps())
            .map(|t| {
                let a = schedule.alpha_bar(t);
                let sa = a.sqrt();
                comps
                    .iter()
                    .zip(&covs)
                    .map(|(p, cov)| {
                        let c = cov * a + &eye * (1.0 - a);
                        let (cinv, logdet) = linalg::sym_inverse_logdet(&c);
                        let gain = cov * &cinv * sa;
                        StepComponent {
                            shift: p.mean.iter().map(|m| sa * m).collect(),
                            cinv: linalg::from_dmatrix(&cinv),
                            gain: linalg::from_dmatrix(&gain),
                            log_norm: norm_const - 0.5 * logdet,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { spec: spec.clone(), schedule: schedule.clone(), dim: d, comps, steps })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64], t: usize) -> Result<()> {
        check_dim(self.dim, x.len())?;
        self.schedule.check_step(t)
    }

    /// `E[x0 | x_t]` and, on request, its Jacobian. Inputs must be validated.
    pub(crate) fn posterior(&self, x: &[f64], t: usize, with_jacobian: bool) -> Posterior {
        let d = self.dim;
        let table = &self.steps[t - 1];
        let k = table.len();
        let mut diff = vec![0.0; d];
        let mut s = vec![0.0; d * k];
        let mut e = vec![0.0; d * k];
        let mut logr = vec![0.0; k];
        for (i, (sc, p)) in table.iter().zip(&self.comps).enumerate() {
            for (j, dj) in diff.iter_mut().enumerate() {
                *dj = x[j] - sc.shift[j];
            }
            let si = &mut s[i * d..(i + 1) * d];
            linalg::matvec(d, &sc.cinv, &diff, si);
            logr[i] = p.log_weight + sc.log_norm - 0.5 * linalg::dot(&diff, si);
            si.iter_mut().for_each(|v| *v = -*v);
            let ei = &mut e[i * d..(i + 1) * d];
            linalg::matvec(d, &sc.gain, &diff, ei);
            for (ej, mj) in ei.iter_mut().zip(&p.mean) {
                *ej += mj;
            }
        }
        let lse = log_sum_exp(&logr);
        let r: Vec<f64> = logr.iter().map(|l| (l - lse).exp()).collect();
        let mut mean = vec![0.0; d];
        for (ri, ei) in r.iter().zip(e.chunks(d)) {
            for (m, v) in mean.iter_mut().zip(ei) {
                *m += ri * v;
            }
        }
        let jacobian = with_jacobian.then(|| {
            let mut sbar = vec![0.0; d];
            for (ri, si) in r.iter().zip(s.chunks(d)) {
                for (b, v) in sbar.iter_mut().zip(si) {
                    *b += ri * v;
                }
            }
            let mut jac = vec![0.0; d * d];
            for (i, ri) in r.iter().enumerate() {
                if *ri == 0.0 {
                    continue;
                }
                let gain = &table[i].gain;
                let ei = &e[i * d..(i + 1) * d];
                let si = &s[i * d..(i + 1) * d];
                for a in 0..d {
                    let de = ri * (ei[a] - mean[a]);
                    for b in 0..d {
                        jac[a * d + b] += ri * gain[a * d + b] + de * (si[b] - sbar[b]);
                    }
                }
            }
            jac
        });
        Posterior { mean, jacobian }
    }

    pub fn posterior_mean_x0(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check(x, t)?;
        Ok(self.posterior(x, t, false).mean)
    }

    /// `(x_t - sqrt(abar) E[x0|x_t]) / sqrt(1 - abar)`.
    pub fn epsilon(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check(x, t)?;
        let a = self.schedule.alpha_bar(t);
        if a >= 1.0 {
            return Err(Error::DegenerateStep { t });
        }
        let e = self.posterior(x, t, false).mean;
        Ok(eps_from_mean(x, &e, a))
    }

    /// `x_t / sqrt(abar) - sqrt(1 - abar) / sqrt(abar) * eps(x_t)`.
    pub fn x0_prediction(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let eps = self.epsilon(x, t)?;
        let a = self.schedule.alpha_bar(t);
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(x.iter().zip(&eps).map(|(xi, ei)| xi / sa - sb / sa * ei).collect())
    }

    pub fn x0_jacobian(&self, x: &[f64], t: usize, mode: JacobianMode) -> Result<Vec<f64>> {
        self.check(x, t)?;
        Ok(match mode {
            JacobianMode::Full => self.posterior(x, t, true).jacobian.expect("requested"),
            JacobianMode::StopGradient => self.stop_gradient_jacobian(t),
        })
    }

    fn stop_gradient_jacobian(&self, t: usize) -> Vec<f64> {
        let d = self.dim;
        let v = 1.0 / self.schedule.alpha_bar(t).sqrt();
        (0..d * d).map(|i| if i % (d + 1) == 0 { v } else { 0.0 }).collect()
    }

    /// Classifier gradient at `x_t` (raw) or pulled back through `x0_hat` (x0pred).
    pub fn guided_log_prob_gradient(
        &self,
        h: &ClassifierHandle,
        x: &[f64],
        t: usize,
        y: usize,
        path: GuidancePath,
        objective: Objective,
    ) -> Result<Vec<f64>> {
        self.check(x, t)?;
        match path {
            GuidancePath::Raw => h.objective_gradient(x, y, objective),
            GuidancePath::X0Pred(mode) => {
                let post = self.posterior(x, t, mode == JacobianMode::Full);
                let g0 = h.objective_gradient(&post.mean, y, objective)?;
                let jac = match mode {
                    JacobianMode::Full => post.jacobian.expect("requested"),
                    JacobianMode::StopGradient => self.stop_gradient_jacobian(t),
                };
                let mut g = vec![0.0; self.dim];
                linalg::matvec_t(self.dim, &jac, &g0, &mut g);
                Ok(g)
            }
        }
    }

    /// Logits of `h` at `x_t` (raw) or at `x0_hat(x_t)` (x0pred).
    pub fn path_logits(&self, h: &ClassifierHandle, x: &[f64], t: usize, path: GuidancePath) -> Result<Vec<f64>> {
        self.check(x, t)?;
        Ok(match path {
            GuidancePath::Raw => h.logits_unchecked(x),
            GuidancePath::X0Pred(_) => h.logits_unchecked(&self.posterior(x, t, false).mean),
        })
    }
}

pub(crate) fn eps_from_mean(x: &[f64], mean: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x.iter().zip(mean).map(|(xi, mi)| (xi - sa * mi) / sb).collect()
}
