//! Non-robust, robust and Bayes-optimal classifiers behind one interface.

use rayon::prelude::*;

use crate::denoiser::AnalyticDenoiser;
use crate::error::{check_dim, Error, Result};
use crate::nn::{argmax, objective_cotangent, Mlp, Objective};
use crate::rng::{self, standard_normal_vec};
use crate::schedule::Schedule;
use crate::synthdata::{GmmSpec, LabeledDataset, Mixture};

#[derive(Debug, Clone)]
pub struct BayesOracle {
    spec: GmmSpec,
    mixture: Mixture,
}

impl BayesOracle {
    pub fn new(spec: &GmmSpec) -> Result<Self> {
        Ok(Self { mixture: spec.prepare()?, spec: spec.clone() })
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }
}

#[derive(Debug, Clone)]
pub enum ClassifierHandle {
    NonRobust(Mlp),
    Robust(Mlp),
    BayesOracle(Box<BayesOracle>),
}

impl ClassifierHandle {
    pub fn bayes_oracle(spec: &GmmSpec) -> Result<Self> {
        Ok(Self::BayesOracle(Box::new(BayesOracle::new(spec)?)))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::NonRobust(_) => "non_robust",
            Self::Robust(_) => "robust",
            Self::BayesOracle(_) => "bayes_oracle",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::NonRobust(m) | Self::Robust(m) => m.input_dim(),
            Self::BayesOracle(o) => o.mixture.dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::NonRobust(m) | Self::Robust(m) => m.num_classes(),
            Self::BayesOracle(o) => o.mixture.num_classes(),
        }
    }

    /// MLP logits, or exact `log(pi_y p(x | y))` for the oracle.
    pub fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.logits_unchecked(x))
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::NonRobust(m) | Self::Robust(m) => m.forward_unchecked(x),
            Self::BayesOracle(o) => o.mixture.log_joint(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_logits(x)?))
    }

    /// Input gradient of the objective evaluated at class `y`.
    pub fn objective_gradient(&self, x: &[f64], y: usize, objective: Objective) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if y >= self.num_classes() {
            return Err(Error::ClassOutOfRange { class: y, classes: self.num_classes() });
        }
        match self {
            Self::NonRobust(m) | Self::Robust(m) => Ok(m.objective_gradient(x, y, objective)?.1),
            Self::BayesOracle(o) => {
                let d = x.len();
                let (logits, grads) = o.mixture.log_joint_with_grads(x);
                let (_, cot) = objective_cotangent(&logits, y, objective);
                let mut g = vec![0.0; d];
                for (c, row) in cot.iter().zip(grads.chunks(d)) {
                    for (gi, ri) in g.iter_mut().zip(row) {
                        *gi += c * ri;
                    }
                }
                Ok(g)
            }
        }
    }

    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.objective_gradient(x, y, Objective::LogSoftmax)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Preprocess<'a> {
    None,
    ForwardNoise { schedule: &'a Schedule, t: usize },
    /// Noise to step `t`, then classify the posterior-mean estimate of `x0`.
    X0Pred { denoiser: &'a AnalyticDenoiser, t: usize },
}

/// Fraction of rows classified correctly after preprocessing.
///
/// Noise for row `i` is the `i`-th draw of one stream keyed by `seed`, so two
/// preprocessings evaluated with the same seed see the same noise.
pub fn accuracy(h: &ClassifierHandle, data: &LabeledDataset, pre: Preprocess<'_>, seed: u64) -> Result<f64> {
    check_dim(h.dim(), data.dim())?;
    let noise = match pre {
        Preprocess::None => None,
        Preprocess::ForwardNoise { schedule, t } => {
            if t > schedule.steps() {
                return Err(Error::StepOutOfRange { t, max: schedule.steps() });
            }
            Some(noise_matrix(data, seed))
        }
        Preprocess::X0Pred { denoiser, t } => {
            denoiser.schedule().check_step(t)?;
            Some(noise_matrix(data, seed))
        }
    };
    let d = data.dim();
    let correct: usize = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x0 = data.point(i);
            let x = match pre {
                Preprocess::None => x0.to_vec(),
                Preprocess::ForwardNoise { schedule, t } => {
                    let eps = &noise.as_ref().expect("drawn")[i * d..(i + 1) * d];
                    schedule.forward_unchecked(x0, t, eps)
                }
                Preprocess::X0Pred { denoiser, t } => {
                    let eps = &noise.as_ref().expect("drawn")[i * d..(i + 1) * d];
                    let xt = denoiser.schedule().forward_unchecked(x0, t, eps);
                    denoiser.posterior(&xt, t, false).mean
                }
            };
            usize::from(argmax(&h.logits_unchecked(&x)) == data.label(i))
        })
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

fn noise_matrix(data: &LabeledDataset, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "accuracy-noise", 0);
    standard_normal_vec(&mut r, data.len() * data.dim())
}
