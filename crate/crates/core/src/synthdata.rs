//! Labeled Gaussian-mixture data with exact densities.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, log_sum_exp};
use crate::numfmt::sig17;
use crate::rng::{self, standard_normal_vec};

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major nested covariance.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub prior: f64,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Self {
        Self { weight, mean, cov }
    }

    pub fn diagonal(weight: f64, mean: Vec<f64>, var: &[f64]) -> Self {
        let d = var.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { var[i] } else { 0.0 }).collect())
            .collect();
        Self { weight, mean, cov }
    }

    pub fn spherical(weight: f64, mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        Self::diagonal(weight, mean, &vec![var; d])
    }

    pub(crate) fn cov_flat(&self) -> Vec<f64> {
        self.cov.iter().flatten().copied().collect()
    }
}

impl GmmSpec {
    /// Built-in mixtures: `weighted-xor` (default), `separated-pairs`, `three-class`.
    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "weighted-xor" => {
                // Coarse x-position carries 90/10 class evidence; the fine
                // y-offset decides the class exactly but drowns in early noise.
                let var = [0.1, 1e-4];
                GmmSpec {
                    dim: 2,
                    classes: vec![
                        ClassSpec {
                            prior: 0.5,
                            components: vec![
                                Component::diagonal(0.1, vec![-1.0, 0.05], &var),
                                Component::diagonal(0.9, vec![1.0, -0.05], &var),
                            ],
                        },
                        ClassSpec {
                            prior: 0.5,
                            components: vec![
                                Component::diagonal(0.9, vec![-1.0, -0.05], &var),
                                Component::diagonal(0.1, vec![1.0, 0.05], &var),
                            ],
                        },
                    ],
                }
            }
            "separated-pairs" => GmmSpec {
                dim: 2,
                classes: vec![
                    ClassSpec {
                        prior: 0.5,
                        components: vec![
                            Component::spherical(0.5, vec![-1.5, 1.0], 0.05),
                            Component::spherical(0.5, vec![-1.5, -1.0], 0.05),
                        ],
                    },
                    ClassSpec {
                        prior: 0.5,
                        components: vec![
                            Component::spherical(0.5, vec![1.5, 1.0], 0.05),
                            Component::spherical(0.5, vec![1.5, -1.0], 0.05),
                        ],
                    },
                ],
            },
            "three-class" => {
                let ring = |k: usize, r: f64| {
                    let a = std::f64::consts::TAU * k as f64 / 3.0;
                    vec![r * a.cos(), r * a.sin()]
                };
                GmmSpec {
                    dim: 2,
                    classes: (0..3)
                        .map(|k| ClassSpec {
                            prior: 1.0 / 3.0,
                            components: vec![
                                Component::spherical(0.5, ring(k, 1.5), 0.05),
                                Component::spherical(0.5, ring(k, 0.6), 0.02),
                            ],
                        })
                        .collect(),
                }
            }
            other => return Err(Error::InvalidSpec(format!("unknown preset '{other}'"))),
        };
        Ok(spec)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        let priors: f64 = self.classes.iter().map(|c| c.prior).sum();
        if (priors - 1.0).abs() > SUM_TOL || self.classes.iter().any(|c| c.prior.is_nan() || c.prior < 0.0) {
            return bad(format!("priors must be non-negative and sum to 1, got {priors}"));
        }
        for (y, class) in self.classes.iter().enumerate() {
            if class.components.is_empty() {
                return bad(format!("class {y} has no components"));
            }
            let w: f64 = class.components.iter().map(|c| c.weight).sum();
            if (w - 1.0).abs() > SUM_TOL || class.components.iter().any(|c| c.weight.is_nan() || c.weight < 0.0) {
                return bad(format!("class {y} weights must be non-negative and sum to 1, got {w}"));
            }
            for (k, c) in class.components.iter().enumerate() {
                if c.mean.len() != self.dim || c.mean.iter().any(|v| !v.is_finite()) {
                    return bad(format!("class {y} component {k}: mean must be {} finite values", self.dim));
                }
                if c.cov.len() != self.dim || c.cov.iter().any(|r| r.len() != self.dim) {
                    return bad(format!("class {y} component {k}: covariance must be {0}x{0}", self.dim));
                }
                if !linalg::is_spd(&linalg::to_dmatrix(self.dim, &c.cov_flat())) {
                    return bad(format!("class {y} component {k}: covariance is not positive definite"));
                }
            }
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<Mixture> {
        self.validate()?;
        let classes = self
            .classes
            .iter()
            .map(|c| PreparedClass {
                prior: c.prior,
                components: c
                    .components
                    .iter()
                    .map(|k| (k.weight, Gaussian::new(self.dim, &k.mean, &k.cov_flat())))
                    .collect(),
            })
            .collect();
        Ok(Mixture { dim: self.dim, classes })
    }

    /// `sum_k w_{y,k} N(x; mu_{y,k}, Sigma_{y,k})`.
    pub fn class_density(&self, y: usize, x: &[f64]) -> Result<f64> {
        Ok(self.prepare()?.class_log_density(y, x)?.exp())
    }

    /// Mean of the pooled mixture.
    pub fn pooled_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.classes {
            for k in &c.components {
                for (mi, v) in m.iter_mut().zip(&k.mean) {
                    *mi += c.prior * k.weight * v;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Gaussian {
    pub mean: Vec<f64>,
    pub chol: Vec<f64>,
    pub precision: Vec<f64>,
    pub log_norm: f64,
}

impl Gaussian {
    fn new(d: usize, mean: &[f64], cov: &[f64]) -> Self {
        let m = linalg::to_dmatrix(d, cov);
        let l = m.clone().cholesky().expect("validated SPD").l();
        let logdet: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let prec = m.try_inverse().unwrap_or_else(|| DMatrix::identity(d, d));
        let prec = (&prec + prec.transpose()) * 0.5;
        Self {
            mean: mean.to_vec(),
            chol: linalg::from_dmatrix(&l),
            precision: linalg::from_dmatrix(&prec),
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet),
        }
    }

    /// Log density and `P (x - mu)`.
    fn log_density_with_shift(&self, x: &[f64], shift: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        linalg::matvec(d, &self.precision, &diff, shift);
        self.log_norm - 0.5 * linalg::dot(&diff, shift)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.mean.len();
        let z = standard_normal_vec(rng, d);
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone)]
struct PreparedClass {
    prior: f64,
    components: Vec<(f64, Gaussian)>,
}

/// Validated mixture with factorized covariances.
#[derive(Debug, Clone)]
pub struct Mixture {
    dim: usize,
    classes: Vec<PreparedClass>,
}

impl Mixture {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn check(&self, y: usize, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if y >= self.classes.len() {
            return Err(Error::ClassOutOfRange { class: y, classes: self.classes.len() });
        }
        Ok(())
    }

    pub fn class_log_density(&self, y: usize, x: &[f64]) -> Result<f64> {
        self.check(y, x)?;
        Ok(self.class_log_density_grad(y, x, None))
    }

    /// `log p(x | y)`; when `grad` is given it receives `d/dx log p(x | y)`.
    pub(crate) fn class_log_density_grad(&self, y: usize, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let class = &self.classes[y];
        let d = self.dim;
        let mut shifts = vec![0.0; d * class.components.len()];
        let logs: Vec<f64> = class
            .components
            .iter()
            .zip(shifts.chunks_mut(d))
            .map(|((w, g), s)| w.ln() + g.log_density_with_shift(x, s))
            .collect();
        let lse = log_sum_exp(&logs);
        if let Some(grad) = grad {
            grad.iter_mut().for_each(|v| *v = 0.0);
            for (l, s) in logs.iter().zip(shifts.chunks(d)) {
                let r = (l - lse).exp();
                if r > 0.0 {
                    for (gi, si) in grad.iter_mut().zip(s) {
                        *gi -= r * si;
                    }
                }
            }
        }
        lse
    }

    /// Exact log joint densities `log(pi_y p(x | y))`.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes.len())
            .map(|y| self.classes[y].prior.ln() + self.class_log_density_grad(y, x, None))
            .collect()
    }

    /// Log joints and their input gradients (row `y` of a `D x d` buffer).
    pub(crate) fn log_joint_with_grads(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut grads = vec![0.0; d * self.classes.len()];
        let logits = grads
            .chunks_mut(d)
            .enumerate()
            .map(|(y, g)| self.classes[y].prior.ln() + self.class_log_density_grad(y, x, Some(g)))
            .collect();
        (logits, grads)
    }

    fn sample_class_point<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> Vec<f64> {
        let comps = &self.classes[y].components;
        let k = pick(comps.iter().map(|c| c.0), rng.random::<f64>());
        comps[k].1.sample(rng)
    }

    fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let y = pick(self.classes.iter().map(|c| c.prior), rng.random::<f64>());
        (self.sample_class_point(y, rng), y)
    }
}

fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<usize>,
    seed: u64,
}

impl LabeledDataset {
    pub fn new(dim: usize, points: Vec<f64>, labels: Vec<usize>, seed: u64) -> Result<Self> {
        if dim == 0 || labels.is_empty() || points.len() != dim * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset needs dim > 0, n > 0 and {} coordinates",
                dim * labels.len()
            )));
        }
        Ok(Self { dim, points, labels, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.points.chunks(self.dim).zip(self.labels.iter().copied())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (x, y) in self.iter() {
            let mut row: Vec<String> = x.iter().map(|v| sig17(*v)).collect();
            row.push(y.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let dim = r.headers()?.len().saturating_sub(1);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for v in rec.iter().take(dim) {
                points.push(v.parse().map_err(|_| Error::InvalidArgument(format!("bad coordinate '{v}'")))?);
            }
            let l = &rec[dim];
            labels.push(l.parse().map_err(|_| Error::InvalidArgument(format!("bad label '{l}'")))?);
        }
        Self::new(dim, points, labels, seed)
    }
}

/// `n` labeled draws; labels from the priors, points from the chosen component.
pub fn sample_dataset(spec: &GmmSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mix = spec.prepare()?;
    let mut rng = rng::stream(seed, "dataset", 0);
    let mut points = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = mix.sample_labeled(&mut rng);
        points.extend(x);
        labels.push(y);
    }
    LabeledDataset::new(spec.dim, points, labels, seed)
}

/// `n` draws from class `y` alone.
pub fn sample_class(spec: &GmmSpec, y: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mix = spec.prepare()?;
    if y >= mix.num_classes() {
        return Err(Error::ClassOutOfRange { class: y, classes: mix.num_classes() });
    }
    let mut rng = rng::stream(seed, "class-draw", y as u64);
    Ok((0..n).map(|_| mix.sample_class_point(y, &mut rng)).collect())
}
