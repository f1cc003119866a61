//! Sample-quality metrics: target accuracy and Gaussian Fréchet distances.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHandle;
use crate::denoiser::AnalyticDenoiser;
use crate::error::{Error, Result};
use crate::guidance::{sample_batch, BatchOutcome, GuidanceConfig};
use crate::linalg::sym_sqrt;
use crate::nn::argmax;
use crate::numfmt::sig17;
use crate::rng::derive_seed;
use crate::synthdata::{sample_class, sample_dataset, GmmSpec};

pub const COV_REGULARIZER: f64 = 1e-10;

/// Mean and unbiased covariance of a point set.
pub fn moments(points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if d == 0 || n < d + 1 {
        return Err(Error::DegenerateSet(format!("need at least d + 1 = {} points of dimension >= 1, got {n}", d + 1)));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::DegenerateSet("points have mixed dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSet("non-finite coordinates".into()));
    }
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let root_a = sym_sqrt(cov_a);
    let cross = sym_sqrt(&(&root_a * cov_b * &root_a));
    let v = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    v.max(0.0)
}

/// Fréchet distance between Gaussians fitted to two point sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::DimensionMismatch { expected: ma.len(), got: mb.len() });
    }
    let reg = DMatrix::identity(ma.len(), ma.len()) * COV_REGULARIZER;
    Ok(frechet_from_moments(&ma, &(ca + &reg), &mb, &(cb + &reg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub target_class: usize,
    pub target_accuracy_oracle: f64,
    pub target_accuracy_guiding_classifier: Option<f64>,
    pub fd: f64,
    pub cfd: f64,
    pub n_samples: usize,
    pub n_diverged: usize,
    pub reference_seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores generated samples against fresh reference draws of equal size.
pub fn evaluate(
    samples: &[Vec<f64>],
    n_diverged: usize,
    spec: &GmmSpec,
    y: usize,
    guiding: Option<&ClassifierHandle>,
    seed: u64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyReport { n: n_diverged });
    }
    let oracle = ClassifierHandle::bayes_oracle(spec)?;
    if y >= oracle.num_classes() {
        return Err(Error::ClassOutOfRange { class: y, classes: oracle.num_classes() });
    }
    let n = samples.len();
    let hit = |h: &ClassifierHandle| -> Result<f64> {
        let mut k = 0usize;
        for s in samples {
            k += usize::from(argmax(&h.predict_logits(s)?) == y);
        }
        Ok(k as f64 / n as f64)
    };
    let pooled = sample_dataset(spec, n, derive_seed(seed, "reference-pooled", 0))?;
    let pooled: Vec<Vec<f64>> = pooled.iter().map(|(x, _)| x.to_vec()).collect();
    let class_ref = sample_class(spec, y, n, derive_seed(seed, "reference-class", 0))?;
    Ok(MetricsReport {
        target_class: y,
        target_accuracy_oracle: hit(&oracle)?,
        target_accuracy_guiding_classifier: guiding.map(hit).transpose()?,
        fd: frechet_distance(samples, &pooled)?,
        cfd: frechet_distance(samples, &class_ref)?,
        n_samples: n,
        n_diverged,
        reference_seed: seed,
        config_hash: String::new(),
    })
}

pub fn evaluate_batch(
    batch: &BatchOutcome,
    spec: &GmmSpec,
    y: usize,
    guiding: Option<&ClassifierHandle>,
    seed: u64,
) -> Result<MetricsReport> {
    evaluate(&batch.samples(), batch.n_diverged(), spec, y, guiding, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub n: usize,
    pub n_diverged: usize,
    /// `None` when every chain diverged.
    pub report: Option<MetricsReport>,
}

impl SweepRow {
    pub fn acc_oracle(&self) -> f64 {
        self.report.as_ref().map_or(f64::NAN, |r| r.target_accuracy_oracle)
    }

    pub fn fd(&self) -> f64 {
        self.report.as_ref().map_or(f64::NAN, |r| r.fd)
    }

    pub fn cfd(&self) -> f64 {
        self.report.as_ref().map_or(f64::NAN, |r| r.cfd)
    }
}

/// One batch and report per scale, all sharing the same chain and reference seeds.
pub fn sweep(dn: &AnalyticDenoiser, base: &GuidanceConfig<'_>, scales: &[f64], n: usize, seed: u64) -> Result<Vec<SweepRow>> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("scale grid is empty".into()));
    }
    let chain_seed = derive_seed(seed, "sweep-chains", 0);
    let eval_seed = derive_seed(seed, "sweep-eval", 0);
    scales
        .iter()
        .map(|&scale| {
            let cfg = GuidanceConfig { scale, ..*base };
            let batch = sample_batch(dn, &cfg, n, chain_seed)?;
            let report = match evaluate_batch(&batch, dn.spec(), base.target, Some(base.classifier), eval_seed) {
                Ok(r) => Some(r),
                Err(Error::EmptyReport { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(SweepRow { scale, n, n_diverged: batch.n_diverged(), report })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["s", "acc_oracle", "acc_guiding", "fd", "cfd", "n", "n_diverged"])?;
    for r in rows {
        let guiding = r.report.as_ref().and_then(|m| m.target_accuracy_guiding_classifier).unwrap_or(f64::NAN);
        w.write_record([
            sig17(r.scale),
            sig17(r.acc_oracle()),
            sig17(guiding),
            sig17(r.fd()),
            sig17(r.cfd()),
            r.n.to_string(),
            r.n_diverged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parsed sweep CSV row: `(s, acc_oracle, acc_guiding, fd, cfd, n, n_diverged)`.
pub type SweepRecord = (f64, f64, f64, f64, f64, usize, usize);

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
