//! Gradient stabilizers and the guided reverse sampler.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHandle;
use crate::denoiser::{eps_from_mean, AnalyticDenoiser, GuidancePath, JacobianMode, Posterior};
use crate::error::{check_dim, Error, Result};
use crate::nn::Objective;
use crate::rng::{derive_seed, standard_normal_vec, StreamRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StabilizerConfig {
    #[default]
    Identity,
    Ema { beta: f64 },
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_beta1() -> f64 {
    ADAM_BETA1
}
fn adam_beta2() -> f64 {
    ADAM_BETA2
}
fn adam_eps() -> f64 {
    ADAM_EPS
}

impl StabilizerConfig {
    pub fn adam() -> Self {
        StabilizerConfig::Adam { beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        let ok = match *self {
            StabilizerConfig::Identity => true,
            StabilizerConfig::Ema { beta } => unit(beta),
            StabilizerConfig::Adam { beta1, beta2, eps } => unit(beta1) && unit(beta2) && eps > 0.0 && eps.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid stabilizer {self}")))
        }
    }
}

impl fmt::Display for StabilizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StabilizerConfig::Identity => f.write_str("identity"),
            StabilizerConfig::Ema { beta } => write!(f, "ema:{beta}"),
            StabilizerConfig::Adam { beta1, beta2, eps } => {
                if (beta1, beta2, eps) == (ADAM_BETA1, ADAM_BETA2, ADAM_EPS) {
                    f.write_str("adam")
                } else {
                    write!(f, "adam:{beta1}:{beta2}:{eps}")
                }
            }
        }
    }
}

impl FromStr for StabilizerConfig {
    type Err = Error;
    /// `identity`, `ema:BETA`, `adam` or `adam:BETA1:BETA2:EPS`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number '{v}' in '{s}'")));
        let cfg = match parts.as_slice() {
            ["identity"] | ["none"] => StabilizerConfig::Identity,
            ["ema", b] => StabilizerConfig::Ema { beta: num(b)? },
            ["adam"] => StabilizerConfig::adam(),
            ["adam", b1, b2, e] => StabilizerConfig::Adam { beta1: num(b1)?, beta2: num(b2)?, eps: num(e)? },
            _ => return Err(Error::InvalidArgument(format!("unknown stabilizer '{s}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Running moments, zero-initialized and never de-biased.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl StabilizerState {
    pub fn new(dim: usize) -> Self {
        Self { first: vec![0.0; dim], second: vec![0.0; dim], steps: 0 }
    }

    /// Feeds one gradient and returns the stabilized direction.
    pub fn stabilize(&mut self, cfg: &StabilizerConfig, g: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.first.len(), g.len())?;
        let nu = match *cfg {
            StabilizerConfig::Identity => return Ok(g.to_vec()),
            StabilizerConfig::Ema { beta } => {
                for (m, gi) in self.first.iter_mut().zip(g) {
                    *m = beta * *m + (1.0 - beta) * gi;
                }
                self.first.clone()
            }
            StabilizerConfig::Adam { beta1, beta2, eps } => {
                for ((m, v), gi) in self.first.iter_mut().zip(self.second.iter_mut()).zip(g) {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                }
                self.first.iter().zip(&self.second).map(|(m, v)| m / (v.sqrt() + eps)).collect()
            }
        };
        self.steps += 1;
        Ok(nu)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GuidanceConfig<'a> {
    pub scale: f64,
    pub path: GuidancePath,
    pub stabilizer: StabilizerConfig,
    pub objective: Objective,
    pub classifier: &'a ClassifierHandle,
    pub target: usize,
}

impl<'a> GuidanceConfig<'a> {
    pub fn new(classifier: &'a ClassifierHandle, target: usize) -> Self {
        Self {
            scale: 0.0,
            path: GuidancePath::Raw,
            stabilizer: StabilizerConfig::Identity,
            objective: Objective::LogSoftmax,
            classifier,
            target,
        }
    }

    pub fn validate(&self, dn: &AnalyticDenoiser) -> Result<()> {
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be finite and >= 0, got {}", self.scale)));
        }
        if self.target >= self.classifier.num_classes() {
            return Err(Error::ClassOutOfRange { class: self.target, classes: self.classifier.num_classes() });
        }
        check_dim(dn.dim(), self.classifier.dim())?;
        self.stabilizer.validate()
    }
}

fn step_from_posterior(dn: &AnalyticDenoiser, x: &[f64], t: usize, post: &Posterior, rng: &mut StreamRng) -> Vec<f64> {
    let s = dn.schedule();
    let c = s.reverse_coefficients(t).expect("validated step");
    let mut mean: Vec<f64> = x.iter().map(|v| c.mean_coeff_x * v).collect();
    if c.mean_coeff_eps != 0.0 {
        let eps = eps_from_mean(x, &post.mean, s.alpha_bar(t));
        for (m, e) in mean.iter_mut().zip(&eps) {
            *m -= c.mean_coeff_eps * e;
        }
    }
    if t > 1 {
        let sd = c.sigma_sq.sqrt();
        let z = standard_normal_vec(rng, x.len());
        for (m, zi) in mean.iter_mut().zip(&z) {
            *m += sd * zi;
        }
    }
    mean
}

/// One unconditional ancestral step `x_t -> x_{t-1}`; the final step adds no noise.
pub fn reverse_step(dn: &AnalyticDenoiser, x: &[f64], t: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    check_dim(dn.dim(), x.len())?;
    dn.schedule().check_step(t)?;
    let post = dn.posterior(x, t, false);
    Ok(step_from_posterior(dn, x, t, &post, rng))
}

pub fn chain_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Seed of chain `index` inside a batch keyed by `seed`.
pub fn chain_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, "chain", index)
}

/// Plain reverse chain from `x_T ~ N(0, I)`.
pub fn sample_unguided(dn: &AnalyticDenoiser, seed: u64) -> Result<Vec<f64>> {
    let mut rng = chain_rng(seed);
    let mut x = standard_normal_vec(&mut rng, dn.dim());
    for t in (1..=dn.schedule().steps()).rev() {
        x = reverse_step(dn, &x, t, &mut rng)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedChain {
    pub sample: Vec<f64>,
    pub trace: Option<Vec<TraceStep>>,
}

/// Guided chain: gradient, stabilization, reverse step, then the mean shift
/// `x + s * Sigma_t * nu`. A zero scale skips the classifier entirely.
pub fn guided_sample(dn: &AnalyticDenoiser, cfg: &GuidanceConfig<'_>, seed: u64, keep_trace: bool) -> Result<GuidedChain> {
    cfg.validate(dn)?;
    let d = dn.dim();
    let sched = dn.schedule();
    let mut rng = chain_rng(seed);
    let mut state = StabilizerState::new(d);
    let mut trace = keep_trace.then(Vec::new);
    let mut x = standard_normal_vec(&mut rng, d);
    for t in (1..=sched.steps()).rev() {
        if cfg.scale == 0.0 {
            let post = dn.posterior(&x, t, false);
            x = step_from_posterior(dn, &x, t, &post, &mut rng);
            continue;
        }
        let (post, g) = match cfg.path {
            GuidancePath::Raw => {
                let g = cfg.classifier.objective_gradient(&x, cfg.target, cfg.objective)?;
                (dn.posterior(&x, t, false), g)
            }
            GuidancePath::X0Pred(mode) => {
                let post = dn.posterior(&x, t, mode == JacobianMode::Full);
                let g = dn.guided_log_prob_gradient(cfg.classifier, &x, t, cfg.target, cfg.path, cfg.objective)?;
                (post, g)
            }
        };
        let nu = state.stabilize(&cfg.stabilizer, &g)?;
        let sigma = sched.reverse_coefficients(t)?.sigma_sq;
        let mut next = step_from_posterior(dn, &x, t, &post, &mut rng);
        for (xi, ni) in next.iter_mut().zip(&nu) {
            *xi += cfg.scale * sigma * ni;
        }
        if next.iter().chain(&nu).any(|v| !v.is_finite()) {
            return Err(Error::GuidanceDivergence { t });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceStep { t, x: x.clone(), grad: g, nu });
        }
        x = next;
    }
    Ok(GuidedChain { sample: x, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub seed: u64,
    pub sample: Option<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub dim: usize,
    pub chains: Vec<ChainResult>,
}

impl BatchOutcome {
    pub fn n_diverged(&self) -> usize {
        self.chains.iter().filter(|c| c.sample.is_none()).count()
    }

    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.chains.iter().filter_map(|c| c.sample.clone()).collect()
    }
}

/// `n` independent chains; chain `i` runs on [`chain_seed`]`(seed, i)`.
pub fn sample_batch(dn: &AnalyticDenoiser, cfg: &GuidanceConfig<'_>, n: usize, seed: u64) -> Result<BatchOutcome> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    cfg.validate(dn)?;
    let chains = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = chain_seed(seed, i);
            match guided_sample(dn, cfg, s, false) {
                Ok(c) => Ok(ChainResult { seed: s, sample: Some(c.sample), diverged_at: None }),
                Err(Error::GuidanceDivergence { t }) => Ok(ChainResult { seed: s, sample: None, diverged_at: Some(t) }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchOutcome { dim: dn.dim(), chains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::schedule::Schedule;
    use crate::synthdata::GmmSpec;
    use proptest::prelude::*;

    fn setup(steps: usize) -> AnalyticDenoiser {
        let s = Schedule::linear(steps, 1e-4, 0.02).unwrap();
        AnalyticDenoiser::new(&GmmSpec::preset("weighted-xor").unwrap(), &s).unwrap()
    }

    #[test]
    fn ema_recursion() {
        let mut st = StabilizerState::new(1);
        let cfg = StabilizerConfig::Ema { beta: 0.9 };
        let out: Vec<f64> = (0..3).map(|_| st.stabilize(&cfg, &[1.0]).unwrap()[0]).collect();
        // binary 1 - 0.9 is one ulp below decimal 0.1
        let w = 1.0 - 0.9;
        assert_eq!(out[0], w);
        assert_eq!(out[1], 0.9 * out[0] + w);
        assert_eq!(out[2], 0.9 * out[1] + w);
        for (got, want) in out.iter().zip([0.1, 0.19, 0.271]) {
            assert!((got - want).abs() <= 4.0 * f64::EPSILON * want);
        }
    }

    #[test]
    fn ema_zero_beta_passes_through() {
        let mut st = StabilizerState::new(2);
        let cfg = StabilizerConfig::Ema { beta: 0.0 };
        for g in [[1.0, -2.0], [0.3, 5.0]] {
            assert_eq!(st.stabilize(&cfg, &g).unwrap(), g.to_vec());
        }
    }

    #[test]
    fn identity_leaves_state_alone() {
        let mut st = StabilizerState::new(2);
        assert_eq!(st.stabilize(&StabilizerConfig::Identity, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(st, StabilizerState::new(2));
    }

    #[test]
    fn adam_first_step_and_fixed_point() {
        let mut st = StabilizerState::new(1);
        let cfg = StabilizerConfig::adam();
        let nu = st.stabilize(&cfg, &[2.0]).unwrap()[0];
        let (m, v) = (0.1 * 2.0, (1.0 - 0.999) * 4.0);
        assert!((nu - m / (f64::sqrt(v) + 1e-8)).abs() < 1e-12);
        assert!((nu - 3.1623).abs() < 1e-4);
        let mut st = StabilizerState::new(1);
        let mut last = 0.0;
        for _ in 0..10_000 {
            last = st.stabilize(&cfg, &[-0.37]).unwrap()[0];
        }
        assert!((last + 1.0).abs() < 1e-3);
    }

    #[test]
    fn stabilizer_names_round_trip() {
        for s in ["identity", "ema:0.99", "adam"] {
            assert_eq!(s.parse::<StabilizerConfig>().unwrap().to_string(), s);
        }
        assert!("ema:1.5".parse::<StabilizerConfig>().is_err());
        assert!("adam:0.9:0.999:0".parse::<StabilizerConfig>().is_err());
        let json = serde_json::to_string(&StabilizerConfig::Ema { beta: 0.9 }).unwrap();
        assert_eq!(json, r#"{"kind":"ema","beta":0.9}"#);
        let a: StabilizerConfig = serde_json::from_str(r#"{"kind":"adam"}"#).unwrap();
        assert_eq!(a, StabilizerConfig::adam());
    }

    proptest! {
        #[test]
        fn ema_is_homogeneous(c in -10.0f64..10.0, gs in proptest::collection::vec(-5.0f64..5.0, 1..20), beta in 0.0f64..0.999) {
            let cfg = StabilizerConfig::Ema { beta };
            let mut a = StabilizerState::new(1);
            let mut b = StabilizerState::new(1);
            for g in &gs {
                let u = a.stabilize(&cfg, &[*g]).unwrap()[0];
                let v = b.stabilize(&cfg, &[c * g]).unwrap()[0];
                prop_assert!((v - c * u).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn adam_is_scale_invariant_on_constants(c in 0.01f64..100.0, g in -5.0f64..5.0, n in 1usize..50) {
            prop_assume!(g.abs() > 1e-2 && (c * g).abs() > 1e-2);
            let cfg = StabilizerConfig::adam();
            let mut a = StabilizerState::new(1);
            let mut b = StabilizerState::new(1);
            for _ in 0..n {
                let u = a.stabilize(&cfg, &[g]).unwrap()[0];
                let v = b.stabilize(&cfg, &[c * g]).unwrap()[0];
                prop_assert!((u - v).abs() < 1e-4 * (1.0 + u.abs()));
                prop_assert!(u.is_finite() && v.is_finite());
            }
        }
    }

    #[test]
    fn zero_beta_step_is_identity_and_last_step_is_deterministic() {
        let s = Schedule::from_betas(vec![0.01, 1e-300]).unwrap();
        let dn = AnalyticDenoiser::new(&GmmSpec::preset("weighted-xor").unwrap(), &s).unwrap();
        let x = [0.3, -0.1];
        let mut r = chain_rng(1);
        assert!(crate::linalg::dist(&reverse_step(&dn, &x, 2, &mut r).unwrap(), &x) < 1e-12);
        let a = reverse_step(&dn, &x, 1, &mut chain_rng(1)).unwrap();
        let b = reverse_step(&dn, &x, 1, &mut chain_rng(2)).unwrap();
        assert_eq!(a, b);
        // the last step lands on the posterior mean exactly (up to round-off)
        let m = dn.posterior_mean_x0(&x, 1).unwrap();
        assert!(crate::linalg::dist(&a, &m) < 1e-12);
    }

    #[test]
    fn zero_scale_matches_unguided() {
        let dn = setup(60);
        let h = ClassifierHandle::NonRobust(Mlp::random(&[2, 8, 2], Activation::Tanh, 1).unwrap());
        for stab in [StabilizerConfig::Identity, StabilizerConfig::Ema { beta: 0.9 }, StabilizerConfig::adam()] {
            let cfg = GuidanceConfig { stabilizer: stab, path: GuidancePath::X0Pred(JacobianMode::Full), ..GuidanceConfig::new(&h, 1) };
            for seed in 0..5 {
                let a = guided_sample(&dn, &cfg, seed, false).unwrap().sample;
                let b = sample_unguided(&dn, seed).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn zero_gradient_reproduces_unguided() {
        let dn = setup(60);
        let h = ClassifierHandle::NonRobust(Mlp::zeros(&[2, 4, 2], Activation::Tanh).unwrap());
        let cfg = GuidanceConfig { scale: 7.0, ..GuidanceConfig::new(&h, 0) };
        assert_eq!(guided_sample(&dn, &cfg, 3, false).unwrap().sample, sample_unguided(&dn, 3).unwrap());
    }

    #[test]
    fn batch_of_one_and_independence() {
        let dn = setup(40);
        let h = ClassifierHandle::bayes_oracle(dn.spec()).unwrap();
        let cfg = GuidanceConfig { scale: 2.0, stabilizer: StabilizerConfig::Ema { beta: 0.9 }, ..GuidanceConfig::new(&h, 1) };
        let one = sample_batch(&dn, &cfg, 1, 77).unwrap();
        let direct = guided_sample(&dn, &cfg, chain_seed(77, 0), false).unwrap().sample;
        assert_eq!(one.chains[0].sample.as_ref().unwrap(), &direct);
        let many = sample_batch(&dn, &cfg, 6, 77).unwrap();
        for (i, c) in many.chains.iter().enumerate() {
            let alone = guided_sample(&dn, &cfg, chain_seed(77, i as u64), false).unwrap().sample;
            assert_eq!(c.sample.as_ref().unwrap(), &alone);
        }
        assert_eq!(many.n_diverged(), 0);
    }

    #[test]
    fn divergence_is_caught_with_step() {
        let dn = setup(40);
        let mut m = Mlp::random(&[2, 4, 2], Activation::Tanh, 1).unwrap();
        m.layers_mut()[0].weights[0] = f64::NAN;
        let h = ClassifierHandle::NonRobust(m);
        let cfg = GuidanceConfig { scale: 1.0, ..GuidanceConfig::new(&h, 0) };
        assert!(matches!(guided_sample(&dn, &cfg, 0, false), Err(Error::GuidanceDivergence { t: 40 })));
        let b = sample_batch(&dn, &cfg, 3, 0).unwrap();
        assert_eq!(b.n_diverged(), 3);
        assert!(b.chains.iter().all(|c| c.diverged_at == Some(40)));
    }

    #[test]
    fn trace_records_each_guided_step() {
        let dn = setup(30);
        let h = ClassifierHandle::bayes_oracle(dn.spec()).unwrap();
        let cfg = GuidanceConfig { scale: 1.0, ..GuidanceConfig::new(&h, 0) };
        let c = guided_sample(&dn, &cfg, 5, true).unwrap();
        let tr = c.trace.unwrap();
        assert_eq!(tr.len(), 30);
        assert_eq!(tr[0].t, 30);
        assert_eq!(tr[29].t, 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let dn = setup(10);
        let h = ClassifierHandle::bayes_oracle(dn.spec()).unwrap();
        let bad_scale = GuidanceConfig { scale: f64::INFINITY, ..GuidanceConfig::new(&h, 0) };
        assert!(guided_sample(&dn, &bad_scale, 0, false).is_err());
        assert!(guided_sample(&dn, &GuidanceConfig::new(&h, 5), 0, false).is_err());
        assert!(sample_batch(&dn, &GuidanceConfig::new(&h, 0), 0, 0).is_err());
    }
}
