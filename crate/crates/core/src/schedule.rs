//! Diffusion time axis. Steps are indexed `1..=T`; `t = 0` denotes clean data.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorVariance {
    #[default]
    Beta,
    BetaTilde,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoefficients {
    pub mean_coeff_x: f64,
    pub mean_coeff_eps: f64,
    pub sigma_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    variance: PosteriorVariance,
}

impl Schedule {
    /// Arithmetic progression of `steps` variances from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule(format!("need at least 2 steps, got {steps}")));
        }
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !(ok(beta_start) && ok(beta_end)) || beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!(
                "require 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let last = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| if i + 1 == steps { beta_end } else { beta_start + span * (i as f64) / last })
            .collect();
        Self::from_betas(betas)
    }

    /// Arbitrary variances in `[0, 1)`. Zero entries give identity steps, which
    /// is only useful for degenerate ablations.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty schedule".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b >= 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta_{} = {b} outside [0, 1)", i + 1)));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars, variance: PosteriorVariance::Beta })
    }

    pub fn with_variance(mut self, variance: PosteriorVariance) -> Self {
        self.variance = variance;
        self
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn variance_mode(&self) -> PosteriorVariance {
        self.variance
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange { t, max: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`. `t = 0` returns `x0`.
    pub fn forward_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim(x0.len(), eps.len())?;
        if t > self.steps() {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok(self.forward_unchecked(x0, t, eps))
    }

    pub(crate) fn forward_unchecked(&self, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
    }

    /// `(x_t, x_{t-1})` built from one shared noise vector.
    pub fn coupled_pair(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if t < 2 {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok((self.forward_sample(x0, t, eps)?, self.forward_sample(x0, t - 1, eps)?))
    }

    /// Shared-noise trajectory; element `t - 1` holds `x_t` for `t = 1..=T`.
    pub fn coupled_trajectory(&self, x0: &[f64], eps: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(x0.len(), eps.len())?;
        Ok((1..=self.steps()).map(|t| self.forward_unchecked(x0, t, eps)).collect())
    }

    pub fn reverse_coefficients(&self, t: usize) -> Result<ReverseCoefficients> {
        self.check_step(t)?;
        let (beta, alpha, ab) = (self.beta(t), self.alpha(t), self.alpha_bar(t));
        let sa = alpha.sqrt();
        let mean_coeff_eps = if beta == 0.0 { 0.0 } else { beta / (sa * (1.0 - ab).sqrt()) };
        let sigma_sq = match self.variance {
            PosteriorVariance::Beta => beta,
            PosteriorVariance::BetaTilde if t == 1 => beta,
            PosteriorVariance::BetaTilde => {
                if beta == 0.0 {
                    0.0
                } else {
                    beta * (1.0 - self.alpha_bar(t - 1)) / (1.0 - ab)
                }
            }
        };
        Ok(ReverseCoefficients { mean_coeff_x: 1.0 / sa, mean_coeff_eps, sigma_sq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_linear() -> Schedule {
        Schedule::linear(400, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = default_linear();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(400), 0.02);
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
    }

    #[test]
    fn final_alpha_bar_matches_direct_product() {
        let s = default_linear();
        let mut p = 1.0f64;
        for i in 0..400 {
            let b = 1e-4 + (0.02 - 1e-4) * i as f64 / 399.0;
            p *= 1.0 - b;
        }
        assert!((s.alpha_bar(400) - p).abs() < 1e-14);
        assert!(s.alpha_bar(400) < 0.05);
        for t in 2..=400 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!((1.0 - s.alpha_bar(t)).sqrt() > (1.0 - s.alpha_bar(t - 1)).sqrt());
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Schedule::linear(1, 1e-4, 0.02).is_err());
        assert!(Schedule::linear(10, 0.0, 0.02).is_err());
        assert!(Schedule::linear(10, 1e-4, 1.0).is_err());
        assert!(Schedule::linear(10, 0.1, 0.01).is_err());
        assert!(Schedule::from_betas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn forward_sample_cases() {
        let s = Schedule::from_betas(vec![0.75]).unwrap();
        let v = s.forward_sample(&[1.0], 1, &[2.0]).unwrap();
        assert!((v[0] - (0.5 + 0.75f64.sqrt() * 2.0)).abs() < 1e-15);
        assert!((v[0] - 2.2320508).abs() < 1e-7);

        let p = default_linear();
        let x0 = [0.3, -1.7];
        let z = p.forward_sample(&x0, 37, &[0.0, 0.0]).unwrap();
        let a = p.alpha_bar(37).sqrt();
        assert_eq!(z, vec![a * 0.3, a * -1.7]);

        let near = p.forward_sample(&[1.0, 1.0], 1, &[1.0, 0.0]).unwrap();
        let norm = 2f64.sqrt();
        let diff = ((near[0] - 1.0).powi(2) + (near[1] - 1.0).powi(2)).sqrt();
        assert!(diff < 1e-2 * norm);

        assert!(matches!(p.forward_sample(&x0, 1, &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(p.forward_sample(&x0, 401, &[0.0, 0.0]), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn coupled_pair_cases() {
        // abar_1 = 0.81, abar_2 = 0.64
        let s = Schedule::from_betas(vec![0.19, 1.0 - 0.64 / 0.81]).unwrap();
        let (xt, xp) = s.coupled_pair(&[1.0], 2, &[1.0]).unwrap();
        assert!((xt[0] - 1.4).abs() < 1e-12);
        assert!((xp[0] - (0.9 + 0.19f64.sqrt())).abs() < 1e-12);
        assert!((xp[0] - 1.3358899).abs() < 1e-7);

        let p = default_linear();
        let (a, b) = p.coupled_pair(&[2.0], 10, &[0.0]).unwrap();
        assert_eq!(a[0] - b[0], (p.alpha_bar(10).sqrt() - p.alpha_bar(9).sqrt()) * 2.0);

        let flat = Schedule::from_betas(vec![0.1, 0.0]).unwrap();
        let (a, b) = flat.coupled_pair(&[0.4, 1.0], 2, &[0.3, -0.2]).unwrap();
        assert_eq!(a, b);
        assert!(p.coupled_pair(&[0.0], 1, &[0.0]).is_err());
    }

    #[test]
    fn reverse_coefficient_cases() {
        // beta_2 = 0.02 with abar_2 = 0.5
        let s = Schedule::from_betas(vec![1.0 - 0.5 / 0.98, 0.02]).unwrap();
        let c = s.reverse_coefficients(2).unwrap();
        assert!((c.mean_coeff_x - 1.0 / 0.98f64.sqrt()).abs() < 1e-14);
        assert!((c.mean_coeff_x - 1.0101525).abs() < 1e-7);
        let oracle = 0.02 / (0.98f64.sqrt() * 0.5f64.sqrt());
        assert!((c.mean_coeff_eps - oracle).abs() < 1e-14);
        assert!((c.mean_coeff_eps - 0.0285714).abs() < 1e-6);
        assert_eq!(c.sigma_sq, 0.02);

        let p = default_linear();
        assert_eq!(p.reverse_coefficients(1).unwrap().sigma_sq, 1e-4);
        let tilde = p.clone().with_variance(PosteriorVariance::BetaTilde);
        assert_eq!(tilde.reverse_coefficients(1).unwrap().sigma_sq, 1e-4);
        let t = 200;
        let want = p.beta(t) * (1.0 - p.alpha_bar(t - 1)) / (1.0 - p.alpha_bar(t));
        assert_eq!(tilde.reverse_coefficients(t).unwrap().sigma_sq, want);
        assert!(p.reverse_coefficients(0).is_err());
        assert!(p.reverse_coefficients(401).is_err());

        let tiny = Schedule::from_betas(vec![0.5, 1e-15]).unwrap();
        let c = tiny.reverse_coefficients(2).unwrap();
        assert!((c.mean_coeff_x - 1.0).abs() < 1e-12);
        assert!(c.mean_coeff_eps < 1e-12);
        assert!(c.sigma_sq < 1e-12);
    }
}
