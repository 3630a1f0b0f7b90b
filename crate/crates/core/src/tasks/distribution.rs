use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::Rng;

/// Sampling distribution for inputs or coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionSpec {
    /// `U(-a, a)`.
    Uniform { a: f64 },
    /// `N(mean, sigma^2)`.
    Gaussian { mean: f64, sigma: f64 },
}

impl DistributionSpec {
    pub fn uniform(a: f64) -> Self {
        DistributionSpec::Uniform { a }
    }

    pub fn gaussian(mean: f64, sigma: f64) -> Self {
        DistributionSpec::Gaussian { mean, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Uniform { a } if !(a > 0.0 && a.is_finite()) => {
                Err(Error::InvalidConfig(format!("uniform half-width must be positive, got {a}")))
            }
            DistributionSpec::Gaussian { mean, sigma } if !(sigma > 0.0 && sigma.is_finite() && mean.is_finite()) => {
                Err(Error::InvalidConfig(format!("gaussian needs finite mean and sigma > 0, got N({mean}, {sigma})")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            DistributionSpec::Uniform { a } => a * (2.0 * rng.random::<f64>() - 1.0),
            DistributionSpec::Gaussian { mean, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sigma * z
            }
        }
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { .. } => 0.0,
            DistributionSpec::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { a } => a * a / 3.0,
            DistributionSpec::Gaussian { sigma, .. } => sigma * sigma,
        }
    }

    /// Same family with its width parameter replaced by `sigma`.
    pub fn with_width(&self, sigma: f64) -> Self {
        match *self {
            DistributionSpec::Uniform { .. } => DistributionSpec::Uniform { a: sigma },
            DistributionSpec::Gaussian { mean, .. } => DistributionSpec::Gaussian { mean, sigma },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::rng::stream;

    fn moments(spec: DistributionSpec, n: usize) -> (f64, f64) {
        let mut rng = stream(11, "moments", 0);
        let xs = spec.sample_n(n, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    }

    #[test]
    fn uniform_moments_within_three_standard_errors() {
        let n = 100_000;
        let spec = DistributionSpec::uniform(2.0);
        let (mean, var) = moments(spec, n);
        let var_true = spec.variance();
        // Var of a U(-a,a) sample variance: (mu4 - sigma^4)/n with mu4 = a^4/5
        let a4: f64 = 16.0;
        let se_var = ((a4 / 5.0 - var_true * var_true) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * (var_true / n as f64).sqrt());
        assert!((var - var_true).abs() < 3.0 * se_var);
    }

    #[test]
    fn gaussian_moments_within_three_standard_errors() {
        let n = 100_000;
        let spec = DistributionSpec::gaussian(0.0, 1.5);
        let (mean, var) = moments(spec, n);
        let s2 = 2.25;
        assert!(mean.abs() < 3.0 * (s2 / n as f64).sqrt());
        // Var of a normal sample variance: 2 sigma^4 / (n - 1)
        assert!((var - s2).abs() < 3.0 * (2.0 * s2 * s2 / (n as f64 - 1.0)).sqrt());
    }

    #[test]
    fn uniform_support() {
        let mut rng = stream(3, "support", 0);
        let spec = DistributionSpec::uniform(1.0);
        assert!(spec.sample_n(10_000, &mut rng).iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn validation() {
        assert!(DistributionSpec::uniform(0.0).validate().is_err());
        assert!(DistributionSpec::gaussian(0.0, -1.0).validate().is_err());
        assert!(DistributionSpec::gaussian(0.0, 1.0).validate().is_ok());
    }

    #[test]
    fn serde_tagging() {
        let json = serde_json::to_string(&DistributionSpec::uniform(3.0)).unwrap();
        assert_eq!(json, r#"{"kind":"uniform","a":3.0}"#);
        let back: DistributionSpec = serde_json::from_str(r#"{"kind":"gaussian","mean":0.0,"sigma":2.0}"#).unwrap();
        assert_eq!(back, DistributionSpec::gaussian(0.0, 2.0));
    }
}
