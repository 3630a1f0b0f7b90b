use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{DistributionSpec, Rng};

/// How target functions are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Every coefficient i.i.d. from the coefficient distribution.
    #[serde(rename = "T")]
    Standard,
    /// Degree 1 only; exactly one of the constant or slope is nonzero.
    #[serde(rename = "T1")]
    Components,
    /// Degree 1 only; coefficients `a * (cos t, sin t)` for `t` in a finite
    /// direction set and `a` from the coefficient distribution.
    #[serde(rename = "T2")]
    Directions,
    /// Degree drawn uniformly from a set that skips some degrees.
    #[serde(rename = "gap")]
    Gap,
    /// Degree drawn from the currently unlocked prefix of the degree set.
    #[serde(rename = "curriculum-degree")]
    CurriculumDegree,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(Regime::Standard),
            "T1" | "t1" => Ok(Regime::Components),
            "T2" | "t2" => Ok(Regime::Directions),
            "gap" => Ok(Regime::Gap),
            "curriculum-degree" => Ok(Regime::CurriculumDegree),
            other => Err(Error::Regime(format!("unknown regime '{other}'"))),
        }
    }
}

/// A sampled polynomial `g(x) = sum_k coefficients[k] x^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub degree: usize,
    /// Constant term first.
    pub coefficients: Vec<f64>,
    pub regime: Regime,
}

impl FunctionSpec {
    pub fn new(coefficients: Vec<f64>, regime: Regime) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidConfig("polynomial needs at least one coefficient".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("polynomial coefficient".into()));
        }
        Ok(Self {
            degree: coefficients.len() - 1,
            coefficients,
            regime,
        })
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// `theta_i = i * pi / count` for `i in 0..count`.
pub fn direction_set(count: usize) -> Vec<f64> {
    (0..count).map(|i| i as f64 * PI / count as f64).collect()
}

/// Draws one target function.
///
/// `degrees` is the set the degree is drawn from; for
/// [`Regime::CurriculumDegree`] the caller passes the currently unlocked
/// prefix. `directions` is only read by [`Regime::Directions`].
pub fn sample_function(
    regime: Regime,
    degrees: &[usize],
    coefficient_dist: &DistributionSpec,
    directions: &[f64],
    rng: &mut Rng,
) -> Result<FunctionSpec> {
    if degrees.is_empty() {
        return Err(Error::InvalidConfig("degree set is empty".into()));
    }
    let degree = degrees[rng.random_range(0..degrees.len())];
    let coefficients = match regime {
        Regime::Standard | Regime::Gap | Regime::CurriculumDegree => coefficient_dist.sample_n(degree + 1, rng),
        Regime::Components => {
            require_linear(regime, degrees)?;
            let slot = rng.random_range(0..2usize);
            let mut value = 0.0;
            while value == 0.0 {
                value = coefficient_dist.sample(rng);
            }
            let mut c = vec![0.0; 2];
            c[slot] = value;
            c
        }
        Regime::Directions => {
            require_linear(regime, degrees)?;
            if directions.is_empty() {
                return Err(Error::InvalidConfig("direction set is empty".into()));
            }
            let theta = directions[rng.random_range(0..directions.len())];
            let a = coefficient_dist.sample(rng);
            vec![a * theta.cos(), a * theta.sin()]
        }
    };
    FunctionSpec::new(coefficients, regime)
}

fn require_linear(regime: Regime, degrees: &[usize]) -> Result<()> {
    if degrees.iter().any(|&d| d != 1) {
        return Err(Error::Regime(format!("{regime:?} is defined for degree 1 only, got degrees {degrees:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::rng::stream;

    fn uniform() -> DistributionSpec {
        DistributionSpec::uniform(1.0)
    }

    #[test]
    fn standard_degree_one_within_support() {
        let mut rng = stream(1, "f", 0);
        for _ in 0..1000 {
            let f = sample_function(Regime::Standard, &[1], &uniform(), &[], &mut rng).unwrap();
            assert_eq!(f.coefficients.len(), 2);
            assert!(f.coefficients.iter().all(|c| (-1.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn components_have_exactly_one_nonzero() {
        let mut rng = stream(2, "f", 0);
        let mut seen = [0usize; 2];
        for _ in 0..1000 {
            let f = sample_function(Regime::Components, &[1], &uniform(), &[], &mut rng).unwrap();
            let nonzero: Vec<usize> = (0..2).filter(|&i| f.coefficients[i] != 0.0).collect();
            assert_eq!(nonzero.len(), 1);
            seen[nonzero[0]] += 1;
        }
        assert!(seen[0] > 0 && seen[1] > 0);
    }

    #[test]
    fn directions_lie_on_configured_rays() {
        let dirs = direction_set(8);
        let mut rng = stream(3, "f", 0);
        for _ in 0..500 {
            let f = sample_function(Regime::Directions, &[1], &uniform(), &dirs, &mut rng).unwrap();
            let (c0, c1) = (f.coefficients[0], f.coefficients[1]);
            let r = c0.hypot(c1);
            let on_ray = dirs.iter().any(|t| (c0 - r * t.cos()).abs() < 1e-12 && (c1 - r * t.sin()).abs() < 1e-12
                || (c0 + r * t.cos()).abs() < 1e-12 && (c1 + r * t.sin()).abs() < 1e-12);
            assert!(on_ray, "({c0}, {c1})");
        }
    }

    #[test]
    fn linear_only_regimes_reject_other_degrees() {
        let mut rng = stream(4, "f", 0);
        assert!(matches!(
            sample_function(Regime::Components, &[2], &uniform(), &[], &mut rng),
            Err(Error::Regime(_))
        ));
        assert!(matches!(
            sample_function(Regime::Directions, &[1, 3], &uniform(), &[0.0], &mut rng),
            Err(Error::Regime(_))
        ));
        assert!(sample_function(Regime::Standard, &[], &uniform(), &[], &mut rng).is_err());
    }

    #[test]
    fn gap_degrees_are_uniform() {
        let mut rng = stream(5, "f", 0);
        let set = [1usize, 3, 5];
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            let f = sample_function(Regime::Gap, &set, &uniform(), &[], &mut rng).unwrap();
            assert!(set.contains(&f.degree));
            counts[f.degree] += 1;
        }
        for d in set {
            let freq = counts[d] as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.05, "degree {d}: {freq}");
        }
    }

    #[test]
    fn horner_matches_power_sum() {
        let mut rng = stream(6, "f", 0);
        for _ in 0..100 {
            let f = sample_function(Regime::Standard, &[6], &DistributionSpec::uniform(3.0), &[], &mut rng).unwrap();
            for &x in &[-2.5f64, -0.3, 0.0, 0.7, 1.9] {
                let naive: f64 = f.coefficients.iter().enumerate().map(|(k, c)| c * x.powi(k as i32)).sum();
                let h = f.eval(x);
                assert!((h - naive).abs() <= 1e-12 * naive.abs().max(1.0));
            }
        }
    }

    #[test]
    fn regime_names_round_trip() {
        for r in [Regime::Standard, Regime::Components, Regime::Directions, Regime::Gap, Regime::CurriculumDegree] {
            let name = serde_json::to_value(r).unwrap();
            assert_eq!(Regime::parse(name.as_str().unwrap()).unwrap(), r);
        }
    }
}
