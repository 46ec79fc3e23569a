//! Sample likelihood, decision error, and batch-normalized loss weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal CDF `½[1 + erf((x−μ)/(σ√2))]`, with the step limit at `σ = 0`.
pub fn gaussian_cdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !x.is_finite() || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::Numeric {
            context: "gaussian cdf argument",
            row: 0,
        });
    }
    if sigma < 0.0 {
        return Err(Error::Config(format!("negative sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(if x < mu {
            0.0
        } else if x > mu {
            1.0
        } else {
            0.5
        });
    }
    let z = (x - mu) / (sigma * std::f64::consts::SQRT_2);
    Ok((0.5 * (1.0 + libm::erf(z))).clamp(0.0, 1.0))
}

/// `λ_SL = 1 − clamp(|p̃ − μ| / 2σ, 0, 1)`.
pub fn sample_likelihood(score: f64, mu: f64, sigma: f64) -> f64 {
    let dev = (score - mu).abs();
    if sigma <= 0.0 {
        return if dev == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - (dev / (2.0 * sigma)).clamp(0.0, 1.0)
}

/// `λ_DE = 1 − max_{c ≠ chosen} (1 − Φ(p̃, μ_c, σ_c))`.
pub fn decision_error(score: f64, mean: &[f64], std: &[f64], chosen: usize) -> Result<f64> {
    if mean.len() != std.len() {
        return Err(crate::error::shape_err("decision error row", mean.len(), std.len()));
    }
    if mean.len() < 2 {
        return Err(Error::Config("decision error needs at least two classes".into()));
    }
    if chosen >= mean.len() {
        return Err(Error::Config(format!("class {chosen} out of range")));
    }
    let mut worst: f64 = 0.0;
    for c in (0..mean.len()).filter(|&c| c != chosen) {
        let exceed = 1.0 - gaussian_cdf(score, mean[c], std[c])?;
        worst = worst.max(exceed);
    }
    Ok((1.0 - worst).clamp(0.0, 1.0))
}

/// Which factors enter a target sample's loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReweighMode {
    None,
    Sl,
    De,
    DeSl,
}

impl ReweighMode {
    pub fn product(self, likelihood: f64, decision: f64) -> f64 {
        match self {
            ReweighMode::None => 1.0,
            ReweighMode::Sl => likelihood,
            ReweighMode::De => decision,
            ReweighMode::DeSl => likelihood * decision,
        }
    }
}

impl fmt::Display for ReweighMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReweighMode::None => "none",
            ReweighMode::Sl => "sl",
            ReweighMode::De => "de",
            ReweighMode::DeSl => "de+sl",
        })
    }
}

impl FromStr for ReweighMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ReweighMode::None),
            "sl" => Ok(ReweighMode::Sl),
            "de" => Ok(ReweighMode::De),
            "de+sl" | "sl+de" => Ok(ReweighMode::DeSl),
            other => Err(Error::Config(format!("unknown reweigh mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchWeights {
    pub omega: Vec<f64>,
    /// Every product was zero; the batch carries no target gradient.
    pub starved: bool,
}

/// `ω_k = product_k / mean(product)` over the batch's target samples.
pub fn batch_weights(products: &[f64]) -> Result<BatchWeights> {
    if products.is_empty() {
        return Err(Error::Empty("batch target subset"));
    }
    if let Some(row) = products.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Numeric {
            context: "weight product",
            row,
        });
    }
    let mean = products.iter().sum::<f64>() / products.len() as f64;
    if mean == 0.0 {
        return Ok(BatchWeights {
            omega: vec![0.0; products.len()],
            starved: true,
        });
    }
    Ok(BatchWeights {
        omega: products.iter().map(|p| p / mean).collect(),
        starved: false,
    })
}

/// Running min/mean/max of a weight series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for Summary {
    fn default() -> Self {
        Summary {
            min: f64::INFINITY,
            mean: 0.0,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }
}

impl Summary {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.mean += (v - self.mean) / self.count as f64;
    }
}

/// Per-cycle statistics of λ_SL, λ_DE and ω over all target rows trained on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub likelihood: Summary,
    pub decision: Summary,
    pub omega: Summary,
}

impl WeightStats {
    pub const TSV_HEADER: &'static str =
        "sl_min\tsl_mean\tsl_max\tde_min\tde_mean\tde_max\tomega_min\tomega_mean\tomega_max";

    pub fn tsv_row(&self) -> String {
        [self.likelihood, self.decision, self.omega]
            .iter()
            .flat_map(|s| [s.min, s.mean, s.max])
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_symmetry_and_steps() {
        for sigma in [1e-6, 0.1, 3.0] {
            assert_eq!(gaussian_cdf(0.3, 0.3, sigma).unwrap(), 0.5);
        }
        assert_eq!(gaussian_cdf(0.4, 0.5, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian_cdf(0.6, 0.5, 0.0).unwrap(), 1.0);
        assert_eq!(gaussian_cdf(0.5, 0.5, 0.0).unwrap(), 0.5);
        assert!((gaussian_cdf(0.6, 0.5, 0.1).unwrap() - 0.841345).abs() < 1e-6);
        assert!(gaussian_cdf(f64::NAN, 0.0, 1.0).is_err());
        assert!(gaussian_cdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn likelihood_examples() {
        assert_eq!(sample_likelihood(0.4, 0.4, 0.1), 1.0);
        assert!((sample_likelihood(0.6, 0.5, 0.1) - 0.5).abs() < 1e-9);
        assert_eq!(sample_likelihood(0.5 + 3.0 * 0.1, 0.5, 0.1), 0.0);
        assert_eq!(sample_likelihood(0.5, 0.5, 0.0), 1.0);
        assert_eq!(sample_likelihood(0.51, 0.5, 0.0), 0.0);
    }

    #[test]
    fn decision_error_examples() {
        let de = decision_error(0.9, &[0.9, 0.1], &[0.05, 0.01], 0).unwrap();
        assert!((de - 1.0).abs() < 1e-9);
        let de = decision_error(0.4, &[0.5, 0.4, 0.1], &[0.1, 0.2, 0.05], 0).unwrap();
        assert!((de - 0.5).abs() < 1e-12);
        assert!(matches!(
            decision_error(0.5, &[1.0], &[0.1], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weights_examples() {
        let w = batch_weights(&[0.3, 0.3, 0.3]).unwrap();
        for v in w.omega {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let w = batch_weights(&[0.2, 0.6]).unwrap();
        assert!((w.omega[0] - 0.5).abs() < 1e-12 && (w.omega[1] - 1.5).abs() < 1e-12);
        let w = batch_weights(&[0.0, 0.4]).unwrap();
        assert_eq!(w.omega[0], 0.0);
        assert!((w.omega[1] - 2.0).abs() < 1e-12);
        let w = batch_weights(&[0.0, 0.0]).unwrap();
        assert!(w.starved);
        assert_eq!(w.omega, vec![0.0, 0.0]);
    }

    #[test]
    fn mode_parsing() {
        for m in [ReweighMode::None, ReweighMode::Sl, ReweighMode::De, ReweighMode::DeSl] {
            assert_eq!(m.to_string().parse::<ReweighMode>().unwrap(), m);
        }
        assert!("both".parse::<ReweighMode>().is_err());
    }
}
