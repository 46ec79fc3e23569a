//! Label encodings and domain specific smoothing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `v(c)_i = 1 − ε` if `i = c`, else `ε / (N − 1)`.
pub fn encode_label(class: usize, classes: usize, epsilon: f64) -> Result<Vec<f64>> {
    if class >= classes {
        return Err(Error::Config(format!("class {class} out of range for {classes} classes")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1)")));
    }
    if epsilon == 0.0 {
        let mut row = vec![0.0; classes];
        row[class] = 1.0;
        return Ok(row);
    }
    if classes < 2 {
        return Err(Error::Config("label smoothing needs at least two classes".into()));
    }
    let off = epsilon / (classes - 1) as f64;
    let mut row = vec![off; classes];
    row[class] = 1.0 - epsilon;
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Pretrain,
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

/// Domains receiving smoothing during one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    None,
    Source,
    Target,
    Both,
}

impl Scope {
    pub fn contains(self, domain: Domain) -> bool {
        matches!(
            (self, domain),
            (Scope::Source, Domain::Source) | (Scope::Target, Domain::Target) | (Scope::Both, _)
        )
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::None => "none",
            Scope::Source => "source",
            Scope::Target => "target",
            Scope::Both => "both",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Scope::None),
            "source" => Ok(Scope::Source),
            "target" => Ok(Scope::Target),
            "both" | "source+target" => Ok(Scope::Both),
            other => Err(Error::Config(format!("unknown smoothing scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingPolicy {
    pub epsilon: f64,
    /// `None` or `Source` only.
    pub pretrain: Scope,
    pub adapt: Scope,
}

impl Default for SmoothingPolicy {
    fn default() -> Self {
        SmoothingPolicy {
            epsilon: 0.25,
            pretrain: Scope::Source,
            adapt: Scope::Source,
        }
    }
}

impl SmoothingPolicy {
    pub fn new(epsilon: f64, pretrain: Scope, adapt: Scope) -> Result<Self> {
        let policy = SmoothingPolicy {
            epsilon,
            pretrain,
            adapt,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn none() -> Self {
        SmoothingPolicy {
            epsilon: 0.0,
            pretrain: Scope::None,
            adapt: Scope::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("dss.epsilon {} outside [0, 1)", self.epsilon)));
        }
        if !matches!(self.pretrain, Scope::None | Scope::Source) {
            return Err(Error::Config(format!(
                "dss.pretrain must be none or source, got {}",
                self.pretrain
            )));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, phase: Phase, domain: Domain) -> Result<f64> {
        let scope = match (phase, domain) {
            (Phase::Pretrain, Domain::Target) => {
                return Err(Error::Usage("pretraining uses source labels only".into()))
            }
            (Phase::Pretrain, Domain::Source) => self.pretrain,
            (Phase::Adapt, _) => self.adapt,
        };
        Ok(if scope.contains(domain) { self.epsilon } else { 0.0 })
    }

    /// Label encoding for a `(phase, domain)` pair under this policy.
    pub fn apply(&self, phase: Phase, domain: Domain, label: usize, classes: usize) -> Result<Vec<f64>> {
        encode_label(label, classes, self.epsilon_for(phase, domain)?)
    }
}
