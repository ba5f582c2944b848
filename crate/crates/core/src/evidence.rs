//! Evidence generation and the Subjective-Logic view of a Dirichlet opinion.
//!
//! Each instance is compared against the `K` prototypes of the *other* modality.
//! The similarities become non-negative evidence `e_k`, the Dirichlet parameters
//! are `alpha_k = e_k + 1`, and with strength `S = sum(alpha_k)` the belief masses
//! are `b_k = e_k / S` and the residual mass is `psi = K / S`. The aleatoric
//! uncertainty score is `u = 1 - psi = sum(b_k)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embed::EmbeddingSet;
use crate::error::{PauError, Result};
use crate::matrix::dot;
use crate::proto::PrototypeBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceKind {
    Relu,
    Softplus,
    Exponential,
}

impl EvidenceKind {
    pub const ALL: [EvidenceKind; 3] = [
        EvidenceKind::Relu,
        EvidenceKind::Softplus,
        EvidenceKind::Exponential,
    ];

    pub fn to_byte(self) -> u8 {
        match self {
            EvidenceKind::Relu => 0,
            EvidenceKind::Softplus => 1,
            EvidenceKind::Exponential => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EvidenceKind::Relu),
            1 => Some(EvidenceKind::Softplus),
            2 => Some(EvidenceKind::Exponential),
            _ => None,
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceKind::Relu => "relu",
            EvidenceKind::Softplus => "softplus",
            EvidenceKind::Exponential => "exponential",
        })
    }
}

impl FromStr for EvidenceKind {
    type Err = PauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(EvidenceKind::Relu),
            "softplus" => Ok(EvidenceKind::Softplus),
            "exponential" | "exp" => Ok(EvidenceKind::Exponential),
            other => Err(PauError::InvalidConfig(format!("unknown evidence kind {other:?}"))),
        }
    }
}

/// Maps a similarity to evidence.
///
/// `gamma` and `theta` only affect softplus (sharpness and the point past which it
/// reverts to the identity); `tau` only affects the exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceConfig {
    pub kind: EvidenceKind,
    pub gamma: f64,
    pub theta: f64,
    pub tau: f64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            kind: EvidenceKind::Exponential,
            gamma: 1.0,
            theta: 20.0,
            tau: 5.0,
        }
    }
}

impl EvidenceConfig {
    pub fn with_kind(kind: EvidenceKind) -> Self {
        EvidenceConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("theta", self.theta), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PauError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Evidence for one similarity. Assumes a validated config.
    #[inline]
    pub fn evidence(&self, s: f64) -> f64 {
        match self.kind {
            EvidenceKind::Relu => s.max(0.0),
            EvidenceKind::Softplus => {
                let gs = self.gamma * s;
                if gs <= self.theta {
                    gs.exp().ln_1p() / self.gamma
                } else {
                    s
                }
            }
            EvidenceKind::Exponential => (s / self.tau).exp(),
        }
    }

    /// d(evidence)/ds. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match self.kind {
            EvidenceKind::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            EvidenceKind::Softplus => {
                let gs = self.gamma * s;
                if gs <= self.theta {
                    1.0 / (1.0 + (-gs).exp())
                } else {
                    1.0
                }
            }
            EvidenceKind::Exponential => (s / self.tau).exp() / self.tau,
        }
    }
}

pub fn generate_evidence(s: f64, cfg: &EvidenceConfig) -> Result<f64> {
    cfg.validate()?;
    if !s.is_finite() {
        return Err(PauError::InvalidConfig(format!("similarity {s} is not finite")));
    }
    Ok(cfg.evidence(s))
}

/// Dirichlet parameters, belief masses and uncertainty of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletState {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub beliefs: Vec<f64>,
    /// Residual "not sure" mass, `K / S`.
    pub psi: f64,
    /// Aleatoric uncertainty, `1 - K / S`.
    pub u: f64,
}

impl DirichletState {
    pub fn k(&self) -> usize {
        self.evidence.len()
    }
}

pub fn dirichlet_from_evidence(evidence: &[f64]) -> Result<DirichletState> {
    if evidence.is_empty() {
        return Err(PauError::Empty);
    }
    if let Some((index, &value)) = evidence
        .iter()
        .enumerate()
        .find(|(_, e)| !(**e >= 0.0 && e.is_finite()))
    {
        return Err(PauError::NegativeEvidence { index, value });
    }
    let k = evidence.len() as f64;
    let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
    let strength: f64 = alpha.iter().sum();
    let beliefs = evidence.iter().map(|e| e / strength).collect();
    let psi = k / strength;
    Ok(DirichletState {
        evidence: evidence.to_vec(),
        alpha,
        strength,
        beliefs,
        psi,
        u: 1.0 - psi,
    })
}

/// Uncertainty straight from a similarity vector; avoids building a [`DirichletState`].
#[inline]
pub fn uncertainty_from_similarities(p: &[f64], cfg: &EvidenceConfig) -> f64 {
    let k = p.len() as f64;
    let strength = k + p.iter().map(|&s| cfg.evidence(s)).sum::<f64>();
    1.0 - k / strength
}

/// Cosine of a unit-norm instance against every prototype of `bank`.
pub(crate) fn prototype_similarities(x: &[f64], unit_protos: &[Vec<f64>]) -> Vec<f64> {
    unit_protos
        .iter()
        .map(|z| dot(x, z).clamp(-1.0, 1.0))
        .collect()
}

/// Uncertainty of every instance against the prototypes of the other modality.
pub fn uncertainty_scores(
    instances: &EmbeddingSet,
    other_prototypes: &PrototypeBank,
    cfg: &EvidenceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if instances.modality() == other_prototypes.modality() {
        return Err(PauError::ModalityMismatch {
            expected: instances.modality().other(),
            found: other_prototypes.modality(),
        });
    }
    if instances.d() != other_prototypes.d() {
        return Err(PauError::DimensionMismatch {
            left: instances.d(),
            right: other_prototypes.d(),
        });
    }
    let unit = other_prototypes.unit_rows()?;
    Ok((0..instances.n())
        .into_par_iter()
        .map(|i| uncertainty_from_similarities(&prototype_similarities(instances.row(i), &unit), cfg))
        .collect())
}
