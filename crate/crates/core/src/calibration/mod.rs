//! Scoring mathematics: soft-label cross-entropy, Dirichlet-multinomial loss,
//! maximum-likelihood prior fitting and the empirical-Bayes oracle score.
//!
//! All logarithms are natural.

mod loss;
mod mle;
mod oracle;
mod score;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::special::{self, DomainError};

pub use loss::{
    cross_entropy, dirichlet_multinomial_log_likelihood, dirichlet_multinomial_nll, fit_concentration,
    ln_multinomial_coefficient, prediction_to_alpha, ConcentrationFit, ALPHA_FLOOR, CONCENTRATION_GRID_MAX,
    CONCENTRATION_GRID_MIN, CONCENTRATION_GRID_POINTS, LOG_CLIP_EPSILON,
};
pub use mle::{fit_dirichlet_mle, MleFit, MleOptions};
pub use oracle::{oracle_posterior_score, OracleScore};
pub use score::{score_instance, Outcome, ScoredInstance, ScoringOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dimension mismatch: {0} vs {1} components")]
    DimensionMismatch(usize, usize),
    #[error("label mismatch: {0:?} vs {1:?}")]
    LabelMismatch(Vec<String>, Vec<String>),
    #[error("instance {0} has no votes")]
    NoVotes(usize),
    #[error("need at least {needed} instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("MLE did not converge after {iterations} iterations (residual {residual:e}, last iterate {last:?})")]
    NonConvergence { iterations: usize, residual: f64, last: Vec<f64> },
}

/// Strictly positive Dirichlet concentration vector over ordered labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct DirichletParams {
    labels: Vec<String>,
    alpha: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    labels: Vec<String>,
    alpha: Vec<f64>,
}

impl TryFrom<RawParams> for DirichletParams {
    type Error = CalibrationError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        Self::new(raw.labels, raw.alpha)
    }
}

impl DirichletParams {
    pub fn new(labels: Vec<String>, alpha: Vec<f64>) -> Result<Self, CalibrationError> {
        if labels.len() != alpha.len() {
            return Err(CalibrationError::DimensionMismatch(labels.len(), alpha.len()));
        }
        if alpha.len() < 2 {
            return Err(DomainError::TooFewComponents { function: "DirichletParams", len: alpha.len() }.into());
        }
        for &a in &alpha {
            special::PositiveReal::new(a)?;
        }
        let total: f64 = alpha.iter().sum();
        special::PositiveReal::new(total)?;
        Ok(Self { labels, alpha })
    }

    /// Parameters labelled `c0, c1, ...`.
    pub fn unlabeled(alpha: Vec<f64>) -> Result<Self, CalibrationError> {
        let labels = (0..alpha.len()).map(|i| format!("c{i}")).collect();
        Self::new(labels, alpha)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn ln_beta(&self) -> f64 {
        // Components are validated on construction.
        special::ln_beta_multivariate(&self.alpha).expect("validated Dirichlet parameters")
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            alpha: order.iter().map(|&i| self.alpha[i]).collect(),
        }
    }
}

fn ensure_labels(a: &[String], b: &[String]) -> Result<(), CalibrationError> {
    if a.len() != b.len() {
        return Err(CalibrationError::DimensionMismatch(a.len(), b.len()));
    }
    if a != b {
        return Err(CalibrationError::LabelMismatch(a.to_vec(), b.to_vec()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(DirichletParams::unlabeled(vec![1.0, 0.0]).is_err());
        assert!(DirichletParams::unlabeled(vec![1.0]).is_err());
        assert!(DirichletParams::unlabeled(vec![1.0, f64::INFINITY]).is_err());
        assert!(DirichletParams::unlabeled(vec![f64::MAX, f64::MAX]).is_err());
        assert!(DirichletParams::new(vec!["a".into()], vec![1.0, 2.0]).is_err());
        let p = DirichletParams::unlabeled(vec![2.0, 1.0]).unwrap();
        assert!((p.ln_beta() + std::f64::consts::LN_2).abs() < 1e-14);
        let bad: Result<DirichletParams, _> = serde_json::from_str(r#"{"labels":["a","b"],"alpha":[1.0,-1.0]}"#);
        assert!(bad.is_err());
    }
}
