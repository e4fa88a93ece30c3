use crate::corpus::{ChoiceDistribution, VoteCounts};
use crate::special::{self, PositiveReal};

use super::{ensure_labels, CalibrationError, DirichletParams};

/// Predictions are clipped to [ε, 1 − ε] before taking logs.
pub const LOG_CLIP_EPSILON: f64 = 1e-12;
/// Smallest concentration a prediction maps onto.
pub const ALPHA_FLOOR: f64 = 1e-3;

pub const CONCENTRATION_GRID_MIN: f64 = 0.1;
pub const CONCENTRATION_GRID_MAX: f64 = 100.0;
pub const CONCENTRATION_GRID_POINTS: usize = 61;

/// −Σⱼ targetⱼ · ln predⱼ.
pub fn cross_entropy(pred: &ChoiceDistribution, target: &ChoiceDistribution) -> Result<f64, CalibrationError> {
    ensure_labels(pred.labels(), target.labels())?;
    let ce = pred
        .probs()
        .iter()
        .zip(target.probs())
        .map(|(&p, &t)| {
            if t == 0.0 {
                0.0
            } else {
                -t * p.clamp(LOG_CLIP_EPSILON, 1.0 - LOG_CLIP_EPSILON).ln()
            }
        })
        .sum();
    Ok(ce)
}

fn add_votes(votes: &VoteCounts, alpha: &DirichletParams) -> Result<Vec<f64>, CalibrationError> {
    ensure_labels(votes.labels(), alpha.labels())?;
    if votes.total() == 0 {
        return Err(CalibrationError::NoVotes(0));
    }
    Ok(alpha.alpha().iter().zip(votes.counts()).map(|(&a, &y)| a + y as f64).collect())
}

/// Negative log marginal probability of an unordered tally under Dir(α).
///
/// Equals −[ln B(α + y) − ln B(α)]; the multinomial coefficient is not
/// included (see [`ln_multinomial_coefficient`]).
pub fn dirichlet_multinomial_nll(votes: &VoteCounts, alpha: &DirichletParams) -> Result<f64, CalibrationError> {
    let posterior = add_votes(votes, alpha)?;
    Ok(alpha.ln_beta() - special::ln_beta_multivariate(&posterior)?)
}

/// ln(n! / ∏ yⱼ!).
pub fn ln_multinomial_coefficient(votes: &VoteCounts) -> f64 {
    let ln_fact = |k: u64| special::ln_gamma(k as f64 + 1.0).expect("positive argument");
    ln_fact(votes.total()) - votes.counts().iter().map(|&y| ln_fact(y)).sum::<f64>()
}

/// Σᵢ ln P(yᵢ | α) over a dataset, coefficient excluded.
pub fn dirichlet_multinomial_log_likelihood(
    data: &[VoteCounts],
    alpha: &DirichletParams,
) -> Result<f64, CalibrationError> {
    let mut total = 0.0;
    for (i, votes) in data.iter().enumerate() {
        total -= dirichlet_multinomial_nll(votes, alpha).map_err(|e| match e {
            CalibrationError::NoVotes(_) => CalibrationError::NoVotes(i),
            other => other,
        })?;
    }
    Ok(total)
}

/// αⱼ = max(c · predⱼ, [`ALPHA_FLOOR`]).
pub fn prediction_to_alpha(pred: &ChoiceDistribution, concentration: PositiveReal) -> DirichletParams {
    let c = concentration.get();
    let alpha = pred.probs().iter().map(|&p| (c * p).max(ALPHA_FLOOR)).collect();
    DirichletParams::new(pred.labels().to_vec(), alpha).expect("floored concentrations are positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationFit {
    pub concentration: f64,
    pub log_likelihood: f64,
    pub grid: Vec<(f64, f64)>,
}

/// Picks the grid concentration maximizing the Dirichlet-multinomial
/// likelihood of `pairs`. The grid is log-spaced over
/// [`CONCENTRATION_GRID_MIN`, `CONCENTRATION_GRID_MAX`].
pub fn fit_concentration(pairs: &[(ChoiceDistribution, VoteCounts)]) -> Result<ConcentrationFit, CalibrationError> {
    if pairs.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    let lo = CONCENTRATION_GRID_MIN.ln();
    let step = (CONCENTRATION_GRID_MAX.ln() - lo) / (CONCENTRATION_GRID_POINTS - 1) as f64;
    let mut grid = Vec::with_capacity(CONCENTRATION_GRID_POINTS);
    for k in 0..CONCENTRATION_GRID_POINTS {
        let c = (lo + step * k as f64).exp();
        let c = PositiveReal::new(c)?;
        let mut ll = 0.0;
        for (pred, votes) in pairs {
            ll -= dirichlet_multinomial_nll(votes, &prediction_to_alpha(pred, c))?;
        }
        grid.push((c.get(), ll));
    }
    let (concentration, log_likelihood) = grid
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (c, ll)| if ll > best.1 { (c, ll) } else { best });
    Ok(ConcentrationFit { concentration, log_likelihood, grid })
}
