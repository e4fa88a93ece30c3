//! Empirical-Bayes oracle score: the expected log-likelihood of the observed
//! tallies under each instance's posterior Dir(α̂ + yᵢ).
//!
//! For a Dirichlet, E[ln pⱼ] = ψ(αⱼ) − ψ(α₀), so the expectation has the
//! closed form Σᵢ Σⱼ yᵢⱼ (ψ(α̂ⱼ + yᵢⱼ) − ψ(α̂₀ + nᵢ)).

use serde::Serialize;

use crate::corpus::VoteCounts;
use crate::special::digamma;

use super::{ensure_labels, CalibrationError, DirichletParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleScore {
    /// Raw double sum over instances and classes (a log-score; higher is better).
    pub total: f64,
    /// `total` divided by the number of votes.
    pub per_vote: f64,
    /// `-per_vote`, comparable to a cross-entropy.
    pub per_vote_loss: f64,
    pub votes: u64,
}

pub fn oracle_posterior_score(data: &[VoteCounts], alpha_hat: &DirichletParams) -> Result<OracleScore, CalibrationError> {
    if data.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    let alpha0 = alpha_hat.total();
    let mut total = 0.0;
    let mut votes = 0u64;
    for (i, y) in data.iter().enumerate() {
        ensure_labels(y.labels(), alpha_hat.labels())?;
        let n = y.total();
        if n == 0 {
            return Err(CalibrationError::NoVotes(i));
        }
        votes += n;
        let norm = digamma(alpha0 + n as f64)?;
        for (&a, &c) in alpha_hat.alpha().iter().zip(y.counts()) {
            if c > 0 {
                total += c as f64 * (digamma(a + c as f64)? - norm);
            }
        }
    }
    let per_vote = total / votes as f64;
    Ok(OracleScore { total, per_vote, per_vote_loss: -per_vote, votes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn votes(y: &[u64]) -> VoteCounts {
        VoteCounts::with_labels(&["a", "b"], y.to_vec()).unwrap()
    }

    fn ones() -> DirichletParams {
        DirichletParams::new(vec!["a".into(), "b".into()], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn single_vote_closed_form() {
        let s = oracle_posterior_score(&[votes(&[1, 0])], &ones()).unwrap();
        assert!((s.total + 0.5).abs() < 1e-10);
        assert!((s.per_vote + 0.5).abs() < 1e-10);
        assert_eq!(s.per_vote_loss, -s.per_vote);
    }

    #[test]
    fn split_vote_closed_form() {
        // Posterior Dir(2, 2): each term is ψ(2) − ψ(4) = −(1/2 + 1/3).
        let s = oracle_posterior_score(&[votes(&[1, 1])], &ones()).unwrap();
        assert!((s.total + 5.0 / 3.0).abs() < 1e-12);
        assert!((s.per_vote + 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(s.votes, 2);
    }

    #[test]
    fn monte_carlo_agrees() {
        let data = [votes(&[3, 1]), votes(&[0, 2]), votes(&[5, 5])];
        let prior = DirichletParams::new(vec!["a".into(), "b".into()], vec![0.7, 1.9]).unwrap();
        let exact = oracle_posterior_score(&data, &prior).unwrap().total;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let mut s = 0.0;
            for y in &data {
                let c = y.counts();
                let g1 = Gamma::new(prior.alpha()[0] + c[0] as f64, 1.0).unwrap().sample(&mut rng);
                let g2 = Gamma::new(prior.alpha()[1] + c[1] as f64, 1.0).unwrap().sample(&mut rng);
                let p = g1 / (g1 + g2);
                s += c[0] as f64 * p.ln() + c[1] as f64 * (1.0 - p).ln();
            }
            sum += s;
            sum_sq += s * s;
        }
        let mean = sum / samples as f64;
        let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se} vs {exact}");
    }

    #[test]
    fn errors() {
        assert!(matches!(oracle_posterior_score(&[], &ones()), Err(CalibrationError::EmptyDataset)));
        assert!(matches!(oracle_posterior_score(&[votes(&[0, 0])], &ones()), Err(CalibrationError::NoVotes(0))));
    }
}
