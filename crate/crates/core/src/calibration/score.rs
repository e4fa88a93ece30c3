use serde::{Deserialize, Serialize};

use crate::corpus::{BinarizeMode, VoteCounts};
use crate::elicitation::PredictionOutcome;
use crate::special::PositiveReal;

use super::loss::{cross_entropy, dirichlet_multinomial_nll, ln_multinomial_coefficient, prediction_to_alpha};
use super::CalibrationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    pub concentration: PositiveReal,
    pub binarize_mode: BinarizeMode,
    pub include_multinomial_coefficient: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            concentration: PositiveReal::new(2.0).expect("positive"),
            binarize_mode: BinarizeMode::Soft,
            include_multinomial_coefficient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Scored { cross_entropy: f64, dirichlet_nll: f64 },
    Excluded { reason: String },
}

/// One line of the per-instance scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub instance_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl ScoredInstance {
    pub fn scores(&self) -> Option<(f64, f64)> {
        match self.outcome {
            Outcome::Scored { cross_entropy, dirichlet_nll } => Some((cross_entropy, dirichlet_nll)),
            Outcome::Excluded { .. } => None,
        }
    }
}

pub fn score_instance(
    pred: &PredictionOutcome,
    votes: &VoteCounts,
    options: &ScoringOptions,
) -> Result<ScoredInstance, CalibrationError> {
    let prediction = match pred {
        PredictionOutcome::Predicted(p) => p,
        PredictionOutcome::Excluded { instance_id, reason } => {
            return Ok(ScoredInstance {
                instance_id: instance_id.clone(),
                outcome: Outcome::Excluded { reason: reason.clone() },
            })
        }
    };
    let target = options.binarize_mode.target(votes)?;
    let ce = cross_entropy(&prediction.probs, &target)?;
    let alpha = prediction_to_alpha(&prediction.probs, options.concentration);
    let mut nll = dirichlet_multinomial_nll(votes, &alpha)?;
    if options.include_multinomial_coefficient {
        nll -= ln_multinomial_coefficient(votes);
    }
    Ok(ScoredInstance {
        instance_id: prediction.instance_id.clone(),
        outcome: Outcome::Scored { cross_entropy: ce, dirichlet_nll: nll },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChoiceDistribution, DILEMMA_CHOICES};
    use crate::elicitation::{ChoicePrediction, Provenance};
    use proptest::prelude::*;

    fn predicted(p: f64) -> PredictionOutcome {
        PredictionOutcome::Predicted(ChoicePrediction {
            instance_id: "x".into(),
            probs: ChoiceDistribution::with_labels(&DILEMMA_CHOICES, vec![p, 1.0 - p]).unwrap(),
            raw_choice_mass: 1.0,
            provenance: Provenance::Live,
        })
    }

    #[test]
    fn uniform_prediction_single_vote() {
        let s = score_instance(&predicted(0.5), &VoteCounts::dilemma(1, 0), &ScoringOptions::default()).unwrap();
        let (ce, nll) = s.scores().unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-7);
        assert!((nll - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn prediction_equal_to_target_gives_entropy() {
        let s = score_instance(&predicted(0.2), &VoteCounts::dilemma(4, 16), &ScoringOptions::default()).unwrap();
        let (ce, _) = s.scores().unwrap();
        assert!((ce - 0.500_402_4).abs() < 1e-7);
    }

    #[test]
    fn majority_mode_scores_against_one_hot() {
        let options = ScoringOptions { binarize_mode: BinarizeMode::Majority, ..Default::default() };
        let (ce, _) = score_instance(&predicted(0.2), &VoteCounts::dilemma(4, 16), &options).unwrap().scores().unwrap();
        assert!((ce + 0.8_f64.ln()).abs() < 1e-12);
        let (tie, _) = score_instance(&predicted(0.2), &VoteCounts::dilemma(3, 3), &options).unwrap().scores().unwrap();
        assert!((tie + 0.5 * 0.2_f64.ln() + 0.5 * 0.8_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn coefficient_flag_subtracts_log_binomial() {
        let votes = VoteCounts::dilemma(2, 3);
        let base = score_instance(&predicted(0.4), &votes, &ScoringOptions::default()).unwrap();
        let with = ScoringOptions { include_multinomial_coefficient: true, ..Default::default() };
        let full = score_instance(&predicted(0.4), &votes, &with).unwrap();
        assert!((base.scores().unwrap().1 - full.scores().unwrap().1 - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn excluded_prediction_passes_through() {
        let pred = PredictionOutcome::Excluded { instance_id: "q".into(), reason: "low-coverage".into() };
        let s = score_instance(&pred, &VoteCounts::dilemma(1, 1), &ScoringOptions::default()).unwrap();
        assert_eq!(s.outcome, Outcome::Excluded { reason: "low-coverage".into() });
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(line, r#"{"instance_id":"q","status":"excluded","reason":"low-coverage"}"#);
        assert_eq!(serde_json::from_str::<ScoredInstance>(&line).unwrap(), s);
    }

    #[test]
    fn mismatched_labels_error() {
        let votes = VoteCounts::binary(1, 1);
        assert!(score_instance(&predicted(0.5), &votes, &ScoringOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn label_swap_leaves_scores_unchanged(p in 0.0..=1.0f64, a in 0u64..40, b in 0u64..40, c in 0.1..50.0f64) {
            prop_assume!(a + b > 0);
            let options = ScoringOptions { concentration: PositiveReal::new(c).unwrap(), ..Default::default() };
            let forward = score_instance(&predicted(p), &VoteCounts::dilemma(a, b), &options).unwrap();
            let swapped_pred = match predicted(p) {
                PredictionOutcome::Predicted(mut x) => { x.probs = x.probs.permuted(&[1, 0]); PredictionOutcome::Predicted(x) }
                other => other,
            };
            let swapped = score_instance(&swapped_pred, &VoteCounts::dilemma(a, b).permuted(&[1, 0]), &options).unwrap();
            let (f, s) = (forward.scores().unwrap(), swapped.scores().unwrap());
            prop_assert!((f.0 - s.0).abs() <= 1e-12 * f.0.abs().max(1.0));
            prop_assert!((f.1 - s.1).abs() <= 1e-12 * f.1.abs().max(1.0));
        }
    }
}
