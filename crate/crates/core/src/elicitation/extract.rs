use std::collections::HashMap;

use crate::corpus::ChoiceDistribution;

use super::{ChoiceSet, ElicitError};

/// Default minimum matched probability mass.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.05;

/// Surface forms that count as each choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceVariants {
    labels: Vec<String>,
    variants: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

fn title_case(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// As written, lowercase, uppercase and title case, each bare and with one
/// leading space.
pub fn token_variants(token: &str) -> Vec<String> {
    let bare = token.trim_start();
    let mut forms = vec![bare.to_string(), bare.to_lowercase(), bare.to_uppercase(), title_case(bare)];
    forms.sort();
    forms.dedup();
    let mut out: Vec<String> = forms.iter().flat_map(|f| [f.clone(), format!(" {f}")]).collect();
    out.sort();
    out
}

impl ChoiceVariants {
    pub fn new(choices: &ChoiceSet) -> Result<Self, ElicitError> {
        let mut index = HashMap::new();
        let mut variants = Vec::new();
        for (i, token) in choices.tokens().iter().enumerate() {
            let forms = token_variants(token);
            for form in &forms {
                if let Some(prev) = index.insert(form.clone(), i) {
                    return Err(ElicitError::OverlappingVariants {
                        form: form.clone(),
                        first: choices.tokens()[prev].clone(),
                        second: token.clone(),
                    });
                }
            }
            variants.push(forms);
        }
        Ok(Self { labels: choices.labels().to_vec(), variants, index })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn variants(&self, choice: usize) -> &[String] {
        &self.variants[choice]
    }

    fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// Probabilities over the choices, renormalized from matched token mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedChoice {
    pub probs: ChoiceDistribution,
    /// Unnormalized matched mass, in [0, 1].
    pub raw_choice_mass: f64,
}

/// Sums exp(logprob) over each choice's variants and renormalizes.
///
/// Matched entries are summed in sorted order so permuting `top_logprobs`
/// cannot change the result.
pub fn extract_choice_probabilities(
    top_logprobs: &[(String, f64)],
    variants: &ChoiceVariants,
    coverage_threshold: f64,
) -> Result<ExtractedChoice, ElicitError> {
    let mut matched: Vec<(usize, &str, f64)> = Vec::new();
    for (token, logprob) in top_logprobs {
        if logprob.is_nan() || *logprob == f64::INFINITY {
            return Err(ElicitError::InvalidLogprob { token: token.clone(), logprob: *logprob });
        }
        if let Some(choice) = variants.lookup(token) {
            matched.push((choice, token.as_str(), *logprob));
        }
    }
    matched.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.total_cmp(&b.2)));

    let mut mass = vec![0.0; variants.labels.len()];
    for &(choice, _, logprob) in &matched {
        mass[choice] += logprob.exp();
    }
    let total: f64 = mass.iter().sum();
    let raw_choice_mass = total.min(1.0);
    if !(raw_choice_mass >= coverage_threshold) || total == 0.0 {
        return Err(ElicitError::LowCoverage { mass: raw_choice_mass, threshold: coverage_threshold });
    }
    let mut probs: Vec<f64> = mass.iter().map(|m| m / total).collect();
    // Push any rounding residue into the last component.
    let head: f64 = probs[..probs.len() - 1].iter().sum();
    let last = probs.len() - 1;
    probs[last] = (1.0 - head).max(0.0);
    let probs = ChoiceDistribution::new(variants.labels.clone(), probs)?;
    Ok(ExtractedChoice { probs, raw_choice_mass })
}
