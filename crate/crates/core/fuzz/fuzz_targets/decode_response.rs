#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::corpus::Dataset;
use moralcal::elicitation::{
    decode_response, extract_choice_probabilities, ApiKind, ChoiceVariants, PromptTemplate,
    DEFAULT_COVERAGE_THRESHOLD,
};

fuzz_target!(|data: &[u8]| {
    let choices = PromptTemplate::default_for(Dataset::Dilemmas).choice_set(Dataset::Dilemmas);
    let variants = ChoiceVariants::new(&choices).unwrap();
    for api in [ApiKind::Completions, ApiKind::Chat] {
        let Ok(top) = decode_response(api, data) else { continue };
        if let Ok(extracted) = extract_choice_probabilities(&top, &variants, DEFAULT_COVERAGE_THRESHOLD) {
            let sum: f64 = extracted.probs.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0 + 1e-12).contains(&extracted.raw_choice_mass));
        }
    }
});
