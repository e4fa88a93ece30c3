#![no_main]

use libfuzzer_sys::fuzz_target;
use moralcal::corpus::{Dataset, DilemmaRecord, VoteCounts};
use moralcal::elicitation::{build_dilemma_prompt, ChoiceVariants, PromptTemplate};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(template) = PromptTemplate::from_json(text) else { return };
    let _ = ChoiceVariants::new(&template.choice_set(Dataset::Dilemmas));
    let record = DilemmaRecord {
        id: "fuzz".into(),
        action_one: "Keep the promise.".into(),
        action_two: "Break the promise.".into(),
        gold_votes: VoteCounts::dilemma(1, 2),
    };
    let prompt = build_dilemma_prompt(&record, &template);
    assert!(prompt.contains("Break the promise."));
});
