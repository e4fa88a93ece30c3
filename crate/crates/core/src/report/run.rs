use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use crate::calibration::{
    fit_concentration, fit_dirichlet_mle, oracle_posterior_score, score_instance, MleOptions, ScoredInstance,
    ScoringOptions,
};
use crate::corpus::{label_anecdote, label_dilemma, parse_records, Labeling, ParseOptions, Records, VoteCounts};
use crate::elicitation::{
    build_anecdote_prompt, build_dilemma_prompt, ChoiceSet, ElicitError, ElicitJob, Elicitor, PredictionCache,
    PredictionOutcome, PromptTemplate, Transport, UreqTransport, API_KEY_ENV,
};
use crate::special::PositiveReal;

use super::manifest::{ModelRun, RunManifest, RunStatus};
use super::{
    aggregate, aligned_table, compare, render_report, ComparisonRow, ModelScorecard, ReportError, ReportFormat,
    RunConfig, ScoreLine,
};

/// Overrides applied on top of a [`RunConfig`].
#[derive(Default, Clone)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
    /// Defaults to HTTP via ureq.
    pub transport: Option<Arc<dyn Transport>>,
    /// Defaults to the value of [`API_KEY_ENV`].
    pub api_key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub rows: Vec<ComparisonRow>,
    /// Keyed by `name/role`.
    pub scorecards: Vec<(String, ModelScorecard)>,
    pub report_text: String,
}

/// A run that stopped early. When `manifest` is set it records how far the
/// run got and has been written to the output directory.
#[derive(Debug)]
pub struct RunFailure {
    pub manifest: Option<RunManifest>,
    pub error: ReportError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// A labeled record with its rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInstance {
    pub id: String,
    pub votes: VoteCounts,
    pub prompt: String,
}

/// Labels every record and renders its prompt. Records that cannot be
/// labeled or prompted come back as `(id, reason)` pairs.
pub fn prepare_instances(records: &Records, template: &PromptTemplate) -> (Vec<PreparedInstance>, Vec<(String, String)>) {
    let labeled: Vec<(Labeling, Result<String, String>)> = match records {
        Records::Dilemmas(rs) => rs.iter().map(|r| (label_dilemma(r), Ok(build_dilemma_prompt(r, template)))).collect(),
        Records::Anecdotes(rs) => rs
            .iter()
            .map(|r| (label_anecdote(r), build_anecdote_prompt(r, template).map_err(|e| e.to_string())))
            .collect(),
    };
    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for (labeling, prompt) in labeled {
        match (labeling, prompt) {
            (Labeling::Labeled(l), Ok(prompt)) => instances.push(PreparedInstance { id: l.id, votes: l.votes, prompt }),
            (Labeling::Labeled(l), Err(reason)) => skipped.push((l.id, reason)),
            (Labeling::Skipped { id, reason }, _) => skipped.push((id, reason)),
        }
    }
    (instances, skipped)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|e| ReportError::io(path, e))
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    write_file(&out_dir.join("manifest.json"), text.as_bytes())
}

fn load_template(config: &RunConfig) -> Result<PromptTemplate, ReportError> {
    match &config.template {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
            Ok(PromptTemplate::from_json(&text).map_err(ElicitError::from)?)
        }
        None => Ok(PromptTemplate::default_for(config.dataset)),
    }
}

/// Parses, prompts, elicits, scores, aggregates and renders. Writes
/// `report.txt`, `report.csv`, `report.json`, `scores.jsonl` and
/// `manifest.json` to the output directory.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunArtifacts, RunFailure> {
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("moralcal-out"));
    let fail = |error| RunFailure { manifest: None, error };
    std::fs::create_dir_all(&out_dir).map_err(|e| fail(ReportError::io(&out_dir, e)))?;
    let template = load_template(config).map_err(fail)?;

    let mut manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        status: RunStatus::Failed,
        error: None,
        dataset: config.dataset.to_string(),
        split: config.split.clone(),
        input_sha256: String::new(),
        total_records: 0,
        rejected_lines: 0,
        template_digest: template.digest(),
        binarize_mode: config.binarize_mode.to_string(),
        concentration: config.concentration,
        fit_concentration: config.fit_concentration,
        include_multinomial_coefficient: config.include_multinomial_coefficient,
        coverage_threshold: config.coverage_threshold,
        models: Vec::new(),
    };

    let pipeline = Pipeline { config, options, template, out_dir: out_dir.clone() };
    match pipeline.execute(&mut manifest) {
        Ok((rows, scorecards, report_text)) => {
            manifest.status = RunStatus::Complete;
            if let Err(error) = write_manifest(&out_dir, &manifest) {
                return Err(RunFailure { manifest: Some(manifest), error });
            }
            Ok(RunArtifacts { out_dir, manifest, rows, scorecards, report_text })
        }
        Err(error) => {
            manifest.error = Some(error.to_string());
            if let Err(e) = write_manifest(&out_dir, &manifest) {
                log::error!("could not write manifest: {e}");
            }
            Err(RunFailure { manifest: Some(manifest), error })
        }
    }
}

struct Pipeline<'a> {
    config: &'a RunConfig,
    options: &'a RunOptions,
    template: PromptTemplate,
    out_dir: PathBuf,
}

type Rendered = (Vec<ComparisonRow>, Vec<(String, ModelScorecard)>, String);

struct Checkpoint {
    key: String,
    card: ModelScorecard,
    concentration: f64,
    scores: Vec<ScoredInstance>,
}

impl Pipeline<'_> {
    fn instances(&self, manifest: &mut RunManifest) -> Result<(Vec<PreparedInstance>, usize), ReportError> {
        let config = self.config;
        let bytes = std::fs::read(&config.input).map_err(|e| ReportError::io(&config.input, e))?;
        manifest.input_sha256 = hex::encode(Sha256::digest(&bytes));
        let (records, errors) = parse_records(config.dataset, &bytes[..], ParseOptions { strict: config.strict })?;
        for e in &errors {
            log::warn!("{}: {e}", config.input.display());
        }
        manifest.rejected_lines = errors.len();
        manifest.total_records = records.len();

        let (instances, skipped) = prepare_instances(&records, &self.template);
        for (id, reason) in &skipped {
            log::info!("skipping {id}: {reason}");
        }
        Ok((instances, skipped.len()))
    }

    fn elicitor(&self, model_name: &str, cache: &Arc<PredictionCache>) -> Result<Elicitor, ReportError> {
        let endpoint = self.config.endpoint_for(model_name);
        let transport: Arc<dyn Transport> = match &self.options.transport {
            Some(t) => t.clone(),
            None => Arc::new(UreqTransport::new(endpoint.timeout())),
        };
        let key = self
            .options
            .api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty());
        Ok(Elicitor::new(endpoint, transport)?
            .with_cache(cache.clone())
            .with_api_key(key)
            .with_coverage_threshold(self.config.coverage_threshold)
            .with_seed(self.options.seed.unwrap_or(self.config.seed)))
    }

    fn checkpoint(
        &self,
        entry: &mut ModelRun,
        instances: &[PreparedInstance],
        choices: &ChoiceSet,
        cache: &Arc<PredictionCache>,
    ) -> Result<(ModelScorecard, f64, Vec<ScoredInstance>), ReportError> {
        let config = self.config;
        let elicitor = self.elicitor(&entry.model_name, cache)?;
        let jobs: Vec<ElicitJob> =
            instances.iter().map(|i| ElicitJob { instance_id: i.id.clone(), prompt: i.prompt.clone() }).collect();
        let concurrency = self.options.concurrency.unwrap_or(config.concurrency);
        let results = elicitor.elicit_batch(&jobs, choices, concurrency);
        entry.live_requests = elicitor.live_requests();
        entry.cached = elicitor.cache_hits() as usize;

        let mut outcomes = Vec::with_capacity(results.len());
        for (instance, result) in instances.iter().zip(results) {
            match result {
                Ok(e) => outcomes.push(PredictionOutcome::Predicted(e.prediction)),
                Err(e) => match e.exclusion_reason() {
                    Some(reason) => outcomes.push(PredictionOutcome::Excluded { instance_id: instance.id.clone(), reason }),
                    None => return Err(e.into()),
                },
            }
        }

        let concentration = if config.fit_concentration {
            let pairs: Vec<_> = outcomes
                .iter()
                .zip(instances)
                .filter_map(|(o, i)| match o {
                    PredictionOutcome::Predicted(p) => Some((p.probs.clone(), i.votes.clone())),
                    PredictionOutcome::Excluded { .. } => None,
                })
                .collect();
            if pairs.is_empty() {
                return Err(ReportError::NothingScored);
            }
            fit_concentration(&pairs)?.concentration
        } else {
            config.concentration
        };
        let scoring = ScoringOptions {
            concentration: PositiveReal::new(concentration).map_err(crate::calibration::CalibrationError::from)?,
            binarize_mode: config.binarize_mode,
            include_multinomial_coefficient: config.include_multinomial_coefficient,
        };
        let scores = outcomes
            .iter()
            .zip(instances)
            .map(|(o, i)| score_instance(o, &i.votes, &scoring))
            .collect::<Result<Vec<_>, _>>()?;
        let card = aggregate(&entry.model_name, &config.dataset.to_string(), &scores)?;
        entry.scored = card.n_scored;
        entry.excluded = scores.len() - card.n_scored;
        entry.unprocessed = 0;
        entry.concentration = concentration;
        Ok((card, concentration, scores))
    }

    fn execute(&self, manifest: &mut RunManifest) -> Result<Rendered, ReportError> {
        let config = self.config;
        let (instances, skipped) = self.instances(manifest)?;
        let choices = self.template.choice_set(config.dataset);
        let cache_dir = self
            .options
            .cache_dir
            .clone()
            .or_else(|| config.cache_dir.clone())
            .unwrap_or_else(|| self.out_dir.join("cache"));
        let cache = Arc::new(PredictionCache::new(cache_dir));

        for pair in &config.models {
            for (role, model_name) in [("original", &pair.original), ("finetuned", &pair.finetuned)] {
                let endpoint = config.endpoint_for(model_name);
                manifest.models.push(ModelRun {
                    name: pair.name.clone(),
                    role: role.into(),
                    model_name: model_name.clone(),
                    endpoint_digest: endpoint.digest(),
                    concentration: config.concentration,
                    scored: 0,
                    excluded: 0,
                    skipped,
                    unprocessed: instances.len(),
                    live_requests: 0,
                    cached: 0,
                });
            }
        }

        let mut checkpoints = Vec::new();
        for index in 0..manifest.models.len() {
            let mut entry = manifest.models[index].clone();
            let outcome = self.checkpoint(&mut entry, &instances, &choices, &cache);
            manifest.models[index] = entry.clone();
            let (card, concentration, scores) = outcome?;
            checkpoints.push(Checkpoint { key: format!("{}/{}", entry.name, entry.role), card, concentration, scores });
        }

        let mut rows = Vec::new();
        for (pair, two) in config.models.iter().zip(checkpoints.chunks(2)) {
            rows.extend(compare(&pair.name, &two[0].card, &two[1].card)?);
        }
        let digest = manifest.digest();
        let oracle = self.oracle_line(&instances);

        let mut text = render_report(&rows, ReportFormat::Text, &digest)?;
        text.push('\n');
        let header = ["checkpoint", "model", "n_scored", "mean_cross_entropy", "mean_dirichlet_nll", "concentration"];
        let cells: Vec<Vec<String>> = checkpoints
            .iter()
            .map(|c| {
                vec![
                    c.key.clone(),
                    c.card.model.clone(),
                    c.card.n_scored.to_string(),
                    format!("{:.4}", c.card.mean_cross_entropy),
                    format!("{:.4}", c.card.mean_dirichlet_nll),
                    format!("{:.4}", c.concentration),
                ]
            })
            .collect();
        text.push_str(&aligned_table(&header, &cells, 2));
        text.push('\n');
        text.push_str(&oracle.0);
        text.push('\n');

        let csv = render_report(&rows, ReportFormat::Csv, &digest)?;
        let mut json: serde_json::Value =
            serde_json::from_str(&render_report(&rows, ReportFormat::Json, &digest)?).expect("rendered JSON parses");
        json["scorecards"] = serde_json::json!(checkpoints
            .iter()
            .map(|c| serde_json::json!({"checkpoint": c.key, "concentration": c.concentration, "scorecard": c.card}))
            .collect::<Vec<_>>());
        json["oracle"] = oracle.1;

        let mut scores_out = Vec::new();
        for (c, entry) in checkpoints.iter().zip(&manifest.models) {
            for s in &c.scores {
                let line = ScoreLine { model: entry.model_name.clone(), role: entry.role.clone(), score: s.clone() };
                serde_json::to_writer(&mut scores_out, &line).expect("score serializes");
                scores_out.push(b'\n');
            }
        }

        write_file(&self.out_dir.join("report.txt"), text.as_bytes())?;
        write_file(&self.out_dir.join("report.csv"), csv.as_bytes())?;
        let json_text = serde_json::to_string_pretty(&json).expect("report serializes") + "\n";
        write_file(&self.out_dir.join("report.json"), json_text.as_bytes())?;
        write_file(&self.out_dir.join("scores.jsonl"), &scores_out)?;

        let scorecards = checkpoints.into_iter().map(|c| (c.key, c.card)).collect();
        Ok((rows, scorecards, text))
    }

    /// Dataset-level empirical-Bayes reference score, rendered and as JSON.
    fn oracle_line(&self, instances: &[PreparedInstance]) -> (String, serde_json::Value) {
        let votes: Vec<VoteCounts> = instances.iter().map(|i| i.votes.clone()).collect();
        let outcome = fit_dirichlet_mle(&votes, &MleOptions::default())
            .and_then(|fit| oracle_posterior_score(&votes, &fit.alpha).map(|score| (fit, score)));
        match outcome {
            Ok((fit, score)) => {
                let alpha: Vec<String> = fit.alpha.alpha().iter().map(|a| format!("{a:.4}")).collect();
                let mut line = String::new();
                let _ = write!(
                    line,
                    "oracle log score {:.4} per vote over {} votes (alpha_hat = ({}))",
                    score.per_vote,
                    score.votes,
                    alpha.join(", ")
                );
                (line, serde_json::json!({"alpha_hat": fit.alpha.alpha(), "score": score}))
            }
            Err(e) => (format!("oracle score unavailable: {e}"), serde_json::json!({"error": e.to_string()})),
        }
    }
}
