use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use moralcal::calibration::{fit_concentration, score_instance, ScoringOptions};
use moralcal::corpus::{parse_records, write_anecdotes, write_dilemmas, BinarizeMode, Dataset, ParseOptions, Records};
use moralcal::elicitation::{
    parse_predictions, write_predictions, ApiKind, ElicitJob, Elicitor, EndpointConfig, PredictionCache,
    PredictionOutcome, PromptTemplate,
};
use moralcal::report::{
    aggregate, compare, export_finetune, parse_rows_csv, parse_scores, prepare_instances, render_report, run,
    write_finetune, write_scores, PreparedInstance, ReportFormat, RunConfig, RunManifest, RunOptions,
    DEFAULT_REPLICATION,
};
use moralcal::special::PositiveReal;

#[derive(Parser)]
#[command(name = "moralcal", version, about = "Measure how well model choice probabilities match human judgment distributions")]
struct Cli {
    /// Run config (JSON). Flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Prediction cache directory. `run` defaults to `<out>/cache`; `elicit` caches only when this is set.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Output directory. Without it, results go to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Requests in flight at once.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Seed for retry jitter.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// `dilemmas` or `anecdotes`.
    #[arg(long)]
    dataset: Option<Dataset>,
    /// Corpus file (JSON lines).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct ScoringArgs {
    /// Target for anecdotes: `soft` (normalized votes) or `majority`.
    #[arg(long)]
    binarize_mode: Option<BinarizeMode>,
    /// Dirichlet concentration c applied to predictions [default: 2].
    #[arg(long)]
    concentration: Option<f64>,
    /// Pick the concentration that maximizes the Dirichlet-multinomial likelihood.
    #[arg(long)]
    fit_concentration: bool,
    /// Report the full multinomial likelihood instead of the Dirichlet ratio alone.
    #[arg(long)]
    include_multinomial_coefficient: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write it in canonical form.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Query an endpoint for choice probabilities.
    Elicit {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Endpoint model name.
        #[arg(long)]
        model: String,
        /// Server root, for example http://localhost:8000.
        #[arg(long)]
        base_url: Option<String>,
        /// `completions` or `chat`.
        #[arg(long)]
        api: Option<ApiKind>,
        /// Prompt template (JSON). Defaults to the bundled one.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Minimum matched choice mass before an instance is excluded [default: 0.05].
        #[arg(long)]
        coverage_threshold: Option<f64>,
    },
    /// Score a predictions file against the corpus.
    Score {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Predictions file written by `elicit`.
        #[arg(long)]
        predictions: PathBuf,
        /// Model name recorded with each score.
        #[arg(long)]
        model: Option<String>,
    },
    /// Render a comparison table.
    Report {
        /// CSV with model,metric,original,finetuned columns.
        #[arg(long, conflicts_with_all = ["original", "finetuned"])]
        rows: Option<PathBuf>,
        /// Scores file of the original checkpoint.
        #[arg(long, requires = "finetuned")]
        original: Option<PathBuf>,
        /// Scores file of the fine-tuned checkpoint.
        #[arg(long, requires = "original")]
        finetuned: Option<PathBuf>,
        /// Model name for the row label.
        #[arg(long, default_value = "model")]
        model: String,
        /// `text`, `csv` or `json`.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Manifest whose digest the table carries.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write a distribution-encoded fine-tuning corpus.
    ExportFinetune {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Copies of each instance, split by largest remainder over the choices.
        #[arg(long, default_value_t = DEFAULT_REPLICATION)]
        replication: u32,
        /// Target for anecdotes: `soft` (normalized votes) or `majority`.
        #[arg(long)]
        binarize_mode: Option<BinarizeMode>,
        /// Prompt template (JSON). Defaults to the bundled one.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Parse, elicit, score and report in one go, as described by --config.
    Run {
        /// Override the configured API style.
        #[arg(long)]
        api: Option<ApiKind>,
    },
}

fn load_config(cli: &Cli) -> Result<Option<RunConfig>> {
    cli.config
        .as_deref()
        .map(|p| RunConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

struct Corpus {
    dataset: Dataset,
    records: Records,
    input: PathBuf,
}

fn read_corpus(args: &CorpusArgs, config: Option<&RunConfig>) -> Result<Corpus> {
    let dataset = args.dataset.or(config.map(|c| c.dataset)).context("--dataset is required")?;
    let input = args.input.clone().or(config.map(|c| c.input.clone())).context("--input is required")?;
    let strict = args.strict || config.is_some_and(|c| c.strict);
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let (records, errors) = parse_records(dataset, BufReader::new(file), ParseOptions { strict })
        .with_context(|| format!("reading {}", input.display()))?;
    for e in &errors {
        log::warn!("{}: {e}", input.display());
    }
    if !errors.is_empty() {
        eprintln!("{}: {} lines rejected", input.display(), errors.len());
    }
    Ok(Corpus { dataset, records, input })
}

fn load_template(path: Option<&Path>, config: Option<&RunConfig>, dataset: Dataset) -> Result<PromptTemplate> {
    match path.map(Path::to_path_buf).or(config.and_then(|c| c.template.clone())) {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(PromptTemplate::from_json(&text).with_context(|| format!("template {}", p.display()))?)
        }
        None => Ok(PromptTemplate::default_for(dataset)),
    }
}

/// A writer for `name` inside `--out`, or stdout.
fn output(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn ingest(cli: &Cli, corpus: &CorpusArgs) -> Result<()> {
    let config = load_config(cli)?;
    let c = read_corpus(corpus, config.as_ref())?;
    let mut out = output(cli.out.as_deref(), &format!("{}.jsonl", c.dataset))?;
    match &c.records {
        Records::Anecdotes(rs) => write_anecdotes(rs, &mut out)?,
        Records::Dilemmas(rs) => write_dilemmas(rs, &mut out)?,
    }
    out.flush()?;
    let template = PromptTemplate::default_for(c.dataset);
    let (instances, skipped) = prepare_instances(&c.records, &template);
    eprintln!(
        "{}: {} records, {} labeled, {} skipped",
        c.input.display(),
        c.records.len(),
        instances.len(),
        skipped.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn elicit(
    cli: &Cli,
    corpus: &CorpusArgs,
    model: &str,
    base_url: Option<&str>,
    api: Option<ApiKind>,
    template: Option<&Path>,
    coverage: Option<f64>,
) -> Result<()> {
    let config = load_config(cli)?;
    let c = read_corpus(corpus, config.as_ref())?;
    let template = load_template(template, config.as_ref(), c.dataset)?;
    let mut endpoint = match (&config, base_url) {
        (_, Some(url)) => EndpointConfig { base_url: url.to_string(), ..config.as_ref().map(|c| c.endpoint.clone()).unwrap_or_else(|| EndpointConfig::new(url, model)) },
        (Some(cfg), None) => cfg.endpoint.clone(),
        (None, None) => bail!("--base-url or --config is required"),
    };
    endpoint.model_name = model.to_string();
    if let Some(api) = api {
        endpoint.api = api;
    }
    let coverage = coverage.or(config.as_ref().map(|c| c.coverage_threshold)).unwrap_or(moralcal::elicitation::DEFAULT_COVERAGE_THRESHOLD);
    let mut elicitor = Elicitor::http(endpoint)?
        .with_coverage_threshold(coverage)
        .with_seed(cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0));
    if let Some(dir) = cli.cache_dir.clone().or(config.as_ref().and_then(|c| c.cache_dir.clone())) {
        elicitor = elicitor.with_cache(Arc::new(PredictionCache::new(dir)));
    }
    let (instances, skipped) = prepare_instances(&c.records, &template);
    let jobs: Vec<ElicitJob> =
        instances.iter().map(|i| ElicitJob { instance_id: i.id.clone(), prompt: i.prompt.clone() }).collect();
    let concurrency = cli.concurrency.or(config.as_ref().map(|c| c.concurrency)).unwrap_or(4);
    let choices = template.choice_set(c.dataset);
    let mut predictions = Vec::with_capacity(jobs.len());
    for (job, result) in jobs.iter().zip(elicitor.elicit_batch(&jobs, &choices, concurrency)) {
        match result {
            Ok(e) => predictions.push(PredictionOutcome::Predicted(e.prediction)),
            Err(e) => match e.exclusion_reason() {
                Some(reason) => predictions.push(PredictionOutcome::Excluded { instance_id: job.instance_id.clone(), reason }),
                None => return Err(e).context(format!("eliciting {}", job.instance_id)),
            },
        }
    }
    let mut out = output(cli.out.as_deref(), "predictions.jsonl")?;
    write_predictions(&mut out, &predictions)?;
    out.flush()?;
    eprintln!(
        "{model}: {} predictions, {} skipped, {} live requests",
        predictions.len(),
        skipped.len(),
        elicitor.live_requests()
    );
    Ok(())
}

fn scoring_options(args: &ScoringArgs, config: Option<&RunConfig>, pairs: &[(PreparedInstance, PredictionOutcome)]) -> Result<ScoringOptions> {
    let binarize_mode = args.binarize_mode.or(config.map(|c| c.binarize_mode)).unwrap_or_default();
    let include = args.include_multinomial_coefficient || config.is_some_and(|c| c.include_multinomial_coefficient);
    let concentration = if args.fit_concentration || config.is_some_and(|c| c.fit_concentration) {
        let data: Vec<_> = pairs
            .iter()
            .filter_map(|(i, p)| match p {
                PredictionOutcome::Predicted(p) => Some((p.probs.clone(), i.votes.clone())),
                PredictionOutcome::Excluded { .. } => None,
            })
            .collect();
        let fit = fit_concentration(&data)?;
        eprintln!("fitted concentration {:.4}", fit.concentration);
        fit.concentration
    } else {
        args.concentration.or(config.map(|c| c.concentration)).unwrap_or(2.0)
    };
    Ok(ScoringOptions {
        concentration: PositiveReal::new(concentration)?,
        binarize_mode,
        include_multinomial_coefficient: include,
    })
}

fn score(cli: &Cli, corpus: &CorpusArgs, scoring: &ScoringArgs, predictions: &Path, model: Option<&str>) -> Result<()> {
    let config = load_config(cli)?;
    let c = read_corpus(corpus, config.as_ref())?;
    let template = load_template(None, config.as_ref(), c.dataset)?;
    let (instances, _) = prepare_instances(&c.records, &template);
    let file = File::open(predictions).with_context(|| format!("opening {}", predictions.display()))?;
    let mut by_id: std::collections::HashMap<String, PredictionOutcome> = parse_predictions(BufReader::new(file))?
        .into_iter()
        .map(|p| (p.instance_id().to_string(), p))
        .collect();
    let mut pairs = Vec::with_capacity(instances.len());
    for instance in instances {
        let pred = by_id.remove(&instance.id).with_context(|| format!("no prediction for instance {}", instance.id))?;
        pairs.push((instance, pred));
    }
    if !by_id.is_empty() {
        log::warn!("{} predictions do not match any labeled instance", by_id.len());
    }
    let options = scoring_options(scoring, config.as_ref(), &pairs)?;
    let scores = pairs
        .iter()
        .map(|(i, p)| score_instance(p, &i.votes, &options))
        .collect::<Result<Vec<_>, _>>()?;
    let model = model.unwrap_or("model");
    let card = aggregate(model, c.dataset.as_str(), &scores)?;
    let mut out = output(cli.out.as_deref(), "scores.jsonl")?;
    write_scores(&mut out, &scores)?;
    out.flush()?;
    let card_json = serde_json::to_string_pretty(&card)?;
    match cli.out.as_deref() {
        Some(dir) => std::fs::write(dir.join("scorecard.json"), card_json + "\n")?,
        None => eprintln!("{card_json}"),
    }
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<moralcal::calibration::ScoredInstance>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_scores(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn report(
    cli: &Cli,
    rows_path: Option<&Path>,
    original: Option<&Path>,
    finetuned: Option<&Path>,
    model: &str,
    format: ReportFormat,
    manifest: Option<&Path>,
) -> Result<()> {
    let rows = match (rows_path, original, finetuned) {
        (Some(p), _, _) => parse_rows_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        (None, Some(o), Some(f)) => {
            let a = aggregate(model, "", &read_scores(o)?)?;
            let b = aggregate(model, "", &read_scores(f)?)?;
            compare(model, &a, &b)?
        }
        _ => bail!("give --rows, or both --original and --finetuned"),
    };
    let digest = match manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunManifest>(&text).with_context(|| format!("parsing {}", p.display()))?.digest()
        }
        None => "none".to_string(),
    };
    let name = match format {
        ReportFormat::Text => "report.txt",
        ReportFormat::Csv => "report.csv",
        ReportFormat::Json => "report.json",
    };
    let mut out = output(cli.out.as_deref(), name)?;
    out.write_all(render_report(&rows, format, &digest)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn export(cli: &Cli, corpus: &CorpusArgs, replication: u32, mode: Option<BinarizeMode>, template: Option<&Path>) -> Result<()> {
    let config = load_config(cli)?;
    let c = read_corpus(corpus, config.as_ref())?;
    let template = load_template(template, config.as_ref(), c.dataset)?;
    let mode = mode.or(config.as_ref().map(|c| c.binarize_mode)).unwrap_or_default();
    let (instances, skipped) = prepare_instances(&c.records, &template);
    let records = instances
        .into_iter()
        .map(|i| Ok((i.prompt, mode.target(&i.votes)?)))
        .collect::<Result<Vec<_>>>()?;
    let pairs = export_finetune(&records, &template.answer_format, replication)?;
    let mut out = output(cli.out.as_deref(), "finetune.jsonl")?;
    write_finetune(&mut out, &pairs)?;
    out.flush()?;
    eprintln!("{} pairs from {} records ({} skipped)", pairs.len(), records.len(), skipped.len());
    Ok(())
}

fn run_command(cli: &Cli, api: Option<ApiKind>) -> Result<()> {
    let mut config = load_config(cli)?.context("run needs --config")?;
    if let Some(api) = api {
        config.endpoint.api = api;
    }
    let options = RunOptions {
        out_dir: cli.out.clone(),
        cache_dir: cli.cache_dir.clone(),
        concurrency: cli.concurrency,
        seed: cli.seed,
        ..RunOptions::default()
    };
    match run(&config, &options) {
        Ok(artifacts) => {
            print!("{}", artifacts.report_text);
            eprintln!("wrote {}", artifacts.out_dir.display());
            Ok(())
        }
        Err(failure) => {
            if let Some(m) = &failure.manifest {
                let scored: usize = m.models.iter().map(|r| r.scored).sum();
                eprintln!("run failed; manifest records {scored} scored instances");
            }
            Err(failure.into())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { corpus } => ingest(&cli, corpus),
        Command::Elicit { corpus, model, base_url, api, template, coverage_threshold } => {
            elicit(&cli, corpus, model, base_url.as_deref(), *api, template.as_deref(), *coverage_threshold)
        }
        Command::Score { corpus, scoring, predictions, model } => score(&cli, corpus, scoring, predictions, model.as_deref()),
        Command::Report { rows, original, finetuned, model, format, manifest } => report(
            &cli,
            rows.as_deref(),
            original.as_deref(),
            finetuned.as_deref(),
            model,
            *format,
            manifest.as_deref(),
        ),
        Command::ExportFinetune { corpus, replication, binarize_mode, template } => {
            export(&cli, corpus, *replication, *binarize_mode, template.as_deref())
        }
        Command::Run { api } => run_command(&cli, *api),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
