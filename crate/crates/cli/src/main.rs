use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use bugbridge_core::config::{Config, ConfigError};
use bugbridge_core::corpus::journal::{Journal, JournalError, PairHistory, PipelineState, StageEvent};
use bugbridge_core::corpus::{self, LanguageId};
use bugbridge_core::curriculum::{self, Corpus, CurriculumError};
use bugbridge_core::descriptor::diff;
use bugbridge_core::eval::{self, EvalOptions};
use bugbridge_core::inject::select_buggy;
use bugbridge_core::llm::http::HttpTransport;
use bugbridge_core::llm::{Client, LanguageModel, Mode, Prompter, RateLimiter, ReplayCache, RetryPolicy, TemplateSet};
use bugbridge_core::pipeline::{self, Funnel, Pipeline, PipelineError};
use bugbridge_core::sandbox::{Sandbox, SandboxError};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_REPLAY_MISS: u8 = 3;
const EXIT_ENVIRONMENT: u8 = 4;
const EXIT_PARTIAL: u8 = 5;
const EXIT_NOT_FOUND: u8 = 6;

#[derive(Parser)]
#[command(name = "bugbridge", version, about = "Synthesize verified bug/fix pairs in a target language from a source-language corpus")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "bugbridge.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the synthesis pipeline for one target language.
    Run(RunArgs),
    /// Write the three curriculum stage files and their manifest.
    EmitCurriculum(EmitArgs),
    /// Score generated patches and print a metric table.
    Evaluate(EvalArgs),
    /// Show the funnel, or one pair's full lineage.
    Inspect(InspectArgs),
    /// Copy the built-in prompt templates into a directory for editing.
    InitTemplates { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Defaults to the first entry of `pipeline.targets`.
    #[arg(long)]
    target_lang: Option<String>,
    /// Defaults to `<work_dir>/journal.<target>.jsonl`.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long, default_value = "replay")]
    mode: Mode,
    /// Replay cache file; overrides `paths.cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Source corpus; overrides `paths.input`.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    /// One journal per target language.
    #[arg(long, required = true)]
    journal: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL file of patch sets.
    patches: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    k: Vec<u32>,
    #[arg(long, default_value = "model")]
    label: String,
    #[arg(long)]
    target_lang: Option<String>,
    /// Skip compilation and test execution.
    #[arg(long)]
    no_exec: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    journal: PathBuf,
    /// Pair id (a unique prefix is enough). Without it, prints the funnel.
    pair: Option<String>,
    #[arg(long)]
    json: bool,
}

/// An error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_OTHER, error }
    }
}

fn config_failure(e: ConfigError) -> Failure {
    Failure::new(EXIT_CONFIG, e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(&cli.config, a),
        Command::EmitCurriculum(a) => emit(&cli.config, a),
        Command::Evaluate(a) => evaluate(&cli.config, a),
        Command::Inspect(a) => inspect(a),
        Command::InitTemplates { dir } => TemplateSet::export_builtin(dir)
            .with_context(|| format!("writing templates to {}", dir.display()))
            .map(|_| 0)
            .map_err(Failure::from),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<Config, Failure> {
    Config::load(path).map_err(config_failure)
}

fn templates(cfg: &Config) -> Result<TemplateSet, Failure> {
    match &cfg.paths.templates {
        Some(dir) => TemplateSet::with_overrides(&cfg.resolve(dir)).map_err(|e| Failure::new(EXIT_CONFIG, e)),
        None => Ok(TemplateSet::builtin()),
    }
}

fn target_of(cfg: &Config, given: Option<&str>) -> Result<LanguageId, Failure> {
    let name = match given.or(cfg.pipeline.targets.first().map(String::as_str)) {
        Some(t) => t,
        None => {
            return Err(Failure::new(
                EXIT_CONFIG,
                anyhow!("--target-lang: no target given and pipeline.targets is empty"),
            ))
        }
    };
    cfg.check_target(name).map_err(config_failure)
}

fn model(cfg: &Config, mode: Mode, cache: Arc<ReplayCache>, templates: Arc<TemplateSet>) -> Result<Client, Failure> {
    if mode == Mode::Replay {
        return Ok(Client::replay(cache, templates));
    }
    let (Some(endpoint), Some(model)) = (&cfg.llm.endpoint, &cfg.llm.model) else {
        return Err(Failure::new(
            EXIT_CONFIG,
            anyhow!("llm.endpoint and llm.model are required in record mode"),
        ));
    };
    let key = std::env::var(&cfg.llm.api_key_env).ok().filter(|k| !k.is_empty());
    if key.is_none() {
        log::warn!("{} is not set; sending requests without credentials", cfg.llm.api_key_env);
    }
    let transport = HttpTransport::new(endpoint, model, key, Duration::from_secs_f64(cfg.llm.timeout))
        .map_err(|e| Failure::new(EXIT_ENVIRONMENT, anyhow!("{e}")))?;
    Ok(Client::record(
        cache,
        templates,
        Box::new(transport),
        RateLimiter::new(cfg.llm.max_in_flight, cfg.llm.requests_per_minute),
        RetryPolicy {
            max_attempts: cfg.llm.transport_retries.max(1),
            ..Default::default()
        },
    ))
}

fn print_funnel(f: &Funnel) {
    println!("ingested:        {}", f.ingested);
    println!("transferable:    {}", f.transferable);
    println!("suites-admitted: {}", f.suites);
    println!("translated:      {}", f.translated);
    println!("quads:           {}", f.quads);
    println!(
        "dropped:         filtered_out {}, translation_failed {}, injection_failed {}",
        f.filtered_out, f.translation_failed, f.injection_failed
    );
    if f.pending > 0 {
        println!("pending:         {}", f.pending);
    }
}

fn run(config: &Path, a: &RunArgs) -> Result<u8, Failure> {
    let cfg = load_config(config)?;
    let target = target_of(&cfg, a.target_lang.as_deref())?;
    let source = cfg.source_lang();
    let work = cfg.resolve(&cfg.paths.work_dir);
    let journal_path = a.journal.clone().unwrap_or_else(|| work.join(format!("journal.{target}.jsonl")));
    let cache_path = match (&a.cache, &cfg.paths.cache) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => work.join("replay.jsonl"),
    };
    let input = a.input.clone().unwrap_or_else(|| cfg.resolve(&cfg.paths.input));

    let templates = Arc::new(templates(&cfg)?);
    let cache = Arc::new(ReplayCache::open(&cache_path).map_err(|e| Failure::new(EXIT_CONFIG, e))?);
    let client: Arc<dyn LanguageModel> = Arc::new(model(&cfg, a.mode, cache, templates.clone())?);
    let prompter = Prompter::new(client, templates, cfg.generation_settings());

    let ingested = corpus::ingest(&input, &source).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    for d in &ingested.diagnostics {
        log::warn!("{}:{}: {}", input.display(), d.line, d.reason);
    }
    let (journal, warnings) = Journal::open(&journal_path).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    for w in warnings {
        log::warn!("{}: {w}", journal_path.display());
    }
    if let Some(t) = journal.snapshot().target {
        if t != target {
            return Err(Failure::new(
                EXIT_CONFIG,
                JournalError::TargetMismatch {
                    journal: t,
                    requested: target,
                },
            ));
        }
    }

    let workers = a.workers.unwrap_or(cfg.pipeline.workers).max(1);
    let sandbox = Sandbox::new(cfg.profiles(), workers, Some(&work))
        .map_err(|e| Failure::new(EXIT_ENVIRONMENT, e))?;
    let p = Pipeline {
        prompter: &prompter,
        sandbox: &sandbox,
        settings: &cfg.pipeline,
        target: target.clone(),
        suite_dir: work.join("suites"),
        workers,
    };
    let summary = match p.run(&journal, &ingested.pairs) {
        Ok(s) => s,
        Err(e) => {
            let code = match &e {
                PipelineError::Llm(l) if e.is_replay_miss() => {
                    log::debug!("{l:?}");
                    EXIT_REPLAY_MISS
                }
                PipelineError::Llm(_) => EXIT_ENVIRONMENT,
                PipelineError::Sandbox(SandboxError::UnknownLanguage(_) | SandboxError::NoCoverage(_)) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            };
            return Err(Failure::new(code, e));
        }
    };
    let quads_path = work.join(format!("quads.{target}.jsonl"));
    let written = pipeline::write_quads(&journal.snapshot(), &quads_path)
        .with_context(|| format!("writing {}", quads_path.display()))?;
    if summary.new_records == 0 {
        println!("nothing to do");
    }
    print_funnel(&summary.funnel);
    println!("quads written:   {written} -> {}", quads_path.display());
    for e in &summary.errors {
        eprintln!("pair {}: {}", e.pair_id, e.reason);
    }
    Ok(if summary.environment_failed() {
        EXIT_ENVIRONMENT
    } else if !summary.errors.is_empty() {
        EXIT_PARTIAL
    } else {
        0
    })
}

fn open_state(path: &Path) -> Result<PipelineState, Failure> {
    if !path.exists() {
        return Err(Failure::new(EXIT_NOT_FOUND, anyhow!("journal {} not found", path.display())));
    }
    let replay = corpus::journal::resume(path).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    for w in replay.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(replay.state)
}

fn emit(config: &Path, a: &EmitArgs) -> Result<u8, Failure> {
    // The config only matters for template overrides; emitting works without one.
    let templates = match config.exists() {
        true => templates(&load_config(config)?)?,
        false => TemplateSet::builtin(),
    };
    let states = a.journal.iter().map(|p| open_state(p)).collect::<Result<Vec<_>, _>>()?;
    let corpus = Corpus::from_states(&states);
    let manifest = curriculum::emit(&corpus, &templates, &a.out).map_err(|e| match e {
        CurriculumError::Empty(_) => Failure::new(EXIT_OTHER, anyhow!("{e} (no eligible pairs in the journals)")),
        other => Failure::new(EXIT_OTHER, other),
    })?;
    for (name, f) in &manifest.stages {
        println!("{name}: {} records -> {}", f.records, a.out.join(&f.file).display());
    }
    println!("manifest: {}", a.out.join("manifest.json").display());
    Ok(0)
}

fn evaluate(config: &Path, a: &EvalArgs) -> Result<u8, Failure> {
    let cfg = match config.exists() {
        true => Some(load_config(config)?),
        false => None,
    };
    let target = match (&cfg, &a.target_lang) {
        (Some(c), t) => target_of(c, t.as_deref())?,
        (None, Some(t)) => LanguageId::new(t.as_str()),
        (None, None) => return Err(Failure::new(EXIT_CONFIG, anyhow!("--target-lang is required without a config"))),
    };
    let opts = EvalOptions {
        ks: a.k.clone(),
        target,
        source: cfg.as_ref().map(Config::source_lang).unwrap_or_else(|| LanguageId::new("")),
        linter: cfg.as_ref().and_then(|c| c.eval.linter.clone()),
    };
    let sets = eval::read_patch_sets(&a.patches).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    let sandbox = match (&cfg, a.no_exec) {
        (Some(c), false) => Some(Sandbox::new(c.profiles(), c.pipeline.workers, None).map_err(|e| Failure::new(EXIT_ENVIRONMENT, e))?),
        _ => None,
    };
    let report = eval::evaluate(&sets, &opts, sandbox.as_ref()).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    if a.json {
        println!("{}", serde_json_string(&report)?);
    } else {
        print!("{}", eval::render_table(&a.label, &report));
    }
    Ok(0)
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::new(EXIT_OTHER, e))
}

fn inspect(a: &InspectArgs) -> Result<u8, Failure> {
    let state = open_state(&a.journal)?;
    let Some(query) = &a.pair else {
        let funnel = Funnel::from_state(&state);
        if a.json {
            println!("{}", serde_json_string(&funnel)?);
            return Ok(0);
        }
        if let Some(t) = &state.target {
            println!("target:          {t}");
        }
        print_funnel(&funnel);
        println!();
        for (id, h) in &state.pairs {
            println!("{id}  {}", h.last_stage().map(|s| s.name()).unwrap_or("-"));
        }
        return Ok(0);
    };
    let matches: Vec<(&String, &PairHistory)> = state.pairs.iter().filter(|(id, _)| id.starts_with(query.as_str())).collect();
    let (id, history) = match matches.as_slice() {
        [one] => *one,
        [] => return Err(Failure::new(EXIT_NOT_FOUND, anyhow!("pair {query} not found"))),
        many => {
            return Err(Failure::new(
                EXIT_NOT_FOUND,
                anyhow!("pair prefix {query} is ambiguous ({} matches)", many.len()),
            ))
        }
    };
    if a.json {
        println!("{}", serde_json_string(&history.records)?);
        return Ok(0);
    }
    println!("pair {id}");
    for r in &history.records {
        println!("[{}] {}", r.seq, r.stage().name());
        print_event(&r.event);
    }
    Ok(0)
}

fn indent(text: &str) {
    for line in text.lines() {
        println!("      {line}");
    }
}

fn print_event(e: &StageEvent) {
    match e {
        StageEvent::Ingested { pair } => {
            println!("  lang {}", pair.lang);
            if let Some(x) = &pair.external_id {
                println!("  external id {x}");
            }
        }
        StageEvent::DescriptorBuilt { descriptor } => {
            println!("  defect type: {}", descriptor.defect_type);
            println!("  root cause:  {}", descriptor.root_cause);
            println!("  patch:");
            indent(&diff::render(&descriptor.diff));
        }
        StageEvent::Transferable { verdict } => {
            println!("  verdict: transferable to {} ({})", verdict.target_lang, verdict.rationale);
        }
        StageEvent::FilteredOut { reason, verdict } => {
            println!("  reason: {reason}");
            if let Some(v) = verdict {
                println!("  verdict: not transferable to {} ({})", v.target_lang, v.rationale);
            }
        }
        StageEvent::TestsGenerated { suite } => {
            println!(
                "  suite {}: {} cases, line {:.2}%, branch {:.2}%",
                suite.file, suite.cases, suite.line_pct, suite.branch_pct
            );
        }
        StageEvent::Translated { attempt, attempts, .. } => {
            print_attempts(attempts);
            println!("  selected j* = {attempt}");
        }
        StageEvent::TranslationFailed { attempts, reason } => {
            print_attempts(attempts);
            match reason {
                Some(r) => println!("  reason: {r}"),
                None => println!("  no attempt passed"),
            }
        }
        StageEvent::Injected {
            candidate,
            behavior,
            trigger,
            regression,
            scores,
            ..
        } => {
            println!(
                "  behavior: {} -> {}",
                behavior.trigger_condition,
                behavior.expected_failure.name()
            );
            println!("  inputs: {} trigger, {} regression", trigger.len(), regression.len());
            print_scores(scores);
            println!("  selected candidate {candidate}");
        }
        StageEvent::InjectionFailed { reason, scores } => {
            print_scores(scores);
            println!("  reason: {reason}");
        }
        StageEvent::QuadVerified { target } => {
            println!(
                "  quad {}: translation attempt {}, injection candidate {}",
                target.key(),
                target.provenance.translation_attempt,
                target.provenance.injection_candidate
            );
        }
    }
}

fn print_attempts(attempts: &[bugbridge_core::translate::AttemptSummary]) {
    for s in attempts {
        let failure = s.first_failure.map(|f| format!(", first failure {}", f.name())).unwrap_or_default();
        println!("  attempt {}: {:?}, {}/{} passed{failure}", s.attempt, s.status, s.passed, s.total);
    }
}

fn print_scores(scores: &[bugbridge_core::inject::CandidateScore]) {
    let winner = select_buggy(scores).ok().flatten();
    for s in scores {
        let mark = if Some(s.candidate_index) == winner { "  <- argmax" } else { "" };
        println!(
            "  candidate {}: n_defect {}, n_reg {} ({:?}){mark}",
            s.candidate_index, s.n_defect, s.n_reg, s.status
        );
    }
}
