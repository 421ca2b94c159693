//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 backend or
//! transport failure, 4 too many per-sample failures.

mod config;
mod jobs;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::{AblationMode, Backend, Backends, ConfigError, Role, RunConfig, ENV_PREFIX};
pub use jobs::{completed_ids, run_ordered, JobSummary, LineWriter, Outcome};

use crate::evidence::{
    distill_one, exhaustive_search, export_highlighter_training, export_summarizer_training, greedy_search,
    merge_labels, LabelError, LabeledSample, SummarizerLabel,
};
use crate::feedback::{Feedback, FeedbackError, Generator};
use crate::metrics::corpus_evaluate;
use crate::prompting::{parse_evidence_output, PromptBuilder, PromptError};
use crate::table::{load_dataset, write_dataset, Dataset, DatasetFormat, Evidence, LoadMode, Sample};
use crate::transforms::{highlight, linearize, subtable};

#[derive(Debug, Parser)]
#[command(
    name = "tablight",
    version,
    about = "Evidence highlighting for query-focused table summarization"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = self.set.clone();
        let path = |p: &PathBuf| p.display().to_string();
        if let Some(p) = &self.dataset {
            out.push(("dataset".into(), path(p)));
        }
        if let Some(f) = &self.format {
            out.push(("format".into(), f.clone()));
        }
        if let Some(p) = &self.cache_dir {
            out.push(("cache_dir".into(), path(p)));
        }
        if let Some(w) = self.workers {
            out.push(("workers".into(), w.to_string()));
        }
        out
    }

    fn load<I>(&self, env: I, extra: &[(String, String)]) -> Result<RunConfig, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut overrides = self.overrides();
        overrides.extend_from_slice(extra);
        Ok(RunConfig::load(self.config.as_deref(), env, &overrides)?)
    }
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExportTarget {
    Highlighter,
    Summarizer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExportSource {
    Merge,
    Distill,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a raw dataset into canonical JSON Lines.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        output: PathBuf,
        /// Skip malformed records instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Build search labels with the feedbacker.
    SearchLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
        /// Write per-sample search traces here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also score every subset of tables with at most `n_max` rows and
        /// record the optimum in the trace.
        #[arg(long, requires = "trace")]
        exhaustive_check: bool,
    },
    /// Build distilled labels with the distiller.
    DistillLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
    },
    /// Merge every available label per sample by feedback reward.
    MergeLabels {
        #[command(flatten)]
        common: Common,
        /// Label files to combine; repeatable.
        #[arg(long = "labels", required = true)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the highlighted and sub-table renderings of one sample.
    Highlight {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        id: String,
        /// Comma-separated 1-based rows; defaults to the manual evidence.
        #[arg(long)]
        evidence: Option<String>,
    },
    /// Write prompt/completion training pairs.
    ExportTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long = "labels", required = true)]
        labels: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        target: ExportTarget,
        /// Label that drives summarizer highlighting.
        #[arg(long, value_enum, default_value = "merge")]
        source: ExportSource,
        /// Skip samples without the needed label instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Highlight, then summarize, every sample.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
        /// full, no_highlight or subtab.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a predictions file against dataset references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Write the JSON report line here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Backend(m) => f.write_str(m),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    ConfigError,
    crate::table::TableError,
    PromptError,
    std::io::Error,
    serde_json::Error
);

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub evidence: Vec<usize>,
    pub prediction: String,
    pub flags: Vec<String>,
}

/// What a command did, for callers that need more than the exit code.
#[derive(Debug, Default)]
pub struct RunReport {
    pub exit_code: i32,
    /// Requests that reached a backend (cache misses).
    pub generator_calls: usize,
    /// Feedback evaluations, cached or not.
    pub oracle_calls: usize,
    pub cache_hits: usize,
    pub job: Option<JobSummary>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    execute(args, std::env::vars()).exit_code
}

/// Like [`run`] with an explicit environment.
pub fn execute<I, T, E>(args: I, env: E) -> RunReport
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    E: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 2 } else { 0 };
            return RunReport {
                exit_code: code,
                ..Default::default()
            };
        }
    };
    let mut report = RunReport::default();
    if let Err(e) = dispatch(cli.command, env, &mut report) {
        eprintln!("error: {e}");
        report.exit_code = e.exit_code();
    }
    report
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    run(std::env::args_os())
}

fn dispatch<E>(command: Command, env: E, report: &mut RunReport) -> Result<(), CliError>
where
    E: IntoIterator<Item = (String, String)>,
{
    match command {
        Command::Ingest {
            input,
            format,
            output,
            lenient,
        } => cmd_ingest(&input, &format, &output, lenient),
        Command::SearchLabels {
            common,
            output,
            trace,
            exhaustive_check,
        } => {
            let cfg = common.load(env, &[])?;
            cmd_search_labels(&cfg, &output, trace.as_deref(), exhaustive_check, report)
        }
        Command::DistillLabels { common, output } => {
            let cfg = common.load(env, &[])?;
            cmd_distill_labels(&cfg, &output, report)
        }
        Command::MergeLabels { common, labels, output } => {
            let cfg = common.load(env, &[])?;
            cmd_merge_labels(&cfg, &labels, &output, report)
        }
        Command::Highlight { common, id, evidence } => {
            let cfg = common.load(env, &[])?;
            cmd_highlight(&cfg, &id, evidence.as_deref())
        }
        Command::ExportTrain {
            common,
            labels,
            output,
            target,
            source,
            lenient,
        } => {
            let cfg = common.load(env, &[])?;
            cmd_export_train(&cfg, &labels, &output, target, source, !lenient)
        }
        Command::Pipeline { common, output, mode } => {
            let extra: Vec<(String, String)> = mode.into_iter().map(|m| ("mode".to_string(), m)).collect();
            let cfg = common.load(env, &extra)?;
            cmd_pipeline(&cfg, &output, report)
        }
        Command::Evaluate {
            common,
            predictions,
            report: report_path,
        } => {
            let cfg = common.load(env, &[])?;
            cmd_evaluate(&cfg, &predictions, report_path.as_deref())
        }
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let mode = if cfg.lenient()? {
        LoadMode::Lenient
    } else {
        LoadMode::Strict
    };
    let (dataset, parse) = load_dataset(&cfg.dataset()?, cfg.format()?, mode)?;
    for (line, e) in &parse.failures {
        eprintln!("skipped line {line}: {e}");
    }
    Ok(dataset)
}

fn cmd_ingest(input: &Path, format: &str, output: &Path, lenient: bool) -> Result<(), CliError> {
    let format: DatasetFormat = format.parse().map_err(CliError::Validation)?;
    let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let (dataset, parse) = load_dataset(input, format, mode)?;
    let dir = output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_dataset(&dataset, std::io::BufWriter::new(tmp.as_file_mut()))?;
    tmp.persist(output).map_err(|e| e.error)?;
    eprintln!(
        "ingested {} samples ({} skipped) into {}",
        dataset.len(),
        parse.failures.len(),
        output.display()
    );
    for (line, e) in &parse.failures {
        eprintln!("  line {line}: {e}");
    }
    Ok(())
}

/// Generators for the given roles, plus the shared backend-call counter.
struct RoleGenerators {
    backends: Backends,
    calls: Arc<AtomicUsize>,
    by_role: Vec<(Role, Box<dyn Generator>)>,
}

impl RoleGenerators {
    fn new(cfg: &RunConfig, roles: &[Role]) -> Result<Self, CliError> {
        let backends = Backends::new(cfg)?;
        let calls = Arc::new(AtomicUsize::new(0));
        let by_role = roles
            .iter()
            .map(|&r| Ok((r, backends.generator(cfg, r, Arc::clone(&calls))?)))
            .collect::<Result<_, CliError>>()?;
        Ok(RoleGenerators {
            backends,
            calls,
            by_role,
        })
    }

    fn get(&self, role: Role) -> &dyn Generator {
        self.by_role
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, g)| g.as_ref())
            .expect("role requested at construction")
    }

    fn record(&self, report: &mut RunReport) {
        report.generator_calls = self.calls.load(Ordering::SeqCst);
        report.cache_hits = self.backends.cache().map_or(0, |c| c.hits());
    }
}

/// Runs a per-sample job over the samples not yet present in `output`.
fn run_job<W>(
    cfg: &RunConfig,
    dataset: &Dataset,
    output: &Path,
    aux_path: Option<&Path>,
    work: W,
) -> Result<JobSummary, CliError>
where
    W: Fn(&Sample) -> Outcome + Sync,
{
    let done = completed_ids(output)?;
    let todo: Vec<&Sample> = dataset.samples().iter().filter(|s| !done.contains(&s.id)).collect();
    let mut summary = JobSummary {
        total: dataset.len(),
        resumed: dataset.len() - todo.len(),
        ..Default::default()
    };
    if summary.resumed > 0 {
        eprintln!(
            "resuming: {} of {} samples already done",
            summary.resumed, summary.total
        );
    }
    let mut writer = LineWriter::append(output)?;
    let mut aux = aux_path.map(LineWriter::append).transpose()?;
    let n = todo.len();
    run_ordered(
        &todo,
        cfg.workers()?,
        |s| work(s),
        |i, outcome| {
            let id = &todo[i].id;
            match outcome {
                Outcome::Done {
                    line,
                    aux: aux_line,
                    oracle_calls,
                } => {
                    writer.write_line(&line)?;
                    if let (Some(w), Some(l)) = (aux.as_mut(), aux_line) {
                        w.write_line(&l)?;
                    }
                    summary.succeeded += 1;
                    summary.oracle_calls += oracle_calls;
                }
                Outcome::Failed { error, backend } => {
                    eprintln!("failed {id}: {error}");
                    summary.failures.push((id.clone(), error, backend));
                }
            }
            log::info!("[{}/{}] {}", i + 1, n, id);
            Ok(())
        },
    )?;
    Ok(summary)
}

fn finish(summary: JobSummary, gens: &RoleGenerators, cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    gens.record(report);
    report.oracle_calls = summary.oracle_calls;
    eprintln!(
        "{} ok, {} failed, {} resumed; oracle calls: {}, generator calls: {}, cache hits: {}",
        summary.succeeded,
        summary.failures.len(),
        summary.resumed,
        summary.oracle_calls,
        report.generator_calls,
        report.cache_hits
    );
    report.exit_code = summary.exit_code(cfg.success_threshold()?);
    if report.exit_code == 3 {
        if let Some((_, first, _)) = summary.failures.first() {
            eprintln!("backend failure: {first}");
        }
    }
    report.job = Some(summary);
    Ok(())
}

fn label_failure(e: LabelError) -> Outcome {
    Outcome::Failed {
        backend: e.is_backend(),
        error: e.to_string(),
    }
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("record serializes")
}

fn cmd_search_labels(
    cfg: &RunConfig,
    output: &Path,
    trace: Option<&Path>,
    exhaustive_check: bool,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let prompts = cfg.prompts()?;
    let options = cfg.search_options()?;
    let n_max = cfg.n_max()?;
    let gens = RoleGenerators::new(cfg, &[Role::Feedbacker])?;
    let feedback = Feedback::new(gens.get(Role::Feedbacker), &prompts, cfg.sampling(Role::Feedbacker)?);

    let summary = run_job(cfg, &dataset, output, trace, |s| {
        match greedy_search(s, &feedback, options) {
            Ok(out) => {
                let mut label = LabeledSample::new(&s.id);
                label.e_search = Some(out.evidence);
                label.e_manual = s.manual_evidence.clone();
                if out.trace.fallback_used {
                    label.flag("search-fallback");
                }
                if out.trace.candidates.iter().any(|c| c.reward.is_none()) {
                    label.flag("search-skipped-candidates");
                }
                let mut aux = serde_json::json!({
                    "id": s.id,
                    "reward": out.reward,
                    "oracle_calls": out.trace.oracle_calls,
                    "fallback_used": out.trace.fallback_used,
                    "candidates": out.trace.candidates,
                });
                if exhaustive_check {
                    aux["exhaustive"] = match exhaustive_search(s, &feedback, n_max) {
                        Ok((evidence, reward)) => serde_json::json!({ "evidence": evidence, "reward": reward }),
                        Err(e) => serde_json::json!({ "error": e.to_string() }),
                    };
                }
                Outcome::Done {
                    line: to_line(&label),
                    aux: Some(aux.to_string()),
                    oracle_calls: out.trace.oracle_calls,
                }
            }
            Err(e) => label_failure(e),
        }
    })?;
    finish(summary, &gens, cfg, report)
}

fn cmd_distill_labels(cfg: &RunConfig, output: &Path, report: &mut RunReport) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let prompts = cfg.prompts()?;
    let sampling = cfg.sampling(Role::Distiller)?;
    let gens = RoleGenerators::new(cfg, &[Role::Distiller])?;
    let client = gens.get(Role::Distiller);
    let parse_failures = AtomicUsize::new(0);

    let summary = run_job(cfg, &dataset, output, None, |s| {
        let mut label = LabeledSample::new(&s.id);
        label.e_manual = s.manual_evidence.clone();
        match distill_one(s, client, &prompts, &sampling) {
            Ok((e, warnings)) => {
                for w in &warnings {
                    eprintln!("{}: {w}", s.id);
                }
                if !warnings.is_empty() {
                    label.flag("distill-range-warning");
                }
                label.e_distill = Some(e);
            }
            Err(LabelError::Prompt(PromptError::NoIndices(_))) => {
                parse_failures.fetch_add(1, Ordering::Relaxed);
                eprintln!("{}: distiller output has no row indices", s.id);
                label.flag("distill-failed");
            }
            Err(e) => return label_failure(e),
        }
        Outcome::Done {
            line: to_line(&label),
            aux: None,
            oracle_calls: 0,
        }
    })?;
    let attempted = summary.attempted();
    let unparsed = parse_failures.load(Ordering::Relaxed);
    if attempted > 0 {
        eprintln!(
            "parse rate: {}/{} ({:.1}%)",
            attempted - summary.failures.len() - unparsed,
            attempted,
            100.0 * (attempted - summary.failures.len() - unparsed) as f64 / attempted as f64
        );
    }
    finish(summary, &gens, cfg, report)
}

/// Reads label files, combining lines with the same id.
pub fn read_labels(paths: &[PathBuf]) -> Result<HashMap<String, LabeledSample>, CliError> {
    let mut out: HashMap<String, LabeledSample> = HashMap::new();
    for path in paths {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let label: LabeledSample = serde_json::from_str(&line)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
            match out.get_mut(&label.id) {
                Some(existing) => existing.absorb(label),
                None => {
                    out.insert(label.id.clone(), label);
                }
            }
        }
    }
    Ok(out)
}

fn cmd_merge_labels(
    cfg: &RunConfig,
    label_paths: &[PathBuf],
    output: &Path,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let labels = read_labels(label_paths)?;
    let prompts = cfg.prompts()?;
    let gens = RoleGenerators::new(cfg, &[Role::Feedbacker])?;
    let feedback = Feedback::new(gens.get(Role::Feedbacker), &prompts, cfg.sampling(Role::Feedbacker)?);

    let summary = run_job(cfg, &dataset, output, None, |s| {
        let label = labels.get(&s.id).cloned().unwrap_or_else(|| LabeledSample::new(&s.id));
        match merge_labels(&label, s, &feedback) {
            Ok(out) => Outcome::Done {
                line: to_line(&out.labeled),
                aux: None,
                oracle_calls: out.oracle_calls,
            },
            Err(e) => label_failure(e),
        }
    })?;
    finish(summary, &gens, cfg, report)
}

fn parse_evidence_arg(text: &str) -> Result<Evidence, CliError> {
    let indices = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Validation(format!("bad row index `{t}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if indices.contains(&0) {
        return Err(CliError::Validation("row indices are 1-based".into()));
    }
    Ok(Evidence::from_unsorted(indices))
}

fn cmd_highlight(cfg: &RunConfig, id: &str, evidence: Option<&str>) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let sample = dataset
        .get(id)
        .ok_or_else(|| CliError::Validation(format!("no sample with id `{id}`")))?;
    let evidence = match evidence {
        Some(text) => parse_evidence_arg(text)?,
        None => sample
            .manual_evidence
            .clone()
            .ok_or_else(|| CliError::Validation(format!("sample `{id}` has no manual evidence; pass --evidence")))?,
    };
    let transform_err = |e: crate::transforms::TransformError| CliError::Validation(e.to_string());
    let hl = highlight(&sample.table, &evidence).map_err(transform_err)?;
    let sub = subtable(&sample.table, &evidence).map_err(transform_err)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "evidence: {evidence}")?;
    writeln!(out, "\n[highlight]\n{}", linearize(&hl).text)?;
    writeln!(out, "\n[subtable]\n{}", linearize(&sub).text)?;
    Ok(())
}

fn cmd_export_train(
    cfg: &RunConfig,
    label_paths: &[PathBuf],
    output: &Path,
    target: ExportTarget,
    source: ExportSource,
    strict: bool,
) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let labels: Vec<LabeledSample> = read_labels(label_paths)?.into_values().collect();
    let prompts = cfg.prompts()?;
    let outcome = match target {
        ExportTarget::Highlighter => export_highlighter_training(&dataset, &labels, &prompts, strict)?,
        ExportTarget::Summarizer => {
            let label = match source {
                ExportSource::Merge => SummarizerLabel::Merge,
                ExportSource::Distill => SummarizerLabel::Distill,
            };
            export_summarizer_training(&dataset, &labels, &prompts, label, strict)?
        }
    };
    let dir = output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        for r in &outcome.records {
            writeln!(w, "{}", to_line(r))?;
        }
        w.flush()?;
    }
    tmp.persist(output).map_err(|e| e.error)?;
    eprintln!(
        "exported {} records, skipped {}",
        outcome.records.len(),
        outcome.skipped.len()
    );
    for id in &outcome.skipped {
        eprintln!("  skipped {id}");
    }
    Ok(())
}

/// Highlighter, then summarizer, for one sample.
fn predict(
    sample: &Sample,
    mode: AblationMode,
    highlighter: &dyn Generator,
    summarizer: &dyn Generator,
    prompts: &PromptBuilder,
    sampling: (&crate::feedback::SamplingConfig, &crate::feedback::SamplingConfig),
) -> Result<Prediction, FeedbackError> {
    let mut flags = Vec::new();
    let evidence = if mode == AblationMode::NoHighlight {
        Evidence::empty()
    } else {
        let prompt = prompts
            .build_highlighter_prompt(&sample.table, &sample.query, None)?
            .with_id(&sample.id);
        let raw = highlighter.generate(&prompt.text, sampling.0)?;
        match parse_evidence_output(&raw, sample.table.n_rows()) {
            Ok((e, warnings)) => {
                if !warnings.is_empty() {
                    flags.push("evidence-out-of-range".to_string());
                }
                e
            }
            Err(PromptError::NoIndices(_)) => {
                flags.push("no-evidence".to_string());
                Evidence::empty()
            }
            Err(e) => return Err(e.into()),
        }
    };
    if evidence.is_empty() && mode != AblationMode::NoHighlight && !flags.iter().any(|f| f == "no-evidence") {
        flags.push("no-evidence".to_string());
    }

    let prompt = match mode {
        AblationMode::Full if !evidence.is_empty() => {
            prompts.build_summarizer_prompt(&sample.table, Some(&evidence), &sample.query, None)?
        }
        AblationMode::Subtab if !evidence.is_empty() => {
            let sub = subtable(&sample.table, &evidence)?;
            prompts.build_summarizer_prompt(&sub, None, &sample.query, None)?
        }
        _ => prompts.build_summarizer_prompt(&sample.table, None, &sample.query, None)?,
    }
    .with_id(&sample.id);
    let prediction = summarizer.generate(&prompt.text, sampling.1)?;
    Ok(Prediction {
        id: sample.id.clone(),
        evidence: evidence.indices().to_vec(),
        prediction: prediction.trim().to_string(),
        flags,
    })
}

fn cmd_pipeline(cfg: &RunConfig, output: &Path, report: &mut RunReport) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let prompts = cfg.prompts()?;
    let mode = cfg.mode()?;
    let roles: &[Role] = if mode == AblationMode::NoHighlight {
        &[Role::Summarizer]
    } else {
        &[Role::Highlighter, Role::Summarizer]
    };
    let gens = RoleGenerators::new(cfg, roles)?;
    let summarizer = gens.get(Role::Summarizer);
    let highlighter = if mode == AblationMode::NoHighlight {
        summarizer
    } else {
        gens.get(Role::Highlighter)
    };
    let h_sampling = cfg.sampling(Role::Highlighter)?;
    let s_sampling = cfg.sampling(Role::Summarizer)?;

    let summary = run_job(cfg, &dataset, output, None, |s| {
        match predict(s, mode, highlighter, summarizer, &prompts, (&h_sampling, &s_sampling)) {
            Ok(p) => Outcome::Done {
                line: to_line(&p),
                aux: None,
                oracle_calls: 0,
            },
            Err(e) => Outcome::Failed {
                backend: e.is_backend(),
                error: e.to_string(),
            },
        }
    })?;
    finish(summary, &gens, cfg, report)
}

fn cmd_evaluate(cfg: &RunConfig, predictions: &Path, report_path: Option<&Path>) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let file = std::fs::File::open(predictions)
        .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", predictions.display())))?;
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", predictions.display(), i + 1)))?;
        match dataset.get(&p.id) {
            Some(s) => pairs.push((p.prediction, s.reference.clone())),
            None => unmatched.push(p.id),
        }
    }
    if !unmatched.is_empty() {
        return Err(CliError::Validation(format!(
            "prediction ids not in dataset: {}",
            unmatched.join(", ")
        )));
    }
    let mut scores = corpus_evaluate(&pairs).map_err(|e| CliError::Validation(e.to_string()))?;
    if pairs.len() < dataset.len() {
        scores.notes.push(format!(
            "{} dataset samples have no prediction",
            dataset.len() - pairs.len()
        ));
    }
    print!("{scores}");
    let line = scores.to_json_line();
    match report_path {
        Some(path) => std::fs::write(path, format!("{line}\n"))?,
        None => println!("{line}"),
    }
    Ok(())
}
