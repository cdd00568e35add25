//! End-to-end orchestration: ingestion, generation, correctness and
//! confidence collection, metric reports, temperature sweeps, and the
//! cascade evaluation.
//!
//! A run lives in its own directory under the configured runs dir:
//! `dataset.jsonl` (resolved examples), `eval_records.jsonl` (one record per
//! example, growing as stages fill it in), `manifest.json` (provenance
//! including wall-clock time, which deliberately stays out of the eval
//! records so reruns are byte-identical), and the report JSON/CSV exports.

pub mod config;
pub mod records;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::api::DatasetSource;
use crate::backends::cache::{CachedBackend, ResponseCache};
use crate::backends::mock::{MockBackend, MockFixture};
use crate::backends::openai::{OpenAiBackend, OpenAiOptions};
use crate::backends::template::TemplateStore;
use crate::backends::{ChatMessage, GenerationRequest, ModelBackend, ModelHandle};
use crate::cascade::{
    random_baseline_stats, route_by_budget, selected_success_rate, success_rate, CascadeConfig,
    CascadeItem,
};
use crate::correctness::{
    deterministic_correctness_distribution, exact_f1, f1_5, rubric_correctness, CorrectnessMethod,
    CorrectnessSpec, EntityList, RubricContext,
};
use crate::dist::LevelGrid;
use crate::elicitation::similarity::{
    ClaimSimilarity, CommaSplitExtractor, HeuristicClaimDetector, Judge, NaiveSimilarity,
    NerSimilarity, PromptedEntityExtractor, SimilarityStrategy, SplitSimilarity,
};
use crate::elicitation::{
    asc_from_comparisons, baseline_bse, baseline_sl, cse, hybrid, psc_f1_from_comparisons,
    psc_from_comparisons, sample_comparison_answers, ElicitContext, ElicitationMethod,
    ElicitationResult, ElicitationSpec, SimilarityKind,
};
use crate::error::{Error, Result};
use crate::metrics::{choose_tau_s, CalibrationDataset, CalibrationItem, EceConfig, Split};
use config::{BackendConfig, Config, TaskConfig, TaskKind};
use records::{ingest, CorrectnessRecord, EvalRecord, ExampleRecord, Ingested, Provenance};
use report::{
    method_report, write_cascade_csv, write_reliability_csv, write_report_json, write_sweep_csv,
    write_tau_c_sweep_csv, CalibrationReport, CascadeRow, SweepRow,
};

const EVAL_RECORDS_FILE: &str = "eval_records.jsonl";
const DATASET_FILE: &str = "dataset.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const REPORT_FILE: &str = "report.json";

/// Run-level provenance, including the wall-clock timestamp that the eval
/// records themselves must not carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: String,
    pub task: String,
    pub backend: String,
    pub model: String,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub temperature: f64,
    pub examples: usize,
    pub hash_split_applied: bool,
    pub created: String,
}

struct BackendEntry {
    backend: Arc<dyn ModelBackend>,
    model: String,
}

/// Owns the configured backends, templates, and grid; every service
/// endpoint and CLI subcommand lands on one of its methods.
pub struct Pipeline {
    config: Config,
    grid: LevelGrid,
    templates: Arc<TemplateStore>,
    backends: BTreeMap<String, BackendEntry>,
}

impl Pipeline {
    pub fn from_config(config: Config) -> Result<Self> {
        let grid = LevelGrid::new(config.grid.clone())?;
        let templates = Arc::new(match &config.paths.templates_dir {
            Some(dir) => TemplateStore::with_overrides(dir)?,
            None => TemplateStore::builtin(),
        });
        let cache = ResponseCache::new(&config.paths.cache_dir)?;
        let mut backends = BTreeMap::new();
        for (id, backend_config) in &config.backends {
            let (inner, model): (Arc<dyn ModelBackend>, String) = match backend_config {
                BackendConfig::Mock {
                    fixture,
                    seed,
                    model,
                } => {
                    let mut fx = match fixture {
                        Some(path) => MockFixture::from_file(path)?,
                        None => MockFixture::default(),
                    };
                    if let Some(seed) = seed {
                        fx.seed = *seed;
                    } else if fx.seed == 0 {
                        fx.seed = config.seed;
                    }
                    (
                        Arc::new(MockBackend::new(id.clone(), fx)),
                        model.clone().unwrap_or_else(|| "mock-model".into()),
                    )
                }
                BackendConfig::Openai {
                    base_url,
                    api_key_env,
                    top_k_supported,
                    supports_logprobs,
                    model,
                } => {
                    let api_key = match api_key_env {
                        Some(var) => std::env::var(var).ok(),
                        None => None,
                    };
                    let options = OpenAiOptions {
                        base_url: base_url.clone(),
                        api_key,
                        top_k_supported: *top_k_supported,
                        supports_logprobs: *supports_logprobs,
                        max_in_flight: config.concurrency.max(1),
                        ..OpenAiOptions::default()
                    };
                    (
                        Arc::new(OpenAiBackend::new(id.clone(), options)?),
                        model.clone().ok_or_else(|| {
                            Error::Config(format!("backend '{id}' needs a model"))
                        })?,
                    )
                }
            };
            let cached: Arc<dyn ModelBackend> = Arc::new(CachedBackend::new(inner, cache.clone()));
            backends.insert(
                id.clone(),
                BackendEntry {
                    backend: cached,
                    model,
                },
            );
        }
        Ok(Pipeline {
            config,
            grid,
            templates,
            backends,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    fn backend_entry(&self, id: &str) -> Result<&BackendEntry> {
        self.backends.get(id).ok_or_else(|| {
            Error::Config(format!(
                "unknown backend '{id}' (configured: {})",
                self.backends.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn run_dir(&self, run: &str) -> PathBuf {
        let p = Path::new(run);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config.paths.runs_dir.join(run)
        }
    }

    fn eval_records_path(&self, run: &str) -> PathBuf {
        self.run_dir(run).join(EVAL_RECORDS_FILE)
    }

    /// Resolve a dataset source into validated records with splits.
    pub fn resolve_dataset(&self, source: &DatasetSource, lenient: bool) -> Result<Ingested> {
        source.validate()?;
        if let Some(path) = &source.path {
            return ingest(Path::new(path), lenient);
        }
        let mut records = source.records.clone().unwrap_or_default();
        if records.is_empty() {
            return Err(Error::Config("inline dataset has no records".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, record) in records.iter().enumerate() {
            if record.question.trim().is_empty() {
                return Err(Error::Schema {
                    line: i + 1,
                    message: "empty question".into(),
                });
            }
            if !seen.insert(record.id.clone()) {
                return Err(Error::Schema {
                    line: i + 1,
                    message: format!("duplicate id '{}'", record.id),
                });
            }
        }
        let hash_split_applied = records::assign_splits(&mut records)?;
        Ok(Ingested {
            records,
            skipped: Vec::new(),
            hash_split_applied,
        })
    }

    fn load_task(&self, name: &str) -> Result<TaskContext> {
        let cfg = self.config.task(name);
        let kind = cfg.kind_for(name);
        let criterion = match &cfg.criterion_file {
            Some(path) => Some(std::fs::read_to_string(path)?),
            None => self
                .templates
                .get(&format!("criteria/{name}"))
                .map(str::to_string),
        };
        let eval_examples = match &cfg.eval_examples_file {
            Some(path) => std::fs::read_to_string(path)?,
            None => "(no examples provided)".to_string(),
        };
        let task_instruction = cfg.task_instruction.clone().unwrap_or_else(|| {
            "You are an impartial grader for a question-answering task.".to_string()
        });
        let exemplars = match &cfg.exemplars_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let mut pairs = Vec::new();
                for (lineno, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let pair: ExemplarPair =
                        serde_json::from_str(line).map_err(|e| Error::Schema {
                            line: lineno + 1,
                            message: format!("bad exemplar: {e}"),
                        })?;
                    pairs.push((pair.question, pair.answer));
                }
                pairs
            }
            None => Vec::new(),
        };
        Ok(TaskContext {
            name: name.to_string(),
            cfg,
            kind,
            criterion,
            task_instruction,
            eval_examples,
            exemplars,
        })
    }

    /// The generation prompt for one example: 3-shot for QA (with optional
    /// context documents), 0-shot for summarization.
    fn generation_messages(
        &self,
        task: &TaskContext,
        example: &ExampleRecord,
    ) -> Result<Vec<ChatMessage>> {
        let prompt = match task.kind {
            TaskKind::Summarization => self.templates.render(
                "generation_summarization",
                &[("article", example.question.as_str())],
            )?,
            TaskKind::Qa => {
                if task.exemplars.is_empty() {
                    return Err(Error::Config(format!(
                        "task '{}' is a QA task and needs an exemplars_file for few-shot generation",
                        task.name
                    )));
                }
                let shots: Vec<String> = task
                    .exemplars
                    .iter()
                    .take(3)
                    .map(|(q, a)| format!("Question: {q}\n\nAnswer: {a}"))
                    .collect();
                let examples_block = shots.join("\n\n");
                match &example.context_docs {
                    Some(docs) if !docs.is_empty() => {
                        let context = docs.join("\n\n");
                        self.templates.render(
                            "generation_qa_context",
                            &[
                                ("context", context.as_str()),
                                ("examples", examples_block.as_str()),
                                ("question", example.question.as_str()),
                            ],
                        )?
                    }
                    _ => self.templates.render(
                        "generation_qa",
                        &[
                            ("examples", examples_block.as_str()),
                            ("question", example.question.as_str()),
                        ],
                    )?,
                }
            }
        };
        Ok(vec![ChatMessage::user(prompt)])
    }

    /// Generate one primary answer per example, persisting incrementally.
    /// Examples already present in the run's records are skipped, which
    /// together with the response cache makes interrupted runs resumable.
    pub async fn generate(
        &self,
        run: &str,
        task_name: &str,
        source: &DatasetSource,
        backend_id: &str,
        temperature: Option<f64>,
        lenient: bool,
    ) -> Result<GenerateSummary> {
        let task = self.load_task(task_name)?;
        let entry = self.backend_entry(backend_id)?;
        let ingested = self.resolve_dataset(source, lenient)?;
        let run_dir = self.run_dir(run);
        std::fs::create_dir_all(&run_dir)?;
        records::write_jsonl(&run_dir.join(DATASET_FILE), &ingested.records)?;

        let temperature = temperature.unwrap_or_else(|| task.cfg.temperature_or_default());
        let top_k = task.cfg.top_k_or_default();
        let want_logprobs = entry.backend.supports_logprobs();

        let records_path = run_dir.join(EVAL_RECORDS_FILE);
        let existing = if records_path.exists() {
            records::read_eval_records(&records_path)?
        } else {
            Vec::new()
        };
        let done: std::collections::HashSet<String> =
            existing.iter().map(|r| r.example_id.clone()).collect();

        let provenance = Provenance {
            backend: backend_id.to_string(),
            model: entry.model.clone(),
            evaluator: None,
            temperature,
            grid: self.grid.levels().to_vec(),
        };

        let pending: Vec<ExampleRecord> = ingested
            .records
            .iter()
            .filter(|r| !done.contains(&r.id))
            .cloned()
            .collect();
        let resumed = ingested.records.len() - pending.len();

        let concurrency = self.config.concurrency.max(1);
        let backend = entry.backend.clone();
        let outcomes: Vec<EvalRecord> = futures::stream::iter(pending.into_iter().map(|example| {
            let backend = backend.clone();
            let provenance = provenance.clone();
            let task = &task;
            async move {
                let mut record = EvalRecord {
                    example_id: example.id.clone(),
                    split: example.split.unwrap_or(Split::Test),
                    primary_answer: String::new(),
                    comparison_answers: Vec::new(),
                    methods: BTreeMap::new(),
                    correctness: None,
                    provenance,
                    flags: Vec::new(),
                    error: None,
                };
                match self.generation_messages(task, &example) {
                    Ok(messages) => {
                        let request =
                            GenerationRequest::new(record.provenance.model.clone(), messages)
                                .with_temperature(temperature)
                                .with_top_k(top_k)
                                .with_logprobs(want_logprobs)
                                .with_sample_index(0);
                        match backend.generate(&request).await {
                            Ok(resp) => record.primary_answer = resp.text,
                            Err(e) => record.error = Some(format!("generation failed: {e}")),
                        }
                    }
                    Err(e) => record.error = Some(format!("prompt assembly failed: {e}")),
                }
                record
            }
        }))
        .buffered(concurrency)
        .collect()
        .await;

        let failures = outcomes.iter().filter(|r| r.error.is_some()).count();
        let generated = outcomes.len() - failures;
        let mut all = existing;
        all.extend(outcomes);
        // keep dataset order for determinism
        let order: BTreeMap<&str, usize> = ingested
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        all.sort_by_key(|r| {
            order
                .get(r.example_id.as_str())
                .copied()
                .unwrap_or(usize::MAX)
        });
        records::write_eval_records(&records_path, &all)?;

        let manifest = RunManifest {
            run: run.to_string(),
            task: task_name.to_string(),
            backend: backend_id.to_string(),
            model: entry.model.clone(),
            grid: self.grid.levels().to_vec(),
            seed: self.config.seed,
            temperature,
            examples: ingested.records.len(),
            hash_split_applied: ingested.hash_split_applied,
            created: chrono::Utc::now().to_rfc3339(),
        };
        let mut manifest_json = serde_json::to_vec_pretty(&manifest)?;
        manifest_json.push(b'\n');
        std::fs::write(run_dir.join(MANIFEST_FILE), manifest_json)?;

        Ok(GenerateSummary {
            run_dir,
            generated,
            resumed,
            failures,
        })
    }

    fn load_run(&self, run: &str) -> Result<(Vec<EvalRecord>, BTreeMap<String, ExampleRecord>)> {
        let run_dir = self.run_dir(run);
        let eval_records = records::read_eval_records(&run_dir.join(EVAL_RECORDS_FILE))?;
        let dataset = records::read_dataset(&run_dir.join(DATASET_FILE))?;
        let index = dataset
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect::<BTreeMap<_, _>>();
        Ok((eval_records, index))
    }

    /// Fill in the correctness leg of every record that lacks one.
    pub async fn correctness(&self, run: &str, task_name: &str) -> Result<StageSummary> {
        let task = self.load_task(task_name)?;
        let (eval_records, dataset) = self.load_run(run)?;
        let method = task.cfg.correctness.unwrap_or(CorrectnessMethod::RubricLlm);

        let mut summary = StageSummary::default();
        let concurrency = self.config.concurrency.max(1);
        let updated: Vec<EvalRecord> =
            futures::stream::iter(eval_records.into_iter().map(|mut record| {
                let task = &task;
                let dataset = &dataset;
                async move {
                    if record.error.is_some() || record.correctness.is_some() {
                        return (record, StageOutcome::Skipped);
                    }
                    let Some(example) = dataset.get(&record.example_id) else {
                        record.error = Some("example missing from dataset.jsonl".into());
                        return (record, StageOutcome::Failed);
                    };
                    match self.correctness_for(task, method, example, &record).await {
                        Ok((correctness, flags, dropped)) => {
                            record.correctness = Some(correctness);
                            record.flags.extend(flags);
                            if task.cfg.evaluator.is_some() {
                                record.provenance.evaluator = task.cfg.evaluator.clone();
                            }
                            (record, StageOutcome::Evaluated { dropped })
                        }
                        Err(e) => {
                            record.error = Some(format!("correctness failed: {e}"));
                            (record, StageOutcome::Failed)
                        }
                    }
                }
            }))
            .buffered(concurrency)
            .collect::<Vec<(EvalRecord, StageOutcome)>>()
            .await
            .into_iter()
            .map(|(record, outcome)| {
                summary.absorb(outcome);
                record
            })
            .collect();
        records::write_eval_records(&self.eval_records_path(run), &updated)?;
        Ok(summary)
    }

    async fn correctness_for(
        &self,
        task: &TaskContext,
        method: CorrectnessMethod,
        example: &ExampleRecord,
        record: &EvalRecord,
    ) -> Result<(CorrectnessRecord, Vec<String>, u32)> {
        match method {
            CorrectnessMethod::F1_5 | CorrectnessMethod::ExactF1 => {
                let gold = example.gold_entities.as_ref().ok_or_else(|| {
                    Error::Config(format!("example '{}' has no gold_entities", example.id))
                })?;
                let predicted = EntityList::from_comma_separated(&record.primary_answer);
                let score = match method {
                    CorrectnessMethod::F1_5 => f1_5(&predicted, gold)?,
                    _ => exact_f1(&predicted, gold)?,
                };
                let det = deterministic_correctness_distribution(score, &self.grid)?;
                Ok((
                    CorrectnessRecord {
                        samples: None,
                        distribution: det.distribution,
                        raw_score: Some(det.raw_score),
                    },
                    Vec::new(),
                    0,
                ))
            }
            CorrectnessMethod::RubricLlm => {
                let evaluator_id = task
                    .cfg
                    .evaluator
                    .clone()
                    .unwrap_or_else(|| record.provenance.backend.clone());
                let entry = self.backend_entry(&evaluator_id)?;
                let evaluator_model = task
                    .cfg
                    .evaluator_model
                    .clone()
                    .unwrap_or_else(|| entry.model.clone());
                let criterion = task.criterion.clone().ok_or_else(|| {
                    Error::Config(format!(
                        "task '{}' needs a criterion_file for rubric evaluation",
                        task.name
                    ))
                })?;
                let spec = CorrectnessSpec {
                    method,
                    evaluations: task.cfg.evaluations_for(task.kind),
                    rubric: criterion,
                    evaluator_model,
                };
                let template = match task.kind {
                    TaskKind::Summarization => "summarization_eval",
                    TaskKind::Qa => "correctness_eval",
                };
                let ctx = RubricContext {
                    templates: &self.templates,
                    grid: &self.grid,
                    task_instruction: &task.task_instruction,
                    examples: &task.eval_examples,
                    temperature: task.cfg.temperature_or_default(),
                    template,
                };
                let outcome = rubric_correctness(
                    &ctx,
                    &example.question,
                    &record.primary_answer,
                    example.reference.as_deref(),
                    &spec,
                    entry.backend.as_ref(),
                )
                .await?;
                let mut flags = Vec::new();
                if outcome.downgraded_no_reference {
                    flags.push("missing_reference_downgrade".to_string());
                }
                if outcome.dropped > 0 {
                    flags.push(format!("correctness_samples_dropped:{}", outcome.dropped));
                }
                let raw = outcome.samples.mean();
                Ok((
                    CorrectnessRecord {
                        samples: Some(outcome.samples),
                        distribution: outcome.distribution,
                        raw_score: Some(raw),
                    },
                    flags,
                    outcome.dropped,
                ))
            }
        }
    }

    fn build_similarity(
        &self,
        task: &TaskContext,
        subject: &BackendEntry,
    ) -> Result<Box<dyn SimilarityStrategy>> {
        let kind = task.cfg.similarity_for(&task.name);
        let judge_id = task.cfg.judge.clone();
        let judge_entry = match &judge_id {
            Some(id) => self.backend_entry(id)?,
            None => subject,
        };
        let judge_model = task
            .cfg
            .judge_model
            .clone()
            .unwrap_or_else(|| judge_entry.model.clone());
        let judge = Judge::new(
            ModelHandle::new(judge_entry.backend.clone(), judge_model),
            self.templates.clone(),
        );
        Ok(match kind {
            SimilarityKind::Naive => Box::new(NaiveSimilarity::new(judge)),
            SimilarityKind::Split => Box::new(SplitSimilarity::new(judge)),
            SimilarityKind::Claim => Box::new(ClaimSimilarity::new(
                judge,
                Arc::new(HeuristicClaimDetector),
            )),
            SimilarityKind::Ner => {
                // list-style answers split on commas; free-form answers go
                // through the prompted extractor
                let list_style = matches!(
                    task.cfg.correctness,
                    Some(CorrectnessMethod::F1_5) | Some(CorrectnessMethod::ExactF1)
                );
                if list_style {
                    Box::new(NerSimilarity::new(Arc::new(CommaSplitExtractor)))
                } else {
                    Box::new(NerSimilarity::new(Arc::new(PromptedEntityExtractor::new(
                        judge,
                    ))))
                }
            }
        })
    }

    fn elicitation_spec(&self, task: &TaskContext, method: ElicitationMethod) -> ElicitationSpec {
        ElicitationSpec {
            method,
            samples: task.cfg.samples_or_default(),
            similarity: Some(task.cfg.similarity_for(&task.name)),
            alpha: task.cfg.alpha,
            temperature: task.cfg.temperature_or_default(),
            top_k: task.cfg.top_k_or_default(),
            sl_mode: task.cfg.sl_mode.unwrap_or_default(),
        }
    }

    /// Derive the requested confidence distributions for every record that
    /// does not already carry them.
    pub async fn elicit(
        &self,
        run: &str,
        task_name: &str,
        methods: &[ElicitationMethod],
    ) -> Result<ElicitSummary> {
        if methods.is_empty() {
            return Err(Error::Config("no elicitation methods requested".into()));
        }
        let task = self.load_task(task_name)?;
        let (eval_records, dataset) = self.load_run(run)?;
        if eval_records.is_empty() {
            return Err(Error::Precondition(
                "run has no generated answers; run generate first".into(),
            ));
        }
        let subject_id = eval_records[0].provenance.backend.clone();
        let subject = self.backend_entry(&subject_id)?;
        let similarity = self.build_similarity(&task, subject)?;

        // hybrid mixes the cse and psc distributions, so both must exist
        let mut ordered: Vec<ElicitationMethod> = methods.to_vec();
        if ordered.contains(&ElicitationMethod::Hybrid) {
            for dep in [ElicitationMethod::Cse, ElicitationMethod::Psc] {
                if !ordered.contains(&dep) {
                    ordered.insert(0, dep);
                }
            }
            ordered.retain(|m| *m != ElicitationMethod::Hybrid);
            ordered.push(ElicitationMethod::Hybrid);
        }

        let mut summary = ElicitSummary::default();
        let concurrency = self.config.concurrency.max(1);
        let ordered = &ordered;
        let similarity = similarity.as_ref();
        let task_ref = &task;
        let updated: Vec<EvalRecord> =
            futures::stream::iter(eval_records.into_iter().map(|mut record| {
                let dataset = &dataset;
                async move {
                    if record.error.is_some() {
                        return (record, BTreeMap::new(), 0usize);
                    }
                    let Some(example) = dataset.get(&record.example_id) else {
                        record.error = Some("example missing from dataset.jsonl".into());
                        return (record, BTreeMap::new(), 1);
                    };
                    let mut computed: BTreeMap<String, usize> = BTreeMap::new();
                    let mut failures = 0usize;
                    for &method in ordered {
                        if record.methods.contains_key(method.name()) {
                            continue;
                        }
                        match self
                            .elicit_method(
                                task_ref,
                                subject,
                                similarity,
                                example,
                                &mut record,
                                method,
                            )
                            .await
                        {
                            Ok(result) => {
                                record.methods.insert(method.name().to_string(), result);
                                *computed.entry(method.name().to_string()).or_default() += 1;
                            }
                            Err(e) => {
                                record
                                    .flags
                                    .push(format!("elicit_{}_failed: {e}", method.name()));
                                failures += 1;
                            }
                        }
                    }
                    (record, computed, failures)
                }
            }))
            .buffered(concurrency)
            .collect::<Vec<(EvalRecord, BTreeMap<String, usize>, usize)>>()
            .await
            .into_iter()
            .map(|(record, computed, failures)| {
                for (m, n) in computed {
                    *summary.per_method.entry(m).or_default() += n;
                }
                summary.failures += failures;
                record
            })
            .collect();
        records::write_eval_records(&self.eval_records_path(run), &updated)?;
        Ok(summary)
    }

    async fn elicit_method(
        &self,
        task: &TaskContext,
        subject: &BackendEntry,
        similarity: &dyn SimilarityStrategy,
        example: &ExampleRecord,
        record: &mut EvalRecord,
        method: ElicitationMethod,
    ) -> Result<ElicitationResult> {
        let spec = self.elicitation_spec(task, method);
        let criterion = task.criterion.clone().unwrap_or_default();
        let ctx = ElicitContext {
            grid: &self.grid,
            templates: &self.templates,
            task_instruction: &task.task_instruction,
            criterion: &criterion,
            examples: &task.eval_examples,
            model: &record.provenance.model,
        };
        let backend = subject.backend.as_ref();
        match method {
            ElicitationMethod::Cse => {
                cse(
                    &ctx,
                    &example.question,
                    &record.primary_answer,
                    &spec,
                    backend,
                )
                .await
            }
            ElicitationMethod::Bse => {
                baseline_bse(
                    &ctx,
                    &example.question,
                    &record.primary_answer,
                    &spec,
                    backend,
                )
                .await
            }
            ElicitationMethod::Sl => {
                // the primary generation is cached with its logprobs; repeat
                // the request to recover them
                let messages = self.generation_messages(task, example)?;
                let request = GenerationRequest::new(record.provenance.model.clone(), messages)
                    .with_temperature(record.provenance.temperature)
                    .with_top_k(task.cfg.top_k_or_default())
                    .with_logprobs(true)
                    .with_sample_index(0);
                let resp = backend.generate(&request).await?;
                let logprobs = resp.token_logprobs.ok_or_else(|| {
                    Error::Capability("token logprobs (required by the SL baseline)".into())
                })?;
                baseline_sl(&self.grid, &record.primary_answer, &logprobs, spec.sl_mode)
            }
            ElicitationMethod::Psc | ElicitationMethod::Asc | ElicitationMethod::PscF1 => {
                if record.comparison_answers.is_empty() {
                    let messages = self.generation_messages(task, example)?;
                    let request = GenerationRequest::new(record.provenance.model.clone(), messages)
                        .with_temperature(spec.temperature)
                        .with_top_k(spec.top_k);
                    let (comparisons, dropped) =
                        sample_comparison_answers(backend, &request, spec.samples - 1).await?;
                    if dropped > 0 {
                        record
                            .flags
                            .push(format!("comparison_samples_dropped:{dropped}"));
                    }
                    record.comparison_answers = comparisons;
                }
                let comparisons = record.comparison_answers.clone();
                match method {
                    ElicitationMethod::Psc => {
                        psc_from_comparisons(
                            &ctx,
                            &example.question,
                            &record.primary_answer,
                            &comparisons,
                            similarity,
                        )
                        .await
                    }
                    ElicitationMethod::Asc => {
                        asc_from_comparisons(&self.grid, &record.primary_answer, &comparisons)
                    }
                    _ => psc_f1_from_comparisons(&self.grid, &record.primary_answer, &comparisons),
                }
            }
            ElicitationMethod::Hybrid => {
                let alpha = task.cfg.alpha.unwrap_or(0.5);
                let eval_result = record
                    .methods
                    .get("cse")
                    .ok_or_else(|| Error::Precondition("hybrid needs a cse result".into()))?;
                let consist_result = record
                    .methods
                    .get("psc")
                    .ok_or_else(|| Error::Precondition("hybrid needs a psc result".into()))?;
                hybrid(eval_result, consist_result, alpha)
            }
        }
    }

    /// Per-method calibration datasets from the run's records, split into
    /// dev and test.
    fn datasets_for(
        &self,
        eval_records: &[EvalRecord],
        method: &str,
        tau_s_hint: &mut Vec<f64>,
    ) -> Result<(CalibrationDataset, CalibrationDataset)> {
        let mut dev = Vec::new();
        let mut test = Vec::new();
        for record in eval_records {
            if record.error.is_some() {
                continue;
            }
            let (Some(result), Some(correctness)) =
                (record.methods.get(method), record.correctness.as_ref())
            else {
                continue;
            };
            let mut item = CalibrationItem::new(
                record.example_id.clone(),
                result.distribution.clone(),
                correctness.distribution.clone(),
            );
            item.raw_confidence_mean = result.samples.as_ref().map(|s| s.mean());
            item.raw_correctness_score = correctness.raw_score;
            tau_s_hint.push(item.target_score());
            match record.split {
                Split::Dev => dev.push(item),
                Split::Test => test.push(item),
            }
        }
        if dev.is_empty() {
            return Err(Error::Precondition(format!(
                "empty dev split for method '{method}'; selective F1 needs one"
            )));
        }
        if test.is_empty() {
            return Err(Error::Precondition(format!(
                "empty test split for method '{method}'"
            )));
        }
        Ok((
            CalibrationDataset::new(dev, Split::Dev)?,
            CalibrationDataset::new(test, Split::Test)?,
        ))
    }

    /// Compute the calibration report: tau_c fitted on dev, metrics on test.
    pub fn metrics(
        &self,
        run: &str,
        task_name: &str,
        methods: Option<&[String]>,
        tau_s_override: Option<f64>,
    ) -> Result<CalibrationReport> {
        let task = self.config.task(task_name);
        let run_dir = self.run_dir(run);
        let eval_records = records::read_eval_records(&run_dir.join(EVAL_RECORDS_FILE))?;
        if eval_records.is_empty() {
            return Err(Error::Precondition("run has no records".into()));
        }
        let mut present: Vec<String> = Vec::new();
        for record in &eval_records {
            for name in record.methods.keys() {
                if !present.contains(name) {
                    present.push(name.clone());
                }
            }
        }
        let selected: Vec<String> = match methods {
            Some(list) if !list.is_empty() => {
                for m in list {
                    if !present.contains(m) {
                        return Err(Error::Config(format!(
                            "method '{m}' has no elicitation results in this run"
                        )));
                    }
                }
                list.to_vec()
            }
            _ => present,
        };
        if selected.is_empty() {
            return Err(Error::Precondition(
                "run carries no elicitation results; run elicit first".into(),
            ));
        }

        let ece = EceConfig {
            bins: self.config.ece.bins,
            label_mode: self.config.ece.label_mode,
        };
        let mut method_reports = BTreeMap::new();
        let mut tau_s_used = None;
        let mut dev_items = 0;
        let mut test_items = 0;
        for method in &selected {
            let mut target_scores = Vec::new();
            let (dev, test) = self.datasets_for(&eval_records, method, &mut target_scores)?;
            let tau_s = match (tau_s_override, task.tau_s) {
                (Some(t), _) => t,
                (None, Some(t)) => t,
                (None, None) => {
                    let mean = target_scores.iter().sum::<f64>() / target_scores.len() as f64;
                    choose_tau_s(mean, &self.grid)?
                }
            };
            tau_s_used = Some(tau_s);
            dev_items = dev.len();
            test_items = test.len();
            method_reports.insert(method.clone(), method_report(&dev, &test, tau_s, &ece)?);
        }
        let report = CalibrationReport {
            grid: self.grid.levels().to_vec(),
            tau_s: tau_s_used.unwrap_or(0.0),
            ece_bins: ece.bins,
            label_mode: match ece.label_mode {
                crate::metrics::LabelMode::Soft => "soft".into(),
                crate::metrics::LabelMode::Argmax => "argmax".into(),
            },
            dev_items,
            test_items,
            methods: method_reports,
        };
        write_report_json(&run_dir.join(REPORT_FILE), &report)?;
        write_reliability_csv(&run_dir.join("reliability.csv"), &report)?;
        write_tau_c_sweep_csv(&run_dir.join("tau_c_sweep.csv"), &report)?;
        Ok(report)
    }

    /// correctness + elicit + metrics over an already-generated run.
    pub async fn run_calibration(
        &self,
        run: &str,
        task_name: &str,
        methods: &[ElicitationMethod],
        tau_s_override: Option<f64>,
    ) -> Result<CalibrationReport> {
        self.correctness(run, task_name).await?;
        self.elicit(run, task_name, methods).await?;
        self.metrics(run, task_name, None, tau_s_override)
    }

    /// Orchestrate generation and calibration across a temperature grid,
    /// one sub-run per temperature.
    pub async fn sweep_temperature(
        &self,
        run: &str,
        task_name: &str,
        source: &DatasetSource,
        backend_id: &str,
        temperatures: &[f64],
        methods: &[ElicitationMethod],
    ) -> Result<(Vec<SweepRow>, PathBuf)> {
        if temperatures.is_empty() {
            return Err(Error::Config(
                "temperature sweep needs at least one value".into(),
            ));
        }
        let mut rows = Vec::new();
        for &t in temperatures {
            let sub_run = format!("{run}/t{t}");
            self.generate(&sub_run, task_name, source, backend_id, Some(t), false)
                .await?;
            let report = self
                .run_calibration(&sub_run, task_name, methods, None)
                .await?;
            for (method, m) in &report.methods {
                rows.push(SweepRow {
                    temperature: t,
                    method: method.clone(),
                    ece_m: m.ece_m,
                    correlation: m.correlation,
                    f1: m.selective.f1,
                    mean_correctness: m.mean_correctness,
                });
            }
        }
        let csv_path = self.run_dir(run).join("sweep.csv");
        write_sweep_csv(&csv_path, &rows)?;
        Ok((rows, csv_path))
    }

    fn cascade_items_from_runs(
        &self,
        weak_run: &str,
        strong_run: &str,
        method: &str,
    ) -> Result<Vec<CascadeItem>> {
        let weak = records::read_eval_records(&self.eval_records_path(weak_run))?;
        let strong = records::read_eval_records(&self.eval_records_path(strong_run))?;
        let strong_scores: BTreeMap<&str, f64> = strong
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| {
                r.correctness.as_ref().map(|c| {
                    (
                        r.example_id.as_str(),
                        c.raw_score
                            .unwrap_or_else(|| c.distribution.expected_score()),
                    )
                })
            })
            .collect();
        let mut items = Vec::new();
        for record in &weak {
            if record.error.is_some() {
                continue;
            }
            let (Some(result), Some(correctness)) =
                (record.methods.get(method), record.correctness.as_ref())
            else {
                continue;
            };
            let strong_score = strong_scores.get(record.example_id.as_str()).ok_or_else(|| {
                Error::Config(format!(
                    "offline cascade needs a precomputed strong answer for every query; '{}' is missing",
                    record.example_id
                ))
            })?;
            items.push(CascadeItem {
                id: record.example_id.clone(),
                weak_confidence: result.distribution.clone(),
                weak_correctness: correctness
                    .raw_score
                    .unwrap_or_else(|| correctness.distribution.expected_score()),
                strong_correctness: *strong_score,
            });
        }
        if items.is_empty() {
            return Err(Error::Precondition(format!(
                "weak run has no scored records for method '{method}'"
            )));
        }
        Ok(items)
    }

    #[allow(clippy::too_many_arguments)]
    fn cascade_config(
        &self,
        task_name: &str,
        items: &[CascadeItem],
        tau_s: Option<f64>,
        success_threshold: Option<f64>,
        budgets: Option<Vec<usize>>,
        budget_fractions: Option<Vec<f64>>,
        seeds: Option<Vec<u64>>,
    ) -> Result<(CascadeConfig, Vec<usize>)> {
        let task = self.config.task(task_name);
        let tau_s = match (tau_s, task.tau_s) {
            (Some(t), _) => t,
            (None, Some(t)) => t,
            (None, None) => {
                // the strong model is the better one; its mean score sets tau_s
                let mean =
                    items.iter().map(|i| i.strong_correctness).sum::<f64>() / items.len() as f64;
                choose_tau_s(mean, &self.grid)?
            }
        };
        let mut cfg = CascadeConfig::new(tau_s);
        cfg.success_threshold = success_threshold
            .or(task.success_threshold)
            .unwrap_or(tau_s);
        cfg.random_seeds =
            seeds.unwrap_or_else(|| (0..10).map(|i| self.config.seed.wrapping_add(i)).collect());
        let n = items.len();
        let budgets = match (budgets, budget_fractions) {
            (Some(b), _) => b,
            (None, Some(fractions)) => {
                let mut b: Vec<usize> = fractions
                    .iter()
                    .map(|f| ((f * n as f64).round() as usize).min(n))
                    .collect();
                b.dedup();
                b
            }
            (None, None) => CascadeConfig::default_budgets(n),
        };
        for &b in &budgets {
            if b > n {
                return Err(Error::Config(format!(
                    "budget {b} exceeds the {n} available queries"
                )));
            }
        }
        Ok((cfg, budgets))
    }

    /// Offline cascade evaluation: both models precomputed, exact curves.
    #[allow(clippy::too_many_arguments)]
    pub fn cascade_offline(
        &self,
        weak_run: &str,
        strong_run: &str,
        task_name: &str,
        method: &str,
        tau_s: Option<f64>,
        success_threshold: Option<f64>,
        budgets: Option<Vec<usize>>,
        budget_fractions: Option<Vec<f64>>,
        seeds: Option<Vec<u64>>,
    ) -> Result<(Vec<CascadeRow>, PathBuf)> {
        let items = self.cascade_items_from_runs(weak_run, strong_run, method)?;
        let (cfg, budgets) = self.cascade_config(
            task_name,
            &items,
            tau_s,
            success_threshold,
            budgets,
            budget_fractions,
            seeds,
        )?;
        let mut rows = Vec::new();
        for &budget in &budgets {
            let outcomes = route_by_budget(&items, &cfg, budget)?;
            let overall = success_rate(&outcomes, cfg.success_threshold)?;
            let selected = selected_success_rate(&outcomes, cfg.success_threshold);
            rows.push(CascadeRow::routed(budget, overall, selected, method));
            let stats = random_baseline_stats(&items, &cfg, budget)?;
            rows.push(CascadeRow::random(budget, &stats));
        }
        let csv_path = self
            .run_dir(weak_run)
            .join(format!("cascade_{}.csv", method.replace('-', "_")));
        write_cascade_csv(&csv_path, &rows)?;
        Ok((rows, csv_path))
    }

    /// Live cascade: only escalated queries hit the strong backend, so the
    /// full-budget reference point is unavailable. One budget per call.
    #[allow(clippy::too_many_arguments)]
    pub async fn cascade_live(
        &self,
        weak_run: &str,
        task_name: &str,
        method: &str,
        strong_backend_id: &str,
        budget: usize,
        tau_s: Option<f64>,
        success_threshold: Option<f64>,
    ) -> Result<(Vec<CascadeRow>, PathBuf)> {
        let task = self.load_task(task_name)?;
        let (weak_records, dataset) = self.load_run(weak_run)?;
        let strong = self.backend_entry(strong_backend_id)?;
        let correctness_method = task.cfg.correctness.unwrap_or(CorrectnessMethod::RubricLlm);

        let mut items = Vec::new();
        for record in &weak_records {
            if record.error.is_some() {
                continue;
            }
            let (Some(result), Some(correctness)) =
                (record.methods.get(method), record.correctness.as_ref())
            else {
                continue;
            };
            items.push(CascadeItem {
                id: record.example_id.clone(),
                weak_confidence: result.distribution.clone(),
                weak_correctness: correctness
                    .raw_score
                    .unwrap_or_else(|| correctness.distribution.expected_score()),
                strong_correctness: f64::NAN, // filled only when escalated
            });
        }
        if items.is_empty() {
            return Err(Error::Precondition(format!(
                "weak run has no scored records for method '{method}'"
            )));
        }
        let tau_s = match (tau_s, task.cfg.tau_s) {
            (Some(t), _) => t,
            (None, Some(t)) => t,
            (None, None) => {
                let mean =
                    items.iter().map(|i| i.weak_correctness).sum::<f64>() / items.len() as f64;
                choose_tau_s(mean, &self.grid)?
            }
        };
        let mut cfg = CascadeConfig::new(tau_s);
        cfg.success_threshold = success_threshold
            .or(task.cfg.success_threshold)
            .unwrap_or(tau_s);

        let mut outcomes = route_by_budget(&items, &cfg, budget)?;
        // score the escalated queries with fresh strong-model answers
        for outcome in outcomes.iter_mut() {
            if outcome.route != crate::cascade::Route::Strong {
                continue;
            }
            let example = dataset.get(&outcome.id).ok_or_else(|| {
                Error::Config(format!("example '{}' missing from dataset", outcome.id))
            })?;
            let messages = self.generation_messages(&task, example)?;
            let request = GenerationRequest::new(strong.model.clone(), messages)
                .with_temperature(task.cfg.temperature_or_default())
                .with_top_k(task.cfg.top_k_or_default());
            let resp = strong.backend.generate(&request).await?;
            let shadow = EvalRecord {
                example_id: example.id.clone(),
                split: example.split.unwrap_or(Split::Test),
                primary_answer: resp.text,
                comparison_answers: Vec::new(),
                methods: BTreeMap::new(),
                correctness: None,
                provenance: Provenance {
                    backend: strong_backend_id.to_string(),
                    model: strong.model.clone(),
                    evaluator: None,
                    temperature: task.cfg.temperature_or_default(),
                    grid: self.grid.levels().to_vec(),
                },
                flags: Vec::new(),
                error: None,
            };
            let (correctness, _, _) = self
                .correctness_for(&task, correctness_method, example, &shadow)
                .await?;
            outcome.final_correctness = correctness
                .raw_score
                .unwrap_or_else(|| correctness.distribution.expected_score());
        }
        let overall = success_rate(&outcomes, cfg.success_threshold)?;
        let selected = selected_success_rate(&outcomes, cfg.success_threshold);
        let rows = vec![CascadeRow::routed(budget, overall, selected, method)];
        let csv_path = self
            .run_dir(weak_run)
            .join(format!("cascade_live_{}.csv", method.replace('-', "_")));
        write_cascade_csv(&csv_path, &rows)?;
        Ok((rows, csv_path))
    }

    /// Recompute the report from persisted records; the persistence
    /// round-trip means this must equal the stored report.
    pub fn report(&self, run: &str, task_name: &str) -> Result<(CalibrationReport, PathBuf)> {
        let report = self.metrics(run, task_name, None, None)?;
        Ok((report, self.run_dir(run).join(REPORT_FILE)))
    }
}

#[derive(Deserialize)]
struct ExemplarPair {
    question: String,
    answer: String,
}

struct TaskContext {
    name: String,
    cfg: TaskConfig,
    kind: TaskKind,
    criterion: Option<String>,
    task_instruction: String,
    eval_examples: String,
    exemplars: Vec<(String, String)>,
}

#[derive(Debug)]
pub struct GenerateSummary {
    pub run_dir: PathBuf,
    pub generated: usize,
    pub resumed: usize,
    pub failures: usize,
}

enum StageOutcome {
    Evaluated { dropped: u32 },
    Skipped,
    Failed,
}

#[derive(Debug, Default)]
pub struct StageSummary {
    pub evaluated: usize,
    pub skipped: usize,
    pub failures: usize,
    pub dropped_samples: usize,
}

impl StageSummary {
    fn absorb(&mut self, outcome: StageOutcome) {
        match outcome {
            StageOutcome::Evaluated { dropped } => {
                self.evaluated += 1;
                self.dropped_samples += dropped as usize;
            }
            StageOutcome::Skipped => self.skipped += 1,
            StageOutcome::Failed => self.failures += 1,
        }
    }
}

#[derive(Debug, Default)]
pub struct ElicitSummary {
    pub per_method: BTreeMap<String, usize>,
    pub failures: usize,
}
