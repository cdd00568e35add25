//! Target correctness distributions.
//!
//! Two routes produce the correctness distribution an answer is calibrated
//! against: repeated rubric-based LLM evaluation (the evaluator grades the
//! answer N times on a 0-5 rubric, and the grades form an empirical
//! distribution) and deterministic entity-list metrics for list-style
//! answers, where the recall-capped F1-5 score becomes a point mass.

use serde::{Deserialize, Deserializer, Serialize};

use crate::backends::parse::parse_score5;
use crate::backends::template::TemplateStore;
use crate::backends::{ChatMessage, GenerationRequest, ModelBackend, RETRY_SAMPLE_STRIDE};
use crate::dist::{LevelGrid, SampleScores, ScoreDistribution};
use crate::error::{Error, Result};

/// How correctness is established for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectnessMethod {
    /// Repeated 0-5 rubric grading by an evaluator model.
    #[serde(rename = "rubric-llm")]
    RubricLlm,
    /// Entity-list F1 with recall capped at five correct predictions.
    #[serde(rename = "f1-5")]
    F1_5,
    /// Plain set F1 (uncapped recall).
    #[serde(rename = "exact-f1")]
    ExactF1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectnessSpec {
    pub method: CorrectnessMethod,
    /// Evaluator calls per answer (rubric method only). 3 for long-form QA,
    /// 1 for summarization.
    pub evaluations: u32,
    /// Task criteria text inserted into the rubric template.
    pub rubric: String,
    /// Model name requested from the evaluator backend.
    pub evaluator_model: String,
}

impl CorrectnessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.evaluations < 1 {
            return Err(Error::Domain(
                "correctness spec needs evaluations >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// De-duplicated list of entity surface forms.
///
/// Entries are trimmed; duplicates are removed case-insensitively, keeping
/// the first spelling seen. Matching elsewhere is case-insensitive exact
/// match; no punctuation or diacritic normalization is applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct EntityList {
    entities: Vec<String>,
}

impl EntityList {
    pub fn new(raw: impl IntoIterator<Item = String>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut entities = Vec::new();
        for entry in raw {
            let trimmed = entry.trim();
            if trimmed.is_empty() {
                continue;
            }
            if seen.insert(trimmed.to_lowercase()) {
                entities.push(trimmed.to_string());
            }
        }
        EntityList { entities }
    }

    /// Split a list-style answer on commas, also stripping terminal periods
    /// ("A, B, C." yields C, not "C.").
    pub fn from_comma_separated(text: &str) -> Self {
        EntityList::new(
            text.split(',')
                .map(|e| e.trim().trim_end_matches('.').to_string()),
        )
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains_ignore_case(&self, entity: &str) -> bool {
        self.entities
            .iter()
            .any(|e| e.eq_ignore_ascii_case(entity) || e.to_lowercase() == entity.to_lowercase())
    }

    /// Number of entries present in `other` by case-insensitive exact match.
    pub fn overlap(&self, other: &EntityList) -> usize {
        self.entities
            .iter()
            .filter(|e| other.contains_ignore_case(e))
            .count()
    }
}

impl<'de> Deserialize<'de> for EntityList {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(deserializer)?;
        Ok(EntityList::new(raw))
    }
}

/// Entity-list F1 with 100% recall granted at five correct predictions.
pub fn f1_5(predicted: &EntityList, gold: &EntityList) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Domain("gold entity list is empty".into()));
    }
    let correct = predicted.overlap(gold);
    let precision = if predicted.is_empty() {
        0.0
    } else {
        correct as f64 / predicted.len() as f64
    };
    let recall = correct.min(5) as f64 / 5.0;
    Ok(harmonic_f1(precision, recall))
}

/// Standard set F1 over exact matches; serves as the uncapped counterpart
/// of [`f1_5`].
pub fn exact_f1(predicted: &EntityList, gold: &EntityList) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Domain("gold entity list is empty".into()));
    }
    let correct = predicted.overlap(gold);
    let precision = if predicted.is_empty() {
        0.0
    } else {
        correct as f64 / predicted.len() as f64
    };
    let recall = correct as f64 / gold.len() as f64;
    Ok(harmonic_f1(precision, recall))
}

pub(crate) fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// A deterministic metric score wrapped as a point-mass target, with the
/// unquantized score retained for expected-value use downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicCorrectness {
    pub distribution: ScoreDistribution,
    pub raw_score: f64,
}

pub fn deterministic_correctness_distribution(
    score: f64,
    grid: &LevelGrid,
) -> Result<DeterministicCorrectness> {
    Ok(DeterministicCorrectness {
        distribution: ScoreDistribution::point_mass(grid, score)?,
        raw_score: score,
    })
}

/// Ambient inputs for rubric evaluation that are task- rather than
/// answer-specific.
#[derive(Clone)]
pub struct RubricContext<'a> {
    pub templates: &'a TemplateStore,
    pub grid: &'a LevelGrid,
    pub task_instruction: &'a str,
    pub examples: &'a str,
    pub temperature: f64,
    /// Template used when a reference answer is available:
    /// `correctness_eval` for QA, `summarization_eval` for summaries.
    pub template: &'a str,
}

#[derive(Debug, Clone)]
pub struct RubricOutcome {
    pub samples: SampleScores,
    pub distribution: ScoreDistribution,
    /// Evaluator calls dropped after unparseable responses; N effectively
    /// shrinks by this much.
    pub dropped: u32,
    /// True when no reference answer was available and the evaluation was
    /// downgraded to the reference-free self-evaluation template.
    pub downgraded_no_reference: bool,
}

/// Grade `answer` N times with the rubric template and collect the grades
/// into an empirical distribution.
///
/// Unparseable responses are retried twice with a shifted sample index, then
/// dropped; if every sample drops, the evaluation fails.
pub async fn rubric_correctness(
    ctx: &RubricContext<'_>,
    question: &str,
    answer: &str,
    reference: Option<&str>,
    spec: &CorrectnessSpec,
    backend: &dyn ModelBackend,
) -> Result<RubricOutcome> {
    spec.validate()?;
    if spec.method != CorrectnessMethod::RubricLlm {
        return Err(Error::Precondition(format!(
            "rubric_correctness called with method {:?}",
            spec.method
        )));
    }
    let (prompt, downgraded) = match (ctx.template, reference) {
        ("summarization_eval", _) => (
            ctx.templates.render(
                "summarization_eval",
                &[("article", question), ("summary", answer)],
            )?,
            false,
        ),
        (template, Some(reference)) => (
            ctx.templates.render(
                template,
                &[
                    ("task_instruction", ctx.task_instruction),
                    ("criterion", &spec.rubric),
                    ("examples", ctx.examples),
                    ("question", question),
                    ("reference_answer", reference),
                    ("answer", answer),
                ],
            )?,
            false,
        ),
        (_, None) => (
            ctx.templates.render(
                "self_eval",
                &[
                    ("task_instruction", ctx.task_instruction),
                    ("criterion", &spec.rubric),
                    ("examples", ctx.examples),
                    ("question", question),
                    ("answer", answer),
                ],
            )?,
            true,
        ),
    };
    let base = GenerationRequest::new(
        spec.evaluator_model.clone(),
        vec![ChatMessage::user(prompt)],
    )
    .with_temperature(ctx.temperature);
    let (scores, dropped) =
        sample_parsed_scores(backend, &base, 0, spec.evaluations, parse_score5).await;
    if scores.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} evaluator samples dropped",
            spec.evaluations
        )));
    }
    let samples = SampleScores::new(scores)?;
    let distribution = ScoreDistribution::from_samples(&samples, ctx.grid)?;
    Ok(RubricOutcome {
        samples,
        distribution,
        dropped,
        downgraded_no_reference: downgraded,
    })
}

/// Fan out `count` samples of `base`, parse each response, and retry a
/// failed sample up to twice with a shifted index before dropping it.
/// Results come back in sample order; the drop count is returned alongside.
pub(crate) async fn sample_parsed_scores<T, F>(
    backend: &dyn ModelBackend,
    base: &GenerationRequest,
    first_index: u32,
    count: u32,
    parse: F,
) -> (Vec<T>, u32)
where
    F: Fn(&str) -> Result<T> + Copy,
{
    const PARSE_RETRIES: u32 = 2;
    let attempts = futures::future::join_all((0..count).map(|i| async move {
        let index = first_index + i;
        for attempt in 0..=PARSE_RETRIES {
            let req = base
                .clone()
                .with_sample_index(index + attempt * RETRY_SAMPLE_STRIDE);
            match backend.generate(&req).await {
                Ok(resp) => match parse(&resp.text) {
                    Ok(value) => return Some(value),
                    Err(e) => {
                        tracing::debug!(sample = index, attempt, %e, "unparseable response");
                    }
                },
                Err(e) => {
                    tracing::warn!(sample = index, attempt, %e, "backend failure on sample");
                }
            }
        }
        None
    }))
    .await;
    let mut values = Vec::with_capacity(attempts.len());
    let mut dropped = 0u32;
    for outcome in attempts {
        match outcome {
            Some(v) => values.push(v),
            None => dropped += 1,
        }
    }
    (values, dropped)
}

/// Single-sample variant of [`sample_parsed_scores`] used where only one
/// response is needed but the retry-on-parse-failure contract still applies.
pub(crate) async fn sample_one_parsed<T, F>(
    backend: &dyn ModelBackend,
    base: &GenerationRequest,
    index: u32,
    parse: F,
) -> Option<T>
where
    F: Fn(&str) -> Result<T> + Copy,
{
    let (mut values, _) = sample_parsed_scores(backend, base, index, 1, parse).await;
    values.pop()
}
