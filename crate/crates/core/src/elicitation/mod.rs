//! Confidence-distribution elicitation.
//!
//! Given a primary answer, each method here produces the model's confidence
//! as a distribution over score levels: continuous self-evaluation (CSE),
//! pairwise self-consistency (PSC) with a pluggable similarity strategy, the
//! SL / BSE / ASC / PSC-F1 baselines, and the alpha-mixture of an evaluation
//! and a consistency distribution.

pub mod similarity;

use serde::{Deserialize, Serialize};

use crate::backends::parse::{parse_score5, parse_true_false};
use crate::backends::template::TemplateStore;
use crate::backends::{ChatMessage, GenerationRequest, ModelBackend};
use crate::correctness::sample_parsed_scores;
use crate::dist::{LevelGrid, SampleScores, ScoreDistribution};
use crate::error::{Error, Result};
use similarity::SimilarityStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElicitationMethod {
    /// Continuous self-evaluation: repeated 0-5 self-grading.
    Cse,
    /// Pairwise self-consistency over resampled answers.
    Psc,
    /// Sentence likelihood from token logprobs.
    Sl,
    /// Binary self-evaluation: frequency of "true".
    Bse,
    /// Average self-consistency: mean token-F1, as a point mass.
    Asc,
    /// Pairwise token-F1 scores kept as a distribution.
    PscF1,
    /// Alpha-mixture of a self-evaluation and a self-consistency result.
    Hybrid,
}

impl ElicitationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ElicitationMethod::Cse => "cse",
            ElicitationMethod::Psc => "psc",
            ElicitationMethod::Sl => "sl",
            ElicitationMethod::Bse => "bse",
            ElicitationMethod::Asc => "asc",
            ElicitationMethod::PscF1 => "psc-f1",
            ElicitationMethod::Hybrid => "hybrid",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_lowercase().as_str() {
            "cse" => Ok(ElicitationMethod::Cse),
            "psc" => Ok(ElicitationMethod::Psc),
            "sl" => Ok(ElicitationMethod::Sl),
            "bse" => Ok(ElicitationMethod::Bse),
            "asc" => Ok(ElicitationMethod::Asc),
            "psc-f1" | "psc_f1" | "pscf1" => Ok(ElicitationMethod::PscF1),
            "hybrid" => Ok(ElicitationMethod::Hybrid),
            other => Err(Error::Config(format!(
                "unknown elicitation method '{other}'"
            ))),
        }
    }

    /// Consistency methods need a primary plus at least one comparison.
    pub fn needs_comparisons(&self) -> bool {
        matches!(
            self,
            ElicitationMethod::Psc | ElicitationMethod::Asc | ElicitationMethod::PscF1
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Naive,
    Split,
    Claim,
    Ner,
}

impl SimilarityKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_lowercase().as_str() {
            "naive" => Ok(SimilarityKind::Naive),
            "split" => Ok(SimilarityKind::Split),
            "claim" => Ok(SimilarityKind::Claim),
            "ner" => Ok(SimilarityKind::Ner),
            other => Err(Error::Config(format!(
                "unknown similarity strategy '{other}'"
            ))),
        }
    }
}

/// Variants of the sentence-likelihood computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlMode {
    /// Joint probability exp(sum of logprobs); collapses to the lowest
    /// level on long answers.
    #[default]
    Joint,
    /// Per-token geometric mean, exposed for ablation.
    GeometricMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElicitationSpec {
    pub method: ElicitationMethod,
    /// Total samples N: self-evaluations for CSE/BSE, answers (primary
    /// included) for the consistency methods.
    pub samples: u32,
    pub similarity: Option<SimilarityKind>,
    pub alpha: Option<f64>,
    pub temperature: f64,
    pub top_k: Option<u32>,
    #[serde(default)]
    pub sl_mode: SlMode,
}

impl ElicitationSpec {
    pub fn new(method: ElicitationMethod) -> Self {
        ElicitationSpec {
            method,
            samples: 10,
            similarity: None,
            alpha: None,
            temperature: 0.6,
            top_k: Some(10),
            sl_mode: SlMode::Joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.needs_comparisons() && self.samples < 2 {
            return Err(Error::Domain(format!(
                "{} needs at least 2 samples (primary plus one comparison), got {}",
                self.method.name(),
                self.samples
            )));
        }
        if self.samples < 1 {
            return Err(Error::Domain("elicitation needs samples >= 1".into()));
        }
        if let Some(alpha) = self.alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
            }
        }
        let temperature_ok = self.temperature > 0.0; // NaN fails this too
        if !temperature_ok && self.method != ElicitationMethod::Sl {
            return Err(Error::Domain(format!(
                "elicitation temperature {} must be > 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Raw samples plus the quantized confidence distribution for one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationResult {
    pub method: ElicitationMethod,
    /// Raw per-sample scores: self-evaluation scores, pairwise similarities,
    /// or the likelihood. Absent for mixtures, which have no raw samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleScores>,
    pub distribution: ScoreDistribution,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Task-level inputs shared by the elicitation calls.
#[derive(Clone)]
pub struct ElicitContext<'a> {
    pub grid: &'a LevelGrid,
    pub templates: &'a TemplateStore,
    pub task_instruction: &'a str,
    pub criterion: &'a str,
    pub examples: &'a str,
    /// Model name requested from the subject backend.
    pub model: &'a str,
}

/// Continuous self-evaluation: N reference-free self-gradings, collected
/// into an empirical distribution.
pub async fn cse(
    ctx: &ElicitContext<'_>,
    question: &str,
    answer: &str,
    spec: &ElicitationSpec,
    backend: &dyn ModelBackend,
) -> Result<ElicitationResult> {
    spec.validate()?;
    let prompt = ctx.templates.render(
        "self_eval",
        &[
            ("task_instruction", ctx.task_instruction),
            ("criterion", ctx.criterion),
            ("examples", ctx.examples),
            ("question", question),
            ("answer", answer),
        ],
    )?;
    let base = GenerationRequest::new(ctx.model, vec![ChatMessage::user(prompt)])
        .with_temperature(spec.temperature)
        .with_top_k(spec.top_k);
    let (scores, dropped) =
        sample_parsed_scores(backend, &base, 0, spec.samples, parse_score5).await;
    if scores.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} self-evaluations dropped",
            spec.samples
        )));
    }
    let samples = SampleScores::new(scores)?;
    let distribution = ScoreDistribution::from_samples(&samples, ctx.grid)?;
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} self-evaluation samples dropped"));
    }
    Ok(ElicitationResult {
        method: ElicitationMethod::Cse,
        samples: Some(samples),
        distribution,
        comparison_answers: Vec::new(),
        warnings,
    })
}

/// Binary self-evaluation: N true/false verdicts; the frequency of "true"
/// becomes mass at 1.0, the rest at 0.
pub async fn baseline_bse(
    ctx: &ElicitContext<'_>,
    question: &str,
    answer: &str,
    spec: &ElicitationSpec,
    backend: &dyn ModelBackend,
) -> Result<ElicitationResult> {
    spec.validate()?;
    let prompt = ctx.templates.render(
        "binary_self_eval",
        &[("question", question), ("answer", answer)],
    )?;
    let base = GenerationRequest::new(ctx.model, vec![ChatMessage::user(prompt)])
        .with_temperature(spec.temperature)
        .with_top_k(spec.top_k);
    let (verdicts, dropped) =
        sample_parsed_scores(backend, &base, 0, spec.samples, parse_true_false).await;
    if verdicts.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} binary self-evaluations dropped",
            spec.samples
        )));
    }
    let raw: Vec<f64> = verdicts.iter().map(|v| f64::from(u8::from(*v))).collect();
    let samples = SampleScores::new(raw)?;
    let distribution = ScoreDistribution::from_samples(&samples, ctx.grid)?;
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} binary self-evaluation samples dropped"));
    }
    Ok(ElicitationResult {
        method: ElicitationMethod::Bse,
        samples: Some(samples),
        distribution,
        comparison_answers: Vec::new(),
        warnings,
    })
}

/// Sentence likelihood from token logprobs, as a point mass.
pub fn baseline_sl(
    grid: &LevelGrid,
    _answer: &str,
    token_logprobs: &[f64],
    mode: SlMode,
) -> Result<ElicitationResult> {
    if token_logprobs.is_empty() {
        return Err(Error::Capability(
            "token logprobs (required by the sentence-likelihood baseline)".into(),
        ));
    }
    let sum: f64 = token_logprobs.iter().sum();
    let likelihood = match mode {
        SlMode::Joint => sum.exp(),
        SlMode::GeometricMean => (sum / token_logprobs.len() as f64).exp(),
    };
    let likelihood = likelihood.clamp(0.0, 1.0);
    let samples = SampleScores::new(vec![likelihood])?;
    Ok(ElicitationResult {
        method: ElicitationMethod::Sl,
        samples: Some(samples),
        distribution: ScoreDistribution::point_mass(grid, likelihood)?,
        comparison_answers: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Resample `count` alternative answers from the same generation prompt.
/// Sample indices start at 1 because the primary answer was sample 0.
/// Failed samples are dropped; at least one must survive.
pub async fn sample_comparison_answers(
    backend: &dyn ModelBackend,
    gen_request: &GenerationRequest,
    count: u32,
) -> Result<(Vec<String>, u32)> {
    let responses = crate::backends::generate_samples(backend, gen_request, 1, count).await;
    let mut answers = Vec::with_capacity(responses.len());
    let mut dropped = 0u32;
    for resp in responses {
        match resp {
            Ok(r) => answers.push(r.text),
            Err(e) => {
                tracing::warn!(%e, "comparison sample failed; dropping pair");
                dropped += 1;
            }
        }
    }
    if answers.is_empty() {
        return Err(Error::Backend(
            "every comparison answer failed to generate".into(),
        ));
    }
    Ok((answers, dropped))
}

/// Pairwise self-consistency over already-sampled comparison answers: the
/// N-1 similarity scores form the confidence distribution.
pub async fn psc_from_comparisons(
    ctx: &ElicitContext<'_>,
    question: &str,
    primary: &str,
    comparisons: &[String],
    sim: &dyn SimilarityStrategy,
) -> Result<ElicitationResult> {
    if comparisons.is_empty() {
        return Err(Error::Precondition(
            "pairwise self-consistency needs at least one comparison answer".into(),
        ));
    }
    let scored = futures::future::join_all(
        comparisons
            .iter()
            .map(|other| sim.score(question, primary, other)),
    )
    .await;
    let mut raw = Vec::with_capacity(comparisons.len());
    let mut warnings = Vec::new();
    let mut dropped = 0u32;
    for outcome in scored {
        match outcome {
            Ok(score) => {
                raw.push(score.value);
                warnings.extend(score.warnings);
            }
            Err(e) => {
                tracing::warn!(%e, "similarity scoring failed; dropping pair");
                dropped += 1;
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::Evaluation(
            "every similarity pair was dropped".into(),
        ));
    }
    if dropped > 0 {
        warnings.push(format!("{dropped} similarity pairs dropped"));
    }
    let samples = SampleScores::new(raw)?;
    let distribution = ScoreDistribution::from_samples(&samples, ctx.grid)?;
    Ok(ElicitationResult {
        method: ElicitationMethod::Psc,
        samples: Some(samples),
        distribution,
        comparison_answers: comparisons.to_vec(),
        warnings,
    })
}

/// Full pairwise self-consistency: sample N-1 comparison answers at the
/// spec temperature, then score them against the primary.
pub async fn psc(
    ctx: &ElicitContext<'_>,
    question: &str,
    primary: &str,
    gen_request: &GenerationRequest,
    spec: &ElicitationSpec,
    backend: &dyn ModelBackend,
    sim: &dyn SimilarityStrategy,
) -> Result<ElicitationResult> {
    spec.validate()?;
    let request = gen_request
        .clone()
        .with_temperature(spec.temperature)
        .with_top_k(spec.top_k);
    let (comparisons, dropped) =
        sample_comparison_answers(backend, &request, spec.samples - 1).await?;
    let mut result = psc_from_comparisons(ctx, question, primary, &comparisons, sim).await?;
    if dropped > 0 {
        result
            .warnings
            .push(format!("{dropped} comparison samples dropped"));
    }
    Ok(result)
}

/// Average self-consistency: mean token-F1 against the comparisons, as a
/// point mass.
pub fn asc_from_comparisons(
    grid: &LevelGrid,
    primary: &str,
    comparisons: &[String],
) -> Result<ElicitationResult> {
    let raw = pairwise_token_f1(primary, comparisons)?;
    let samples = SampleScores::new(raw)?;
    let mean = samples.mean();
    Ok(ElicitationResult {
        method: ElicitationMethod::Asc,
        samples: Some(samples),
        distribution: ScoreDistribution::point_mass(grid, mean)?,
        comparison_answers: comparisons.to_vec(),
        warnings: Vec::new(),
    })
}

/// Pairwise token-F1 scores kept as an empirical distribution.
pub fn psc_f1_from_comparisons(
    grid: &LevelGrid,
    primary: &str,
    comparisons: &[String],
) -> Result<ElicitationResult> {
    let raw = pairwise_token_f1(primary, comparisons)?;
    let samples = SampleScores::new(raw)?;
    let distribution = ScoreDistribution::from_samples(&samples, grid)?;
    Ok(ElicitationResult {
        method: ElicitationMethod::PscF1,
        samples: Some(samples),
        distribution,
        comparison_answers: comparisons.to_vec(),
        warnings: Vec::new(),
    })
}

fn pairwise_token_f1(primary: &str, comparisons: &[String]) -> Result<Vec<f64>> {
    if comparisons.is_empty() {
        return Err(Error::Precondition(
            "consistency baselines need at least one comparison answer".into(),
        ));
    }
    Ok(comparisons
        .iter()
        .map(|other| similarity::token_f1(primary, other))
        .collect())
}

/// Average self-consistency with its own sampling pass.
pub async fn baseline_asc(
    ctx: &ElicitContext<'_>,
    _question: &str,
    primary: &str,
    gen_request: &GenerationRequest,
    spec: &ElicitationSpec,
    backend: &dyn ModelBackend,
) -> Result<ElicitationResult> {
    spec.validate()?;
    let request = gen_request
        .clone()
        .with_temperature(spec.temperature)
        .with_top_k(spec.top_k);
    let (comparisons, _) = sample_comparison_answers(backend, &request, spec.samples - 1).await?;
    asc_from_comparisons(ctx.grid, primary, &comparisons)
}

/// Pairwise token-F1 baseline with its own sampling pass.
pub async fn baseline_psc_f1(
    ctx: &ElicitContext<'_>,
    _question: &str,
    primary: &str,
    gen_request: &GenerationRequest,
    spec: &ElicitationSpec,
    backend: &dyn ModelBackend,
) -> Result<ElicitationResult> {
    spec.validate()?;
    let request = gen_request
        .clone()
        .with_temperature(spec.temperature)
        .with_top_k(spec.top_k);
    let (comparisons, _) = sample_comparison_answers(backend, &request, spec.samples - 1).await?;
    psc_f1_from_comparisons(ctx.grid, primary, &comparisons)
}

/// Alpha-mixture of a self-evaluation and a self-consistency distribution:
/// `alpha * eval + (1 - alpha) * consist`. The mixture has no raw samples.
pub fn hybrid(
    eval_result: &ElicitationResult,
    consist_result: &ElicitationResult,
    alpha: f64,
) -> Result<ElicitationResult> {
    let distribution = eval_result
        .distribution
        .mix(&consist_result.distribution, alpha)?;
    Ok(ElicitationResult {
        method: ElicitationMethod::Hybrid,
        samples: None,
        distribution,
        comparison_answers: Vec::new(),
        warnings: Vec::new(),
    })
}
