//! Similarity between two long-form answers.
//!
//! Four strategies of increasing granularity: whole-answer judgment by an
//! LLM (naive), sentence-level entailment checks (split), factual-claim
//! checks (claim), and named-entity overlap (ner). Claim detection and
//! entity extraction are pluggable; the defaults are rule-based so the
//! stack runs without external model weights.

use std::sync::Arc;

use async_trait::async_trait;

use crate::backends::parse::{parse_similarity5, parse_yes_no};
use crate::backends::template::TemplateStore;
use crate::backends::{ChatMessage, ModelBackend, ModelHandle};
use crate::correctness::{harmonic_f1, sample_one_parsed, EntityList};
use crate::error::{Error, Result};

/// A similarity value in `[0, 1]` plus any non-fatal notes produced while
/// computing it (e.g. the first answer yielded no entities).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub warnings: Vec<String>,
}

impl SimilarityScore {
    pub fn of(value: f64) -> Self {
        SimilarityScore {
            value,
            warnings: Vec::new(),
        }
    }
}

/// Pairwise answer-similarity measure used by the self-consistency methods.
#[async_trait]
pub trait SimilarityStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    async fn score(&self, question: &str, a1: &str, a2: &str) -> Result<SimilarityScore>;
}

/// The judge model consulted by LLM-backed strategies, with its templates.
/// Yes/no entailment verdicts run greedily (temperature 0).
#[derive(Clone)]
pub struct Judge {
    pub handle: ModelHandle,
    pub templates: Arc<TemplateStore>,
}

impl Judge {
    pub fn new(handle: ModelHandle, templates: Arc<TemplateStore>) -> Self {
        Judge { handle, templates }
    }

    fn backend(&self) -> &dyn ModelBackend {
        self.handle.backend.as_ref()
    }
}

/// Whole-answer similarity judged by one LLM call, parsed from
/// "Similarity score: <k>/5".
pub struct NaiveSimilarity {
    judge: Judge,
}

impl NaiveSimilarity {
    pub fn new(judge: Judge) -> Self {
        NaiveSimilarity { judge }
    }
}

#[async_trait]
impl SimilarityStrategy for NaiveSimilarity {
    fn name(&self) -> &'static str {
        "naive"
    }

    async fn score(&self, question: &str, a1: &str, a2: &str) -> Result<SimilarityScore> {
        let prompt = self.judge.templates.render(
            "similarity_naive",
            &[("question", question), ("answer1", a1), ("answer2", a2)],
        )?;
        let req = self
            .judge
            .handle
            .request(vec![ChatMessage::user(prompt)])
            .with_temperature(0.0);
        match sample_one_parsed(self.judge.backend(), &req, 0, parse_similarity5).await {
            Some(value) => Ok(SimilarityScore::of(value)),
            None => Err(Error::Parse(
                "similarity judge produced no parseable score".into(),
            )),
        }
    }
}

/// Split the first answer into sentences and ask, per sentence, whether a
/// similar statement is present in the second answer; the score is the
/// fraction of yes verdicts. Unparseable verdicts count as no.
pub struct SplitSimilarity {
    judge: Judge,
}

impl SplitSimilarity {
    pub fn new(judge: Judge) -> Self {
        SplitSimilarity { judge }
    }

    pub(crate) async fn fraction_present(&self, statements: &[String], a2: &str) -> Result<f64> {
        let verdicts = futures::future::join_all(statements.iter().map(|sentence| {
            let judge = &self.judge;
            async move {
                let prompt = judge.templates.render(
                    "similarity_split",
                    &[("sentence", sentence.as_str()), ("response", a2)],
                )?;
                let req = judge
                    .handle
                    .request(vec![ChatMessage::user(prompt)])
                    .with_temperature(0.0);
                let resp = judge.backend().generate(&req).await?;
                // an unreadable verdict is a no, not an error
                Ok::<bool, Error>(parse_yes_no(&resp.text).unwrap_or(false))
            }
        }))
        .await;
        let mut present = 0usize;
        for verdict in verdicts {
            if verdict? {
                present += 1;
            }
        }
        Ok(present as f64 / statements.len() as f64)
    }
}

#[async_trait]
impl SimilarityStrategy for SplitSimilarity {
    fn name(&self) -> &'static str {
        "split"
    }

    async fn score(&self, _question: &str, a1: &str, a2: &str) -> Result<SimilarityScore> {
        let sentences = split_sentences(a1);
        if sentences.is_empty() {
            return Err(Error::Domain(
                "first answer has no sentences to compare".into(),
            ));
        }
        Ok(SimilarityScore::of(
            self.fraction_present(&sentences, a2).await?,
        ))
    }
}

/// Check only the factual-claim sentences of the first answer; falls back to
/// the sentence-split strategy when no claims are detected.
pub struct ClaimSimilarity {
    split: SplitSimilarity,
    detector: Arc<dyn ClaimDetector>,
}

impl ClaimSimilarity {
    pub fn new(judge: Judge, detector: Arc<dyn ClaimDetector>) -> Self {
        ClaimSimilarity {
            split: SplitSimilarity::new(judge),
            detector,
        }
    }
}

#[async_trait]
impl SimilarityStrategy for ClaimSimilarity {
    fn name(&self) -> &'static str {
        "claim"
    }

    async fn score(&self, question: &str, a1: &str, a2: &str) -> Result<SimilarityScore> {
        let claims = self.detector.claims(a1);
        if claims.is_empty() {
            let mut score = self.split.score(question, a1, a2).await?;
            score
                .warnings
                .push("no factual claims detected; fell back to sentence split".into());
            return Ok(score);
        }
        Ok(SimilarityScore::of(
            self.split.fraction_present(&claims, a2).await?,
        ))
    }
}

/// Entity overlap relative to the first answer's entities:
/// `|E(a1) & E(a2)| / |E(a1)|`, case-insensitive exact match. Asymmetric by
/// construction. No entities in the first answer scores 0 with a warning.
pub struct NerSimilarity {
    extractor: Arc<dyn EntityExtractor>,
}

impl NerSimilarity {
    pub fn new(extractor: Arc<dyn EntityExtractor>) -> Self {
        NerSimilarity { extractor }
    }
}

#[async_trait]
impl SimilarityStrategy for NerSimilarity {
    fn name(&self) -> &'static str {
        "ner"
    }

    async fn score(&self, _question: &str, a1: &str, a2: &str) -> Result<SimilarityScore> {
        let e1 = self.extractor.entities(a1).await?;
        if e1.is_empty() {
            tracing::warn!("no entities found in the first answer; similarity defaults to 0");
            return Ok(SimilarityScore {
                value: 0.0,
                warnings: vec!["no entities in first answer".into()],
            });
        }
        let e2 = self.extractor.entities(a2).await?;
        Ok(SimilarityScore::of(
            e1.overlap(&e2) as f64 / e1.len() as f64,
        ))
    }
}

/// Token-level F1 similarity (multiset overlap of lowercased,
/// punctuation-trimmed whitespace tokens).
pub struct TokenF1Similarity;

#[async_trait]
impl SimilarityStrategy for TokenF1Similarity {
    fn name(&self) -> &'static str {
        "token-f1"
    }

    async fn score(&self, _question: &str, a1: &str, a2: &str) -> Result<SimilarityScore> {
        Ok(SimilarityScore::of(token_f1(a1, a2)))
    }
}

/// F1 over token multisets. Both strings empty scores 1 by convention; one
/// empty scores 0.
pub fn token_f1(a1: &str, a2: &str) -> f64 {
    let t1 = tokenize(a1);
    let t2 = tokenize(a2);
    match (t1.is_empty(), t2.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts = std::collections::HashMap::<&str, (usize, usize)>::new();
    for tok in &t1 {
        counts.entry(tok).or_default().0 += 1;
    }
    for tok in &t2 {
        counts.entry(tok).or_default().1 += 1;
    }
    let overlap: usize = counts.values().map(|(a, b)| a.min(b)).sum();
    let precision = overlap as f64 / t1.len() as f64;
    let recall = overlap as f64 / t2.len() as f64;
    harmonic_f1(precision, recall)
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Rule-based sentence splitter: terminal punctuation (. ! ?) followed by
/// whitespace or end of text. Abbreviations are not special-cased; a
/// mis-split just costs an extra yes/no call.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '.' || c == '!' || c == '?' {
            let at_end = i + 1 >= bytes.len();
            let before_space = !at_end && (bytes[i + 1] as char).is_whitespace();
            if at_end || before_space {
                let sentence = text[start..=i].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = i + 1;
            }
        }
        i += 1;
    }
    let tail = text[start.min(text.len())..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Extracts the factual-claim sentences of a text.
pub trait ClaimDetector: Send + Sync {
    fn name(&self) -> &'static str;
    fn claims(&self, text: &str) -> Vec<String>;
}

/// Default rule-based detector: a sentence counts as a factual claim when it
/// contains a digit, a proper-noun-cased bigram, or a copular verb.
pub struct HeuristicClaimDetector;

const COPULAR_VERBS: &[&str] = &["is", "are", "was", "were", "am", "be", "been", "being"];

impl ClaimDetector for HeuristicClaimDetector {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn claims(&self, text: &str) -> Vec<String> {
        split_sentences(text)
            .into_iter()
            .filter(|sentence| {
                if sentence.chars().any(|c| c.is_ascii_digit()) {
                    return true;
                }
                let words: Vec<&str> = sentence.split_whitespace().collect();
                if words.iter().any(|w| {
                    COPULAR_VERBS.contains(
                        &w.to_lowercase()
                            .trim_matches(|c: char| c.is_ascii_punctuation()),
                    )
                }) {
                    return true;
                }
                // proper-noun-cased bigram, ignoring the sentence-initial word
                words
                    .windows(2)
                    .skip(1)
                    .any(|w| starts_uppercase(w[0]) && starts_uppercase(w[1]))
            })
            .collect()
    }
}

fn starts_uppercase(word: &str) -> bool {
    word.chars()
        .find(|c| c.is_alphabetic())
        .is_some_and(|c| c.is_uppercase())
}

/// Extracts entity surface forms from a text.
#[async_trait]
pub trait EntityExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    async fn entities(&self, text: &str) -> Result<EntityList>;
}

/// Splits on commas; the right default for entity-list answers.
pub struct CommaSplitExtractor;

#[async_trait]
impl EntityExtractor for CommaSplitExtractor {
    fn name(&self) -> &'static str {
        "comma-split"
    }

    async fn entities(&self, text: &str) -> Result<EntityList> {
        Ok(EntityList::from_comma_separated(text))
    }
}

/// Asks a model to list the entities, then parses the comma-separated reply.
pub struct PromptedEntityExtractor {
    judge: Judge,
}

impl PromptedEntityExtractor {
    pub fn new(judge: Judge) -> Self {
        PromptedEntityExtractor { judge }
    }
}

#[async_trait]
impl EntityExtractor for PromptedEntityExtractor {
    fn name(&self) -> &'static str {
        "prompted"
    }

    async fn entities(&self, text: &str) -> Result<EntityList> {
        let prompt = self
            .judge
            .templates
            .render("entity_extraction", &[("answer", text)])?;
        let req = self
            .judge
            .handle
            .request(vec![ChatMessage::user(prompt)])
            .with_temperature(0.0);
        let resp = self.judge.backend().generate(&req).await?;
        Ok(EntityList::new(resp.text.split(['\n', ',']).map(|e| {
            e.trim()
                .trim_end_matches('.')
                .trim_start_matches('-')
                .trim()
                .to_string()
        })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockBackend, MockFixture, MockGenerator, MockRule};

    fn judge_from(backend: MockBackend) -> Judge {
        Judge::new(
            ModelHandle::new(Arc::new(backend), "judge-model"),
            Arc::new(TemplateStore::builtin()),
        )
    }

    #[tokio::test]
    async fn naive_similarity_parses_the_judged_score() {
        for (resp, expected) in [
            ("Similarity score: 5/5", 1.0),
            ("Similarity score: 0/5", 0.0),
            ("Similarity score: 3/5 because they overlap partially.", 0.6),
        ] {
            let judge = judge_from(MockBackend::scripted(
                "judge",
                vec![("Similarity score", vec![resp])],
            ));
            let s = NaiveSimilarity::new(judge)
                .score("Q", "first answer", "second answer")
                .await
                .unwrap();
            assert_eq!(s.value, expected);
        }
    }

    #[tokio::test]
    async fn split_similarity_counts_yes_verdicts() {
        // three sentences, verdicts scripted by matching each sentence
        let backend = MockBackend::scripted(
            "judge",
            vec![
                ("Sentence: One fact here", vec!["Yes."]),
                ("Sentence: A second thing", vec!["no"]),
                ("Sentence: Third point", vec!["Yes, present."]),
            ],
        );
        let s = SplitSimilarity::new(judge_from(backend))
            .score(
                "Q",
                "One fact here. A second thing. Third point.",
                "whatever",
            )
            .await
            .unwrap();
        assert!((s.value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn split_similarity_on_identical_answers_with_echo_judge() {
        let fixture = MockFixture {
            rules: vec![MockRule {
                contains: "ascertain".into(),
                responses: vec![],
                generator: Some(MockGenerator::EntailmentEcho),
            }],
            ..MockFixture::default()
        };
        let answer = "The tower is tall. It was built early.";
        let s = SplitSimilarity::new(judge_from(MockBackend::new("judge", fixture)))
            .score("Q", answer, answer)
            .await
            .unwrap();
        assert_eq!(s.value, 1.0);
    }

    #[tokio::test]
    async fn split_similarity_rejects_empty_first_answer() {
        let s = SplitSimilarity::new(judge_from(MockBackend::scripted("judge", vec![])));
        assert!(matches!(
            s.score("Q", "   ", "other").await,
            Err(Error::Domain(_))
        ));
    }

    #[tokio::test]
    async fn unparseable_split_verdicts_count_as_no() {
        let backend = MockBackend::scripted(
            "judge",
            vec![("Sentence:", vec!["cannot say anything definitive"])],
        );
        let s = SplitSimilarity::new(judge_from(backend))
            .score("Q", "Lone sentence.", "other")
            .await
            .unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[tokio::test]
    async fn claim_similarity_checks_detected_claims() {
        // 4 claim sentences (each has a digit), 1 scripted as present
        let backend = MockBackend::scripted(
            "judge",
            vec![
                ("Sentence: Fact 1 stands", vec!["Yes."]),
                ("Sentence:", vec!["No."]),
            ],
        );
        let a1 = "Fact 1 stands. Fact 2 holds. Fact 3 waits. Fact 4 sits.";
        let s = ClaimSimilarity::new(judge_from(backend), Arc::new(HeuristicClaimDetector))
            .score("Q", a1, "other")
            .await
            .unwrap();
        assert!((s.value - 0.25).abs() < 1e-12);
    }

    #[tokio::test]
    async fn claim_similarity_falls_back_to_split_when_no_claims() {
        let backend = MockBackend::scripted("judge", vec![("Sentence:", vec!["Yes."])]);
        let judge = judge_from(backend);
        // no digits, no copular verb, no mid-sentence cased bigram
        let a1 = "Walk slowly onward.";
        assert!(HeuristicClaimDetector.claims(a1).is_empty());
        let claim = ClaimSimilarity::new(judge, Arc::new(HeuristicClaimDetector))
            .score("Q", a1, "other")
            .await
            .unwrap();
        assert_eq!(claim.value, 1.0);
        assert!(!claim.warnings.is_empty());
    }

    #[tokio::test]
    async fn ner_similarity_reproduces_the_reference_overlaps() {
        let ner = NerSimilarity::new(Arc::new(CommaSplitExtractor));
        let primary = "Al-Barka, Basilan, Isabela, Lamitan, Tipo-Tipo, Maluso, Sumisip.";
        let other1 = "Basilan, Isabela, Lamitan, Lantawan, Tipo-Tipo, Sumisip.";
        let other2 = "Basilan, Tipo-Tipo, Isabela City, Maluso, Sumisip, Tuburan.";
        let s1 = ner.score("Q", primary, other1).await.unwrap();
        let s2 = ner.score("Q", primary, other2).await.unwrap();
        assert!((s1.value - 5.0 / 7.0).abs() < 1e-12);
        assert!((s2.value - 4.0 / 7.0).abs() < 1e-12);
        let identity = ner.score("Q", primary, primary).await.unwrap();
        assert_eq!(identity.value, 1.0);
    }

    #[tokio::test]
    async fn ner_similarity_is_asymmetric() {
        let ner = NerSimilarity::new(Arc::new(CommaSplitExtractor));
        let a1 = "Al-Barka, Basilan, Isabela, Lamitan, Tipo-Tipo, Maluso, Sumisip";
        let a2 = "Basilan, Isabela, Lamitan, Lantawan, Tipo-Tipo, Sumisip";
        let forward = ner.score("Q", a1, a2).await.unwrap().value;
        let backward = ner.score("Q", a2, a1).await.unwrap().value;
        assert!((forward - 5.0 / 7.0).abs() < 1e-12);
        assert!((backward - 5.0 / 6.0).abs() < 1e-12);
        assert_ne!(forward, backward);
    }

    #[tokio::test]
    async fn ner_similarity_warns_on_empty_entities() {
        let ner = NerSimilarity::new(Arc::new(CommaSplitExtractor));
        let s = ner.score("Q", "   ", "Basilan").await.unwrap();
        assert_eq!(s.value, 0.0);
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("identical text here", "identical text here"), 1.0);
        assert!((token_f1("the cat sat", "the dog sat") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "something"), 0.0);
        // multiset semantics: repeated tokens only match min-count times
        assert!((token_f1("a a b", "a b b") - 2.0 / 3.0).abs() < 1e-12);
        // punctuation and case are stripped
        assert_eq!(token_f1("The cat, sat!", "the CAT sat"), 1.0);
    }

    #[test]
    fn sentence_splitter_handles_terminal_punctuation() {
        assert_eq!(
            split_sentences("One. Two! Three? Four"),
            vec!["One.", "Two!", "Three?", "Four"]
        );
        assert_eq!(
            split_sentences("No terminal punctuation"),
            vec!["No terminal punctuation"]
        );
        assert!(split_sentences("   ").is_empty());
        // a period not followed by whitespace does not split
        assert_eq!(
            split_sentences("pi is 3.14 roughly."),
            vec!["pi is 3.14 roughly."]
        );
    }

    #[test]
    fn claim_detector_rules() {
        let detector = HeuristicClaimDetector;
        // digit
        assert_eq!(
            detector.claims("It happened in 1990."),
            vec!["It happened in 1990."]
        );
        // copular verb
        assert_eq!(
            detector.claims("The sky is blue."),
            vec!["The sky is blue."]
        );
        // proper-noun bigram past the sentence start
        assert_eq!(
            detector.claims("They visited New York today."),
            vec!["They visited New York today."]
        );
        // none of the above
        assert!(detector.claims("Walk slowly onward.").is_empty());
    }

    #[tokio::test]
    async fn prompted_extractor_parses_list_replies() {
        let backend = MockBackend::scripted(
            "judge",
            vec![(
                "List every named entity",
                vec!["Basilan, Lamitan, Sumisip."],
            )],
        );
        let extractor = PromptedEntityExtractor::new(judge_from(backend));
        let entities = extractor.entities("some long answer").await.unwrap();
        assert_eq!(entities.entities(), &["Basilan", "Lamitan", "Sumisip"]);
    }
}
