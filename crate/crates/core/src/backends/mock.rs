//! Deterministic scripted model stand-in.
//!
//! A fixture file declares rules matched against the rendered prompt; the
//! first matching rule answers, either from a scripted response list
//! (indexed by `sample_index`) or from a seeded generator. A fixed fixture
//! plus seed reproduces byte-identical pipeline outputs, which is what the
//! end-to-end determinism tests lean on.

use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerationRequest, GenerationResponse, ModelBackend, TokenUsage};
use crate::error::{Error, Result};

/// Procedural response generators. All derive their output from a SHA-256
/// hash of (seed, prompt, sample index), so they are stable across runs,
/// platforms, and toolchain versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockGenerator {
    /// "Score: <k>/5" with k = hash % 6.
    Score5,
    /// "Similarity score: <k>/5".
    Similarity5,
    /// "Yes." / "No." by hash parity.
    YesNo,
    /// "True." / "False." by hash parity.
    TrueFalse,
    /// Reads the Sentence/Response fields of a split-similarity prompt and
    /// answers yes iff the sentence appears verbatim (case-insensitive) in
    /// the response.
    EntailmentEcho,
    /// A short deterministic pseudo-answer.
    Answer,
    /// A comma-separated list of 3-8 entity names from a fixed pool.
    EntityList,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    /// Substring matched against the full rendered prompt.
    pub contains: String,
    /// Scripted responses, cycled by `sample_index`. Takes precedence over
    /// `generator` when non-empty.
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub generator: Option<MockGenerator>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Per-token probability backing synthetic logprobs.
    #[serde(default = "default_token_prob")]
    pub token_prob: f64,
    #[serde(default = "default_true")]
    pub supports_logprobs: bool,
}

fn default_token_prob() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl Default for MockFixture {
    fn default() -> Self {
        MockFixture {
            seed: 0,
            rules: Vec::new(),
            token_prob: default_token_prob(),
            supports_logprobs: true,
        }
    }
}

impl MockFixture {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad mock fixture {path:?}: {e}")))
    }
}

pub struct MockBackend {
    id: String,
    fixture: MockFixture,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, fixture: MockFixture) -> Self {
        MockBackend {
            id: id.into(),
            fixture,
        }
    }

    pub fn from_fixture_file(id: impl Into<String>, path: &Path) -> Result<Self> {
        Ok(MockBackend::new(id, MockFixture::from_file(path)?))
    }

    /// Convenience for tests: one rule per (match, responses) pair.
    pub fn scripted(id: impl Into<String>, rules: Vec<(&str, Vec<&str>)>) -> Self {
        let fixture = MockFixture {
            rules: rules
                .into_iter()
                .map(|(contains, responses)| MockRule {
                    contains: contains.to_string(),
                    responses: responses.into_iter().map(str::to_string).collect(),
                    generator: None,
                })
                .collect(),
            ..MockFixture::default()
        };
        MockBackend::new(id, fixture)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.fixture.seed = seed;
        self
    }

    fn hash(&self, prompt: &str, index: u32) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.fixture.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn generate_text(&self, generator: MockGenerator, prompt: &str, index: u32) -> String {
        let h = self.hash(prompt, index);
        match generator {
            MockGenerator::Score5 => format!("Score: {}/5", h % 6),
            MockGenerator::Similarity5 => format!("Similarity score: {}/5", h % 6),
            MockGenerator::YesNo => {
                if h.is_multiple_of(2) {
                    "Yes.".to_string()
                } else {
                    "No.".to_string()
                }
            }
            MockGenerator::TrueFalse => {
                if h.is_multiple_of(2) {
                    "True.".to_string()
                } else {
                    "False.".to_string()
                }
            }
            MockGenerator::EntailmentEcho => {
                let sentence = extract_between(prompt, "Sentence: ", "\n\nResponse:");
                let response = extract_between(prompt, "Response: ", "\n\nVerify");
                match (sentence, response) {
                    (Some(s), Some(r))
                        if r.to_lowercase().contains(s.trim().to_lowercase().as_str()) =>
                    {
                        "Yes.".to_string()
                    }
                    _ => "No.".to_string(),
                }
            }
            MockGenerator::Answer => {
                let len = 8 + (h % 12) as usize;
                let words: Vec<&str> = (0..len)
                    .map(|i| {
                        let hi = self.hash(prompt, index.wrapping_add(1000 + i as u32));
                        LEXICON[(hi % LEXICON.len() as u64) as usize]
                    })
                    .collect();
                let mut text = words.join(" ");
                text.push('.');
                let mut chars = text.chars();
                match chars.next() {
                    Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                    None => text,
                }
            }
            MockGenerator::EntityList => {
                let count = 3 + (h % 6) as usize;
                let mut picked = Vec::with_capacity(count);
                let mut step = 0u32;
                while picked.len() < count {
                    let hi = self.hash(prompt, index.wrapping_add(2000 + step));
                    let name = ENTITY_POOL[(hi % ENTITY_POOL.len() as u64) as usize];
                    if !picked.contains(&name) {
                        picked.push(name);
                    }
                    step += 1;
                }
                format!("{}.", picked.join(", "))
            }
        }
    }
}

fn extract_between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    let to = rest.find(end)?;
    Some(&rest[..to])
}

#[async_trait]
impl ModelBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_logprobs(&self) -> bool {
        self.fixture.supports_logprobs
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        req.validate()?;
        if req.want_logprobs && !self.fixture.supports_logprobs {
            return Err(Error::Capability("token logprobs".into()));
        }
        let prompt: String = req
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        // temperature 0 is greedy: every sample index yields the same text
        let index = if req.temperature == 0.0 {
            0
        } else {
            req.sample_index
        };
        let rule = self
            .fixture
            .rules
            .iter()
            .find(|r| prompt.contains(&r.contains));
        let text = match rule {
            Some(rule) if !rule.responses.is_empty() => {
                rule.responses[index as usize % rule.responses.len()].clone()
            }
            Some(rule) => {
                let generator = rule.generator.unwrap_or(MockGenerator::Answer);
                self.generate_text(generator, &prompt, index)
            }
            None => self.generate_text(MockGenerator::Answer, &prompt, index),
        };
        let completion_tokens = text.split_whitespace().count() as u32;
        let token_logprobs = req
            .want_logprobs
            .then(|| vec![self.fixture.token_prob.ln(); completion_tokens.max(1) as usize]);
        Ok(GenerationResponse {
            text,
            token_logprobs,
            usage: TokenUsage {
                prompt_tokens: prompt.split_whitespace().count() as u32,
                completion_tokens,
            },
            cached: false,
        })
    }
}

const LEXICON: &[&str] = &[
    "the", "model", "answer", "question", "because", "history", "river", "city", "first", "second",
    "known", "early", "group", "people", "work", "science", "between", "several", "region",
    "common", "through", "systems", "studies", "result", "records", "during", "century", "music",
    "light", "water", "energy", "process", "language", "theory",
];

const ENTITY_POOL: &[&str] = &[
    "Alderbrook",
    "Briarfield",
    "Cresthaven",
    "Dunmore",
    "Eastvale",
    "Fernwood",
    "Glenround",
    "Hartwell",
    "Ironbridge",
    "Juniper Flats",
    "Kestrel Bay",
    "Larkspur",
    "Mossgate",
    "Northwick",
    "Oakhurst",
    "Pinecroft",
    "Quarry Hill",
    "Ravenswood",
    "Stonefield",
    "Thornbury",
    "Umberton",
    "Violet Grove",
    "Westmere",
    "Yarrowdale",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ChatMessage;

    fn req(prompt: &str, index: u32, temperature: f64) -> GenerationRequest {
        GenerationRequest::new("mock-model", vec![ChatMessage::user(prompt)])
            .with_temperature(temperature)
            .with_sample_index(index)
    }

    #[tokio::test]
    async fn scripted_responses_follow_sample_index() {
        let backend = MockBackend::scripted("mock", vec![("grade this", vec!["r1", "r2"])]);
        let r0 = backend
            .generate(&req("please grade this", 0, 0.6))
            .await
            .unwrap();
        let r1 = backend
            .generate(&req("please grade this", 1, 0.6))
            .await
            .unwrap();
        assert_eq!(r0.text, "r1");
        assert_eq!(r1.text, "r2");
        // cycles past the end
        let r2 = backend
            .generate(&req("please grade this", 2, 0.6))
            .await
            .unwrap();
        assert_eq!(r2.text, "r1");
    }

    #[tokio::test]
    async fn temperature_zero_is_greedy() {
        let backend = MockBackend::scripted("mock", vec![("grade", vec!["a", "b", "c"])]);
        for index in 0..5 {
            let r = backend.generate(&req("grade", index, 0.0)).await.unwrap();
            assert_eq!(r.text, "a");
        }
    }

    #[tokio::test]
    async fn generators_are_deterministic() {
        let fixture = MockFixture {
            seed: 7,
            rules: vec![MockRule {
                contains: "score".into(),
                responses: vec![],
                generator: Some(MockGenerator::Score5),
            }],
            ..MockFixture::default()
        };
        let backend = MockBackend::new("mock", fixture);
        let a = backend
            .generate(&req("your score please", 3, 0.6))
            .await
            .unwrap();
        let b = backend
            .generate(&req("your score please", 3, 0.6))
            .await
            .unwrap();
        assert_eq!(a, b);
        assert!(crate::backends::parse::parse_score5(&a.text).is_ok());
        // different samples can differ, different seeds generally do
        let other = MockBackend::new(
            "mock",
            MockFixture {
                seed: 8,
                rules: vec![MockRule {
                    contains: "score".into(),
                    responses: vec![],
                    generator: Some(MockGenerator::Score5),
                }],
                ..MockFixture::default()
            },
        );
        let c = other
            .generate(&req("your score please", 3, 0.6))
            .await
            .unwrap();
        // both parse even if they collide on the same k
        assert!(crate::backends::parse::parse_score5(&c.text).is_ok());
    }

    #[tokio::test]
    async fn entailment_echo_checks_containment() {
        let fixture = MockFixture {
            rules: vec![MockRule {
                contains: "ascertain".to_string(),
                responses: vec![],
                generator: Some(MockGenerator::EntailmentEcho),
            }],
            ..MockFixture::default()
        };
        let backend = MockBackend::new("mock", fixture);
        let present = "please ascertain\n\nSentence: The sky is blue\n\nResponse: Indeed the sky is blue today.\n\nVerify and answer.";
        let absent = "please ascertain\n\nSentence: Water is dry\n\nResponse: The sky is blue.\n\nVerify and answer.";
        assert_eq!(
            backend.generate(&req(present, 0, 0.0)).await.unwrap().text,
            "Yes."
        );
        assert_eq!(
            backend.generate(&req(absent, 0, 0.0)).await.unwrap().text,
            "No."
        );
    }

    #[tokio::test]
    async fn logprobs_follow_the_capability_flag() {
        let backend = MockBackend::new("mock", MockFixture::default());
        let r = backend
            .generate(&req("hi", 0, 0.0).with_logprobs(true))
            .await
            .unwrap();
        let lps = r.token_logprobs.unwrap();
        assert!(!lps.is_empty());
        assert!((lps[0] - 0.9f64.ln()).abs() < 1e-12);

        let no_lp = MockBackend::new(
            "mock",
            MockFixture {
                supports_logprobs: false,
                ..MockFixture::default()
            },
        );
        assert!(matches!(
            no_lp.generate(&req("hi", 0, 0.0).with_logprobs(true)).await,
            Err(Error::Capability(_))
        ));
    }

    #[tokio::test]
    async fn entity_list_responses_are_comma_separated() {
        let fixture = MockFixture {
            rules: vec![MockRule {
                contains: "Question:".into(),
                responses: vec![],
                generator: Some(MockGenerator::EntityList),
            }],
            ..MockFixture::default()
        };
        let backend = MockBackend::new("mock", fixture);
        let r = backend
            .generate(&req("Question: which towns?", 1, 0.6))
            .await
            .unwrap();
        assert!(r.text.contains(','));
        assert!(r.text.ends_with('.'));
    }
}
