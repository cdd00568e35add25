//! Declarative run configuration (TOML).
//!
//! One file maps tasks to their correctness method, similarity strategy,
//! sample counts, temperatures, and thresholds, and declares the reachable
//! backends. Unset task fields fall back to the defaults the experiments
//! used: 10 samples, temperature 0.6, top-K 10, three evaluator calls for
//! long-form QA and one for summarization, and the per-task similarity
//! strategies (asqa claim, qampari ner, eli5 naive, cnndm split).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correctness::CorrectnessMethod;
use crate::elicitation::{SimilarityKind, SlMode};
use crate::error::{Error, Result};
use crate::metrics::LabelMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub server: ServerConfig,
    pub paths: PathsConfig,
    /// Score levels of the grid; {0, 0.2, 0.4, 0.6, 0.8, 1.0} by default.
    pub grid: Vec<f64>,
    pub seed: u64,
    /// In-flight request cap per HTTP backend.
    pub concurrency: usize,
    pub ece: EceSettings,
    pub backends: BTreeMap<String, BackendConfig>,
    pub tasks: BTreeMap<String, TaskConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            server: ServerConfig::default(),
            paths: PathsConfig::default(),
            grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            seed: 0,
            concurrency: 8,
            ece: EceSettings::default(),
            backends: BTreeMap::new(),
            tasks: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
        let mut config: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {path:?}: {e}")))?;
        config.anchor_paths(path.parent().unwrap_or_else(|| Path::new(".")));
        Ok(config)
    }

    /// Resolve relative paths in the config against its own directory.
    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut self.paths.cache_dir);
        anchor(&mut self.paths.runs_dir);
        if let Some(dir) = &mut self.paths.templates_dir {
            anchor(dir);
        }
        for backend in self.backends.values_mut() {
            if let BackendConfig::Mock {
                fixture: Some(f), ..
            } = backend
            {
                anchor(f);
            }
        }
        for task in self.tasks.values_mut() {
            if let Some(f) = &mut task.exemplars_file {
                anchor(f);
            }
            if let Some(f) = &mut task.eval_examples_file {
                anchor(f);
            }
            if let Some(f) = &mut task.criterion_file {
                anchor(f);
            }
        }
    }

    pub fn task(&self, name: &str) -> TaskConfig {
        self.tasks.get(name).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub addr: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: "127.0.0.1:8089".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub cache_dir: PathBuf,
    pub runs_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            cache_dir: PathBuf::from(".calibrant/cache"),
            runs_dir: PathBuf::from(".calibrant/runs"),
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EceSettings {
    pub bins: usize,
    pub label_mode: LabelMode,
}

impl Default for EceSettings {
    fn default() -> Self {
        EceSettings {
            bins: 10,
            label_mode: LabelMode::Soft,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Deterministic scripted stand-in.
    Mock {
        #[serde(default)]
        fixture: Option<PathBuf>,
        #[serde(default)]
        seed: Option<u64>,
        /// Model name stamped into requests and cache keys.
        #[serde(default)]
        model: Option<String>,
    },
    /// OpenAI-compatible chat-completions server.
    Openai {
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_true")]
        top_k_supported: bool,
        #[serde(default)]
        supports_logprobs: bool,
        /// Model identifier requested from the server.
        model: Option<String>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Qa,
    Summarization,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub kind: Option<TaskKind>,
    pub correctness: Option<CorrectnessMethod>,
    /// Evaluator calls per answer; defaults by task kind (QA 3, summary 1).
    pub evaluations: Option<u32>,
    /// Backend id doing correctness evaluation; the subject backend if unset.
    pub evaluator: Option<String>,
    pub evaluator_model: Option<String>,
    pub similarity: Option<SimilarityKind>,
    /// Backend id judging similarity / entailment; the subject if unset.
    pub judge: Option<String>,
    pub judge_model: Option<String>,
    pub samples: Option<u32>,
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub alpha: Option<f64>,
    pub tau_s: Option<f64>,
    pub success_threshold: Option<f64>,
    pub sl_mode: Option<SlMode>,
    pub task_instruction: Option<String>,
    /// Few-shot exemplars for generation (JSONL of question/answer pairs).
    pub exemplars_file: Option<PathBuf>,
    /// Text block substituted for {examples} in evaluation templates.
    pub eval_examples_file: Option<PathBuf>,
    /// Criteria text; falls back to the builtin criteria/<task> template.
    pub criterion_file: Option<PathBuf>,
}

impl TaskConfig {
    pub fn kind_for(&self, task_name: &str) -> TaskKind {
        self.kind.unwrap_or(match task_name {
            "cnndm" => TaskKind::Summarization,
            _ => TaskKind::Qa,
        })
    }

    pub fn evaluations_for(&self, kind: TaskKind) -> u32 {
        self.evaluations.unwrap_or(match kind {
            TaskKind::Qa => 3,
            TaskKind::Summarization => 1,
        })
    }

    pub fn similarity_for(&self, task_name: &str) -> SimilarityKind {
        self.similarity.unwrap_or(match task_name {
            "asqa" => SimilarityKind::Claim,
            "qampari" => SimilarityKind::Ner,
            "cnndm" => SimilarityKind::Split,
            _ => SimilarityKind::Naive,
        })
    }

    pub fn samples_or_default(&self) -> u32 {
        self.samples.unwrap_or(10)
    }

    pub fn temperature_or_default(&self) -> f64 {
        self.temperature.unwrap_or(0.6)
    }

    pub fn top_k_or_default(&self) -> Option<u32> {
        Some(self.top_k.unwrap_or(10))
    }
}
