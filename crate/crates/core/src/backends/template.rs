//! Prompt templates with named `{placeholder}` substitution.
//!
//! The shipped defaults (evaluation, self-evaluation, similarity comparison,
//! task criteria) are compiled into the binary; a templates directory can
//! override any of them by file stem. Substitution is verbatim: no escaping,
//! no whitespace games, and a placeholder left unbound is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

/// Built-in template names and their sources.
const BUILTINS: &[(&str, &str)] = &[
    (
        "correctness_eval",
        include_str!("../../templates/correctness_eval.txt"),
    ),
    ("self_eval", include_str!("../../templates/self_eval.txt")),
    (
        "similarity_naive",
        include_str!("../../templates/similarity_naive.txt"),
    ),
    (
        "similarity_split",
        include_str!("../../templates/similarity_split.txt"),
    ),
    (
        "summarization_eval",
        include_str!("../../templates/summarization_eval.txt"),
    ),
    (
        "binary_self_eval",
        include_str!("../../templates/binary_self_eval.txt"),
    ),
    (
        "entity_extraction",
        include_str!("../../templates/entity_extraction.txt"),
    ),
    (
        "generation_qa",
        include_str!("../../templates/generation_qa.txt"),
    ),
    (
        "generation_qa_context",
        include_str!("../../templates/generation_qa_context.txt"),
    ),
    (
        "generation_summarization",
        include_str!("../../templates/generation_summarization.txt"),
    ),
    (
        "criteria/asqa",
        include_str!("../../templates/criteria/asqa.txt"),
    ),
    (
        "criteria/eli5",
        include_str!("../../templates/criteria/eli5.txt"),
    ),
    (
        "criteria/qampari",
        include_str!("../../templates/criteria/qampari.txt"),
    ),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").unwrap())
}

/// Substitute `{name}` placeholders in `template` from `bindings`.
///
/// Every placeholder present in the template must be bound; extra bindings
/// are ignored.
pub fn render_template(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut last = 0usize;
    for caps in placeholder_re().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = caps.get(1).unwrap().as_str();
        let value = map.get(name).ok_or_else(|| {
            Error::Config(format!("template placeholder '{{{name}}}' has no binding"))
        })?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Named template registry: builtins plus optional on-disk overrides.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateStore {
    /// Only the compiled-in defaults.
    pub fn builtin() -> Self {
        let templates = BUILTINS
            .iter()
            .map(|(name, text)| (name.to_string(), text.to_string()))
            .collect();
        TemplateStore { templates }
    }

    /// Builtins overlaid with `*.txt` files from `dir` (keyed by file stem;
    /// a `criteria/` subdirectory is keyed as `criteria/<stem>`).
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut store = Self::builtin();
        store.load_dir(dir, "")?;
        let criteria = dir.join("criteria");
        if criteria.is_dir() {
            store.load_dir(&criteria, "criteria/")?;
        }
        Ok(store)
    }

    fn load_dir(&mut self, dir: &Path, prefix: &str) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("unreadable template name: {path:?}")))?;
            let text = std::fs::read_to_string(&path)?;
            self.templates.insert(format!("{prefix}{stem}"), text);
        }
        Ok(())
    }

    /// Register or replace a template at runtime.
    pub fn insert(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(name.into(), text.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Render a named template; unknown names and missing bindings error.
    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String> {
        let template = self
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown template '{name}'")))?;
        render_template(template, bindings)
    }
}
