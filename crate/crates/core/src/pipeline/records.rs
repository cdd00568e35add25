//! Dataset and run-record schemas plus their JSONL persistence.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correctness::EntityList;
use crate::dist::{SampleScores, ScoreDistribution};
use crate::elicitation::ElicitationResult;
use crate::error::{Error, Result};
use crate::metrics::Split;

/// One dataset item, as ingested from JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_entities: Option<EntityList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_docs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Outcome of [`ingest`]: records plus per-line reports for anything skipped
/// under the lenient flag.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<ExampleRecord>,
    pub skipped: Vec<String>,
    /// True when the file carried no splits and the deterministic 20/80
    /// hash split was applied.
    pub hash_split_applied: bool,
}

/// Read and validate a JSONL dataset. Malformed lines abort with their line
/// number unless `lenient`, which skips and reports them. Duplicate ids are
/// always an error.
pub fn ingest(path: &Path, lenient: bool) -> Result<Ingested> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open dataset {path:?}: {e}")))?;
    let reader = std::io::BufReader::new(file);
    let mut records: Vec<ExampleRecord> = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExampleRecord>(&line) {
            Ok(record) => {
                if record.question.trim().is_empty() {
                    let message = "empty question".to_string();
                    if lenient {
                        skipped.push(format!("line {lineno}: {message}"));
                        continue;
                    }
                    return Err(Error::Schema {
                        line: lineno,
                        message,
                    });
                }
                if !seen.insert(record.id.clone()) {
                    return Err(Error::Schema {
                        line: lineno,
                        message: format!("duplicate id '{}'", record.id),
                    });
                }
                records.push(record);
            }
            Err(e) => {
                if lenient {
                    skipped.push(format!("line {lineno}: {e}"));
                } else {
                    return Err(Error::Schema {
                        line: lineno,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Config(format!("dataset {path:?} has no records")));
    }
    let hash_split_applied = assign_splits(&mut records)?;
    Ok(Ingested {
        records,
        skipped,
        hash_split_applied,
    })
}

/// When no record carries a split, apply the deterministic 20/80 dev/test
/// split by id hash. A partially split dataset is a schema error.
pub fn assign_splits(records: &mut [ExampleRecord]) -> Result<bool> {
    let with_split = records.iter().filter(|r| r.split.is_some()).count();
    if with_split == records.len() {
        return Ok(false);
    }
    if with_split > 0 {
        return Err(Error::Config(
            "dataset mixes records with and without a split tag".into(),
        ));
    }
    for record in records.iter_mut() {
        record.split = Some(hash_split(&record.id));
    }
    Ok(true)
}

/// Stable id-hash split: 20% dev, 80% test.
pub fn hash_split(id: &str) -> Split {
    let digest = Sha256::digest(id.as_bytes());
    let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % 100;
    if bucket < 20 {
        Split::Dev
    } else {
        Split::Test
    }
}

/// The correctness leg of an eval record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleScores>,
    pub distribution: ScoreDistribution,
    /// Pre-quantization score: the raw metric value for deterministic
    /// targets, the raw sample mean for rubric targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
}

/// Run provenance. Deliberately carries no wall-clock time so that reruns
/// from the same fixtures and config are byte-identical; timestamps live in
/// the run manifest instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<String>,
    pub temperature: f64,
    pub grid: Vec<f64>,
}

/// Joined view of one example across the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: String,
    pub split: Split,
    pub primary_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub methods: BTreeMap<String, ElicitationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<CorrectnessRecord>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Per-example failure note; the record stays so nothing drops silently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Read back a resolved dataset written by the generate stage.
pub fn read_dataset(path: &Path) -> Result<Vec<ExampleRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open dataset {path:?}: {e}")))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open run records {path:?}: {e}")))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Atomic rewrite: write to a temp file in the same directory, then rename.
pub fn write_eval_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    static WRITE_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        WRITE_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    ));
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
