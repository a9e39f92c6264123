//! Cache directory layout and the passage cache.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use isaaq_core::corpus::SplitName;
use isaaq_core::retrieval::{Passage, RetrieverConfig, RetrieverKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io, Error, Result};

pub const CACHE_ENV: &str = "ISAAQ_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".isaaq-cache";

/// `$ISAAQ_CACHE_DIR` if set, else `.isaaq-cache` under the dataset root.
pub fn cache_dir(data_root: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => data_root.join(DEFAULT_CACHE_DIR),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub question_id: String,
    pub option_index: usize,
    pub sentence_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub text: String,
    pub config_hash: String,
}

impl PassageRecord {
    pub fn new(p: &Passage, config_hash: &str) -> Self {
        Self {
            question_id: p.question_id.clone(),
            option_index: p.option_index,
            sentence_ids: p.sentences.iter().map(|s| s.sentence_id.clone()).collect(),
            scores: p.sentences.iter().map(|s| s.score).collect(),
            text: p.text.clone(),
            config_hash: config_hash.into(),
        }
    }

    pub fn top_score(&self) -> Option<f64> {
        self.scores.first().copied()
    }
}

pub fn passage_path(cache: &Path, split: SplitName, retriever: RetrieverKind) -> PathBuf {
    cache.join("passages").join(format!("{}.{}.jsonl", split.as_str(), retriever.as_str()))
}

/// Short hex digest identifying everything that shapes a passage: the
/// retriever, its budget, scope and stopwords, plus `extra` (e.g. the frozen
/// encoder weights of NSP and NN).
pub fn config_hash(kind: RetrieverKind, cfg: &RetrieverConfig, extra: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_str());
    h.update(serde_json::to_vec(cfg).expect("retriever config serialises"));
    h.update(extra);
    let digest = format!("{:x}", h.finalize());
    digest[..16].to_string()
}

/// Appends records, one `write` per line so concurrent appenders never
/// interleave within a record.
pub fn append_passages(path: &Path, records: &[PassageRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
    for r in records {
        let mut line = serde_json::to_vec(r).expect("passage record serialises");
        line.push(b'\n');
        f.write_all(&line).map_err(io(path))?;
    }
    Ok(())
}

pub type PassageMap = BTreeMap<(String, usize), PassageRecord>;

/// Records matching `config_hash`, later lines overriding earlier ones.
///
/// A final line without its newline is a torn append and is ignored.
pub fn read_passages(path: &Path, config_hash: &str) -> Result<PassageMap> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingCache {
            what: "passages".into(),
            path: path.into(),
            command: "retrieve".into(),
        },
        _ => Error::Io { path: path.into(), source: e },
    })?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = PassageMap::new();
    for (n, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PassageRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format { path: path.into(), reason: format!("line {}: {e}", n + 1) })?;
        if r.config_hash == config_hash {
            out.insert((r.question_id.clone(), r.option_index), r);
        }
    }
    Ok(out)
}
