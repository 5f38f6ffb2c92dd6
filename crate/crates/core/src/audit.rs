//! Caption quality checks: embedding-similarity flags with calibrated
//! thresholds, a whole-word term filter, and n-gram vocabulary statistics.
//!
//! Caption CSV files have the columns `identifier,caption[,source]`, are
//! UTF-8 and have no header unless asked for. Written files always use `\n`
//! line endings, so a file round-trips byte for byte unless it used `\r\n`.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

/// Added to calibrated thresholds so every bad record is strictly below them.
pub const CALIBRATION_EPSILON: f64 = 1e-6;

/// Terms flagged by [`text_flag`] as whole words, case-insensitively.
pub const DEFAULT_FLAG_TERMS: [&str; 5] = ["image", "images", "rendering", "renderings", "render"];

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("embedding dimension mismatch: caption has {expected}, view {view} has {found}")]
    DimensionMismatch {
        expected: usize,
        view: usize,
        found: usize,
    },
    #[error("embedding {0} is not unit norm")]
    NotUnitNorm(String),
    #[error("no view embeddings")]
    NoViews,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("validation set has no bad records")]
    NoBadRecords,
    #[error("record {line}: identifier is empty")]
    EmptyIdentifier { line: usize },
    #[error("duplicate record for identifier {id:?} and source {caption_source:?}")]
    DuplicateRecord {
        id: String,
        caption_source: Option<CaptionSource>,
    },
    #[error("record {line}: unknown caption source {value:?}")]
    UnknownSource { line: usize, value: String },
    #[error("record {line}: expected 2 or 3 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("invalid flag term {term:?}: {source}")]
    Term {
        term: String,
        #[source]
        source: regex::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaptionSource {
    Cap3d,
    Ours,
    Human,
}

impl CaptionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionSource::Cap3d => "CAP3D",
            CaptionSource::Ours => "OURS",
            CaptionSource::Human => "HUMAN",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_uppercase().as_str() {
            "CAP3D" => Some(CaptionSource::Cap3d),
            "OURS" => Some(CaptionSource::Ours),
            "HUMAN" => Some(CaptionSource::Human),
            _ => None,
        }
    }
}

/// A caption keyed by object uid or sha256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub source: Option<CaptionSource>,
}

impl CaptionRecord {
    pub fn new(id: impl Into<String>, caption: impl Into<String>) -> Self {
        CaptionRecord {
            id: id.into(),
            caption: caption.into(),
            source: None,
        }
    }

    pub fn with_source(mut self, source: CaptionSource) -> Self {
        self.source = Some(source);
        self
    }
}

/// A record is flagged when its mean similarity is below `mean_threshold`
/// and its max similarity is below `max_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditThresholds {
    pub mean_threshold: f64,
    pub max_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub mean: f64,
    pub max: f64,
}

fn check_unit(v: &[f64], what: impl FnOnce() -> String) -> Result<(), AuditError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(AuditError::NotUnitNorm(what()));
    }
    Ok(())
}

/// Mean and max cosine similarity between a caption and each view.
pub fn clip_stats(view_embeddings: &[Vec<f64>], caption_embedding: &[f64]) -> Result<ClipStats, AuditError> {
    if view_embeddings.is_empty() {
        return Err(AuditError::NoViews);
    }
    check_unit(caption_embedding, || "caption".into())?;
    let mut sims = Vec::with_capacity(view_embeddings.len());
    for (i, view) in view_embeddings.iter().enumerate() {
        if view.len() != caption_embedding.len() {
            return Err(AuditError::DimensionMismatch {
                expected: caption_embedding.len(),
                view: i,
                found: view.len(),
            });
        }
        check_unit(view, || format!("view {i}"))?;
        sims.push(view.iter().zip(caption_embedding).map(|(a, b)| a * b).sum::<f64>());
    }
    Ok(ClipStats {
        mean: sims.iter().sum::<f64>() / sims.len() as f64,
        max: sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn flag_stats(stats: &ClipStats, thresholds: &AuditThresholds) -> bool {
    stats.mean < thresholds.mean_threshold && stats.max < thresholds.max_threshold
}

/// Flags a record whose caption matches its views poorly on both statistics.
pub fn clip_flag(
    record: &CaptionRecord,
    view_embeddings: &[Vec<f64>],
    caption_embedding: &[f64],
    thresholds: &AuditThresholds,
) -> Result<bool, AuditError> {
    let stats = clip_stats(view_embeddings, caption_embedding)?;
    let flagged = flag_stats(&stats, thresholds);
    if flagged {
        log::debug!("{} flagged: mean {:.4}, max {:.4}", record.id, stats.mean, stats.max);
    }
    Ok(flagged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub record: CaptionRecord,
    pub stats: ClipStats,
    pub is_bad: bool,
}

/// Smallest thresholds that flag every bad validation record: the largest
/// bad mean and the largest bad max, each plus [`CALIBRATION_EPSILON`].
/// A threshold can exceed 1 by that epsilon when a bad record scores 1.
pub fn calibrate_thresholds(validation: &[ValidationEntry]) -> Result<AuditThresholds, AuditError> {
    if validation.is_empty() {
        return Err(AuditError::EmptyValidation);
    }
    let bad: Vec<&ClipStats> = validation.iter().filter(|e| e.is_bad).map(|e| &e.stats).collect();
    if bad.is_empty() {
        return Err(AuditError::NoBadRecords);
    }
    let max_of = |f: fn(&ClipStats) -> f64| bad.iter().map(|s| f(s)).fold(f64::NEG_INFINITY, f64::max);
    Ok(AuditThresholds {
        mean_threshold: max_of(|s| s.mean) + CALIBRATION_EPSILON,
        max_threshold: max_of(|s| s.max) + CALIBRATION_EPSILON,
    })
}

/// Whole-word, case-insensitive term matcher.
#[derive(Debug, Clone)]
pub struct TextFlagger {
    pattern: Regex,
    terms: Vec<String>,
}

impl TextFlagger {
    /// The default terms plus `extra`.
    pub fn new<S: AsRef<str>>(extra: &[S]) -> Result<Self, AuditError> {
        let terms: Vec<String> = DEFAULT_FLAG_TERMS
            .iter()
            .map(|t| t.to_string())
            .chain(extra.iter().map(|t| t.as_ref().trim().to_lowercase()))
            .filter(|t| !t.is_empty())
            .collect();
        let alternation = terms.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|");
        let pattern = Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).map_err(|source| AuditError::Term {
            term: alternation.clone(),
            source,
        })?;
        Ok(TextFlagger { pattern, terms })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn flag(&self, record: &CaptionRecord) -> bool {
        self.pattern.is_match(&record.caption)
    }
}

impl Default for TextFlagger {
    fn default() -> Self {
        TextFlagger::new::<&str>(&[]).expect("default terms compile")
    }
}

pub fn text_flag(record: &CaptionRecord) -> bool {
    static DEFAULT: std::sync::OnceLock<TextFlagger> = std::sync::OnceLock::new();
    DEFAULT.get_or_init(TextFlagger::default).flag(record)
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    /// Token count → number of captions of that length.
    pub length_histogram: BTreeMap<usize, usize>,
    pub unigrams: usize,
    pub bigrams: usize,
    pub trigrams: usize,
}

/// Distinct n-gram counts across the corpus; n-grams never span captions.
pub fn dataset_stats(records: &[CaptionRecord]) -> DatasetStats {
    let mut length_histogram = BTreeMap::new();
    let mut grams: [HashSet<Vec<String>>; 3] = Default::default();
    for record in records {
        let tokens = tokenize(&record.caption);
        *length_histogram.entry(tokens.len()).or_insert(0) += 1;
        for (n, set) in grams.iter_mut().enumerate() {
            for window in tokens.windows(n + 1) {
                set.insert(window.to_vec());
            }
        }
    }
    DatasetStats {
        records: records.len(),
        length_histogram,
        unigrams: grams[0].len(),
        bigrams: grams[1].len(),
        trigrams: grams[2].len(),
    }
}

/// Rejects empty identifiers and repeated `(identifier, source)` pairs.
pub fn validate_records(records: &[CaptionRecord]) -> Result<(), AuditError> {
    let mut seen = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        if r.id.trim().is_empty() {
            return Err(AuditError::EmptyIdentifier { line: i + 1 });
        }
        if !seen.insert((r.id.as_str(), r.source)) {
            return Err(AuditError::DuplicateRecord {
                id: r.id.clone(),
                caption_source: r.source,
            });
        }
    }
    Ok(())
}

pub fn read_captions_csv<R: Read>(reader: R, has_header: bool) -> Result<Vec<CaptionRecord>, AuditError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let line = i + 1 + has_header as usize;
        let source = match row.len() {
            2 => None,
            3 => Some(CaptionSource::parse(&row[2]).ok_or_else(|| AuditError::UnknownSource {
                line,
                value: row[2].to_string(),
            })?),
            found => return Err(AuditError::FieldCount { line, found }),
        };
        records.push(CaptionRecord {
            id: row[0].to_string(),
            caption: row[1].to_string(),
            source,
        });
    }
    validate_records(&records)?;
    Ok(records)
}

pub fn write_captions_csv<W: Write>(writer: W, records: &[CaptionRecord], header: bool) -> Result<(), AuditError> {
    let mut csv = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let with_source = records.iter().any(|r| r.source.is_some());
    if header {
        if with_source {
            csv.write_record(["identifier", "caption", "source"])?;
        } else {
            csv.write_record(["identifier", "caption"])?;
        }
    }
    for r in records {
        match r.source {
            Some(s) => csv.write_record([r.id.as_str(), r.caption.as_str(), s.as_str()])?,
            None => csv.write_record([r.id.as_str(), r.caption.as_str()])?,
        }
    }
    csv.flush()?;
    Ok(())
}
