//! Per-object stage tracking and the append-only JSON-lines journal.
//!
//! Each journal line records one stage an object reached, with the hash of
//! the artifact that stage produced. Replaying the journal rebuilds every
//! object's state; a torn final line from a crash is ignored.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Rendered,
    Captioned,
    Encoded,
    Ranked,
    Summarized,
    Flagged,
    Failed,
}

impl Stage {
    pub const PROGRESS: [Stage; 5] = [
        Stage::Rendered,
        Stage::Captioned,
        Stage::Encoded,
        Stage::Ranked,
        Stage::Summarized,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Summarized | Stage::Flagged | Stage::Failed)
    }

    /// The stage that follows `current` on the success path.
    pub fn next(current: Option<Stage>) -> Option<Stage> {
        match current {
            None => Some(Stage::Rendered),
            Some(Stage::Rendered) => Some(Stage::Captioned),
            Some(Stage::Captioned) => Some(Stage::Encoded),
            Some(Stage::Encoded) => Some(Stage::Ranked),
            Some(Stage::Ranked) => Some(Stage::Summarized),
            Some(_) => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Rendered => "RENDERED",
            Stage::Captioned => "CAPTIONED",
            Stage::Encoded => "ENCODED",
            Stage::Ranked => "RANKED",
            Stage::Summarized => "SUMMARIZED",
            Stage::Flagged => "FLAGGED",
            Stage::Failed => "FAILED",
        }
    }

    pub fn parse(text: &str) -> Option<Stage> {
        [Stage::PROGRESS.as_slice(), &[Stage::Flagged, Stage::Failed]]
            .concat()
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(text.trim()))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDetail {
    /// The stage that was being attempted.
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub object_id: String,
    pub stage: Option<Stage>,
    pub artifacts: BTreeMap<Stage, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureDetail>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TransitionError {
    #[error("{object_id}: already in absorbing state {from}")]
    Absorbing { object_id: String, from: Stage },
    #[error("{object_id}: cannot move from {from:?} to {to}")]
    Backwards {
        object_id: String,
        from: Option<Stage>,
        to: Stage,
    },
}

impl ObjectState {
    pub fn new(object_id: impl Into<String>) -> Self {
        ObjectState {
            object_id: object_id.into(),
            stage: None,
            artifacts: BTreeMap::new(),
            error: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.stage.is_some_and(Stage::is_terminal)
    }

    pub fn artifact(&self, stage: Stage) -> Option<&str> {
        self.artifacts.get(&stage).map(String::as_str)
    }

    /// Applies a journal entry. Stages only move forward, and FLAGGED,
    /// FAILED and SUMMARIZED accept nothing further.
    pub fn apply(&mut self, entry: &JournalEntry) -> Result<(), TransitionError> {
        if let Some(from) = self.stage.filter(|s| s.is_terminal()) {
            return Err(TransitionError::Absorbing {
                object_id: self.object_id.clone(),
                from,
            });
        }
        if self.stage.is_some_and(|from| entry.stage <= from) {
            return Err(TransitionError::Backwards {
                object_id: self.object_id.clone(),
                from: self.stage,
                to: entry.stage,
            });
        }
        self.stage = Some(entry.stage);
        if let Some(hash) = &entry.artifact {
            self.artifacts.insert(entry.stage, hash.clone());
        }
        self.error = entry.error.clone();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub object_id: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FailureDetail>,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

/// Single-writer journal. Appends are serialized by a mutex and each line is
/// written with one `write_all` followed by `sync_data`.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    /// Opens (creating if needed) the journal and replays it.
    pub fn open(path: &Path) -> Result<(Self, BTreeMap<String, ObjectState>), JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let states = if path.exists() {
            replay(path)?
        } else {
            BTreeMap::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((
            Journal {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            states,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &JournalEntry) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)
            .and_then(|_| file.sync_data())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Rebuilds object states from a journal file. Only the final line may be
/// unparsable (an interrupted append); anywhere else it is corruption.
pub fn replay(path: &Path) -> Result<BTreeMap<String, ObjectState>, JournalError> {
    let file = File::open(path).map_err(|source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut states: BTreeMap<String, ObjectState> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: JournalEntry = match serde_json::from_str(line) {
            Ok(entry) => entry,
            Err(_) if i + 1 == lines.len() => {
                log::warn!("ignoring torn final journal line in {}", path.display());
                break;
            }
            Err(e) => {
                return Err(JournalError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        };
        states
            .entry(entry.object_id.clone())
            .or_insert_with(|| ObjectState::new(&entry.object_id))
            .apply(&entry)?;
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, stage: Stage) -> JournalEntry {
        JournalEntry {
            object_id: id.into(),
            stage,
            artifact: Some(format!("{id}-{stage}")),
            error: None,
        }
    }

    #[test]
    fn stages_move_forward_only() {
        let mut state = ObjectState::new("a");
        state.apply(&entry("a", Stage::Rendered)).unwrap();
        state.apply(&entry("a", Stage::Captioned)).unwrap();
        assert!(matches!(
            state.apply(&entry("a", Stage::Rendered)),
            Err(TransitionError::Backwards { .. })
        ));
        state.apply(&entry("a", Stage::Failed)).unwrap();
        assert!(matches!(
            state.apply(&entry("a", Stage::Summarized)),
            Err(TransitionError::Absorbing { .. })
        ));
    }

    #[test]
    fn flagged_is_absorbing() {
        let mut state = ObjectState::new("a");
        state.apply(&entry("a", Stage::Ranked)).unwrap();
        state.apply(&entry("a", Stage::Flagged)).unwrap();
        assert!(state.is_terminal());
        assert!(state.apply(&entry("a", Stage::Failed)).is_err());
    }

    #[test]
    fn replays_and_ignores_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let (journal, states) = Journal::open(&path).unwrap();
            assert!(states.is_empty());
            journal.append(&entry("a", Stage::Rendered)).unwrap();
            journal.append(&entry("b", Stage::Rendered)).unwrap();
            journal.append(&entry("a", Stage::Captioned)).unwrap();
        }
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(br#"{"object_id":"b","sta"#).unwrap();
        let states = replay(&path).unwrap();
        assert_eq!(states["a"].stage, Some(Stage::Captioned));
        assert_eq!(states["a"].artifact(Stage::Rendered), Some("a-RENDERED"));
        assert_eq!(states["b"].stage, Some(Stage::Rendered));
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(&path, "garbage\n{\"object_id\":\"a\",\"stage\":\"RENDERED\"}\n").unwrap();
        assert!(matches!(replay(&path), Err(JournalError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn stage_names_round_trip() {
        for stage in [Stage::Rendered, Stage::Flagged, Stage::Failed] {
            assert_eq!(Stage::parse(stage.name()), Some(stage));
            let json = serde_json::to_string(&stage).unwrap();
            assert_eq!(json, format!("\"{}\"", stage.name()));
        }
        assert_eq!(Stage::parse("captioned"), Some(Stage::Captioned));
    }
}
