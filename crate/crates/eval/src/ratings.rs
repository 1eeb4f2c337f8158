//! Rating capture. Ratings are appended to a line-delimited log; the
//! (trial, rater, position) key is checked and written under one lock.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{BlindPresentation, EvalError, Source};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub trial_id: String,
    pub rater_id: String,
    pub position: usize,
    pub score: u8,
    pub timestamp: DateTime<Utc>,
}

/// A rating joined to the source that was shown at its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRating {
    #[serde(flatten)]
    pub rating: Rating,
    pub source: Source,
}

/// Reply sent back to the rater; carries no source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingAck {
    pub trial_id: String,
    pub position: usize,
    pub score: u8,
}

type Key = (String, String, usize);

struct Inner {
    file: Option<File>,
    keys: HashSet<Key>,
    ratings: Vec<StoredRating>,
}

pub struct RatingStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl RatingStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                file: None,
                keys: HashSet::new(),
                ratings: Vec::new(),
            }),
        }
    }

    /// Open (or create) a rating log, loading ratings already in it.
    pub fn open(path: &Path) -> Result<Self, EvalError> {
        let mut ratings = Vec::new();
        let mut keys = HashSet::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: StoredRating = serde_json::from_str(&line)
                    .map_err(|e| EvalError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
                keys.insert(key(&r.rating));
                ratings.push(r);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                file: Some(file),
                keys,
                ratings,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn ratings(&self) -> Vec<StoredRating> {
        self.inner.lock().expect("rating store lock poisoned").ratings.clone()
    }

    pub fn is_rated(&self, trial_id: &str, rater_id: &str, position: usize) -> bool {
        self.inner.lock().expect("rating store lock poisoned").keys.contains(&(
            trial_id.to_string(),
            rater_id.to_string(),
            position,
        ))
    }

    fn insert(&self, rating: StoredRating) -> Result<(), EvalError> {
        let mut inner = self.inner.lock().expect("rating store lock poisoned");
        let k = key(&rating.rating);
        if inner.keys.contains(&k) {
            return Err(EvalError::DuplicateRating {
                trial_id: k.0,
                rater_id: k.1,
                position: k.2,
            });
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&rating).map_err(|e| EvalError::Io(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        inner.keys.insert(k);
        inner.ratings.push(rating);
        Ok(())
    }
}

fn key(r: &Rating) -> Key {
    (r.trial_id.clone(), r.rater_id.clone(), r.position)
}

/// Validate and store one rating, joined to the source the presentation
/// placed at `position`.
pub fn record_rating(
    presentation: &BlindPresentation,
    position: usize,
    score: i64,
    rater_id: &str,
    store: &RatingStore,
) -> Result<RatingAck, EvalError> {
    if !(1..=5).contains(&score) {
        return Err(EvalError::BadScore(score));
    }
    let source = presentation
        .source_at(position)
        .ok_or(EvalError::BadPosition(position))?;
    if presentation.rater_id != rater_id {
        return Err(EvalError::WrongRater {
            expected: presentation.rater_id.clone(),
            got: rater_id.to_string(),
        });
    }
    let rating = Rating {
        trial_id: presentation.trial_id.clone(),
        rater_id: rater_id.to_string(),
        position,
        score: score as u8,
        timestamp: Utc::now(),
    };
    store.insert(StoredRating { rating, source })?;
    Ok(RatingAck {
        trial_id: presentation.trial_id.clone(),
        position,
        score: score as u8,
    })
}
