//! Blinded three-way rating trials and the statistics run over the ratings.
//!
//! A [`Trial`] pairs one patient query with three candidate responses. Each
//! rater sees the responses in a seeded random order with no source labels
//! ([`RaterView`]); ratings are joined back to their source on the server
//! side and summarized into a [`StatsReport`].

mod blind;
mod ratings;
mod report;
pub mod stats;
mod trial;

use thiserror::Error;

pub use blind::{assign_raters, blind_shuffle, permutation_for, BlindPresentation, BlindedItem, RaterView};
pub use ratings::{record_rating, Rating, RatingAck, RatingStore, StoredRating};
pub use report::{
    build_report, export_report, load_report, AncovaSummary, LengthSummary, MeanStd, ReferenceFigures, ReportFormat,
    StatsReport, TTestSummary, REPORT_SCHEMA_VERSION,
};
pub use stats::{
    ancova_group_length, difference_scores, summarize_ratings, t_test, welch_t, AncovaResult, DiffDistribution,
    Observation, SourceSummary, TTestResult, TTestVariant,
};
pub use trial::{
    load_trial_bank, parse_trial_bank, session_distribution, CandidateResponse, SessionTag, Source, Trial, TrialRecord,
};

/// The five rating anchors, index 0 holding score 1.
pub const LIKERT_ANCHORS: [&str; 5] = [
    "potentially harmful",
    "inappropriate or irrelevant",
    "adequate but inexperienced",
    "adequate to the therapeutic context",
    "consistent with expert therapy",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid trial record {record}: {reason}")]
    Validation { record: String, reason: String },
    #[error("score {0} is outside 1..=5")]
    BadScore(i64),
    #[error("position {0} is outside 0..=2")]
    BadPosition(usize),
    #[error("rater {rater_id} already rated position {position} of trial {trial_id}")]
    DuplicateRating {
        trial_id: String,
        rater_id: String,
        position: usize,
    },
    #[error("presentation belongs to rater {expected}, not {got}")]
    WrongRater { expected: String, got: String },
    #[error("unknown trial {0}")]
    UnknownTrial(String),
    #[error("both groups have zero variance")]
    DegenerateVariance,
    #[error("not enough observations: {0}")]
    TooFewObservations(String),
    #[error("design matrix is rank deficient: {0}")]
    SingularDesign(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}
