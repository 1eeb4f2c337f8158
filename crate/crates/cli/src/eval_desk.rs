//! Blind rating workflow over the configured trial bank: presentations per
//! rater, the next unrated item, rating submission and the report.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use coached_eval::{
    assign_raters, blind_shuffle, build_report, load_trial_bank, record_rating, BlindPresentation, BlindedItem,
    RatingAck, RatingStore, StatsReport, TTestVariant, Trial,
};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::pipeline::ensure_parent;
use crate::CliError;

/// What a rater is shown next. Carries positions and texts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub rater_id: String,
    pub complete: bool,
    pub rated_trials: usize,
    pub total_trials: usize,
    pub item: Option<RaterItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterItem {
    pub trial_id: String,
    pub query: String,
    pub items: Vec<BlindedItem>,
    pub unrated_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub rater_id: String,
    pub trial_id: String,
    pub position: usize,
    pub score: i64,
}

/// Presentations for every configured rater, in trial-bank order.
pub fn build_presentations(
    trials: &[Trial],
    raters: &[String],
    per_rater: Option<usize>,
    seed: u64,
) -> Vec<BlindPresentation> {
    let ids: Vec<String> = trials.iter().map(|t| t.trial_id.clone()).collect();
    let assignment: BTreeMap<String, Vec<String>> = match per_rater {
        Some(n) => assign_raters(&ids, raters, n),
        None => raters.iter().map(|r| (r.clone(), ids.clone())).collect(),
    };
    let mut out = Vec::new();
    for rater in raters {
        let assigned = &assignment[rater];
        let subset: Vec<Trial> = trials
            .iter()
            .filter(|t| assigned.contains(&t.trial_id))
            .cloned()
            .collect();
        out.extend(blind_shuffle(&subset, rater, seed));
    }
    out
}

pub fn save_presentations(path: &Path, presentations: &[BlindPresentation]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut buf = Vec::new();
    for p in presentations {
        serde_json::to_writer(&mut buf, p).map_err(|e| CliError::Io(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(&buf).map_err(|e| CliError::Io(e.to_string()))
}

pub fn load_presentations(path: &Path) -> Result<Vec<BlindPresentation>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub struct EvalDesk {
    pub trials: Vec<Trial>,
    pub presentations: Vec<BlindPresentation>,
    pub store: RatingStore,
    pub t_test: TTestVariant,
}

impl EvalDesk {
    /// Load the trial bank and rating log. Presentations come from the
    /// presentations file, which is built from the seed if missing.
    pub fn open(config: &AppConfig) -> Result<Self, CliError> {
        let e = &config.eval;
        let trials = load_trial_bank(&e.trials)?;
        let presentations = if e.presentations.exists() {
            load_presentations(&e.presentations)?
        } else {
            let p = build_presentations(&trials, &e.raters, e.per_rater, e.seed);
            save_presentations(&e.presentations, &p)?;
            p
        };
        ensure_parent(&e.ratings)?;
        Ok(Self {
            trials,
            presentations,
            store: RatingStore::open(&e.ratings)?,
            t_test: e.t_test,
        })
    }

    fn of_rater<'a>(&'a self, rater_id: &'a str) -> impl Iterator<Item = &'a BlindPresentation> + 'a {
        self.presentations.iter().filter(move |p| p.rater_id == rater_id)
    }

    pub fn next(&self, rater_id: &str) -> Result<NextItem, CliError> {
        let mine: Vec<&BlindPresentation> = self.of_rater(rater_id).collect();
        if mine.is_empty() {
            return Err(CliError::NotFound(format!("rater {rater_id:?} has no assigned trials")));
        }
        let unrated = |p: &BlindPresentation| -> Vec<usize> {
            (0..p.blinded_items.len())
                .filter(|&pos| !self.store.is_rated(&p.trial_id, rater_id, pos))
                .collect()
        };
        let rated_trials = mine.iter().filter(|p| unrated(p).is_empty()).count();
        let item = mine.iter().find(|p| !unrated(p).is_empty()).map(|p| {
            let query = self
                .trials
                .iter()
                .find(|t| t.trial_id == p.trial_id)
                .map(|t| t.query.clone())
                .unwrap_or_default();
            RaterItem {
                trial_id: p.trial_id.clone(),
                query,
                items: p.blinded_items.clone(),
                unrated_positions: unrated(p),
            }
        });
        Ok(NextItem {
            rater_id: rater_id.to_string(),
            complete: item.is_none(),
            rated_trials,
            total_trials: mine.len(),
            item,
        })
    }

    pub fn submit(&self, s: &RatingSubmission) -> Result<RatingAck, CliError> {
        let p = self
            .of_rater(&s.rater_id)
            .find(|p| p.trial_id == s.trial_id)
            .ok_or_else(|| CliError::NotFound(format!("trial {:?} for rater {:?}", s.trial_id, s.rater_id)))?;
        Ok(record_rating(p, s.position, s.score, &s.rater_id, &self.store)?)
    }

    pub fn report(&self, t_test: TTestVariant) -> Result<StatsReport, CliError> {
        Ok(build_report(&self.trials, &self.store.ratings(), t_test)?)
    }
}
