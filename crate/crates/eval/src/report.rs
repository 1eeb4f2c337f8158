use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::{
    self, ancova_group_length, difference_scores, summarize_ratings, t_test, AncovaResult, DiffDistribution,
    Observation, SourceSummary, TTestResult, TTestVariant,
};
use crate::{EvalError, Source, StoredRating, Trial};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub n: usize,
    pub mean: f64,
    pub sample_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Reference figures from a full 100-query rating run, carried in every
/// report for comparison. Nothing here is recomputed from local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub n_queries: usize,
    pub scores: BTreeMap<Source, MeanStd>,
    pub score_t_test_p: f64,
    pub lengths: BTreeMap<Source, MeanStd>,
    pub length_t_test_p: f64,
    pub ancova_p_group: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            n_queries: 100,
            scores: [
                (
                    Source::Vsc,
                    MeanStd {
                        mean: 4.327,
                        std: 0.883,
                    },
                ),
                (
                    Source::Appropriate,
                    MeanStd {
                        mean: 4.071,
                        std: 0.828,
                    },
                ),
                (
                    Source::Inappropriate,
                    MeanStd {
                        mean: 1.847,
                        std: 0.923,
                    },
                ),
            ]
            .into(),
            score_t_test_p: 0.044,
            lengths: [
                (
                    Source::Vsc,
                    MeanStd {
                        mean: 419.58,
                        std: 136.59,
                    },
                ),
                (
                    Source::Appropriate,
                    MeanStd {
                        mean: 243.51,
                        std: 81.98,
                    },
                ),
            ]
            .into(),
            length_t_test_p: 0.0038,
            ancova_p_group: 0.895,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub t_test_variant: TTestVariant,
    pub n_trials: usize,
    pub n_ratings: usize,
    pub per_source: BTreeMap<Source, SourceSummary>,
    /// Scores, vsc against appropriate.
    pub welch: Option<TTestResult>,
    /// Response lengths in characters, per trial.
    pub length_stats: BTreeMap<Source, LengthSummary>,
    pub length_welch: Option<TTestResult>,
    pub ancova: Option<AncovaResult>,
    pub diff_distribution: DiffDistribution,
    /// Why a statistic is missing, when one is.
    pub notes: Vec<String>,
    pub reference: ReferenceFigures,
}

pub type TTestSummary = TTestResult;
pub type AncovaSummary = AncovaResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn scores_of(ratings: &[StoredRating], source: Source) -> Vec<f64> {
    ratings
        .iter()
        .filter(|r| r.source == source)
        .map(|r| f64::from(r.rating.score))
        .collect()
}

pub fn build_report(
    trials: &[Trial],
    ratings: &[StoredRating],
    variant: TTestVariant,
) -> Result<StatsReport, EvalError> {
    let per_source = summarize_ratings(ratings, trials)?;
    let mut notes = Vec::new();

    let welch = t_test(
        &scores_of(ratings, Source::Vsc),
        &scores_of(ratings, Source::Appropriate),
        variant,
    )
    .map_err(|e| notes.push(format!("score t-test: {e}")))
    .ok();

    let lengths = |source: Source| -> Vec<f64> {
        trials
            .iter()
            .filter_map(|t| t.response(source))
            .map(|r| r.length_chars as f64)
            .collect()
    };
    let length_stats = Source::ALL
        .iter()
        .map(|&s| (s, lengths(s)))
        .filter(|(_, xs)| !xs.is_empty())
        .map(|(s, xs)| {
            let summary = LengthSummary {
                n: xs.len(),
                mean: stats::mean(&xs),
                sample_std: (xs.len() > 1).then(|| stats::sample_variance(&xs).sqrt()),
            };
            (s, summary)
        })
        .collect();
    let length_welch = t_test(&lengths(Source::Vsc), &lengths(Source::Appropriate), variant)
        .map_err(|e| notes.push(format!("length t-test: {e}")))
        .ok();

    let by_id: BTreeMap<&str, &Trial> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    let observations: Vec<Observation> = ratings
        .iter()
        .filter(|r| r.source != Source::Inappropriate)
        .filter_map(|r| {
            let response = by_id.get(r.rating.trial_id.as_str())?.response(r.source)?;
            Some(Observation {
                score: f64::from(r.rating.score),
                group: r.source,
                length_chars: response.length_chars,
            })
        })
        .collect();
    let ancova = ancova_group_length(&observations)
        .map_err(|e| notes.push(format!("ancova: {e}")))
        .ok();

    Ok(StatsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        t_test_variant: variant,
        n_trials: trials.len(),
        n_ratings: ratings.len(),
        per_source,
        welch,
        length_stats,
        length_welch,
        ancova,
        diff_distribution: difference_scores(ratings, trials),
        notes,
        reference: ReferenceFigures::default(),
    })
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// One `(source, statistic, value)` row per statistic.
fn csv_rows(report: &StatsReport) -> Vec<[String; 3]> {
    let mut rows: Vec<[String; 3]> = Vec::new();
    let mut push = |source: &str, stat: &str, value: String| {
        rows.push([source.to_string(), stat.to_string(), value]);
    };
    for (source, s) in &report.per_source {
        let src = source.as_str();
        push(src, "n", s.n.to_string());
        push(src, "mean", num(s.mean));
        push(src, "sample_std", opt(s.sample_std));
        for (score, count) in &s.histogram {
            push(src, &format!("hist_{score}"), count.to_string());
        }
    }
    for (source, s) in &report.length_stats {
        let src = source.as_str();
        push(src, "length_n", s.n.to_string());
        push(src, "length_mean", num(s.mean));
        push(src, "length_sample_std", opt(s.sample_std));
    }
    let pair = "vsc_vs_appropriate";
    for (prefix, test) in [("score", &report.welch), ("length", &report.length_welch)] {
        push(pair, &format!("{prefix}_t"), opt(test.map(|t| t.t)));
        push(pair, &format!("{prefix}_df"), opt(test.map(|t| t.df)));
        push(pair, &format!("{prefix}_p"), opt(test.map(|t| t.p_two_tailed)));
    }
    let a = report.ancova.as_ref();
    push(pair, "ancova_f_group", opt(a.map(|a| a.f_group)));
    push(pair, "ancova_p_group", opt(a.map(|a| a.p_group)));
    push(
        pair,
        "ancova_df_residual",
        a.map(|a| a.df_residual.to_string()).unwrap_or_default(),
    );
    push(pair, "ancova_beta_group", opt(a.map(|a| a.beta_group)));
    push(pair, "ancova_beta_length", opt(a.and_then(|a| a.beta_length)));
    let d = &report.diff_distribution;
    let diff = "vsc_minus_appropriate";
    push(diff, "n", d.n.to_string());
    push(diff, "exclusions", d.exclusions.to_string());
    for (k, c) in &d.histogram {
        push(diff, &format!("hist_{k}"), c.to_string());
    }
    for (k, c) in &d.cumulative {
        push(diff, &format!("cumulative_{k}"), c.to_string());
    }
    rows
}

/// Write the report. Output depends only on the report, so exporting the
/// same report twice gives identical bytes.
pub fn export_report(report: &StatsReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| EvalError::Io(e.to_string()))?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| EvalError::Io(e.to_string());
            w.write_record(["source", "statistic", "value"]).map_err(io)?;
            for row in csv_rows(report) {
                w.write_record(&row).map_err(io)?;
            }
            w.into_inner().map_err(|e| EvalError::Io(e.to_string()))?
        }
    };
    std::fs::write(path, bytes).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

pub fn load_report(path: &Path) -> Result<StatsReport, EvalError> {
    let raw = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}
