//! Group summaries, t-tests, length-adjusted ANCOVA and paired difference
//! scores. Everything here is a pure function of its inputs.

pub mod special;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{EvalError, Source, StoredRating, Trial};

/// Range of paired difference scores on a 1..=5 scale.
pub const DIFF_RANGE: std::ops::RangeInclusive<i8> = -4..=4;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator), corrected two-pass.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let (ss, s) = xs.iter().fold((0.0, 0.0), |(ss, s), x| {
        let d = x - m;
        (ss + d * d, s + d)
    });
    ((ss - s * s / n) / (n - 1.0)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub n: usize,
    pub mean: f64,
    /// Undefined for a single rating.
    pub sample_std: Option<f64>,
    /// Count per score, keys 1 through 5.
    pub histogram: BTreeMap<u8, usize>,
}

/// Per-source score summaries. Sources with no ratings are left out.
pub fn summarize_ratings(
    ratings: &[StoredRating],
    trials: &[Trial],
) -> Result<BTreeMap<Source, SourceSummary>, EvalError> {
    let known: std::collections::HashSet<&str> = trials.iter().map(|t| t.trial_id.as_str()).collect();
    let mut by_source: BTreeMap<Source, Vec<u8>> = BTreeMap::new();
    for r in ratings {
        if !known.contains(r.rating.trial_id.as_str()) {
            return Err(EvalError::UnknownTrial(r.rating.trial_id.clone()));
        }
        by_source.entry(r.source).or_default().push(r.rating.score);
    }
    Ok(by_source
        .into_iter()
        .map(|(source, scores)| {
            let xs: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
            let mut histogram: BTreeMap<u8, usize> = (1..=5).map(|k| (k, 0)).collect();
            for s in &scores {
                *histogram.entry(*s).or_default() += 1;
            }
            let summary = SourceSummary {
                n: xs.len(),
                mean: mean(&xs),
                sample_std: (xs.len() > 1).then(|| sample_variance(&xs).sqrt()),
                histogram,
            };
            (source, summary)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    Welch,
    /// Pooled variance, n_a + n_b − 2 degrees of freedom.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
    pub variant: TTestVariant,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    t_test(a, b, TTestVariant::Welch)
}

/// Two-sample, two-tailed t-test of mean(a) − mean(b).
pub fn t_test(a: &[f64], b: &[f64], variant: TTestVariant) -> Result<TTestResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewObservations(format!(
            "t-test needs two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    // summing in sorted order makes groups holding the same values give
    // bit-identical moments, whatever order they arrive in
    let sorted = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (&sorted(a)[..], &sorted(b)[..]);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let diff = mean(a) - mean(b);
    let (se2, df) = match variant {
        TTestVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            (se2, se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0)))
        }
        TTestVariant::Pooled => {
            let df = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (sp2 * (1.0 / na + 1.0 / nb), df)
        }
    };
    let t = diff / se2.sqrt();
    Ok(TTestResult {
        t,
        df,
        p_two_tailed: special::student_t_two_tailed(t, df),
        variant,
    })
}

/// One rated response for the ANCOVA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub score: f64,
    pub group: Source,
    pub length_chars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncovaResult {
    pub f_group: f64,
    pub p_group: f64,
    pub df_residual: usize,
    pub intercept: f64,
    /// Coefficient of the vsc indicator.
    pub beta_group: f64,
    /// Coefficient of length; absent when length is constant and was dropped.
    pub beta_length: Option<f64>,
    pub rss_full: f64,
    pub rss_reduced: f64,
}

const RANK_TOL: f64 = 1e-10;
const NULL_EFFECT_TOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Remove from `v` its components along the orthonormal `basis`, twice
/// (modified Gram–Schmidt with one reorthogonalization). Returns the total
/// coefficient removed along each basis vector.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut coefs = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (k, q) in basis.iter().enumerate() {
            let c = dot(q, v);
            coefs[k] += c;
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
    }
    coefs
}

/// OLS of score on [1, length, 1{group = vsc}] against the model without
/// the group term; F test for the group term.
///
/// A constant length column is dropped (it duplicates the intercept), which
/// reduces the test to a one-way ANOVA on the two groups.
pub fn ancova_group_length(observations: &[Observation]) -> Result<AncovaResult, EvalError> {
    let n = observations.len();
    if n < 4 {
        return Err(EvalError::TooFewObservations(format!(
            "ANCOVA needs at least 4 observations, got {n}"
        )));
    }
    if let Some((i, o)) = observations
        .iter()
        .enumerate()
        .find(|(_, o)| o.group == Source::Inappropriate)
    {
        return Err(EvalError::Validation {
            record: format!("observation {i}"),
            reason: format!("group must be vsc or appropriate, got {}", o.group),
        });
    }
    let y: Vec<f64> = observations.iter().map(|o| o.score).collect();
    let columns = [
        vec![1.0; n],
        observations.iter().map(|o| o.length_chars as f64).collect::<Vec<_>>(),
        observations
            .iter()
            .map(|o| if o.group == Source::Vsc { 1.0 } else { 0.0 })
            .collect(),
    ];

    // Q has one column per kept design column; R is upper triangular.
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let scale = dot(col, col).sqrt();
        let mut v = col.clone();
        let coefs = orthogonalize(&mut v, &q);
        let norm = dot(&v, &v).sqrt();
        if scale == 0.0 || norm <= RANK_TOL * scale {
            if j == 2 {
                return Err(EvalError::SingularDesign(
                    "group indicator is constant or collinear with length".into(),
                ));
            }
            continue;
        }
        for (row, c) in r.iter_mut().zip(&coefs) {
            row.push(*c);
        }
        let mut row = vec![0.0; kept.len()];
        row.push(norm);
        r.push(row);
        q.push(v.iter().map(|x| x / norm).collect());
        kept.push(j);
    }
    let rank = kept.len();
    if n <= rank {
        return Err(EvalError::TooFewObservations(format!(
            "{n} observations leave no residual degrees of freedom"
        )));
    }

    let mut resid = y.clone();
    let qty = orthogonalize(&mut resid, &q);
    let rss_full = dot(&resid, &resid);
    // the group column is last, so its Qᵀy component is exactly what the
    // reduced model cannot explain
    let delta = qty[rank - 1] * qty[rank - 1];
    let rss_reduced = rss_full + delta;
    let df_residual = n - rank;

    let y_mean = mean(&y);
    let tss: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let (f_group, p_group) = if delta <= NULL_EFFECT_TOL * tss || tss == 0.0 {
        (0.0, 1.0)
    } else if rss_full <= NULL_EFFECT_TOL * tss {
        return Err(EvalError::DegenerateVariance);
    } else {
        let f = delta / (rss_full / df_residual as f64);
        (f, special::f_upper_tail(f, 1.0, df_residual as f64))
    };

    // back-substitute R β = Qᵀy
    let mut beta = vec![0.0; rank];
    for i in (0..rank).rev() {
        let s: f64 = (i + 1..rank).map(|k| r[i][k] * beta[k]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }
    let coef = |col: usize| kept.iter().position(|&k| k == col).map(|i| beta[i]);

    Ok(AncovaResult {
        f_group,
        p_group,
        df_residual,
        intercept: coef(0).unwrap_or(0.0),
        beta_group: coef(2).unwrap_or(0.0),
        beta_length: coef(1),
        rss_full,
        rss_reduced,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffDistribution {
    /// Trials contributing a difference.
    pub n: usize,
    /// Trials lacking a vsc or an appropriate rating.
    pub exclusions: usize,
    /// vsc − appropriate per trial, in trial order.
    pub diffs: Vec<(String, i8)>,
    /// Count per difference, keys −4 through 4.
    pub histogram: BTreeMap<i8, usize>,
    /// Count of differences ≤ key.
    pub cumulative: BTreeMap<i8, usize>,
}

/// Paired vsc − appropriate score per trial. When several raters scored a
/// trial, the first rater id in sort order with both ratings is used.
pub fn difference_scores(ratings: &[StoredRating], trials: &[Trial]) -> DiffDistribution {
    // trial → rater → (vsc, appropriate)
    type ByRater<'a> = BTreeMap<&'a str, (Option<u8>, Option<u8>)>;
    let mut by_trial: HashMap<&str, ByRater> = HashMap::new();
    for r in ratings {
        let slot = by_trial
            .entry(r.rating.trial_id.as_str())
            .or_default()
            .entry(r.rating.rater_id.as_str())
            .or_default();
        match r.source {
            Source::Vsc => slot.0 = Some(r.rating.score),
            Source::Appropriate => slot.1 = Some(r.rating.score),
            Source::Inappropriate => {}
        }
    }
    let mut diffs = Vec::new();
    let mut exclusions = 0;
    for t in trials {
        let pair = by_trial.get(t.trial_id.as_str()).and_then(|raters| {
            raters
                .values()
                .find_map(|(v, a)| Some(*v.as_ref()? as i8 - *a.as_ref()? as i8))
        });
        match pair {
            Some(d) => diffs.push((t.trial_id.clone(), d)),
            None => exclusions += 1,
        }
    }
    let mut histogram: BTreeMap<i8, usize> = DIFF_RANGE.map(|k| (k, 0)).collect();
    for (_, d) in &diffs {
        *histogram.entry(*d).or_default() += 1;
    }
    let mut running = 0;
    let cumulative = histogram
        .iter()
        .map(|(k, c)| {
            running += c;
            (*k, running)
        })
        .collect();
    DiffDistribution {
        n: diffs.len(),
        exclusions,
        diffs,
        histogram,
        cumulative,
    }
}
