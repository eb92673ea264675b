//! Validation statistics: rank correlation, Welch and ANOVA tests, grouped
//! bootstrap medians and job-title matching.

mod bootstrap;
mod correlation;
mod hypothesis;
mod titles;

use thiserror::Error;

pub use bootstrap::{group_median_se, BootstrapParams, GroupStat, GroupStats};
pub use correlation::{rank_average, spearman, spearman_exact, CorrelationResult, PValueMethod};
pub use hypothesis::{one_way_anova, welch_t, AnovaResult, WelchResult};
pub use titles::{match_job_titles, MatchOptions, TitleAssignment, TitleEntry, TitleLexicon};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("entity `{0}` has no score")]
    UnknownEntity(String),
    #[error("invalid lexicon row at line {line}: {reason}")]
    InvalidLexicon { line: u64, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a nonempty slice; averages the two middle values for even length.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
