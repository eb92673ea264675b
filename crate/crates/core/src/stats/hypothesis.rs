use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::{check_finite, mean, Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    /// Both groups have zero variance; `t` is 0 or ±∞ by convention.
    pub degenerate: bool,
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Unequal-variance two-sample t-test with Welch–Satterthwaite df.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(StatsError::TooFewObservations { need: 2, got: g.len() });
        }
        check_finite(g)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a, ma) / na, sample_var(b, mb) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        let diff = ma - mb;
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(WelchResult {
            t,
            df: f64::NAN,
            p,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(WelchResult {
        t,
        df,
        p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

/// One-way ANOVA across `groups`.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for g in groups {
        if g.len() < 2 {
            return Err(StatsError::TooFewObservations { need: 2, got: g.len() });
        }
        check_finite(g)?;
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let (mut ss_between, mut ss_within) = (0.0, 0.0);
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if ss_within == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let df1 = (groups.len() - 1) as f64;
    let df2 = (n - groups.len()) as f64;
    let f = (ss_between / df1) / (ss_within / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive df");
    Ok(AnovaResult {
        f,
        df1,
        df2,
        p: dist.sf(f).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let a = [1.0, 2.0, 4.0, 7.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_groups_degenerate() {
        let r = welch_t(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn welch_too_few() {
        assert!(matches!(welch_t(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewObservations { .. })));
    }

    #[test]
    fn two_group_anova_is_pooled_t_squared() {
        let a = [2.1, 3.4, 1.9, 5.0, 4.4];
        let b = [3.3, 6.1, 5.5, 4.8];
        let r = one_way_anova(&[&a, &b]).unwrap();
        let (ma, mb) = (mean(&a), mean(&b));
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let sp2 = ((na - 1.0) * sample_var(&a, ma) + (nb - 1.0) * sample_var(&b, mb)) / (na + nb - 2.0);
        let t = (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        assert!((r.f - t * t).abs() < 1e-10);
        assert_eq!((r.df1, r.df2), (1.0, 7.0));
    }

    #[test]
    fn anova_errors() {
        assert!(matches!(one_way_anova(&[&[1.0, 2.0]]), Err(StatsError::TooFewGroups(1))));
        assert!(matches!(
            one_way_anova(&[&[3.0, 3.0], &[3.0, 3.0, 3.0]]),
            Err(StatsError::ZeroVariance)
        ));
    }
}
