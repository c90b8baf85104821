use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::{p_from_cdf, Alternative, PhaseSeries, TestResult};
use crate::error::{Error, Result};

/// Student-t distribution function via the regularized incomplete beta.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    if !(df >= 1.0) || df.is_nan() {
        return Err(Error::Usage(format!("t distribution needs df >= 1, got {df}")));
    }
    if x.is_nan() {
        return Err(Error::numeric("t_cdf", "argument is NaN"));
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    // P(|T| > |x|) = I_{df/(df+x^2)}(df/2, 1/2)
    let tail = beta_reg(df / 2.0, 0.5, df / (df + x * x)) / 2.0;
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// How intervention and non-intervention observations are matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// j-th intervention observation with the j-th non-intervention one.
    #[default]
    Chronological,
    /// j-th intervention block mean with the j-th non-intervention block mean.
    BlockMeans,
}

fn block_means(series: &PhaseSeries, intervention: bool) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = vec![(0.0, 0); series.block_count];
    for i in 0..series.len() {
        if series.intervention[i] == intervention {
            let b = series.block_of(i);
            sums[b].0 += series.values[i];
            sums[b].1 += 1;
        }
    }
    sums.into_iter()
        .filter(|(_, k)| *k > 0)
        .map(|(s, k)| s / k as f64)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq_dev(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Paired t-test on intervention minus non-intervention differences.
///
/// Unequal phase sizes are truncated to the shorter side, with a note.
pub fn paired_t_test(
    series: &PhaseSeries,
    alternative: Alternative,
    pairing: Pairing,
) -> Result<TestResult> {
    let (on, off) = match pairing {
        Pairing::Chronological => (series.phase_values(true), series.phase_values(false)),
        Pairing::BlockMeans => (block_means(series, true), block_means(series, false)),
    };
    let n = on.len().min(off.len());
    let mut notes = Vec::new();
    if on.len() != off.len() {
        notes.push(format!(
            "phases have {} and {} units; truncated to {n} pairs",
            on.len(),
            off.len()
        ));
        log::warn!("paired t-test: {}", notes[0]);
    }
    let diffs: Vec<f64> = on.iter().zip(&off).map(|(a, b)| a - b).collect();
    let mut result = paired_t_on_differences(&diffs, alternative)?;
    if pairing == Pairing::BlockMeans {
        result.test_name = "paired_t_block_means".into();
    }
    result.notes.extend(notes);
    Ok(result)
}

/// The paired t statistic `sum D / sqrt((n sum D^2 - (sum D)^2) / (n - 1))`,
/// computed in its centred form.
pub(crate) fn paired_t_on_differences(diffs: &[f64], alternative: Alternative) -> Result<TestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Usage(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let m = mean(diffs);
    let ss = sum_sq_dev(diffs, m);
    if !(ss > 0.0) {
        return Err(Error::numeric(
            "paired_t_test",
            "differences have zero variance; the statistic is undefined",
        ));
    }
    let df = (n - 1) as f64;
    let t = m / (ss / df / n as f64).sqrt();
    let p = p_from_cdf(t_cdf(t, df)?, t_cdf(-t, df)?, alternative);
    let mut r = TestResult::new("paired_t", t, p, alternative);
    r.df = Some(df);
    r.estimate = Some(m);
    Ok(r)
}

/// Pooled-variance two-sample t-test of intervention against non-intervention.
pub fn two_sample_t_test(series: &PhaseSeries, alternative: Alternative) -> Result<TestResult> {
    let on = series.phase_values(true);
    let off = series.phase_values(false);
    let (n1, n0) = (on.len(), off.len());
    if n1 < 1 || n0 < 1 || n1 + n0 < 3 {
        return Err(Error::Usage(format!(
            "two-sample t-test needs both phases and 3 observations, got {n1} and {n0}"
        )));
    }
    let (m1, m0) = (mean(&on), mean(&off));
    let df = (n1 + n0 - 2) as f64;
    let pooled = (sum_sq_dev(&on, m1) + sum_sq_dev(&off, m0)) / df;
    if !(pooled > 0.0) {
        return Err(Error::numeric("two_sample_t_test", "both phases are constant"));
    }
    let se = (pooled * (1.0 / n1 as f64 + 1.0 / n0 as f64)).sqrt();
    let t = (m1 - m0) / se;
    let p = p_from_cdf(t_cdf(t, df)?, t_cdf(-t, df)?, alternative);
    let mut r = TestResult::new("two_sample_t", t, p, alternative);
    r.df = Some(df);
    r.estimate = Some(m1 - m0);
    r.std_error = Some(se);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_cdf_closed_forms() {
        assert_eq!(t_cdf(0.0, 7.0).unwrap(), 0.5);
        // Cauchy: 1/2 + atan(x)/pi
        assert!((t_cdf(1.0, 1.0).unwrap() - 0.75).abs() < 1e-14);
        assert!((t_cdf(-3.0, 1.0).unwrap() - (0.5 + (-3.0f64).atan() / std::f64::consts::PI)).abs() < 1e-14);
        // df = 2: 1/2 + x / (2 sqrt(2 + x^2))
        let x: f64 = 1.7;
        assert!((t_cdf(x, 2.0).unwrap() - (0.5 + x / (2.0 * (2.0 + x * x).sqrt()))).abs() < 1e-14);
        assert!(t_cdf(1.0, 0.5).is_err());
        assert_eq!(t_cdf(f64::INFINITY, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_differences_give_t_zero() {
        let r = paired_t_on_differences(&[1.0, -1.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn degenerate_differences_are_errors() {
        assert!(matches!(
            paired_t_on_differences(&[2.0], Alternative::Less),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            paired_t_on_differences(&[0.0, 0.0, 0.0], Alternative::Less),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn unequal_phases_are_truncated_with_a_note() {
        let s = PhaseSeries::new(
            vec![1.0, 2.0, 5.0, 7.0, 3.0],
            vec![false, false, true, true, false],
            vec![0, 1, 2, 3, 4],
            2,
            3,
        )
        .unwrap();
        let r = paired_t_test(&s, Alternative::Greater, Pairing::Chronological).unwrap();
        assert_eq!(r.df, Some(1.0));
        assert_eq!(r.notes.len(), 1);
        // block means: off (1.5, 3), on (6) -> one pair only
        assert!(paired_t_test(&s, Alternative::Greater, Pairing::BlockMeans).is_err());
    }

    #[test]
    fn two_sample_matches_hand_computation() {
        let s = PhaseSeries::regular(vec![1.0, 2.0, 4.0, 6.0], vec![false, false, true, true], 2).unwrap();
        let r = two_sample_t_test(&s, Alternative::TwoSided).unwrap();
        // means 5 and 1.5, pooled variance (2 + 0.5) / 2, se = sqrt(1.25)
        assert!((r.statistic - 3.5 / 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, Some(2.0));
    }
}
