use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Alternative, PhaseSeries, TestResult};
use crate::dataio::TrialDesign;
use crate::error::{Error, Result};

const MC_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Any arrangement with half the blocks under intervention.
    #[default]
    BlockPermutation,
    /// Block permutations without runs longer than `max_run_length`.
    RestrictedAlternation,
    /// The two strictly alternating sequences.
    SystematicAlternation,
}

/// Which block-level intervention sequences count as possible assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentScheme {
    pub kind: SchemeKind,
    pub max_run_length: usize,
}

impl Default for AssignmentScheme {
    fn default() -> Self {
        AssignmentScheme {
            kind: SchemeKind::BlockPermutation,
            max_run_length: 2,
        }
    }
}

impl AssignmentScheme {
    pub fn of(kind: SchemeKind) -> Self {
        AssignmentScheme {
            kind,
            ..AssignmentScheme::default()
        }
    }
}

fn longest_run(labels: &[bool]) -> usize {
    labels
        .iter()
        .dedup_with_count()
        .map(|(count, _)| count)
        .max()
        .unwrap_or(0)
}

/// Block-level assignments (`true` = intervention), in lexicographic order of
/// the intervention block positions.
pub fn block_assignments(block_count: usize, scheme: &AssignmentScheme) -> Result<Vec<Vec<bool>>> {
    if block_count == 0 || !block_count.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "balanced assignments need an even, positive block count, got {block_count}"
        )));
    }
    let half = block_count / 2;
    let all = || {
        (0..block_count).combinations(half).map(move |on| {
            let mut labels = vec![false; block_count];
            on.into_iter().for_each(|b| labels[b] = true);
            labels
        })
    };
    Ok(match scheme.kind {
        SchemeKind::BlockPermutation => all().collect(),
        SchemeKind::RestrictedAlternation => {
            if scheme.max_run_length == 0 {
                return Err(Error::Config("max_run_length must be at least 1".into()));
            }
            all().filter(|l| longest_run(l) <= scheme.max_run_length).collect()
        }
        SchemeKind::SystematicAlternation => vec![
            (0..block_count).map(|b| b % 2 == 1).collect(),
            (0..block_count).map(|b| b % 2 == 0).collect(),
        ],
    })
}

/// Observation-level intervention vectors for a complete trial.
pub fn enumerate_assignments(design: &TrialDesign, scheme: &AssignmentScheme) -> Result<Vec<Vec<bool>>> {
    design.validate()?;
    let per_block = design.block_length();
    Ok(block_assignments(design.block_count(), scheme)?
        .into_iter()
        .map(|labels| {
            labels
                .iter()
                .flat_map(|&on| std::iter::repeat_n(on, per_block))
                .collect()
        })
        .collect())
}

/// `mean(I=1) - mean(I=0)` for observation labels.
pub fn mean_difference(values: &[f64], labels: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (v, on) in values.iter().zip(labels) {
        if on {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    (n1 > 0 && n0 > 0).then(|| s1 / n1 as f64 - s0 / n0 as f64)
}

/// Centred values and the tolerance used to call two statistics tied.
///
/// Centring makes the statistic exactly zero for constant data, and a
/// tolerance relative to the data spread keeps tie handling invariant under
/// shifting and rescaling.
fn centred(series: &PhaseSeries) -> (Vec<f64>, f64) {
    let m = series.values.iter().sum::<f64>() / series.len() as f64;
    let c: Vec<f64> = series.values.iter().map(|v| v - m).collect();
    let spread = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (c, 1e-9 * spread)
}

fn at_least_as_extreme(s: f64, observed: f64, tol: f64, alternative: Alternative) -> bool {
    match alternative {
        Alternative::Less => s <= observed + tol,
        Alternative::Greater => s >= observed - tol,
        Alternative::TwoSided => s.abs() >= observed.abs() - tol,
    }
}

fn block_statistic(series: &PhaseSeries, values: &[f64], blocks: &[bool]) -> Result<f64> {
    mean_difference(values, (0..series.len()).map(|i| blocks[series.block_of(i)]))
        .ok_or_else(|| Error::Validation("assignment leaves a phase without observations".into()))
}

fn observed(series: &PhaseSeries, values: &[f64]) -> Result<f64> {
    mean_difference(values, series.intervention.iter().copied())
        .ok_or_else(|| Error::Validation("series needs observations in both phases".into()))
}

/// Exact single-case randomization test over every assignment of the scheme.
///
/// The p-value counts assignments whose mean difference is at least as
/// extreme as the observed one, the observed assignment included.
pub fn scrt_exact(
    series: &PhaseSeries,
    scheme: &AssignmentScheme,
    alternative: Alternative,
) -> Result<TestResult> {
    let labels = series.block_labels()?;
    let support = block_assignments(series.block_count, scheme)?;
    if !support.contains(&labels) {
        return Err(Error::Validation(format!(
            "observed block sequence {} is not a possible assignment under {:?}",
            labels.iter().map(|&on| if on { 'B' } else { 'A' }).collect::<String>(),
            scheme.kind
        )));
    }
    let (values, tol) = centred(series);
    let s_obs = observed(series, &values)?;
    let mut hits = 0usize;
    for assignment in &support {
        let s = block_statistic(series, &values, assignment)?;
        if at_least_as_extreme(s, s_obs, tol, alternative) {
            hits += 1;
        }
    }
    let mut r = TestResult::new("scrt", s_obs, hits as f64 / support.len() as f64, alternative);
    r.n_randomizations = Some(support.len());
    Ok(r)
}

/// Where Monte Carlo assignments are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McSupport {
    /// Uniformly from the scheme's block-level assignments.
    #[default]
    Scheme,
    /// Uniform permutations of the observation labels, ignoring blocks.
    Observations,
}

/// Monte Carlo randomization test, `p = (1 + hits) / (M + 1)`.
pub fn randomization_test_mc(
    series: &PhaseSeries,
    scheme: &AssignmentScheme,
    support: McSupport,
    alternative: Alternative,
    m: usize,
    seed: u64,
) -> Result<TestResult> {
    if m == 0 {
        return Err(Error::Usage("Monte Carlo test needs M >= 1".into()));
    }
    let (values, tol) = centred(series);
    let s_obs = observed(series, &values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MC_STREAM);

    let mut hits = 0usize;
    match support {
        McSupport::Scheme => {
            let assignments = block_assignments(series.block_count, scheme)?;
            for _ in 0..m {
                let pick = &assignments[rng.gen_range(0..assignments.len())];
                let s = block_statistic(series, &values, pick)?;
                if at_least_as_extreme(s, s_obs, tol, alternative) {
                    hits += 1;
                }
            }
        }
        McSupport::Observations => {
            let mut labels = series.intervention.clone();
            for _ in 0..m {
                labels.shuffle(&mut rng);
                let s = mean_difference(&values, labels.iter().copied()).expect("both phases present");
                if at_least_as_extreme(s, s_obs, tol, alternative) {
                    hits += 1;
                }
            }
        }
    }
    let name = match support {
        McSupport::Scheme => "mc_rt",
        McSupport::Observations => "mc_rt_observations",
    };
    let mut r = TestResult::new(name, s_obs, (1 + hits) as f64 / (m + 1) as f64, alternative);
    r.m = Some(m);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_binomials() {
        let bp = AssignmentScheme::default();
        assert_eq!(block_assignments(4, &bp).unwrap().len(), 6);
        assert_eq!(block_assignments(8, &bp).unwrap().len(), 70);
        let sys = block_assignments(4, &AssignmentScheme::of(SchemeKind::SystematicAlternation)).unwrap();
        assert_eq!(sys, vec![vec![false, true, false, true], vec![true, false, true, false]]);
        assert!(block_assignments(5, &bp).is_err());
    }

    #[test]
    fn restricted_alternation_limits_runs() {
        let scheme = AssignmentScheme {
            kind: SchemeKind::RestrictedAlternation,
            max_run_length: 2,
        };
        let all = block_assignments(8, &scheme).unwrap();
        assert!(all.len() < 70 && all.len() > 2);
        assert!(all.iter().all(|a| longest_run(a) <= 2));
        assert!(all.iter().all(|a| a.iter().filter(|&&b| b).count() == 4));
    }

    #[test]
    fn expands_to_observation_level() {
        let design = TrialDesign {
            n_days: 4,
            measurements_per_day: 3,
            block_length_days: 1,
            ..TrialDesign::default()
        };
        let obs = enumerate_assignments(&design, &AssignmentScheme::default()).unwrap();
        assert_eq!(obs.len(), 6);
        assert!(obs.iter().all(|a| a.len() == 12));
        assert_eq!(&obs[0][..6], &[true; 6]);
    }

    #[test]
    fn constant_data_gives_p_one() {
        let s = PhaseSeries::regular(vec![0.7; 8], vec![false, false, true, true, false, false, true, true], 2)
            .unwrap();
        for alt in [Alternative::Less, Alternative::Greater, Alternative::TwoSided] {
            assert_eq!(scrt_exact(&s, &AssignmentScheme::default(), alt).unwrap().p_value, 1.0);
            let mc = randomization_test_mc(&s, &AssignmentScheme::default(), McSupport::Scheme, alt, 50, 1).unwrap();
            assert_eq!(mc.p_value, 1.0);
        }
    }

    #[test]
    fn observed_assignment_must_be_in_support() {
        let s = PhaseSeries::regular(vec![1.0, 2.0, 3.0, 4.0], vec![false, false, true, true], 1).unwrap();
        let sys = AssignmentScheme::of(SchemeKind::SystematicAlternation);
        assert!(matches!(
            scrt_exact(&s, &sys, Alternative::Greater),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_block_is_reported() {
        let s = PhaseSeries::new(vec![1.0, 2.0, 3.0], vec![false, true, false], vec![0, 2, 4], 1, 6).unwrap();
        assert!(scrt_exact(&s, &AssignmentScheme::default(), Alternative::Less).is_err());
    }
}
