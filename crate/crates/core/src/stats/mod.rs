//! Hypothesis tests on a phase-labelled outcome series: paired and
//! two-sample t-tests, a linear model with AR(1) errors, and exact and
//! Monte Carlo randomization tests over block assignments.

mod ar1;
mod randomization;
mod ttest;

use serde::{Deserialize, Serialize};

pub use ar1::{gls_fixed_rho, lm_ar1, Ar1Options, Estimation, GlsFit};
pub use randomization::{
    block_assignments, enumerate_assignments, mean_difference, randomization_test_mc,
    scrt_exact, AssignmentScheme, McSupport, SchemeKind,
};
pub use ttest::{paired_t_test, t_cdf, two_sample_t_test, Pairing};

use crate::dataio::TrialDesign;
use crate::error::{Error, Result};

/// Direction of the alternative hypothesis for `mean(I=1) - mean(I=0)`.
///
/// `Less` is "treatment lowers the outcome".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Less,
    Greater,
    TwoSided,
}

impl Alternative {
    pub fn label(self) -> &'static str {
        match self {
            Alternative::Less => "less",
            Alternative::Greater => "greater",
            Alternative::TwoSided => "two-sided",
        }
    }
}

/// The outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// Size of the exact reference set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_randomizations: Option<usize>,
    /// Monte Carlo draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TestResult {
    fn new(test_name: &str, statistic: f64, p_value: f64, alternative: Alternative) -> Self {
        TestResult {
            test_name: test_name.to_string(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            alternative,
            df: None,
            n_randomizations: None,
            m: None,
            estimate: None,
            std_error: None,
            rho: None,
            notes: Vec::new(),
        }
    }
}

/// A univariate outcome series with intervention labels and block structure.
///
/// Timestamps count observations on the trial clock (`day * per_day + slot`),
/// so the design block of an observation is `timestamp / block_length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub values: Vec<f64>,
    pub intervention: Vec<bool>,
    pub timestamps: Vec<usize>,
    /// Observations per design block.
    pub block_length: usize,
    pub block_count: usize,
}

impl PhaseSeries {
    pub fn new(
        values: Vec<f64>,
        intervention: Vec<bool>,
        timestamps: Vec<usize>,
        block_length: usize,
        block_count: usize,
    ) -> Result<Self> {
        let n = values.len();
        if intervention.len() != n || timestamps.len() != n {
            return Err(Error::shape(
                "phase_series",
                format!(
                    "{n} values, {} labels, {} timestamps",
                    intervention.len(),
                    timestamps.len()
                ),
            ));
        }
        if block_length == 0 || block_count == 0 {
            return Err(Error::Config("block_length and block_count must be positive".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("value {i} is not finite")));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "timestamps must increase strictly (positions {} and {})",
                i,
                i + 1
            )));
        }
        if let Some(&t) = timestamps.last() {
            if t / block_length >= block_count {
                return Err(Error::Validation(format!(
                    "timestamp {t} lies beyond block {block_count}"
                )));
            }
        }
        let series = PhaseSeries {
            values,
            intervention,
            timestamps,
            block_length,
            block_count,
        };
        for i in 1..n {
            if series.block_of(i) == series.block_of(i - 1)
                && series.intervention[i] != series.intervention[i - 1]
            {
                return Err(Error::Validation(format!(
                    "intervention changes inside block {} (timestamp {})",
                    series.block_of(i),
                    series.timestamps[i]
                )));
            }
        }
        Ok(series)
    }

    /// A complete series: timestamps `0..n`, blocks of `block_length`.
    pub fn regular(values: Vec<f64>, intervention: Vec<bool>, block_length: usize) -> Result<Self> {
        let n = values.len();
        if block_length == 0 || !n.is_multiple_of(block_length) {
            return Err(Error::Config(format!(
                "{n} observations do not split into blocks of {block_length}"
            )));
        }
        PhaseSeries::new(values, intervention, (0..n).collect(), block_length, n / block_length)
    }

    pub fn from_design(
        values: Vec<f64>,
        intervention: Vec<bool>,
        timestamps: Vec<usize>,
        design: &TrialDesign,
    ) -> Result<Self> {
        design.validate()?;
        PhaseSeries::new(values, intervention, timestamps, design.block_length(), design.block_count())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.timestamps[i] / self.block_length
    }

    /// Intervention label of every block; errors if a block has no data.
    pub fn block_labels(&self) -> Result<Vec<bool>> {
        let mut labels = vec![None; self.block_count];
        for i in 0..self.len() {
            labels[self.block_of(i)] = Some(self.intervention[i]);
        }
        labels
            .iter()
            .enumerate()
            .map(|(b, l)| {
                l.ok_or_else(|| Error::Validation(format!("design block {b} has no observations")))
            })
            .collect()
    }

    /// Values of one phase in chronological order.
    pub fn phase_values(&self, intervention: bool) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.intervention)
            .filter(|(_, &on)| on == intervention)
            .map(|(v, _)| *v)
            .collect()
    }

    /// The same series with every value negated.
    pub fn negated(&self) -> PhaseSeries {
        PhaseSeries {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

/// Turns a statistic's lower-tail probability into a p-value.
fn p_from_cdf(cdf_at_stat: f64, upper_at_stat: f64, alternative: Alternative) -> f64 {
    match alternative {
        Alternative::Less => cdf_at_stat,
        Alternative::Greater => upper_at_stat,
        Alternative::TwoSided => (2.0 * cdf_at_stat.min(upper_at_stat)).min(1.0),
    }
}
