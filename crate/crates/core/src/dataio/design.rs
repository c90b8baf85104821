use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phase label of a design block. `B` is the intervention phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
}

impl Phase {
    pub fn other(self) -> Phase {
        match self {
            Phase::A => Phase::B,
            Phase::B => Phase::A,
        }
    }

    pub fn is_intervention(self) -> bool {
        self == Phase::B
    }

    pub fn from_intervention(on: bool) -> Phase {
        if on {
            Phase::B
        } else {
            Phase::A
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::A => "A",
            Phase::B => "B",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Phase::A),
            "B" | "b" => Ok(Phase::B),
            other => Err(Error::Config(format!("phase must be A or B, got {other:?}"))),
        }
    }
}

/// Alternating block schedule of one participant's trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDesign {
    #[serde(default)]
    pub participant_id: String,
    pub n_days: usize,
    pub measurements_per_day: usize,
    pub block_length_days: usize,
    #[serde(default = "default_first_block")]
    pub first_block: Phase,
}

fn default_first_block() -> Phase {
    Phase::A
}

impl Default for TrialDesign {
    /// 16 days, three images a day, two-day blocks starting without treatment.
    fn default() -> Self {
        TrialDesign {
            participant_id: String::new(),
            n_days: 16,
            measurements_per_day: 3,
            block_length_days: 2,
            first_block: Phase::A,
        }
    }
}

impl TrialDesign {
    pub fn for_participant(&self, participant_id: impl Into<String>) -> TrialDesign {
        TrialDesign {
            participant_id: participant_id.into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 || self.measurements_per_day == 0 || self.block_length_days == 0 {
            return Err(Error::Config(
                "n_days, measurements_per_day and block_length_days must be positive".into(),
            ));
        }
        if !self.n_days.is_multiple_of(self.block_length_days) {
            return Err(Error::Config(format!(
                "n_days ({}) is not divisible by block_length_days ({})",
                self.n_days, self.block_length_days
            )));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.n_days / self.block_length_days
    }

    /// Observations per complete block.
    pub fn block_length(&self) -> usize {
        self.block_length_days * self.measurements_per_day
    }

    pub fn n_observations(&self) -> usize {
        self.n_days * self.measurements_per_day
    }

    pub fn block_of_day(&self, day: usize) -> usize {
        day / self.block_length_days
    }

    /// Phase of a block under strict alternation.
    pub fn block_phase(&self, block: usize) -> Phase {
        if block.is_multiple_of(2) {
            self.first_block
        } else {
            self.first_block.other()
        }
    }

    pub fn phases(&self) -> Vec<Phase> {
        (0..self.block_count()).map(|b| self.block_phase(b)).collect()
    }

    pub fn intervention_on_day(&self, day: usize) -> bool {
        self.block_phase(self.block_of_day(day)).is_intervention()
    }

    /// Position of an observation on the trial clock.
    pub fn timestamp(&self, day: usize, slot: usize) -> usize {
        day * self.measurements_per_day + slot
    }
}
