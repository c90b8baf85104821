use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AeConfig;
use crate::dataio::{AugmentConfig, SynthSpec, TrialDesign};
use crate::error::{Error, Result};
use crate::stats::{Alternative, Ar1Options, AssignmentScheme, McSupport, Pairing};

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A directory holding `metadata.csv` and the images.
    Path(PathBuf),
    /// A generated trial; its seed is the pipeline seed.
    Synth(SynthSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSource {
    /// Participants are named `p1`, `p2`, ...
    pub participants: usize,
    pub spec: SynthSpec,
}

impl Default for SynthSource {
    fn default() -> Self {
        SynthSource {
            participants: 5,
            spec: SynthSpec::default(),
        }
    }
}

impl SynthSource {
    pub fn participant_ids(&self) -> Vec<String> {
        (1..=self.participants).map(|i| format!("p{i}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    /// One PCA over every participant's embeddings.
    #[default]
    Joint,
    PerParticipant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaOptions {
    pub mode: PcaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Paired t-test.
    T,
    /// Pooled two-sample t-test.
    TTwoSample,
    LmAr1,
    Scrt,
    McRt,
}

impl TestKind {
    pub fn key(self) -> &'static str {
        match self {
            TestKind::T => "t",
            TestKind::TTwoSample => "t_two_sample",
            TestKind::LmAr1 => "lm_ar1",
            TestKind::Scrt => "scrt",
            TestKind::McRt => "mc_rt",
        }
    }
}

/// How the arbitrary sign of the first component is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    /// Keep the PCA sign convention and test in `alternative`'s direction.
    AsIs,
    /// Orient scores to correlate positively with the reference scores, then
    /// test in `alternative`'s direction.
    AlignWithReference,
    /// Ignore direction: every test is two-sided.
    #[default]
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestOptions {
    pub menu: Vec<TestKind>,
    pub direction_policy: DirectionPolicy,
    /// Direction used by the one-sided policies; `less` means the
    /// intervention lowers the score.
    pub alternative: Alternative,
    pub pairing: Pairing,
    pub scheme: AssignmentScheme,
    pub mc_draws: usize,
    pub mc_support: McSupport,
    pub ar1: Ar1Options,
    /// Add temperature and lotion as covariates of the AR(1) model.
    pub lm_covariates: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            menu: vec![TestKind::T, TestKind::LmAr1, TestKind::Scrt, TestKind::McRt],
            direction_policy: DirectionPolicy::TwoSided,
            alternative: Alternative::Less,
            pairing: Pairing::Chronological,
            scheme: AssignmentScheme::default(),
            mc_draws: 10_000,
            mc_support: McSupport::Scheme,
            ar1: Ar1Options::default(),
            lm_covariates: false,
        }
    }
}

impl TestOptions {
    /// The direction every test runs in after the policy is applied.
    pub fn effective_alternative(&self) -> Alternative {
        match self.direction_policy {
            DirectionPolicy::TwoSided => Alternative::TwoSided,
            _ => self.alternative,
        }
    }
}

/// Everything one pipeline run needs. `seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub design: TrialDesign,
    /// The autoencoder's own `seed` field is replaced by the pipeline seed.
    #[serde(default)]
    pub autoencoder: AeConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub pca: PcaOptions,
    #[serde(default)]
    pub tests: TestOptions,
    /// Where `run` writes. Not serialized, so it never affects the report
    /// bytes or the config hash.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("nof1-out")
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        // Relative data paths are relative to the config file.
        if let DataSource::Path(p) = &mut config.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tests.menu.is_empty() {
            return Err(Error::Config("the test menu is empty; select at least one test".into()));
        }
        let mut seen = self.tests.menu.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tests.menu.len() {
            return Err(Error::Config("the test menu lists a test twice".into()));
        }
        if self.tests.menu.contains(&TestKind::McRt) && self.tests.mc_draws == 0 {
            return Err(Error::Config("mc_draws must be at least 1".into()));
        }
        self.design.validate()?;
        self.autoencoder.geometry()?;
        if let DataSource::Synth(s) = &self.data {
            if s.participants == 0 {
                return Err(Error::Config("synthetic trial needs at least one participant".into()));
            }
            s.spec.validate()?;
        }
        Ok(())
    }

    /// The autoencoder config actually trained.
    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            seed: self.seed,
            ..self.autoencoder.clone()
        }
    }

    /// SHA-256 of the config's canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
