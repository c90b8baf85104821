use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Covariates, ImageSample, ObservationRecord, TrialDesign};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic skin-image generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub image_hw: (usize, usize),
    pub base_skin_tone: [f64; 3],
    pub lesion_color: [f64; 3],
    /// Poisson mean of the lesion count without treatment.
    pub lesion_count_off: f64,
    /// Poisson mean of the lesion count under treatment.
    pub lesion_count_on: f64,
    pub lesion_radius_px: (f64, f64),
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            image_hw: (32, 32),
            base_skin_tone: [0.86, 0.67, 0.56],
            lesion_color: [0.78, 0.22, 0.22],
            lesion_count_off: 12.0,
            lesion_count_on: 4.0,
            lesion_radius_px: (1.5, 2.5),
            noise_sd: 0.03,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.image_hw.0 == 0 || self.image_hw.1 == 0 {
            return fail("image_hw must be positive");
        }
        let colors = self.base_skin_tone.iter().chain(&self.lesion_color);
        if colors.clone().any(|c| !(0.0..=1.0).contains(c)) {
            return fail("colours must lie in [0, 1]");
        }
        if !(self.lesion_count_off >= 0.0 && self.lesion_count_on >= 0.0)
            || !self.lesion_count_off.is_finite()
            || !self.lesion_count_on.is_finite()
        {
            return fail("lesion count means must be finite and non-negative");
        }
        let (lo, hi) = self.lesion_radius_px;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail("lesion_radius_px must be a positive range");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail("noise_sd must be finite and non-negative");
        }
        Ok(())
    }
}

/// Generated images plus the ground truth behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub samples: Vec<ImageSample>,
    pub lesion_counts: Vec<usize>,
}

/// Stream id derived from the participant id, so each participant's images
/// come from a distinct, reproducible substream of the spec seed.
fn participant_stream(participant_id: &str) -> u64 {
    let digest = Sha256::digest(participant_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn lesion_count(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean == 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("mean validated positive");
    poisson.sample(rng) as usize
}

/// One image per (day, slot) of a strictly alternating trial.
///
/// Pixel values are quantised to multiples of 1/255, so writing the trial to
/// PNG and reading it back reproduces the tensors exactly.
pub fn synth_generate(design: &TrialDesign, spec: &SynthSpec) -> Result<SyntheticTrial> {
    design.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(participant_stream(&design.participant_id));
    let noise = Normal::new(0.0, spec.noise_sd).expect("noise_sd validated");
    let (h, w) = spec.image_hw;
    let (r_lo, r_hi) = spec.lesion_radius_px;

    let mut samples = Vec::with_capacity(design.n_observations());
    let mut lesion_counts = Vec::with_capacity(design.n_observations());
    for day in 0..design.n_days {
        let intervention = design.intervention_on_day(day);
        for slot in 0..design.measurements_per_day {
            let mean = if intervention {
                spec.lesion_count_on
            } else {
                spec.lesion_count_off
            };
            let count = lesion_count(mean, &mut rng);
            let mut lesion = vec![false; h * w];
            for _ in 0..count {
                let cy = rng.gen_range(0.0..h as f64);
                let cx = rng.gen_range(0.0..w as f64);
                let r = rng.gen_range(r_lo..=r_hi);
                for y in 0..h {
                    for x in 0..w {
                        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                        if dy * dy + dx * dx <= r * r {
                            lesion[y * w + x] = true;
                        }
                    }
                }
            }
            let mut data = vec![0.0; 3 * h * w];
            for c in 0..3 {
                for (i, &is_lesion) in lesion.iter().enumerate() {
                    let base = if is_lesion {
                        spec.lesion_color[c]
                    } else {
                        spec.base_skin_tone[c]
                    };
                    let v: f64 = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    data[c * h * w + i] = (v * 255.0).round() / 255.0;
                }
            }
            let temperature = (rng.gen_range(16.0..26.0_f64) * 10.0).round() / 10.0;
            let lotion = rng.gen_bool(0.25);
            let record = ObservationRecord {
                participant_id: design.participant_id.clone(),
                day,
                slot,
                intervention,
                covariates: Covariates {
                    temperature: Some(temperature),
                    lotion,
                },
                image_ref: PathBuf::from(format!(
                    "{}_d{day:02}_s{slot}.png",
                    design.participant_id
                )),
            };
            samples.push(ImageSample {
                pixels: Tensor::new(vec![3, h, w], data)?,
                record,
            });
            lesion_counts.push(count);
        }
    }
    Ok(SyntheticTrial {
        samples,
        lesion_counts,
    })
}
