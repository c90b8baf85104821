//! The end-to-end analysis: load or synthesize a trial, train the
//! autoencoder, reduce embeddings to first-component scores, and test each
//! participant's score series.
//!
//! Every stage is a public function so a run can be reproduced piece by
//! piece; `analyze` chains them and `run` also writes the report files.

mod config;
mod report;
mod svg;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    DataSource, DirectionPolicy, PcaMode, PcaOptions, PipelineConfig, SynthSource, TestKind,
    TestOptions,
};
pub use report::{
    emit_report, load_report, write_pvalues, write_scores, ParticipantReport,
    PcaFitSummary, PcaSummary, Report, ScorePoint, ScoreSummary, TestEntry, REPORT_FILE,
    REPORT_FORMAT_VERSION,
};
pub use svg::participant_svg;

use crate::autoencoder::{AeModel, EmbeddingMatrix};
use crate::dataio::{
    load_reference, load_trial, preprocess, synth_generate, training_views, write_trial,
    ImageSample, ReferenceScores, TrialDesign,
};
use crate::error::{Error, Result};
use crate::pca;
use crate::stats::{
    lm_ar1, paired_t_test, randomization_test_mc, scrt_exact, two_sample_t_test, Alternative,
    PhaseSeries, TestResult,
};
use crate::tensor::Tensor;

const AUGMENT_TRAIN_STREAM: u64 = 4;
const AUGMENT_VAL_STREAM: u64 = 5;

/// Images and side information as they enter the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    /// Ordered by participant, day, slot.
    pub samples: Vec<ImageSample>,
    pub reference: Option<ReferenceScores>,
    pub warnings: Vec<String>,
}

pub fn load_stage(config: &PipelineConfig) -> Result<TrialData> {
    match &config.data {
        DataSource::Path(root) => {
            let loaded = load_trial(root, &config.design)?;
            Ok(TrialData {
                samples: loaded.samples,
                reference: load_reference(root)?,
                warnings: loaded.warnings,
            })
        }
        DataSource::Synth(source) => synthesize(source, &config.design, config.seed),
    }
}

/// Generates a synthetic trial for every participant of `source`.
///
/// The true lesion counts become the reference scores.
pub fn synthesize(source: &SynthSource, design: &TrialDesign, seed: u64) -> Result<TrialData> {
    let spec = crate::dataio::SynthSpec {
        seed,
        ..source.spec.clone()
    };
    let mut samples = Vec::new();
    let mut reference = ReferenceScores::new();
    for id in source.participant_ids() {
        let trial = synth_generate(&design.for_participant(&id), &spec)?;
        for (s, &k) in trial.samples.iter().zip(&trial.lesion_counts) {
            reference.insert((id.clone(), s.record.day, s.record.slot), k as f64);
        }
        samples.extend(trial.samples);
    }
    samples.sort_by(|a, b| a.record.key().cmp(&b.record.key()));
    Ok(TrialData {
        samples,
        reference: Some(reference),
        warnings: Vec::new(),
    })
}

/// Input of the `synth` command: a synthetic trial written to disk.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthJob {
    pub seed: u64,
    #[serde(default)]
    pub design: TrialDesign,
    #[serde(default = "default_participants")]
    pub participants: usize,
    #[serde(default)]
    pub spec: crate::dataio::SynthSpec,
}

fn default_participants() -> usize {
    SynthSource::default().participants
}

impl SynthJob {
    pub fn source(&self) -> SynthSource {
        SynthSource {
            participants: self.participants,
            spec: self.spec.clone(),
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<SynthJob> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let job: SynthJob = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid synth spec: {e}")))?;
        job.design.validate()?;
        job.spec.validate()?;
        if job.participants == 0 {
            return Err(Error::Config("synthetic trial needs at least one participant".into()));
        }
        Ok(job)
    }

    /// Writes images, `metadata.csv` and `reference.csv` under `out`.
    pub fn write(&self, out: &std::path::Path) -> Result<TrialData> {
        let data = synthesize(&self.source(), &self.design, self.seed)?;
        write_trial(out, &data.samples, data.reference.as_ref())?;
        Ok(data)
    }
}

/// Resizes every image to the autoencoder's input size.
pub fn preprocess_stage(samples: &[ImageSample], target_hw: (usize, usize)) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| preprocess(s, target_hw).map(|p| p.pixels))
        .collect()
}

/// Builds and trains the autoencoder on two augmented copies of `images`.
pub fn train_stage(config: &PipelineConfig, images: &[Tensor]) -> Result<AeModel> {
    let mut train_rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_rng.set_stream(AUGMENT_TRAIN_STREAM);
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed);
    val_rng.set_stream(AUGMENT_VAL_STREAM);
    let (train, val) = training_views(images, &config.augment, &mut train_rng, &mut val_rng)?;
    let mut model = AeModel::build(config.ae_config())?;
    model.train(&train, &val)?;
    Ok(model)
}

/// First-component scores for every row of `embeddings`.
///
/// `participants[i]` names the owner of row `i`; per-participant mode fits
/// one PCA per owner.
pub fn pca_stage(
    options: &PcaOptions,
    embeddings: &EmbeddingMatrix,
    participants: &[&str],
) -> Result<(Vec<f64>, PcaSummary)> {
    let x = embeddings.to_matrix();
    let summarize = |scope: &str, m: &pca::PcaModel| PcaFitSummary {
        scope: scope.to_string(),
        rows: 0,
        explained_variance_ratio: m.explained_variance_ratio.iter().take(5).copied().collect(),
        warnings: m.warnings.clone(),
    };
    match options.mode {
        PcaMode::Joint => {
            let model = pca::fit(&x)?;
            let scores = model.first_component_scores(&x)?;
            let fit = PcaFitSummary {
                rows: x.nrows(),
                ..summarize("all", &model)
            };
            Ok((scores, PcaSummary { mode: options.mode, fits: vec![fit] }))
        }
        PcaMode::PerParticipant => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in participants.iter().enumerate() {
                groups.entry(p).or_default().push(i);
            }
            let mut scores = vec![0.0; x.nrows()];
            let mut fits = Vec::new();
            for (id, rows) in groups {
                let sub = DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)]);
                let model = pca::fit(&sub).map_err(|e| e.for_participant(id))?;
                for (k, s) in model.first_component_scores(&sub)?.into_iter().enumerate() {
                    scores[rows[k]] = s;
                }
                fits.push(PcaFitSummary {
                    rows: rows.len(),
                    ..summarize(id, &model)
                });
            }
            Ok((scores, PcaSummary { mode: options.mode, fits }))
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// A series oriented according to the direction policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Oriented {
    pub series: PhaseSeries,
    pub flipped: bool,
    /// Correlation of the oriented scores with the reference scores.
    pub reference_correlation: Option<f64>,
    pub alternative: Alternative,
}

/// Applies the direction policy to a participant's series.
///
/// `reference` holds the reference score of each observation when known.
pub fn resolve_direction(
    series: &PhaseSeries,
    reference: Option<&[f64]>,
    options: &TestOptions,
) -> Result<Oriented> {
    let correlation = reference.and_then(|r| pearson(&series.values, r));
    let flipped = match options.direction_policy {
        DirectionPolicy::AlignWithReference => {
            let r = reference.ok_or_else(|| {
                Error::Validation("direction policy needs reference scores, but none were found".into())
            })?;
            if r.len() != series.len() {
                return Err(Error::Validation(format!(
                    "{} reference scores for {} observations",
                    r.len(),
                    series.len()
                )));
            }
            correlation.is_some_and(|c| c < 0.0)
        }
        DirectionPolicy::AsIs | DirectionPolicy::TwoSided => false,
    };
    Ok(Oriented {
        series: if flipped { series.negated() } else { series.clone() },
        flipped,
        reference_correlation: correlation.map(|c| if flipped { -c } else { c }),
        alternative: options.effective_alternative(),
    })
}

fn run_test(
    kind: TestKind,
    oriented: &Oriented,
    covariates: Option<&DMatrix<f64>>,
    options: &TestOptions,
    mc_seed: u64,
) -> Result<TestResult> {
    let (s, alt) = (&oriented.series, oriented.alternative);
    match kind {
        TestKind::T => paired_t_test(s, alt, options.pairing),
        TestKind::TTwoSample => two_sample_t_test(s, alt),
        TestKind::LmAr1 => lm_ar1(s, covariates, alt, &options.ar1),
        TestKind::Scrt => scrt_exact(s, &options.scheme, alt),
        TestKind::McRt => randomization_test_mc(
            s,
            &options.scheme,
            options.mc_support,
            alt,
            options.mc_draws,
            mc_seed,
        ),
    }
}

fn covariate_matrix(samples: &[&ImageSample]) -> Result<DMatrix<f64>> {
    let mut temps = Vec::with_capacity(samples.len());
    for s in samples {
        let t = s.record.covariates.temperature.ok_or_else(|| {
            Error::Validation(format!(
                "day {} slot {} has no temperature for the covariate model",
                s.record.day, s.record.slot
            ))
        })?;
        temps.push(t);
    }
    Ok(DMatrix::from_fn(samples.len(), 2, |i, j| match j {
        0 => temps[i],
        _ => f64::from(u8::from(samples[i].record.covariates.lotion)),
    }))
}

/// Runs the selected tests on each participant's score series.
pub fn test_stage(
    config: &PipelineConfig,
    data: &TrialData,
    scores: &[f64],
) -> Result<Vec<ParticipantReport>> {
    let mut by_participant: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        by_participant.entry(&s.record.participant_id).or_default().push(i);
    }
    let design = &config.design;
    let mut reports = Vec::new();
    for (index, (id, rows)) in by_participant.into_iter().enumerate() {
        let result = (|| {
            let samples: Vec<&ImageSample> = rows.iter().map(|&i| &data.samples[i]).collect();
            let values: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
            let labels = samples.iter().map(|s| s.record.intervention).collect();
            let times: Vec<usize> = samples
                .iter()
                .map(|s| design.timestamp(s.record.day, s.record.slot))
                .collect();
            let series = PhaseSeries::from_design(values.clone(), labels, times.clone(), design)?;
            let reference: Option<Vec<f64>> = data.reference.as_ref().and_then(|r| {
                samples
                    .iter()
                    .map(|s| r.get(&(s.record.participant_id.clone(), s.record.day, s.record.slot)).copied())
                    .collect()
            });
            let oriented = resolve_direction(&series, reference.as_deref(), &config.tests)?;
            let covariates = if config.tests.lm_covariates {
                Some(covariate_matrix(&samples)?)
            } else {
                None
            };
            let mc_seed = config.seed.wrapping_add(index as u64);
            let tests = config
                .tests
                .menu
                .iter()
                .map(|&kind| {
                    run_test(kind, &oriented, covariates.as_ref(), &config.tests, mc_seed)
                        .map(|result| TestEntry { test: kind, result })
                })
                .collect::<Result<Vec<_>>>()?;

            let points = samples
                .iter()
                .enumerate()
                .map(|(k, s)| ScorePoint {
                    timestamp: times[k],
                    day: s.record.day,
                    slot: s.record.slot,
                    intervention: s.record.intervention,
                    pc_score: oriented.series.values[k],
                    reference: reference.as_ref().map(|r| r[k]),
                })
                .collect();
            Ok(ParticipantReport {
                id: id.to_string(),
                n_observations: rows.len(),
                flipped: oriented.flipped,
                reference_correlation: oriented.reference_correlation,
                pc_summary: ScoreSummary::of(&oriented.series.values),
                reference_summary: reference.as_deref().map(ScoreSummary::of),
                scores: points,
                tests,
            })
        })();
        reports.push(result.map_err(|e: Error| e.for_participant(id))?);
    }
    Ok(reports)
}

/// Runs every stage and assembles the report without writing files.
pub fn analyze(config: &PipelineConfig) -> Result<Report> {
    config.validate()?;
    let data = load_stage(config).map_err(|e| e.in_stage("load"))?;
    if data.samples.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 images, found {}",
            data.samples.len()
        ))
        .in_stage("load"));
    }
    let images = preprocess_stage(&data.samples, config.autoencoder.input_hw)
        .map_err(|e| e.in_stage("preprocess"))?;
    let model = train_stage(config, &images).map_err(|e| e.in_stage("train"))?;
    let embeddings = model.embed(&images).map_err(|e| e.in_stage("embed"))?;
    let owners: Vec<&str> = data.samples.iter().map(|s| s.record.participant_id.as_str()).collect();
    let (scores, pca_summary) =
        pca_stage(&config.pca, &embeddings, &owners).map_err(|e| e.in_stage("pca"))?;
    let participants = test_stage(config, &data, &scores).map_err(|e| e.in_stage("stats"))?;

    let mut warnings = data.warnings.clone();
    for fit in &pca_summary.fits {
        warnings.extend(fit.warnings.iter().map(|w| format!("pca ({}): {w}", fit.scope)));
    }
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        parameter_count: model.parameter_count(),
        loss_history: model.history.clone(),
        pca: pca_summary,
        participants,
        warnings,
    })
}

/// Runs the pipeline and writes the report into `config.output_dir`.
///
/// Wall time goes to a separate `run_meta.json`, so `report.json` is a pure
/// function of the config.
pub fn run(config: &PipelineConfig) -> Result<Report> {
    let start = Instant::now();
    let report = analyze(config)?;
    emit_report(&report, &config.output_dir).map_err(|e| e.in_stage("report"))?;
    let meta = serde_json::json!({
        "tool_version": report.tool_version,
        "config_hash": report.config_hash,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    let path = config.output_dir.join("run_meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("json value") + "\n")
        .map_err(|e| Error::io(&path, e).in_stage("report"))?;
    Ok(report)
}
