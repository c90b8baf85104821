//! Trial data: designs, the metadata table, image decoding and
//! augmentation, and a synthetic trial generator with known ground truth.

mod design;
mod image_ops;
mod metadata;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

pub use design::{Phase, TrialDesign};
pub use image_ops::{
    augment, augment_pixels, decode_image, encode_png, flip_horizontal, preprocess,
    resize_bilinear, training_views, AugmentConfig,
};
pub use metadata::{
    read_metadata, read_reference, write_metadata, write_reference, Covariates,
    ObservationRecord, ReferenceScores, METADATA_FILE, METADATA_HEADER, REFERENCE_FILE,
};
pub use synth::{synth_generate, SynthSpec, SyntheticTrial};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An image (`[3, H, W]`, values in [0, 1]) with its metadata row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor,
    pub record: ObservationRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrial {
    /// Ordered by participant, day, slot.
    pub samples: Vec<ImageSample>,
    pub warnings: Vec<String>,
}

fn describe(r: &ObservationRecord) -> String {
    format!("{} day {} slot {}", r.participant_id, r.day, r.slot)
}

fn phase_string(phases: &[Option<Phase>]) -> String {
    phases
        .iter()
        .map(|p| p.map_or("-".to_string(), |p| p.to_string()))
        .collect()
}

/// Checks records against the design. Hard violations are errors; a block
/// order that differs from strict alternation only produces a warning.
pub fn check_records(records: &[ObservationRecord], design: &TrialDesign) -> Result<Vec<String>> {
    design.validate()?;
    let out_of_range: Vec<String> = records
        .iter()
        .filter(|r| r.day >= design.n_days || r.slot >= design.measurements_per_day)
        .map(describe)
        .collect();
    if !out_of_range.is_empty() {
        return Err(Error::Validation(format!(
            "rows outside the {}-day, {}-per-day design: {}",
            design.n_days,
            design.measurements_per_day,
            out_of_range.join("; ")
        )));
    }

    let mut seen = HashSet::new();
    let duplicates: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.key()))
        .map(describe)
        .collect();
    if !duplicates.is_empty() {
        return Err(Error::Validation(format!(
            "duplicate observations: {}",
            duplicates.join("; ")
        )));
    }

    let mut by_participant: BTreeMap<&str, Vec<&ObservationRecord>> = BTreeMap::new();
    for r in records {
        by_participant.entry(&r.participant_id).or_default().push(r);
    }
    let mut warnings = Vec::new();
    let mut mixed = Vec::new();
    for (pid, rows) in &by_participant {
        let mut blocks: Vec<Option<Phase>> = vec![None; design.block_count()];
        let mut rows = rows.clone();
        rows.sort_by_key(|r| (r.day, r.slot));
        for r in &rows {
            let b = design.block_of_day(r.day);
            let phase = Phase::from_intervention(r.intervention);
            match blocks[b] {
                None => blocks[b] = Some(phase),
                Some(p) if p != phase => mixed.push(describe(r)),
                Some(_) => {}
            }
        }
        let expected: Vec<Option<Phase>> = design.phases().into_iter().map(Some).collect();
        let observed_matches = blocks
            .iter()
            .zip(&expected)
            .all(|(o, e)| o.is_none() || o == e);
        if !observed_matches {
            warnings.push(format!(
                "participant {pid}: block sequence {} differs from the design's alternation {}",
                phase_string(&blocks),
                phase_string(&expected)
            ));
        }
        let a = blocks.iter().filter(|p| **p == Some(Phase::A)).count();
        let b = blocks.iter().filter(|p| **p == Some(Phase::B)).count();
        if a != b {
            warnings.push(format!(
                "participant {pid}: {a} non-intervention and {b} intervention blocks observed"
            ));
        }
    }
    if !mixed.is_empty() {
        return Err(Error::Validation(format!(
            "intervention changes within a design block at: {}",
            mixed.join("; ")
        )));
    }
    Ok(warnings)
}

/// Reads `metadata.csv` under `root` and decodes every referenced image.
///
/// When `design.participant_id` is non-empty only that participant's rows are
/// loaded. Missing slots are fine; the table decides what exists.
pub fn load_trial(root: &Path, design: &TrialDesign) -> Result<LoadedTrial> {
    let mut records = read_metadata(&root.join(METADATA_FILE))?;
    if !design.participant_id.is_empty() {
        records.retain(|r| r.participant_id == design.participant_id);
    }
    let warnings = check_records(&records, design)?;
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    let samples = records
        .into_iter()
        .map(|record| {
            let pixels = decode_image(&root.join(&record.image_ref))?;
            Ok(ImageSample { pixels, record })
        })
        .collect::<Result<Vec<_>>>()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedTrial { samples, warnings })
}

/// Reads `reference.csv` under `root` if it exists.
pub fn load_reference(root: &Path) -> Result<Option<ReferenceScores>> {
    let path = root.join(REFERENCE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    read_reference(&path).map(Some)
}

/// Writes images as PNG plus the metadata table (and optional reference
/// scores) in the layout `load_trial` reads.
pub fn write_trial(
    root: &Path,
    samples: &[ImageSample],
    reference: Option<&ReferenceScores>,
) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for s in samples {
        let path = root.join(&s.record.image_ref);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        encode_png(&s.pixels, &path)?;
    }
    let records: Vec<ObservationRecord> = samples.iter().map(|s| s.record.clone()).collect();
    write_metadata(&root.join(METADATA_FILE), &records)?;
    if let Some(scores) = reference {
        write_reference(&root.join(REFERENCE_FILE), scores)?;
    }
    Ok(())
}
