use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const METADATA_FILE: &str = "metadata.csv";
pub const REFERENCE_FILE: &str = "reference.csv";
pub const METADATA_HEADER: [&str; 7] = [
    "participant_id",
    "day",
    "slot",
    "intervention",
    "temperature",
    "lotion",
    "filename",
];
const REFERENCE_HEADER: [&str; 4] = ["participant_id", "day", "slot", "score"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Covariates {
    /// Degrees Celsius; absent when the cell is empty.
    pub temperature: Option<f64>,
    pub lotion: bool,
}

/// One metadata row: when an image was taken and under which condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub participant_id: String,
    pub day: usize,
    pub slot: usize,
    pub intervention: bool,
    pub covariates: Covariates,
    /// Image path relative to the trial root.
    pub image_ref: PathBuf,
}

impl ObservationRecord {
    pub fn key(&self) -> (&str, usize, usize) {
        (&self.participant_id, self.day, self.slot)
    }
}

#[derive(Deserialize)]
struct Row {
    participant_id: String,
    day: usize,
    slot: usize,
    #[serde(deserialize_with = "flag")]
    intervention: bool,
    temperature: Option<f64>,
    #[serde(deserialize_with = "flag")]
    lotion: bool,
    filename: String,
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(serde::de::Error::custom(format!(
            "expected 0/1 or true/false, got {other:?}"
        ))),
    }
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != want {
        return Err(Error::format(
            path,
            format!("header must be {:?}, got {:?}", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn row_error(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("row {line}: {e}"))
}

/// Reads a metadata table. Row numbers in errors count the header as row 1.
pub fn read_metadata(path: &Path) -> Result<Vec<ObservationRecord>> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &METADATA_HEADER)?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| row_error(path, i + 2, e))?;
        if row.temperature.is_some_and(|t| !t.is_finite()) {
            return Err(row_error(path, i + 2, "temperature is not finite"));
        }
        records.push(ObservationRecord {
            participant_id: row.participant_id,
            day: row.day,
            slot: row.slot,
            intervention: row.intervention,
            covariates: Covariates {
                temperature: row.temperature,
                lotion: row.lotion,
            },
            image_ref: PathBuf::from(row.filename),
        });
    }
    Ok(records)
}

pub fn write_metadata(path: &Path, records: &[ObservationRecord]) -> Result<()> {
    let mut writer = csv_writer(path)?;
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(METADATA_HEADER).map_err(fail)?;
    for r in records {
        let temperature = r.covariates.temperature.map(|t| t.to_string()).unwrap_or_default();
        writer
            .write_record([
                r.participant_id.as_str(),
                &r.day.to_string(),
                &r.slot.to_string(),
                if r.intervention { "1" } else { "0" },
                &temperature,
                if r.covariates.lotion { "1" } else { "0" },
                &r.image_ref.to_string_lossy(),
            ])
            .map_err(fail)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Externally scored outcome per observation, keyed by (participant, day, slot).
pub type ReferenceScores = BTreeMap<(String, usize, usize), f64>;

#[derive(Deserialize)]
struct ReferenceRow {
    participant_id: String,
    day: usize,
    slot: usize,
    score: f64,
}

pub fn read_reference(path: &Path) -> Result<ReferenceScores> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &REFERENCE_HEADER)?;
    let mut scores = BTreeMap::new();
    for (i, row) in reader.deserialize::<ReferenceRow>().enumerate() {
        let row = row.map_err(|e| row_error(path, i + 2, e))?;
        let key = (row.participant_id, row.day, row.slot);
        if scores.insert(key, row.score).is_some() {
            return Err(row_error(path, i + 2, "duplicate (participant_id, day, slot)"));
        }
    }
    Ok(scores)
}

pub fn write_reference(path: &Path, scores: &ReferenceScores) -> Result<()> {
    let mut writer = csv_writer(path)?;
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(REFERENCE_HEADER).map_err(fail)?;
    for ((participant_id, day, slot), score) in scores {
        writer
            .write_record([
                participant_id.as_str(),
                &day.to_string(),
                &slot.to_string(),
                &score.to_string(),
            ])
            .map_err(fail)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
