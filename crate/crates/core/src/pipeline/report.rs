use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{PcaMode, PipelineConfig, TestKind};
use super::svg::participant_svg;
use crate::autoencoder::LossHistory;
use crate::error::{Error, Result};
use crate::stats::TestResult;

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ScoreSummary {
    pub fn of(values: &[f64]) -> ScoreSummary {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        ScoreSummary { min, max, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub timestamp: usize,
    pub day: usize,
    pub slot: usize,
    pub intervention: bool,
    pub pc_score: f64,
    /// Reference score, reported alongside for information only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    pub test: TestKind,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub id: String,
    pub n_observations: usize,
    /// Whether the scores were negated by the direction policy.
    pub flipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_correlation: Option<f64>,
    pub pc_summary: ScoreSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_summary: Option<ScoreSummary>,
    pub scores: Vec<ScorePoint>,
    pub tests: Vec<TestEntry>,
}

impl ParticipantReport {
    pub fn p_value(&self, kind: TestKind) -> Option<f64> {
        self.tests
            .iter()
            .find(|t| t.test == kind)
            .map(|t| t.result.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFitSummary {
    /// `all` for a joint fit, otherwise the participant id.
    pub scope: String,
    pub rows: usize,
    /// Leading ratios, at most five.
    pub explained_variance_ratio: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub mode: PcaMode,
    pub fits: Vec<PcaFitSummary>,
}

/// Full result of a run. Contains nothing time- or host-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub parameter_count: usize,
    pub loss_history: LossHistory,
    pub pca: PcaSummary,
    pub participants: Vec<ParticipantReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per participant, one p-value column per selected test.
pub fn write_pvalues(report: &Report, path: &Path) -> Result<()> {
    let menu = &report.config.tests.menu;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    let mut header = vec!["participant".to_string()];
    header.extend(menu.iter().map(|k| k.key().to_string()));
    w.write_record(&header).map_err(fail)?;
    for p in &report.participants {
        let mut row = vec![p.id.clone()];
        row.extend(menu.iter().map(|&k| p.p_value(k).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scores(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["timestamp", "participant", "intervention", "pc_score"])
        .map_err(fail)?;
    for p in &report.participants {
        for s in &p.scores {
            w.write_record([
                s.timestamp.to_string(),
                p.id.clone(),
                u8::from(s.intervention).to_string(),
                s.pc_score.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn svg_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("participant_{safe}.svg")
}

/// Writes `report.json`, `pvalues.csv`, `scores.csv` and one SVG per
/// participant into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    write_text(&dir.join(REPORT_FILE), &json)?;
    write_pvalues(report, &dir.join("pvalues.csv"))?;
    write_scores(report, &dir.join("scores.csv"))?;
    let design = &report.config.design;
    for p in &report.participants {
        write_text(&dir.join(svg_name(&p.id)), &participant_svg(p, design))?;
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<Report> {
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}
