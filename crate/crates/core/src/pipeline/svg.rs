use std::fmt::Write;

use super::report::ParticipantReport;
use crate::dataio::TrialDesign;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 240.0;
const MARGIN: f64 = 24.0;
const ON_COLOR: &str = "#4c72b0";
const OFF_COLOR: &str = "#dd8452";
const EMPTY_COLOR: &str = "#cccccc";

/// Score trace over time with one shaded band per design block. Bands take
/// the phase actually observed in the block, grey when it has no images.
pub fn participant_svg(p: &ParticipantReport, design: &TrialDesign) -> String {
    let n_time = design.n_observations().max(1) as f64;
    let per_block = design.block_length().max(1);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |t: f64| MARGIN + plot_w * t / n_time;

    let mut lo = p.pc_summary.min;
    let mut hi = p.pc_summary.max;
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let y = |v: f64| MARGIN + plot_h * (hi - v) / (hi - lo);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&p.id));
    for b in 0..design.block_count() {
        let in_block: Vec<bool> = p
            .scores
            .iter()
            .filter(|s| s.timestamp / per_block == b)
            .map(|s| s.intervention)
            .collect();
        let color = match in_block.first() {
            None => EMPTY_COLOR,
            Some(true) => ON_COLOR,
            Some(false) => OFF_COLOR,
        };
        let x0 = x((b * per_block) as f64);
        let x1 = x(((b + 1) * per_block) as f64);
        let _ = writeln!(
            out,
            r#"<rect class="phase" x="{x0:.2}" y="{MARGIN}" width="{:.2}" height="{plot_h}" fill="{color}" fill-opacity="0.25"/>"#,
            x1 - x0
        );
    }
    let points: Vec<String> = p
        .scores
        .iter()
        .map(|s| format!("{:.2},{:.2}", x(s.timestamp as f64 + 0.5), y(s.pc_score)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline class="score" fill="none" stroke="#222222" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{ScorePoint, ScoreSummary};

    #[test]
    fn one_band_per_block_and_grey_when_empty() {
        let design = TrialDesign::default();
        let per_block = design.block_length();
        let scores: Vec<ScorePoint> = (0..design.n_observations())
            .filter(|t| t / per_block != 3)
            .map(|t| ScorePoint {
                timestamp: t,
                day: t / 3,
                slot: t % 3,
                intervention: (t / per_block) % 2 == 1,
                pc_score: t as f64,
                reference: None,
            })
            .collect();
        let values: Vec<f64> = scores.iter().map(|s| s.pc_score).collect();
        let p = ParticipantReport {
            id: "p<1>".into(),
            n_observations: scores.len(),
            flipped: false,
            reference_correlation: None,
            pc_summary: ScoreSummary::of(&values),
            reference_summary: None,
            scores,
            tests: vec![],
        };
        let svg = participant_svg(&p, &design);
        assert_eq!(svg.matches(r#"class="phase""#).count(), design.block_count());
        assert_eq!(svg.matches(EMPTY_COLOR).count(), 1);
        assert_eq!(svg.matches(ON_COLOR).count(), 3);
        assert!(svg.contains("p&lt;1&gt;"));
    }
}
