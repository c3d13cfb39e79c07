//! Per-review attention heatmaps rendered as standalone HTML.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ManError, Result};
use crate::model::{aspect_rank, predict, ForwardOutput, RankingMode};

/// Width of the longest score bar, in pixels.
pub const BAR_PX: f64 = 240.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectRow {
    pub aspect: String,
    /// `α + β` per unmasked token.
    pub intensity: Vec<f64>,
    pub score: f64,
    /// Score divided by the largest score in the report, in `[0, 1]`.
    pub bar: f64,
    pub prediction: u8,
    /// 0 for the top-ranked aspect.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapReport {
    /// Position of the review in its input file.
    pub index: usize,
    pub tokens: Vec<String>,
    pub rows: Vec<AspectRow>,
    pub overall: u8,
    pub overall_confidence: f64,
    pub mode: RankingMode,
}

impl HeatmapReport {
    pub fn build(
        index: usize,
        tokens: Vec<String>,
        output: &ForwardOutput,
        aspects: &[String],
        mode: RankingMode,
    ) -> Result<Self> {
        if aspects.len() != output.traces.len() {
            return Err(ManError::shape(format!(
                "{} aspect names for {} attention traces",
                aspects.len(),
                output.traces.len()
            )));
        }
        let ranked = aspect_rank(&output.traces, mode);
        let max_score = ranked.first().map_or(0.0, |r| r.1);
        let mut rows: Vec<AspectRow> = Vec::with_capacity(aspects.len());
        for (k, trace) in output.traces.iter().enumerate() {
            let intensity: Vec<f64> = (0..trace.mask.len())
                .filter(|&t| trace.mask[t])
                .map(|t| trace.alpha[t] + trace.beta.as_ref().map_or(0.0, |b| b[t]))
                .collect();
            if intensity.len() != tokens.len() {
                return Err(ManError::shape(format!(
                    "{} tokens but {} unmasked attention positions",
                    tokens.len(),
                    intensity.len()
                )));
            }
            let rank = ranked.iter().position(|r| r.0 == k).expect("every aspect ranked");
            let score = ranked[rank].1;
            rows.push(AspectRow {
                aspect: aspects[k].clone(),
                intensity,
                score,
                bar: if max_score > 0.0 { score / max_score } else { 0.0 },
                prediction: predict(output.y_aspect[k]),
                rank,
            });
        }
        let overall = predict(output.y_overall);
        Ok(HeatmapReport {
            index,
            tokens,
            rows,
            overall,
            overall_confidence: output.y_overall[overall as usize],
            mode,
        })
    }

    pub fn top_aspect(&self) -> Option<&AspectRow> {
        self.rows.iter().find(|r| r.rank == 0)
    }

    /// Largest intensity anywhere in the report.
    pub fn max_intensity(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.intensity.iter().copied())
            .fold(0.0, f64::max)
    }
}

fn polarity(p: u8) -> &'static str {
    if p == 1 {
        "positive"
    } else {
        "negative"
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Grey level for a normalized intensity: 255 (white) at 0, 0 (black) at 1.
pub fn shade(normalized: f64) -> u8 {
    (255.0 * (1.0 - normalized.clamp(0.0, 1.0))).round() as u8
}

/// Static, self-contained HTML document for one report. The output depends
/// only on the report, so equal reports render to identical bytes.
pub fn render_heatmap(report: &HeatmapReport) -> String {
    let max = report.max_intensity();
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Review {index} attention</title>\n<style>\n\
         body{{font-family:sans-serif;margin:1.5em}}\n\
         table{{border-collapse:collapse}}\n\
         td{{padding:4px 6px;border:1px solid #ddd;text-align:center}}\n\
         th{{padding:4px 8px;text-align:left;white-space:nowrap}}\n\
         .bar{{display:inline-block;height:12px;background:#444}}\n\
         tr.top th{{color:#b00}}\n\
         </style>\n</head>\n<body>\n\
         <h1>Review {index}</h1>\n\
         <p>Overall prediction: <b>{overall}</b> ({conf:.3}). Ranking mode: {mode}.</p>\n\
         <table>\n",
        index = report.index,
        overall = polarity(report.overall),
        conf = report.overall_confidence,
        mode = report.mode,
    );
    for row in &report.rows {
        let top = row.rank == 0;
        let _ = write!(
            h,
            "<tr class=\"{}\" data-aspect=\"{}\">\n<th>{}{} ({})</th>\n",
            if top { "top" } else { "aspect" },
            escape(&row.aspect),
            if top { "&#9733; " } else { "" },
            escape(&row.aspect),
            polarity(row.prediction),
        );
        for (tok, &x) in report.tokens.iter().zip(&row.intensity) {
            let norm = if max > 0.0 { x / max } else { 0.0 };
            let g = shade(norm);
            let fg = if g < 128 { "#fff" } else { "#000" };
            let _ = writeln!(
                h,
                "<td style=\"background:rgb({g},{g},{g});color:{fg}\" title=\"{x:.6}\">{}</td>",
                escape(tok)
            );
        }
        let _ = write!(
            h,
            "<td style=\"text-align:left;border:none\"><span class=\"bar\" style=\"width:{:.1}px\"></span> {:.4}</td>\n</tr>\n",
            row.bar * BAR_PX,
            row.score
        );
    }
    h.push_str("</table>\n</body>\n</html>\n");
    h
}
