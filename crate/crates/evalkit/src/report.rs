//! Method × encoder score tables and judge verdict tables, as CSV and as
//! aligned plain text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::judge::{PairwiseJudgment, Verdict};
use crate::retrieval::RPrecisionReport;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    /// One cell per encoder column; `None` when not evaluated.
    pub scores: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub method_a: String,
    pub method_b: String,
    pub winner: Verdict,
    pub text_asset_alignment: Verdict,
    pub plausibility_3d: Verdict,
    pub texture_details: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub encoders: Vec<String>,
    pub rows: Vec<ScoreRow>,
    pub judgments: Vec<JudgmentRow>,
}

/// Rows and columns follow first appearance in `reports`.
pub fn eval_report(
    reports: &[(String, RPrecisionReport)],
    judgments: &[(String, String, PairwiseJudgment)],
) -> Result<EvalReport> {
    let mut out = EvalReport::default();
    for (_, r) in reports {
        if !out.encoders.contains(&r.encoder) {
            out.encoders.push(r.encoder.clone());
        }
    }
    for (method, r) in reports {
        let col = out.encoders.iter().position(|e| e == &r.encoder).expect("encoder collected");
        let row = match out.rows.iter().position(|row| &row.method == method) {
            Some(i) => i,
            None => {
                out.rows.push(ScoreRow {
                    method: method.clone(),
                    scores: vec![None; out.encoders.len()],
                });
                out.rows.len() - 1
            }
        };
        let cell = &mut out.rows[row].scores[col];
        if cell.is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate score for method `{method}` and encoder `{}`",
                r.encoder
            )));
        }
        *cell = Some(r.score);
    }
    out.judgments = judgments
        .iter()
        .map(|(a, b, j)| JudgmentRow {
            method_a: a.clone(),
            method_b: b.clone(),
            winner: j.winner,
            text_asset_alignment: j.criteria.text_asset_alignment,
            plausibility_3d: j.criteria.plausibility_3d,
            texture_details: j.criteria.texture_details,
        })
        .collect();
    Ok(out)
}

const JUDGMENT_HEADER: [&str; 6] = [
    "method_a",
    "method_b",
    "winner",
    "text_asset_alignment",
    "plausibility_3d",
    "texture_details",
];

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.judgments.is_empty()
    }

    /// `method,<encoder>...`; scores in shortest round-trip form, empty
    /// cells for missing scores.
    pub fn scores_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.encoders.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.method.clone()];
            rec.extend(row.scores.iter().map(|s| s.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        csv_string(w)
    }

    pub fn judgments_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(JUDGMENT_HEADER)?;
        for j in &self.judgments {
            w.write_record([
                j.method_a.clone(),
                j.method_b.clone(),
                j.winner.to_string(),
                j.text_asset_alignment.to_string(),
                j.plausibility_3d.to_string(),
                j.texture_details.to_string(),
            ])?;
        }
        csv_string(w)
    }

    pub fn from_csv(scores: &str, judgments: &str) -> Result<Self> {
        let mut out = EvalReport::default();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(scores.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("method") {
            return Err(Error::InvalidArgument("score table must start with a `method` column".into()));
        }
        out.encoders = header.iter().skip(1).map(str::to_string).collect();
        for rec in r.records() {
            let rec = rec?;
            let scores = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::InvalidArgument(format!("bad score `{cell}`: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.rows.push(ScoreRow {
                method: rec.get(0).unwrap_or_default().to_string(),
                scores,
            });
        }
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(judgments.as_bytes());
        if r.headers()?.iter().ne(JUDGMENT_HEADER) {
            return Err(Error::InvalidArgument("unexpected judgment table header".into()));
        }
        for rec in r.records() {
            let rec = rec?;
            let v = |i: usize| rec.get(i).unwrap_or_default().parse::<Verdict>();
            out.judgments.push(JudgmentRow {
                method_a: rec.get(0).unwrap_or_default().to_string(),
                method_b: rec.get(1).unwrap_or_default().to_string(),
                winner: v(2)?,
                text_asset_alignment: v(3)?,
                plausibility_3d: v(4)?,
                texture_details: v(5)?,
            });
        }
        Ok(out)
    }

    /// Aligned text table, scores to three decimals.
    pub fn render_text(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.encoders.iter().cloned());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut cells = vec![row.method.clone()];
                cells.extend(row.scores.iter().map(|s| s.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())));
                cells
            })
            .collect();
        let mut out = text_table(&header, &body);
        if !self.judgments.is_empty() {
            let header: Vec<String> = JUDGMENT_HEADER.iter().map(|s| s.to_string()).collect();
            let body: Vec<Vec<String>> = self
                .judgments
                .iter()
                .map(|j| {
                    vec![
                        j.method_a.clone(),
                        j.method_b.clone(),
                        j.winner.to_string(),
                        j.text_asset_alignment.to_string(),
                        j.plausibility_3d.to_string(),
                        j.texture_details.to_string(),
                    ]
                })
                .collect();
            out.push('\n');
            out.push_str(&text_table(&header, &body));
        }
        out
    }

    /// Writes `scores.csv`, `judgments.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let files = [
            ("scores.csv", self.scores_csv()?),
            ("judgments.csv", self.judgments_csv()?),
            ("report.txt", self.render_text()),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn text_table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{c:<w$}");
        }
        s.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
