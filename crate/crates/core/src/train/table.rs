use serde::{Deserialize, Serialize};

use crate::train::{CvReport, Metric, TrainReport};

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub dataset: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: Option<f64>,
    pub params: usize,
    pub ratio: f64,
    pub flops: u64,
}

impl TableRow {
    pub fn from_report(model: impl Into<String>, r: &TrainReport) -> Self {
        Self {
            model: model.into(),
            dataset: r.dataset.clone(),
            metric: r.metric,
            mean: r.test_metric,
            std: None,
            params: r.params.total,
            ratio: r.params.ratio_vs_vanilla,
            flops: r.flops,
        }
    }

    /// Parameters and FLOPs come from the first fold; they do not vary.
    pub fn from_cv(model: impl Into<String>, cv: &CvReport) -> Self {
        let first = &cv.reports[0];
        Self { std: Some(cv.std), mean: cv.mean, ..Self::from_report(model, first) }
    }

    fn score(&self) -> String {
        let scale = if self.metric == Metric::Accuracy { 100.0 } else { 1.0 };
        match self.std {
            Some(s) => format!("{:.2} ± {:.2}", self.mean * scale, s * scale),
            None => format!("{:.2}", self.mean * scale),
        }
    }
}

/// Plain-text table, columns padded to width. Accuracy is shown in percent.
pub fn render_table(rows: &[TableRow]) -> String {
    let score_header = match rows.first().map(|r| r.metric) {
        Some(Metric::Mae) => "MAE",
        _ => "ACC. (%)",
    };
    let header = ["Model", "Dataset", score_header, "Params.", "Ratio", "FLOPs"].map(String::from);
    let mut cells = vec![header.to_vec()];
    for r in rows {
        cells.push(vec![
            r.model.clone(),
            r.dataset.clone(),
            r.score(),
            r.params.to_string(),
            format!("{:.3}", r.ratio),
            r.flops.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}
