//! Evaluation reports: accuracy-vs-image-count CSV, per-class tables, and a
//! self-contained SVG line plot derived only from the CSV rows.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One evaluated prefix of one method at one camera setting.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub method: String,
    pub setting: String,
    pub image_count: usize,
    pub accuracy: f64,
}

/// Per-class accuracy summary for one method at one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTableRow {
    pub method: String,
    pub setting: String,
    pub per_class: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub overall: f64,
    pub train_ms: f64,
    pub infer_ms: f64,
}

impl ClassTableRow {
    /// Count-weighted mean of per-class accuracies; must agree with
    /// `overall`.
    pub fn consistency_error(&self) -> f64 {
        let total: usize = self.class_counts.iter().sum();
        let weighted = self
            .per_class
            .iter()
            .zip(&self.class_counts)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / total as f64;
        (weighted - self.overall).abs()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<AccuracyRow>,
    pub class_rows: Vec<ClassTableRow>,
    /// Config echo (comment lines) written atop every artifact.
    pub config_echo: String,
}

pub const ACCURACY_CSV_SCHEMA: &str = "method,setting,image_count,accuracy";

impl EvalReport {
    pub fn accuracy_csv(&self) -> String {
        let mut s = self.config_echo.clone();
        s.push_str(ACCURACY_CSV_SCHEMA);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:.6}",
                r.method, r.setting, r.image_count, r.accuracy
            )
            .unwrap();
        }
        s
    }

    /// Timing lives in [`EvalReport::timings_text`], not here, so CSV
    /// artifacts stay bit-identical across reruns with the same seeds.
    pub fn class_table_csv(&self, classes: &[String]) -> String {
        let mut s = self.config_echo.clone();
        s.push_str("method,setting");
        for c in classes {
            write!(s, ",{c}").unwrap();
        }
        s.push_str(",overall\n");
        for r in &self.class_rows {
            write!(s, "{},{}", r.method, r.setting).unwrap();
            for a in &r.per_class {
                write!(s, ",{a:.6}").unwrap();
            }
            writeln!(s, ",{:.6}", r.overall).unwrap();
        }
        s
    }

    /// Wall-clock training and inference times per method/setting. Kept out
    /// of the CSV artifacts because they vary between runs.
    pub fn timings_text(&self) -> String {
        let mut s = String::new();
        for r in &self.class_rows {
            writeln!(
                s,
                "{} @ {}: train {:.1} ms, infer {:.3} ms/sample",
                r.method, r.setting, r.train_ms, r.infer_ms
            )
            .unwrap();
        }
        s
    }

    /// Accuracy-vs-image-count line plot; one polyline per (method,
    /// setting) series. Pure function of the rows.
    pub fn accuracy_svg(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::Parameter("no accuracy rows to plot".into()));
        }
        let max_count = self.rows.iter().map(|r| r.image_count).max().unwrap();
        let (w, h) = (640.0, 420.0);
        let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 50.0);
        let px = |count: usize| {
            ml + (count as f64 - 1.0) / ((max_count.max(2) - 1) as f64) * (w - ml - mr)
        };
        let py = |acc: f64| h - mb - acc * (h - mt - mb);
        let mut series: Vec<(String, Vec<&AccuracyRow>)> = Vec::new();
        for r in &self.rows {
            let key = format!("{} @ {}", r.method, r.setting);
            match series.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => series.push((key, vec![r])),
            }
        }
        const COLORS: &[&str] = &[
            "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
            "#7f7f7f",
        ];
        let mut s = String::new();
        writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
        )
        .unwrap();
        writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
        // axes
        writeln!(
            s,
            "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            h - mb,
            w - mr,
            h - mb
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
            h - mb
        )
        .unwrap();
        for tick in 0..=10 {
            let acc = tick as f64 / 10.0;
            let y = py(acc);
            writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{acc:.1}</text>",
                ml - 6.0,
                y + 3.0
            )
            .unwrap();
        }
        for count in 1..=max_count {
            writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{count}</text>",
                px(count),
                h - mb + 16.0
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">image count</text>",
            (ml + w - mr) / 2.0,
            h - 12.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">accuracy</text>",
            (mt + h - mb) / 2.0,
            (mt + h - mb) / 2.0
        )
        .unwrap();
        for (i, (name, rows)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut sorted = rows.clone();
            sorted.sort_by_key(|r| r.image_count);
            let points: Vec<String> = sorted
                .iter()
                .map(|r| format!("{:.2},{:.2}", px(r.image_count), py(r.accuracy)))
                .collect();
            writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                points.join(" ")
            )
            .unwrap();
            for p in &points {
                let (x, y) = p.split_once(',').unwrap();
                writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"{color}\"/>").unwrap();
            }
            writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{name}</text>",
                ml + 10.0,
                mt + 14.0 * (i as f64 + 1.0)
            )
            .unwrap();
        }
        writeln!(s, "</svg>").unwrap();
        Ok(s)
    }
}
