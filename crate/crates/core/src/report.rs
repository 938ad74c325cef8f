//! Report artifacts: accuracy table, bar-chart data and weight histograms,
//! as CSV and minimal SVG.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::RunRecord;
use crate::loss::LossVariant;
use crate::stats::{self, Marking, PairwiseTest, VariantSummary};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub ordinal: usize,
    pub variant: LossVariant,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub best: bool,
    pub worst: bool,
}

/// Everything derived from one dataset's records.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub dataset: String,
    pub summaries: Vec<VariantSummary>,
    pub tests: Vec<PairwiseTest>,
    pub marks: Vec<Marking>,
    pub rows: Vec<TableRow>,
}

pub fn build_report(dataset: &str, records: &[RunRecord]) -> Result<DatasetReport> {
    let own: Vec<RunRecord> = records.iter().filter(|r| r.dataset == dataset).cloned().collect();
    if own.is_empty() {
        return Err(Error::Report(format!("no records for dataset `{dataset}`")));
    }
    let summaries = stats::summarize(&own)?;
    let tests = stats::pairwise_tests(&summaries)?;
    let marks = stats::mark_best_worst(&summaries, &tests);
    let mut rows: Vec<TableRow> = summaries
        .iter()
        .zip(&marks)
        .map(|(s, m)| TableRow {
            ordinal: s.variant.ordinal(),
            variant: s.variant,
            runs: s.sample.len(),
            mean: s.mean,
            std: s.std,
            best: m.best,
            worst: m.worst,
        })
        .collect();
    rows.sort_by_key(|r| r.ordinal);
    Ok(DatasetReport {
        dataset: dataset.to_string(),
        summaries,
        tests,
        marks,
        rows,
    })
}

impl DatasetReport {
    pub fn summary_csv(&self) -> String {
        stats::summary_csv(&self.summaries, &self.marks)
    }

    pub fn pairwise_csv(&self) -> String {
        stats::pairwise_csv(&self.tests)
    }

    /// Accuracy table in reporting order.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("ordinal,variant,runs,mean,std,best,worst\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{:.4},{:.4},{},{}", r.ordinal, r.variant, r.runs, r.mean, r.std, r.best, r.worst)
                .unwrap();
        }
        s
    }

    /// Mean ± std per variant, labelled "(1)" … "(9)".
    pub fn bars_csv(&self) -> String {
        let mut s = String::from("label,variant,mean,std,low,high\n");
        for r in &self.rows {
            writeln!(
                s,
                "({}),{},{},{},{},{}",
                r.ordinal,
                r.variant,
                r.mean,
                r.std,
                r.mean - r.std,
                r.mean + r.std
            )
            .unwrap();
        }
        s
    }

    pub fn bars_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const PAD: f64 = 40.0;
        let lo = self.rows.iter().map(|r| r.mean - r.std).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.mean + r.std).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = axis_range(lo, hi);
        let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
        let slot = (W - 2.0 * PAD) / self.rows.len().max(1) as f64;
        let mut s = svg_open(W, H, &format!("{}: mean test accuracy", self.dataset));
        write_axis(&mut s, W, H, PAD, lo, hi);
        for (i, r) in self.rows.iter().enumerate() {
            let x = PAD + slot * (i as f64 + 0.5);
            let fill = if r.best { "#4a9" } else if r.worst { "#d65" } else { "#89a" };
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                x - slot * 0.35,
                y(r.mean),
                slot * 0.7,
                (H - PAD - y(r.mean)).max(0.0)
            )
            .unwrap();
            writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                y(r.mean - r.std),
                y(r.mean + r.std)
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">({})</text>"#,
                H - PAD + 14.0,
                r.ordinal
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn axis_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    )
}

fn write_axis(s: &mut String, w: f64, h: f64, pad: f64, lo: f64, hi: f64) {
    writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad).unwrap();
    writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.3}</text>"#, pad - 4.0, h - pad).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi:.3}</text>"#, pad - 4.0, pad + 4.0).unwrap();
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two weight distributions counted over one shared set of bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub at_switch: Vec<usize>,
    pub at_end: Vec<usize>,
    pub skew_at_switch: f64,
    pub skew_at_end: f64,
}

/// Sample skewness (Fisher-Pearson, population moments); 0 for a flat sample.
pub fn skewness(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

fn bin_index(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    if width == 0.0 {
        return 0;
    }
    (((v - lo) / width).floor() as usize).min(bins - 1)
}

/// Equal-width bins over the [min, max] of both snapshots together; the
/// maximum falls into the last bin.
pub fn weight_histogram(at_switch: &[f64], at_end: &[f64], bins: usize) -> Result<WeightHistogram> {
    if bins == 0 {
        return Err(Error::Report("histogram needs at least one bin".into()));
    }
    if at_switch.is_empty() || at_end.is_empty() {
        return Err(Error::Empty("weight snapshot".into()));
    }
    let all = at_switch.iter().chain(at_end);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::Report("weight snapshot has non-finite values".into()));
    }
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let count = |vals: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in vals {
            c[bin_index(v, lo, width, bins)] += 1;
        }
        c
    };
    Ok(WeightHistogram {
        edges,
        at_switch: count(at_switch),
        at_end: count(at_end),
        skew_at_switch: skewness(at_switch),
        skew_at_end: skewness(at_end),
    })
}

/// Histogram of one reactive run's switch and final snapshots.
pub fn run_histogram(record: &RunRecord, bins: usize) -> Result<WeightHistogram> {
    let snap = record.switch_snapshot.as_ref().ok_or_else(|| {
        Error::Report(format!(
            "no switch snapshot for {}/{} run {}",
            record.dataset, record.variant, record.run
        ))
    })?;
    weight_histogram(snap, &record.final_snapshot, bins)
}

impl WeightHistogram {
    pub fn csv(&self) -> String {
        let mut s = String::from("bin,low,high,at_switch,at_end\n");
        for i in 0..self.at_switch.len() {
            writeln!(s, "{i},{},{},{},{}", self.edges[i], self.edges[i + 1], self.at_switch[i], self.at_end[i]).unwrap();
        }
        s
    }

    pub fn svg(&self, title: &str) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const PAD: f64 = 40.0;
        let bins = self.at_switch.len();
        let peak = self.at_switch.iter().chain(&self.at_end).copied().max().unwrap_or(0).max(1) as f64;
        let bw = (W - 2.0 * PAD) / bins as f64;
        let mut s = svg_open(W, H, title);
        write_axis(&mut s, W, H, PAD, 0.0, peak);
        for (series, color) in [(&self.at_switch, "#4878d0"), (&self.at_end, "#8fd18f")] {
            for (i, &c) in series.iter().enumerate() {
                let h = c as f64 / peak * (H - 2.0 * PAD);
                writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.6"/>"#,
                    PAD + bw * i as f64,
                    H - PAD - h,
                    bw
                )
                .unwrap();
            }
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{:.3} … {:.3}; skew {:.3} (switch), {:.3} (end)</text>"#,
            W / 2.0,
            H - PAD + 16.0,
            self.edges[0],
            self.edges[bins],
            self.skew_at_switch,
            self.skew_at_end
        )
        .unwrap();
        s.push_str("</svg>\n");
        s
    }
}
