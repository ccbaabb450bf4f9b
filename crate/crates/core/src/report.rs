//! Flat CSV reports of experiment cells, seed aggregation and SVG curves.

use crate::bench::CellResult;
use crate::persist::{write_atomic, PersistError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("report is empty")]
    Empty,
    #[error("reports mix environments {0} and {1}")]
    MixedEnv(String, String),
    #[error("{0}")]
    Invalid(String),
}

/// One CSV row. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Curve label.
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub failure_rate: f64,
    pub safe_cost: Option<f64>,
    pub msd_centerline: f64,
    pub final_abs_px: Option<f64>,
    pub engagement_rate: f64,
    pub episodes: usize,
    pub goals: usize,
    pub failures: usize,
    pub timeouts: usize,
    pub collector: String,
    pub dbar_max: f64,
    pub filter: bool,
    pub dataset_size: usize,
    pub expert_failure_rate: f64,
    pub dataset_value_mean: Option<f64>,
    pub start_margin: f64,
    pub env_hash: String,
}

pub const COLUMNS: [&str; 20] = [
    "method",
    "K",
    "seed",
    "failure_rate",
    "safe_cost",
    "msd_centerline",
    "final_abs_px",
    "engagement_rate",
    "episodes",
    "goals",
    "failures",
    "timeouts",
    "collector",
    "dbar_max",
    "filter",
    "dataset_size",
    "expert_failure_rate",
    "dataset_value_mean",
    "start_margin",
    "env_hash",
];

impl From<&CellResult> for ReportRow {
    fn from(c: &CellResult) -> Self {
        let s = &c.summary;
        Self {
            method: c.label.clone(),
            k: c.k,
            seed: c.seed,
            failure_rate: s.failure_rate,
            safe_cost: s.safe_cost,
            msd_centerline: s.msd_centerline,
            final_abs_px: s.final_abs_px,
            engagement_rate: s.engagement_rate,
            episodes: s.episodes,
            goals: s.goals,
            failures: s.failures,
            timeouts: s.timeouts,
            collector: c.method.tag().to_string(),
            dbar_max: c.dbar_max,
            filter: c.filter,
            dataset_size: c.dataset_size,
            expert_failure_rate: c.expert_failure_rate,
            dataset_value_mean: c.dataset_value_mean,
            start_margin: s.start_margin,
            env_hash: c.env_hash.clone(),
        }
    }
}

pub fn encode_report(rows: &[ReportRow]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| ReportError::Invalid(e.to_string()))
}

pub fn decode_report(bytes: &[u8]) -> Result<Vec<ReportRow>, ReportError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(ReportError::Invalid(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), ReportError> {
    Ok(write_atomic(path, &encode_report(rows)?)?)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, ReportError> {
    let bytes = std::fs::read(path).map_err(|source| PersistError::Io {
        path: path.into(),
        source,
    })?;
    decode_report(&bytes)
}

/// The common environment hash of `rows`.
pub fn single_env(rows: &[ReportRow]) -> Result<&str, ReportError> {
    let first = rows.first().ok_or(ReportError::Empty)?;
    match rows.iter().find(|r| r.env_hash != first.env_hash) {
        Some(other) => Err(ReportError::MixedEnv(
            first.env_hash.clone(),
            other.env_hash.clone(),
        )),
        None => Ok(&first.env_hash),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    FailureRate,
    SafeCost,
    FinalAbsPx,
    DatasetValueMean,
    EngagementRate,
}

impl Metric {
    pub fn of(self, r: &ReportRow) -> Option<f64> {
        match self {
            Metric::FailureRate => Some(r.failure_rate),
            Metric::SafeCost => r.safe_cost,
            Metric::FinalAbsPx => r.final_abs_px,
            Metric::DatasetValueMean => r.dataset_value_mean,
            Metric::EngagementRate => Some(r.engagement_rate),
        }
    }

    pub fn axis_label(self) -> &'static str {
        match self {
            Metric::FailureRate => "Collision rate",
            Metric::SafeCost => "Cost of safe trajectories",
            Metric::FinalAbsPx => "Final crosstrack error |p_x|",
            Metric::DatasetValueMean => "Mean safety value of data",
            Metric::EngagementRate => "Filter engagement rate",
        }
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        sq.sort_by(f64::total_cmp);
        Some(Stat {
            mean,
            std: (sq.iter().sum::<f64>() / n).sqrt(),
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub stat: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// One curve per label (sorted by label), one point per K (ascending) with
/// the metric aggregated over seeds. Independent of row order.
pub fn curves(rows: &[ReportRow], metric: Metric) -> Vec<Curve> {
    let mut groups: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let by_k = groups.entry(&r.method).or_default();
        let values = by_k.entry(r.k).or_default();
        values.extend(metric.of(r));
    }
    groups
        .into_iter()
        .map(|(label, by_k)| Curve {
            label: label.to_string(),
            points: by_k
                .into_iter()
                .filter_map(|(k, v)| Stat::of(&v).map(|stat| CurvePoint { k, stat }))
                .collect(),
        })
        .collect()
}

/// Aggregated metric of one (label, K) pair.
pub fn stat_at(rows: &[ReportRow], label: &str, k: usize, metric: Metric) -> Option<Stat> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == label && r.k == k)
        .filter_map(|r| metric.of(r))
        .collect();
    Stat::of(&v)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line chart of `metric` against K: one polyline per label with a shaded
/// mean ± std band.
pub fn plot_svg(rows: &[ReportRow], metric: Metric, title: &str) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let curves = curves(rows, metric);
    let points = || curves.iter().flat_map(|c| c.points.iter());
    if points().next().is_none() {
        return Err(ReportError::Invalid(format!(
            "no values of {}",
            metric.axis_label()
        )));
    }
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let kmin = points().map(|p| p.k).min().expect("non-empty") as f64;
    let kmax = points().map(|p| p.k).max().expect("non-empty") as f64;
    let (x0, x1) = if kmax > kmin {
        (kmin, kmax)
    } else {
        (kmin - 1.0, kmax + 1.0)
    };
    let ylo = points()
        .map(|p| p.stat.mean - p.stat.std)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let yhi = points()
        .map(|p| p.stat.mean + p.stat.std)
        .fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = if yhi > ylo {
        (ylo, yhi * 1.05)
    } else {
        (ylo - 1.0, ylo + 1.0)
    };
    let sx = |k: f64| left + (k - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let mut ks: Vec<usize> = points().map(|p| p.k).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let x = sx(k as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            top + ph,
            top + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{k}</text>"#,
            top + ph + 18.0
        );
    }
    for i in 0..=5 {
        let y = y0 + (y1 - y0) * i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{left:.1}" y2="{py:.1}" stroke="black"/>"#,
            left - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"#,
            left - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Number of demonstrations K</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(metric.axis_label())
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.k as f64), sy(p.stat.mean + p.stat.std)));
        let lower = c
            .points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", sx(p.k as f64), sy(p.stat.mean - p.stat.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.k as f64), sy(p.stat.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(p.k as f64),
                sy(p.stat.mean)
            );
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, k: usize, seed: u64, rate: f64) -> ReportRow {
        ReportRow {
            method: label.into(),
            k,
            seed,
            failure_rate: rate,
            safe_cost: if rate < 1.0 { Some(10.0 * rate) } else { None },
            msd_centerline: 0.0,
            final_abs_px: None,
            engagement_rate: 0.0,
            episodes: 100,
            goals: 90,
            failures: 10,
            timeouts: 0,
            collector: "bc".into(),
            dbar_max: 0.0,
            filter: false,
            dataset_size: 42,
            expert_failure_rate: 0.0,
            dataset_value_mean: None,
            start_margin: 0.2,
            env_hash: "h".into(),
        }
    }

    fn grid_rows() -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for (li, label) in ["BC", "SAFE-GIL"].iter().enumerate() {
            for k in [5, 10, 20, 40] {
                for seed in 0..3 {
                    rows.push(row(
                        label,
                        k,
                        seed,
                        0.1 * li as f64 + 0.01 * seed as f64 + 1.0 / k as f64,
                    ));
                }
            }
        }
        rows
    }

    #[test]
    fn csv_header_is_fixed() {
        let text = String::from_utf8(encode_report(&[row("BC", 5, 0, 0.25)]).unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("method,K,seed,failure_rate,safe_cost,"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rows = grid_rows();
        rows[0].failure_rate = 0.1 + 0.2;
        rows[1].dataset_value_mean = Some(-1.0 / 3.0);
        let bytes = encode_report(&rows).unwrap();
        assert_eq!(decode_report(&bytes).unwrap(), rows);
    }

    #[test]
    fn mixed_env_hashes_are_refused() {
        let mut rows = grid_rows();
        assert_eq!(single_env(&rows).unwrap(), "h");
        rows[3].env_hash = "other".into();
        assert!(matches!(single_env(&rows), Err(ReportError::MixedEnv(..))));
    }

    #[test]
    fn curves_ignore_row_order() {
        let rows = grid_rows();
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(
            curves(&rows, Metric::FailureRate),
            curves(&rev, Metric::FailureRate)
        );
        let c = curves(&rows, Metric::FailureRate);
        assert_eq!(c.len(), 2);
        assert!((c[0].points[0].stat.mean - 0.21).abs() < 1e-12);
    }

    #[test]
    fn svg_has_one_polyline_per_method() {
        let svg = plot_svg(&grid_rows(), Metric::FailureRate, "test").unwrap();
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        for l in lines {
            let pts = l.split('"').nth(1).unwrap();
            assert_eq!(pts.split(' ').count(), 4);
        }
        assert_eq!(
            svg,
            plot_svg(&grid_rows(), Metric::FailureRate, "test").unwrap()
        );
    }

    #[test]
    fn svg_of_a_single_point() {
        let svg = plot_svg(&[row("BC", 5, 0, 0.0)], Metric::FailureRate, "one").unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn svg_of_nothing_is_an_error() {
        assert!(matches!(
            plot_svg(&[], Metric::FailureRate, "none"),
            Err(ReportError::Empty)
        ));
    }
}
