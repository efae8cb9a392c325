//! Recall at pose-error thresholds and per-stage timing reports.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{rotation_error, translation_error, Pose};

/// Combined (meters, degrees) thresholds, loosest first.
pub const COMBINED_THRESHOLDS: [(f64, f64); 4] = [(5.0, 20.0), (1.0, 10.0), (0.5, 5.0), (0.25, 2.0)];
/// Translation-only thresholds in meters, loosest first.
pub const TRANSLATION_THRESHOLDS: [f64; 4] = [5.0, 1.0, 0.5, 0.25];

pub const COLUMN_LABELS: [&str; 8] = [
    "(5m,20°)", "(1m,10°)", "(0.5m,5°)", "(0.25m,2°)", "(5m)", "(1m)", "(0.5m)", "(0.25m)",
];
const CSV_COLUMNS: [&str; 8] = [
    "5m_20deg", "1m_10deg", "0.5m_5deg", "0.25m_2deg", "5m", "1m", "0.5m", "0.25m",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub name: String,
    pub combined: [f64; 4],
    pub translation: [f64; 4],
    pub queries: usize,
}

impl RecallRow {
    /// The eight values in report column order.
    pub fn values(&self) -> [f64; 8] {
        let mut v = [0.0; 8];
        v[..4].copy_from_slice(&self.combined);
        v[4..].copy_from_slice(&self.translation);
        v
    }

    /// Recall must not increase as thresholds tighten, and a combined
    /// threshold can never beat translation alone at the same distance.
    pub fn check_invariants(&self) -> Result<()> {
        for fam in [&self.combined, &self.translation] {
            if fam.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Evaluation(format!("{}: recall outside [0, 1]", self.name)));
            }
            if fam.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Evaluation(format!(
                    "{}: recall increases as the threshold tightens",
                    self.name
                )));
            }
        }
        if self.combined.iter().zip(&self.translation).any(|(c, t)| c > t) {
            return Err(Error::Evaluation(format!(
                "{}: combined recall exceeds translation-only recall",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecallTable {
    pub rows: Vec<RecallRow>,
}

/// Fraction of queries whose errors do not exceed each threshold.
/// `errors` holds (translation meters, rotation degrees) per query.
pub fn recall_from_errors(name: &str, errors: &[(f64, f64)]) -> Result<RecallRow> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no results to evaluate".into()));
    }
    let n = errors.len() as f64;
    let combined = COMBINED_THRESHOLDS.map(|(et, er)| {
        errors.iter().filter(|(t, r)| *t <= et && *r <= er).count() as f64 / n
    });
    let translation =
        TRANSLATION_THRESHOLDS.map(|et| errors.iter().filter(|(t, _)| *t <= et).count() as f64 / n);
    let row = RecallRow {
        name: name.to_string(),
        combined,
        translation,
        queries: errors.len(),
    };
    row.check_invariants()?;
    Ok(row)
}

/// Recall of estimated poses against ground truth, as (estimate, truth).
pub fn recall_at(name: &str, pairs: &[(Pose, Pose)]) -> Result<RecallRow> {
    let errors: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(est, gt)| (translation_error(est, gt), rotation_error(est, gt)))
        .collect();
    recall_from_errors(name, &errors)
}

pub const STAGE_NAMES: [&str; 6] = [
    "Embedding extraction",
    "Embedding matching",
    "Feature extraction",
    "Feature matching",
    "Pose optimization",
    "Overall",
];

/// Wall-clock seconds per localization stage for one query.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub embedding_extraction: f64,
    pub embedding_matching: f64,
    pub feature_extraction: f64,
    pub feature_matching: f64,
    pub pose_optimization: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.embedding_extraction,
            self.embedding_matching,
            self.feature_extraction,
            self.feature_matching,
            self.pose_optimization,
            self.total,
        ]
    }

    pub fn stage_sum(&self) -> f64 {
        self.as_array()[..5].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub name: String,
    pub hardware: String,
    /// Mean seconds in [`STAGE_NAMES`] order.
    pub means: [f64; 6],
    pub queries: usize,
}

pub fn timing_report(name: &str, hardware: &str, timings: &[StageTimings]) -> Result<TimingReport> {
    if timings.is_empty() {
        return Err(Error::InvalidArgument("no timings to report".into()));
    }
    let mut means = [0.0; 6];
    for t in timings {
        for (m, v) in means.iter_mut().zip(t.as_array()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= timings.len() as f64);
    Ok(TimingReport {
        name: name.to_string(),
        hardware: hardware.to_string(),
        means,
        queries: timings.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn format_recall_table(table: &RecallTable, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Configuration |");
            for l in COLUMN_LABELS {
                write!(out, " {l} |").unwrap();
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(8));
            out.push('\n');
            for row in &table.rows {
                write!(out, "| {} |", row.name).unwrap();
                for v in row.values() {
                    write!(out, " {v:.3} |").unwrap();
                }
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            out.push_str("configuration,");
            out.push_str(&CSV_COLUMNS.join(","));
            out.push_str(",queries\n");
            for row in &table.rows {
                out.push_str(&row.name);
                for v in row.values() {
                    write!(out, ",{v}").unwrap();
                }
                writeln!(out, ",{}", row.queries).unwrap();
            }
        }
    }
    out
}

pub fn parse_recall_csv(text: &str) -> Result<RecallTable> {
    let bad = |m: &str| Error::InvalidArgument(format!("recall csv: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty"))?;
    let expect = format!("configuration,{},queries", CSV_COLUMNS.join(","));
    if header != expect {
        return Err(bad("unexpected header"));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("wrong field count"));
        }
        let v: Vec<f64> = f[1..9]
            .iter()
            .map(|s| s.parse().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        rows.push(RecallRow {
            name: f[0].to_string(),
            combined: [v[0], v[1], v[2], v[3]],
            translation: [v[4], v[5], v[6], v[7]],
            queries: f[9].parse().map_err(|_| bad("bad query count"))?,
        });
    }
    Ok(RecallTable { rows })
}

pub fn format_timing_report(reports: &[TimingReport], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Stage |");
            for r in reports {
                write!(out, " {} |", r.name).unwrap();
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(reports.len()));
            out.push('\n');
            for (i, stage) in STAGE_NAMES.iter().enumerate() {
                write!(out, "| {stage} |").unwrap();
                for r in reports {
                    write!(out, " {:.5} |", r.means[i]).unwrap();
                }
                out.push('\n');
            }
            for r in reports {
                writeln!(out, "\n{}: {} queries on {}", r.name, r.queries, r.hardware).unwrap();
            }
        }
        ReportFormat::Csv => {
            out.push_str("stage");
            for r in reports {
                write!(out, ",{}", r.name).unwrap();
            }
            out.push('\n');
            for (i, stage) in STAGE_NAMES.iter().enumerate() {
                out.push_str(stage);
                for r in reports {
                    write!(out, ",{}", r.means[i]).unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Writes the recall table and, when given, the timing table after it.
pub fn emit_report(
    table: &RecallTable,
    timing: Option<&[TimingReport]>,
    format: ReportFormat,
    path: &std::path::Path,
) -> Result<()> {
    let mut text = format_recall_table(table, format);
    if let Some(t) = timing.filter(|t| !t.is_empty()) {
        text.push('\n');
        text.push_str(&format_timing_report(t, format));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;
    use nalgebra::Vector3;
    use proptest::prelude::prop;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn offset(t: f64, deg: f64) -> Pose {
        Pose::new(
            UnitQuaternion::from_axis_angle(Vector3::z(), deg.to_radians()),
            Vector3::new(t, 0.0, 0.0),
        )
    }

    #[test]
    fn exact_estimates_score_one() {
        let p = Pose::camera_at(Vector3::new(1.0, 2.0, 1.25), 0.7);
        let row = recall_at("x", &[(p, p), (p, p)]).unwrap();
        assert_eq!(row.values(), [1.0; 8]);
        assert_eq!(row.queries, 2);
    }

    #[test]
    fn hand_evaluated_query() {
        let row = recall_at("x", &[(offset(0.3, 1.0), Pose::identity())]).unwrap();
        // columns: (5,20) (1,10) (0.5,5) (0.25,2) 5 1 0.5 0.25
        assert_eq!(row.values(), [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn boundary_counts_as_success() {
        let row = recall_from_errors("x", &[(0.25, 2.0)]).unwrap();
        assert_eq!(row.combined[3], 1.0);
        assert_eq!(row.translation[3], 1.0);
        let row = recall_from_errors("x", &[(0.25, 2.0 + 1e-12)]).unwrap();
        assert_eq!(row.combined[3], 0.0);
    }

    #[test]
    fn empty_results_rejected() {
        assert!(matches!(recall_at("x", &[]), Err(Error::InvalidArgument(_))));
        assert!(timing_report("x", "h", &[]).is_err());
    }

    #[test]
    fn invariant_violations_detected() {
        let mut row = recall_from_errors("x", &[(0.3, 1.0)]).unwrap();
        row.combined[3] = 1.0;
        assert!(matches!(row.check_invariants(), Err(Error::Evaluation(_))));
        let mut row = recall_from_errors("x", &[(0.3, 1.0)]).unwrap();
        row.translation[2] = 0.0;
        assert!(row.check_invariants().is_err());
    }

    #[test]
    fn timing_means() {
        let a = StageTimings {
            embedding_extraction: 1.0,
            embedding_matching: 2.0,
            feature_extraction: 3.0,
            feature_matching: 4.0,
            pose_optimization: 5.0,
            total: 15.0,
        };
        let r = timing_report("c", "cpu", &[a]).unwrap();
        assert_eq!(r.means, a.as_array());
        let b = StageTimings::default();
        let r = timing_report("c", "cpu", &[a, b]).unwrap();
        assert_eq!(r.means, [0.5, 1.0, 1.5, 2.0, 2.5, 7.5]);
    }

    #[test]
    fn report_layouts() {
        let table = RecallTable {
            rows: vec![
                recall_from_errors("bow+ransac", &[(0.3, 1.0), (0.1, 0.5)]).unwrap(),
                recall_from_errors("vlad+gnc", &[(2.0, 1.0)]).unwrap(),
            ],
        };
        let md = format_recall_table(&table, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        // header, separator, one row per configuration
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("| Configuration | (5m,20°) | (1m,10°) | (0.5m,5°) | (0.25m,2°) | (5m) | (1m) | (0.5m) | (0.25m) |"));
        assert!(lines[2].contains(" 0.500 |"));

        let csv = format_recall_table(&table, ReportFormat::Csv);
        assert_eq!(
            csv.lines().next().unwrap(),
            "configuration,5m_20deg,1m_10deg,0.5m_5deg,0.25m_2deg,5m,1m,0.5m,0.25m,queries"
        );
        assert_eq!(parse_recall_csv(&csv).unwrap(), table);

        let t = timing_report("vlad+gnc", "test cpu", &[StageTimings::default()]).unwrap();
        let md = format_timing_report(std::slice::from_ref(&t), ReportFormat::Markdown);
        for s in STAGE_NAMES {
            assert!(md.contains(&format!("| {s} |")));
        }
        let csv = format_timing_report(&[t], ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn emit_to_unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let table = RecallTable::default();
        let bad = dir.path().join("missing").join("r.md");
        assert!(matches!(
            emit_report(&table, None, ReportFormat::Markdown, &bad),
            Err(Error::Io { .. })
        ));
        let good = dir.path().join("r.csv");
        emit_report(&table, None, ReportFormat::Csv, &good).unwrap();
        assert!(std::fs::read_to_string(good).unwrap().starts_with("configuration,"));
    }

    /// Independent recount with the threshold predicate spelled out.
    fn recount(errors: &[(f64, f64)]) -> [f64; 8] {
        let n = errors.len() as f64;
        let c = |et: f64, er: f64| errors.iter().filter(|e| !(e.0 > et) && !(e.1 > er)).count() as f64 / n;
        [
            c(5.0, 20.0),
            c(1.0, 10.0),
            c(0.5, 5.0),
            c(0.25, 2.0),
            c(5.0, 1e300),
            c(1.0, 1e300),
            c(0.5, 1e300),
            c(0.25, 1e300),
        ]
    }

    proptest! {
        #[test]
        fn recall_properties(
            errors in prop::collection::vec((0.0f64..6.0, 0.0f64..25.0), 1..60),
            rot in 0usize..60,
        ) {
            let row = recall_from_errors("p", &errors).unwrap();
            prop_assert_eq!(row.values(), recount(&errors));
            prop_assert!(row.check_invariants().is_ok());
            let mut shuffled = errors.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(recall_from_errors("p", &shuffled).unwrap(), row);
        }
    }
}
