use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::manifest::{read_manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::evaluation::{
    boundary_pixels, dice, hausdorff, icc_absolute_agreement, one_sample_ttest, summarize, wilcoxon_rank_sum,
    EvalRecord, RankSumTest, SummaryStats, TTest, BOOTSTRAP_RESAMPLES,
};
use crate::imaging::{load_mask, BinaryMask, Point2D};
use crate::segmenter::{diameters_of_points, Diameters};

pub const TIMES_COLUMNS: [&str; 7] = ["subset", "measure", "Median", "Q1", "Q3", "Min", "Max"];
pub const OVERLAP_COLUMNS: [&str; 6] = ["subset", "measure", "Median", "95% CI", "Min", "Max"];
pub const TESTS_COLUMNS: [&str; 7] = ["subset", "n", "wilcoxon_U", "wilcoxon_p", "ttest_t", "ttest_p", "icc"];
const RECORD_COLUMNS: [&str; 9] = [
    "lesion_id",
    "dsc",
    "hd",
    "diam_a_diff",
    "diam_b_diff",
    "time_manual",
    "time_semi",
    "satisfied",
    "dsc_examiner_2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LesionEvaluation {
    pub record: EvalRecord,
    /// DSC between the second examiner's manual and semiautomatic masks.
    pub dsc_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetReport {
    pub label: String,
    pub n: usize,
    pub time_manual: Option<SummaryStats>,
    pub time_semi: Option<SummaryStats>,
    pub dsc: Option<SummaryStats>,
    pub hd: Option<SummaryStats>,
    pub diam_a_diff: Option<SummaryStats>,
    pub diam_b_diff: Option<SummaryStats>,
    pub wilcoxon: Option<RankSumTest>,
    /// Manual minus semiautomatic time against zero.
    pub ttest: Option<TTest>,
    pub icc: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub bootstrap_seed: u64,
    /// "mm" when every lesion carries a pixel spacing, else "px".
    pub diameter_unit: String,
    pub lesions: Vec<LesionEvaluation>,
    pub satisfied_count: usize,
    /// Only lesions whose semiautomatic result was marked satisfied.
    pub satisfied: SubsetReport,
    pub all: SubsetReport,
}

fn mask_diameters(mask: &BinaryMask) -> Diameters {
    let pts: Vec<Point2D> = boundary_pixels(mask)
        .into_iter()
        .map(|(x, y)| Point2D::new(x as f64, y as f64))
        .collect();
    diameters_of_points(&pts)
}

fn evaluate_row(row: &ManifestRow, scale: f64) -> Result<LesionEvaluation> {
    let manual = load_mask(&row.manual_mask)?;
    let semi = load_mask(&row.semi_mask)?;
    let dsc = dice(&manual, &semi)?;
    let hd = hausdorff(&manual, &semi)?;
    let (dm, ds) = (mask_diameters(&manual), mask_diameters(&semi));
    let dsc_second = match &row.second {
        Some((m, s)) => Some(dice(&load_mask(m)?, &load_mask(s)?)?),
        None => None,
    };
    Ok(LesionEvaluation {
        record: EvalRecord {
            lesion_id: row.lesion_id.clone(),
            dsc,
            hd,
            diam_a_diff: (dm.a - ds.a).abs() * scale,
            diam_b_diff: (dm.b - ds.b).abs() * scale,
            time_manual: row.time_manual,
            time_semi: row.time_semi,
            satisfied: row.satisfied,
        },
        dsc_second,
    })
}

fn build_subset(label: &str, lesions: &[&LesionEvaluation], seed: u64) -> Result<SubsetReport> {
    let n = lesions.len();
    let mut out = SubsetReport {
        label: label.to_string(),
        n,
        time_manual: None,
        time_semi: None,
        dsc: None,
        hd: None,
        diam_a_diff: None,
        diam_b_diff: None,
        wilcoxon: None,
        ttest: None,
        icc: None,
        notes: Vec::new(),
    };
    if n == 0 {
        out.notes.push("no lesions in this subset".into());
        return Ok(out);
    }
    let col = |f: fn(&EvalRecord) -> f64| -> Vec<f64> { lesions.iter().map(|l| f(&l.record)).collect() };
    let manual = col(|r| r.time_manual);
    let semi = col(|r| r.time_semi);
    out.time_manual = Some(summarize(&manual, seed)?);
    out.time_semi = Some(summarize(&semi, seed)?);
    out.dsc = Some(summarize(&col(|r| r.dsc), seed)?);
    out.hd = Some(summarize(&col(|r| r.hd), seed)?);
    out.diam_a_diff = Some(summarize(&col(|r| r.diam_a_diff), seed)?);
    out.diam_b_diff = Some(summarize(&col(|r| r.diam_b_diff), seed)?);
    out.wilcoxon = Some(wilcoxon_rank_sum(&manual, &semi)?);
    let diffs: Vec<f64> = manual.iter().zip(&semi).map(|(m, s)| m - s).collect();
    match one_sample_ttest(&diffs, 0.0) {
        Ok(t) => out.ttest = Some(t),
        Err(e) => out.notes.push(format!("t-test not computed: {e}")),
    }
    let pairs: Vec<[f64; 2]> = lesions
        .iter()
        .filter_map(|l| l.dsc_second.map(|d2| [l.record.dsc, d2]))
        .collect();
    if pairs.is_empty() {
        out.notes.push("ICC omitted: no second-examiner columns".into());
    } else if pairs.len() < 3 {
        out.notes.push(format!(
            "ICC omitted: {} lesions with two examiners, need at least 3",
            pairs.len()
        ));
    } else {
        out.icc = Some(icc_absolute_agreement(&pairs)?);
        if pairs.len() < n {
            out.notes
                .push(format!("ICC over the {} lesions with two examiners", pairs.len()));
        }
    }
    Ok(out)
}

pub fn evaluate_rows(rows: &[ManifestRow], bootstrap_seed: u64) -> Result<StudyReport> {
    let in_mm = rows.iter().all(|r| r.spacing_mm.is_some());
    let lesions = rows
        .par_iter()
        .map(|r| {
            let scale = if in_mm { r.spacing_mm.unwrap_or(1.0) } else { 1.0 };
            evaluate_row(r, scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&LesionEvaluation> = lesions.iter().collect();
    let sat: Vec<&LesionEvaluation> = lesions.iter().filter(|l| l.record.satisfied).collect();
    Ok(StudyReport {
        bootstrap_seed,
        diameter_unit: if in_mm { "mm" } else { "px" }.into(),
        satisfied_count: sat.len(),
        satisfied: build_subset("satisfied", &sat, bootstrap_seed)?,
        all: build_subset("all", &all, bootstrap_seed)?,
        lesions,
    })
}

/// Reads the manifest, evaluates every lesion and summarizes.
pub fn evaluate_manifest(path: &Path, bootstrap_seed: u64) -> Result<StudyReport> {
    evaluate_rows(&read_manifest(path)?, bootstrap_seed)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

fn ci(s: &SummaryStats) -> String {
    format!("[{}, {}]", s.ci_low, s.ci_high)
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::Manifest(format!("report: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Manifest(format!("report: {e}")))
}

impl StudyReport {
    fn subsets(&self) -> [&SubsetReport; 2] {
        [&self.satisfied, &self.all]
    }

    pub fn times_csv(&self) -> Result<Vec<u8>> {
        let mut rows = Vec::new();
        for s in self.subsets() {
            for (name, stats) in [("manual", &s.time_manual), ("semiautomatic", &s.time_semi)] {
                if let Some(st) = stats {
                    rows.push(vec![
                        s.label.clone(),
                        name.into(),
                        num(st.median),
                        num(st.q1),
                        num(st.q3),
                        num(st.min),
                        num(st.max),
                    ]);
                }
            }
        }
        csv_bytes(&TIMES_COLUMNS, rows)
    }

    pub fn overlap_csv(&self) -> Result<Vec<u8>> {
        let mut rows = Vec::new();
        for s in self.subsets() {
            for (name, stats) in [
                ("dsc", &s.dsc),
                ("hd", &s.hd),
                ("diam_a_diff", &s.diam_a_diff),
                ("diam_b_diff", &s.diam_b_diff),
            ] {
                if let Some(st) = stats {
                    rows.push(vec![
                        s.label.clone(),
                        name.into(),
                        num(st.median),
                        ci(st),
                        num(st.min),
                        num(st.max),
                    ]);
                }
            }
        }
        csv_bytes(&OVERLAP_COLUMNS, rows)
    }

    pub fn tests_csv(&self) -> Result<Vec<u8>> {
        let rows = self
            .subsets()
            .iter()
            .map(|s| {
                vec![
                    s.label.clone(),
                    s.n.to_string(),
                    opt(s.wilcoxon.map(|w| w.u)),
                    opt(s.wilcoxon.map(|w| w.p)),
                    opt(s.ttest.map(|t| t.t)),
                    opt(s.ttest.map(|t| t.p)),
                    opt(s.icc),
                ]
            })
            .collect();
        csv_bytes(&TESTS_COLUMNS, rows)
    }

    pub fn records_csv(&self) -> Result<Vec<u8>> {
        let rows = self
            .lesions
            .iter()
            .map(|l| {
                let r = &l.record;
                vec![
                    r.lesion_id.clone(),
                    num(r.dsc),
                    num(r.hd),
                    num(r.diam_a_diff),
                    num(r.diam_b_diff),
                    num(r.time_manual),
                    num(r.time_semi),
                    r.satisfied.to_string(),
                    opt(l.dsc_second),
                ]
            })
            .collect();
        csv_bytes(&RECORD_COLUMNS, rows)
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "raycut study report");
        let _ = writeln!(
            t,
            "bootstrap_seed={} resamples={}",
            self.bootstrap_seed, BOOTSTRAP_RESAMPLES
        );
        let _ = writeln!(
            t,
            "lesions={} satisfied={} diameter_unit={}",
            self.lesions.len(),
            self.satisfied_count,
            self.diameter_unit
        );
        for s in self.subsets() {
            let title = if s.label == "satisfied" {
                "Satisfied semiautomatic results only"
            } else {
                "All lesions"
            };
            let _ = writeln!(t, "\n== {title} (n={}) ==", s.n);
            let _ = writeln!(t, "\nTime per lesion [s]");
            let _ = writeln!(
                t,
                "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}",
                "", "Median", "Q1", "Q3", "Min", "Max"
            );
            for (name, stats) in [("manual", &s.time_manual), ("semiautomatic", &s.time_semi)] {
                if let Some(st) = stats {
                    let _ = writeln!(
                        t,
                        "{name:<16}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
                        st.median, st.q1, st.q3, st.min, st.max
                    );
                }
            }
            if let Some(w) = s.wilcoxon {
                let _ = writeln!(t, "Wilcoxon rank-sum: U={} p={:.4}", w.u, w.p);
            }
            if let Some(tt) = s.ttest {
                let _ = writeln!(
                    t,
                    "one-sample t-test (manual - semiautomatic): t={:.4} p={:.4}",
                    tt.t, tt.p
                );
            }
            let _ = writeln!(t, "\nAgreement with manual outline");
            let _ = writeln!(
                t,
                "{:<22}{:>10}{:>22}{:>10}{:>10}",
                "", "Median", "95% CI", "Min", "Max"
            );
            let unit = &self.diameter_unit;
            for (name, stats) in [
                ("DSC".to_string(), &s.dsc),
                ("Hausdorff [px]".to_string(), &s.hd),
                (format!("diameter a diff [{unit}]"), &s.diam_a_diff),
                (format!("diameter b diff [{unit}]"), &s.diam_b_diff),
            ] {
                if let Some(st) = stats {
                    let interval = format!("{:.4} - {:.4}", st.ci_low, st.ci_high);
                    let _ = writeln!(
                        t,
                        "{name:<22}{:>10.4}{interval:>22}{:>10.4}{:>10.4}",
                        st.median, st.min, st.max
                    );
                }
            }
            if let Some(icc) = s.icc {
                let _ = writeln!(t, "ICC(2,1) of DSC between examiners: {icc:.4}");
            }
            for note in &s.notes {
                let _ = writeln!(t, "note: {note}");
            }
        }
        t
    }
}

/// Writes `times.csv`, `overlap.csv`, `tests.csv`, `records.csv` and
/// `report.txt` into `dir`.
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("times.csv", report.times_csv()?),
        ("overlap.csv", report.overlap_csv()?),
        ("tests.csv", report.tests_csv()?),
        ("records.csv", report.records_csv()?),
        ("report.txt", report.to_text().into_bytes()),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
