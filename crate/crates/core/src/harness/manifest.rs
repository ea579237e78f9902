use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Column order used when writing manifests. Reading matches by header name,
/// and the last three columns may be omitted.
pub const MANIFEST_COLUMNS: [&str; 9] = [
    "lesion_id",
    "manual_mask",
    "semi_mask",
    "time_manual",
    "time_semi",
    "satisfied",
    "manual_mask_2",
    "semi_mask_2",
    "spacing_mm",
];

/// One lesion of a study. Paths are resolved against the manifest directory
/// when read.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub lesion_id: String,
    pub manual_mask: PathBuf,
    pub semi_mask: PathBuf,
    /// Seconds.
    pub time_manual: f64,
    pub time_semi: f64,
    pub satisfied: bool,
    /// Second examiner's manual and semiautomatic masks.
    pub second: Option<(PathBuf, PathBuf)>,
    pub spacing_mm: Option<f64>,
}

#[derive(Deserialize)]
struct RawRow {
    lesion_id: String,
    manual_mask: String,
    semi_mask: String,
    time_manual: String,
    time_semi: String,
    satisfied: String,
    #[serde(default)]
    manual_mask_2: Option<String>,
    #[serde(default)]
    semi_mask_2: Option<String>,
    #[serde(default)]
    spacing_mm: Option<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" | "1" => Some(true),
        "false" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, rec) in reader.deserialize::<RawRow>().enumerate() {
        let line = k + 2;
        let raw = rec.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| Error::Manifest(format!("{} line {line}: {what}", path.display()));
        let time = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| bad(&format!("{name} '{s}' is not a number")))?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(bad(&format!("{name} must be positive")))
            }
        };
        let second = match (non_empty(raw.manual_mask_2), non_empty(raw.semi_mask_2)) {
            (Some(m), Some(s)) => Some((base.join(m), base.join(s))),
            (None, None) => None,
            _ => return Err(bad("manual_mask_2 and semi_mask_2 must be given together")),
        };
        let spacing_mm = match non_empty(raw.spacing_mm) {
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| bad(&format!("spacing_mm '{s}'")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad("spacing_mm must be positive"));
                }
                Some(v)
            }
            None => None,
        };
        if raw.lesion_id.is_empty() {
            return Err(bad("empty lesion_id"));
        }
        rows.push(ManifestRow {
            time_manual: time(&raw.time_manual, "time_manual")?,
            time_semi: time(&raw.time_semi, "time_semi")?,
            satisfied: parse_bool(&raw.satisfied).ok_or_else(|| bad(&format!("satisfied '{}'", raw.satisfied)))?,
            lesion_id: raw.lesion_id,
            manual_mask: base.join(raw.manual_mask),
            semi_mask: base.join(raw.semi_mask),
            second,
            spacing_mm,
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest(format!("{} lists no lesions", path.display())));
    }
    Ok(rows)
}

/// Writes rows with paths made relative to the manifest directory where
/// possible.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Manifest(e.to_string());
    w.write_record(MANIFEST_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let (m2, s2) = match &r.second {
            Some((m, s)) => (rel(m), rel(s)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.lesion_id.clone(),
            rel(&r.manual_mask),
            rel(&r.semi_mask),
            r.time_manual.to_string(),
            r.time_semi.to_string(),
            r.satisfied.to_string(),
            m2,
            s2,
            r.spacing_mm.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
