//! Comma-separated utterance manifests.
//!
//! Labeled manifests carry `utterance_path,speaker_id,gender,height_cm,age_years`;
//! unlabeled manifests carry `utterance_path,speaker_id`. Paths are relative
//! to the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Binary classification target: male 0, female 1.
    pub fn target(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "M" | "m" => Some(Gender::Male),
            "F" | "f" => Some(Gender::Female),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRecord {
    /// Path as written in the manifest.
    pub utterance: String,
    /// Path resolved against the manifest directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub gender: Option<Gender>,
    pub height_cm: Option<f64>,
    pub age_years: Option<f64>,
}

impl SpeakerRecord {
    pub fn is_labeled(&self) -> bool {
        self.gender.is_some() && self.height_cm.is_some() && self.age_years.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Labeled,
    Unlabeled,
}

const LABELED_COLUMNS: [&str; 5] = [
    "utterance_path",
    "speaker_id",
    "gender",
    "height_cm",
    "age_years",
];
const UNLABELED_COLUMNS: [&str; 2] = ["utterance_path", "speaker_id"];

pub const HEIGHT_RANGE_CM: (f64, f64) = (100.0, 250.0);
pub const AGE_RANGE_YEARS: (f64, f64) = (1.0, 120.0);

pub fn load_manifest(path: &Path, kind: ManifestKind) -> Result<Vec<SpeakerRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, path, kind)
}

/// Parses manifest text; `origin` names the source in errors and anchors
/// relative utterance paths.
pub fn parse_manifest<R: std::io::Read>(
    reader: R,
    origin: &Path,
    kind: ManifestKind,
) -> Result<Vec<SpeakerRecord>> {
    let base = origin.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest {
            path: origin.to_path_buf(),
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let required: &[&str] = match kind {
        ManifestKind::Labeled => &LABELED_COLUMNS,
        ManifestKind::Unlabeled => &UNLABELED_COLUMNS,
    };
    let mut idx = Vec::with_capacity(required.len());
    for col in required {
        let i = headers
            .iter()
            .position(|h| h == *col)
            .ok_or_else(|| Error::MissingColumn {
                path: origin.to_path_buf(),
                column: col.to_string(),
            })?;
        idx.push(i);
    }

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let bad = |reason: String| Error::Manifest {
            path: origin.to_path_buf(),
            row: row_no,
            reason,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let utterance = field(0).to_string();
        if utterance.is_empty() {
            return Err(bad("empty utterance_path".into()));
        }
        let speaker_id = field(1).to_string();
        if speaker_id.is_empty() {
            return Err(bad("empty speaker_id".into()));
        }
        let mut rec = SpeakerRecord {
            path: base.join(&utterance),
            utterance,
            speaker_id,
            gender: None,
            height_cm: None,
            age_years: None,
        };
        if kind == ManifestKind::Labeled {
            let g = field(2);
            rec.gender =
                Some(Gender::parse(g).ok_or_else(|| bad(format!("gender `{g}` is not M or F")))?);
            rec.height_cm = Some(parse_in_range(field(3), "height_cm", HEIGHT_RANGE_CM).map_err(&bad)?);
            rec.age_years = Some(parse_in_range(field(4), "age_years", AGE_RANGE_YEARS).map_err(&bad)?);
        }
        out.push(rec);
    }
    Ok(out)
}

fn parse_in_range(raw: &str, column: &str, (lo, hi): (f64, f64)) -> std::result::Result<f64, String> {
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("{column} `{raw}` is not a number"))?;
    if !v.is_finite() || v < lo || v > hi {
        return Err(format!("{column} {v} outside [{lo}, {hi}]"));
    }
    Ok(v)
}

/// Writes records in the manifest format. Utterance paths are written as
/// stored in `SpeakerRecord::utterance`.
pub fn write_manifest(path: &Path, records: &[SpeakerRecord], kind: ManifestKind) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: &[&str] = match kind {
        ManifestKind::Labeled => &LABELED_COLUMNS,
        ManifestKind::Unlabeled => &UNLABELED_COLUMNS,
    };
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.utterance.clone(), r.speaker_id.clone()];
        if kind == ManifestKind::Labeled {
            let (Some(g), Some(h), Some(a)) = (r.gender, r.height_cm, r.age_years) else {
                return Err(Error::InvalidArgument(format!(
                    "record {} is not labeled",
                    r.utterance
                )));
            };
            row.push(g.code().to_string());
            row.push(h.to_string());
            row.push(a.to_string());
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let reason = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            reason,
        },
    }
}
