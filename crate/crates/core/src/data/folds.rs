//! Manifest parsing and patient-wise cross-validation folds.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::volume::write_atomic;

/// Number of validation scans per fold.
pub const VALIDATION_SCANS: usize = 3;

/// One manifest line: `id<TAB>patient<TAB>timepoint<TAB>image_path<TAB>mask_path`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub patient: String,
    pub timepoint: u32,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Reads a manifest. Blank lines and lines starting with `#` are skipped;
/// relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub(crate) fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| Error::Data(format!("manifest line {}: {detail}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, patient, tp, image, mask] = cols[..] else {
            return Err(bad(format!("expected 5 tab-separated columns, got {}", cols.len())));
        };
        if id.is_empty() || patient.is_empty() {
            return Err(bad("empty id or patient".into()));
        }
        let timepoint = tp.parse().map_err(|_| bad(format!("bad time point `{tp}`")))?;
        if !ids.insert(id.to_string()) {
            return Err(bad(format!("duplicate id `{id}`")));
        }
        out.push(ManifestEntry {
            id: id.into(),
            patient: patient.into(),
            timepoint,
            image_path: base.join(image),
            mask_path: base.join(mask),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}",
            e.id,
            e.patient,
            e.timepoint,
            e.image_path.display(),
            e.mask_path.display()
        );
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Fold input: a volume's tags plus its slice count after preprocessing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldVolume {
    pub id: String,
    pub patient: String,
    pub timepoint: u32,
    pub slices: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Slice totals `(train, val, test)`.
    pub counts: (usize, usize, usize),
}

/// One fold per patient, in sorted patient order. Fold `k` tests the final
/// time point of patient `k` and validates on the final time points of the
/// next three patients (wrapping around); everything else trains.
pub fn make_folds(volumes: &[FoldVolume]) -> Result<Vec<FoldSpec>> {
    let mut by_patient: BTreeMap<&str, Vec<&FoldVolume>> = BTreeMap::new();
    let mut ids = HashSet::new();
    for v in volumes {
        if !ids.insert(v.id.as_str()) {
            return Err(Error::Data(format!("duplicate volume id `{}`", v.id)));
        }
        by_patient.entry(&v.patient).or_default().push(v);
    }
    for (p, scans) in by_patient.iter_mut() {
        scans.sort_by_key(|v| v.timepoint);
        if scans.len() < 2 {
            return Err(Error::Data(format!("patient `{p}` has {} time point(s); at least 2 needed", scans.len())));
        }
        if scans.windows(2).any(|w| w[0].timepoint == w[1].timepoint) {
            return Err(Error::Data(format!("patient `{p}` has a repeated time point")));
        }
    }
    let patients: Vec<&Vec<&FoldVolume>> = by_patient.values().collect();
    let np = patients.len();
    if np < VALIDATION_SCANS + 1 {
        return Err(Error::Data(format!(
            "{np} patient(s); at least {} needed for test plus {VALIDATION_SCANS} validation scans",
            VALIDATION_SCANS + 1
        )));
    }
    let last = |p: usize| *patients[p].last().expect("non-empty");
    let folds = (0..np)
        .map(|k| {
            let test = last(k);
            let val: Vec<&FoldVolume> = (1..=VALIDATION_SCANS).map(|j| last((k + j) % np)).collect();
            let held: HashSet<&str> = val.iter().chain([&test]).map(|v| v.id.as_str()).collect();
            let train: Vec<&FoldVolume> = patients
                .iter()
                .flat_map(|p| p.iter().copied())
                .filter(|v| !held.contains(v.id.as_str()))
                .collect();
            let total = |vs: &[&FoldVolume]| vs.iter().map(|v| v.slices).sum::<usize>();
            let ids = |vs: &[&FoldVolume]| vs.iter().map(|v| v.id.clone()).collect::<Vec<_>>();
            FoldSpec {
                fold_id: k + 1,
                counts: (total(&train), total(&val), test.slices),
                train: ids(&train),
                val: ids(&val),
                test: vec![test.id.clone()],
            }
        })
        .collect();
    Ok(folds)
}
