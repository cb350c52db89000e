use serde::{Deserialize, Serialize};

use super::index::{DatasetIndex, IndexEntry};
use super::parallel::par_map;
use crate::error::Result;
use crate::pnm::{read_pgm, read_ppm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Decode,
    DimMismatch,
    NonBinaryMask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub id: String,
    pub kind: IssueKind,
    pub message: String,
    /// Offending pixel count, for mask warnings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixels: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entry_count: usize,
    pub violations: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_entry(idx: &DatasetIndex, e: &IndexEntry) -> (Vec<Issue>, Vec<Issue>) {
    let issue = |kind, message: String, pixels| Issue {
        id: e.id.clone(),
        kind,
        message,
        pixels,
    };
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let rgb = read_ppm(&idx.resolve(&e.rgb));
    let thermal = read_pgm(&idx.resolve(&e.thermal));
    let gt = read_pgm(&idx.resolve(&e.gt));
    for (name, err) in [
        ("rgb", rgb.as_ref().err()),
        ("thermal", thermal.as_ref().err()),
        ("gt", gt.as_ref().err()),
    ] {
        if let Some(err) = err {
            violations.push(issue(IssueKind::Decode, format!("{name}: {err}"), None));
        }
    }
    if let Ok(gt) = &gt {
        let grey = gt.pixels.iter().filter(|&&p| p != 0 && p != 255).count() as u64;
        if grey > 0 {
            warnings.push(issue(
                IssueKind::NonBinaryMask,
                format!("non-binary mask: {grey} pixels are neither 0 nor 255"),
                Some(grey),
            ));
        }
    }
    if let (Ok(rgb), Ok(thermal), Ok(gt)) = (&rgb, &thermal, &gt) {
        let dims = [rgb.dims(), thermal.dims(), gt.dims()];
        if dims.iter().any(|&d| d != dims[0]) {
            let show = |(w, h): (usize, usize)| format!("{w}x{h}");
            violations.push(issue(
                IssueKind::DimMismatch,
                format!(
                    "dimension mismatch: rgb {}, thermal {}, gt {}",
                    show(dims[0]),
                    show(dims[1]),
                    show(dims[2])
                ),
                None,
            ));
        }
    }
    (violations, warnings)
}

/// Decodes every entry's images and checks dims and masks. Problems go into the report, in
/// index order.
pub fn validate_dataset(idx: &DatasetIndex) -> Result<ValidationReport> {
    let per_entry = par_map(&idx.entries, |e| check_entry(idx, e))?;
    let mut report = ValidationReport {
        entry_count: idx.len(),
        violations: Vec::new(),
        warnings: Vec::new(),
    };
    for (v, w) in per_entry {
        report.violations.extend(v);
        report.warnings.extend(w);
    }
    Ok(report)
}
