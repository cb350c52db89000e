use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::index::{DatasetIndex, IndexEntry, Split};
use super::parallel::par_map;
use super::tags::ChallengeTag;
use crate::error::{Error, Result};
use crate::metrics::{binarize_gt, dataset_curve, eval_image, DatasetResult, EvalAccumulator};
use crate::pnm::read_pgm;

pub fn saliency_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.pgm"))
}

fn eval_entry(idx: &DatasetIndex, saliency_dir: &Path, e: &IndexEntry) -> Result<EvalAccumulator> {
    let run = || -> Result<EvalAccumulator> {
        let sal = read_pgm(&saliency_path(saliency_dir, &e.id))?;
        let gt = binarize_gt(&read_pgm(&idx.resolve(&e.gt))?);
        if sal.dims() != (gt.width, gt.height) {
            return Err(Error::Validation(format!(
                "saliency map is {}x{} but ground truth is {}x{}",
                sal.width, sal.height, gt.width, gt.height
            )));
        }
        eval_image(&sal, &gt)
    };
    run().map_err(|err| Error::entry(&e.id, err))
}

/// Per-image accumulators of the test split, in index order.
#[derive(Clone, Debug)]
pub struct SplitEval<'a> {
    pub entries: Vec<&'a IndexEntry>,
    pub accs: Vec<EvalAccumulator>,
}

impl SplitEval<'_> {
    pub fn overall(&self) -> Result<DatasetResult> {
        dataset_curve(&self.accs)
    }

    /// Accumulators of the entries carrying `tag`, in index order.
    pub fn with_tag(&self, tag: ChallengeTag) -> Vec<EvalAccumulator> {
        self.entries
            .iter()
            .zip(&self.accs)
            .filter(|(e, _)| e.has_tag(tag))
            .map(|(_, a)| a.clone())
            .collect()
    }
}

/// Scores `<saliency_dir>/<id>.pgm` against the ground truth of every test entry.
pub fn evaluate_test_split<'a>(idx: &'a DatasetIndex, saliency_dir: &Path) -> Result<SplitEval<'a>> {
    let entries: Vec<&IndexEntry> = idx.split(Split::Test).collect();
    if entries.is_empty() {
        return Err(Error::Validation("no test entries".into()));
    }
    let accs = par_map(&entries, |e| eval_entry(idx, saliency_dir, e))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitEval { entries, accs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRow {
    pub tag: ChallengeTag,
    pub max_f: f64,
    pub mean_mae: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeTable {
    /// One row per tag present in the test split, in tag order.
    pub rows: Vec<ChallengeRow>,
    /// Tags with no test entry.
    pub absent: Vec<ChallengeTag>,
}

impl ChallengeTable {
    pub fn from_split(eval: &SplitEval<'_>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut absent = Vec::new();
        for tag in ChallengeTag::ALL {
            let accs = eval.with_tag(tag);
            if accs.is_empty() {
                absent.push(tag);
                continue;
            }
            let r = dataset_curve(&accs)?;
            rows.push(ChallengeRow {
                tag,
                max_f: r.max_f,
                mean_mae: r.mean_mae,
                count: r.image_count,
            });
        }
        Ok(ChallengeTable { rows, absent })
    }

    /// Columns `tag,max_f,mean_mae,count`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let csv_err = |e: csv::Error| Error::Format {
            path: "<per_challenge>".into(),
            message: e.to_string(),
        };
        wr.write_record(["tag", "max_f", "mean_mae", "count"]).map_err(csv_err)?;
        for r in &self.rows {
            wr.serialize(r).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<per_challenge>", e))
    }
}

pub fn per_challenge_eval(idx: &DatasetIndex, saliency_dir: &Path) -> Result<ChallengeTable> {
    ChallengeTable::from_split(&evaluate_test_split(idx, saliency_dir)?)
}
