use std::io::Write;

use serde::{Deserialize, Serialize};

use super::index::DatasetIndex;
use super::parallel::par_map;
use super::tags::{ChallengeTag, TAG_COUNT};
use crate::error::{Error, Result};
use crate::metrics::{binarize_gt, BinaryMask};
use crate::pnm::read_pgm;

/// Object-size ratio above which an entry counts as a big salient object.
pub const BSO_RATIO: f64 = 0.26;
/// Object-size ratio below which an entry counts as a small salient object.
pub const SSO_RATIO: f64 = 0.05;

/// `counts[a][b]` = entries tagged with both `a` and `b`, indexed by [`ChallengeTag::index`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub counts: [[u64; TAG_COUNT]; TAG_COUNT],
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: ChallengeTag, b: ChallengeTag) -> u64 {
        self.counts[a.index()][b.index()]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..TAG_COUNT).all(|a| (0..TAG_COUNT).all(|b| self.counts[a][b] == self.counts[b][a]))
    }

    /// Header `tag,BSO,...,T`, then one row per tag.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Format {
            path: "<cooccurrence>".into(),
            message: e.to_string(),
        };
        let mut header = vec!["tag".to_string()];
        header.extend(ChallengeTag::ALL.iter().map(|t| t.code().to_string()));
        wr.write_record(&header).map_err(csv_err)?;
        for a in ChallengeTag::ALL {
            let mut row = vec![a.code().to_string()];
            row.extend(self.counts[a.index()].iter().map(u64::to_string));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<cooccurrence>", e))
    }
}

pub fn cooccurrence(idx: &DatasetIndex) -> CooccurrenceMatrix {
    let mut counts = [[0u64; TAG_COUNT]; TAG_COUNT];
    for e in &idx.entries {
        let tags: Vec<usize> = e.tags.iter().map(|t| t.index()).collect();
        for &a in &tags {
            for &b in &tags {
                counts[a][b] += 1;
            }
        }
    }
    CooccurrenceMatrix { counts }
}

pub fn object_ratio(mask: &BinaryMask) -> f64 {
    let total = mask.bits.len();
    if total == 0 {
        0.0
    } else {
        mask.positives() as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub bins: Vec<SizeBin>,
    pub bso_count: u64,
    pub sso_count: u64,
    pub entry_count: u64,
}

impl SizeHistogram {
    /// Columns `bin,lower,upper,count`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Format {
            path: "<size_histogram>".into(),
            message: e.to_string(),
        };
        wr.write_record(["bin", "lower", "upper", "count"]).map_err(csv_err)?;
        for (i, b) in self.bins.iter().enumerate() {
            wr.write_record([i.to_string(), b.lower.to_string(), b.upper.to_string(), b.count.to_string()])
                .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<size_histogram>", e))
    }
}

/// Bin `i` covers `[i/bins, (i+1)/bins)`; the last bin also takes ratio 1.
pub fn histogram_of_ratios(ratios: &[f64], bins: usize) -> Result<SizeHistogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    for &r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::contract(format!("object ratio {r} outside [0, 1]")));
        }
        counts[((r * bins as f64).floor() as usize).min(bins - 1)] += 1;
    }
    Ok(SizeHistogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| SizeBin {
                lower: i as f64 / bins as f64,
                upper: (i + 1) as f64 / bins as f64,
                count,
            })
            .collect(),
        bso_count: ratios.iter().filter(|&&r| r > BSO_RATIO).count() as u64,
        sso_count: ratios.iter().filter(|&&r| r < SSO_RATIO).count() as u64,
        entry_count: ratios.len() as u64,
    })
}

/// Object-size ratio of every entry's binarized ground truth, in index order.
pub fn object_ratios(idx: &DatasetIndex) -> Result<Vec<f64>> {
    par_map(&idx.entries, |e| {
        read_pgm(&idx.resolve(&e.gt))
            .map(|g| object_ratio(&binarize_gt(&g)))
            .map_err(|err| Error::entry(&e.id, err))
    })?
    .into_iter()
    .collect()
}

pub fn size_histogram(idx: &DatasetIndex, bins: usize) -> Result<SizeHistogram> {
    histogram_of_ratios(&object_ratios(idx)?, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_rules() {
        let all = BinaryMask {
            width: 2,
            height: 2,
            bits: vec![true; 4],
        };
        assert_eq!(object_ratio(&all), 1.0);
        let mut one = vec![false; 64 * 64];
        one[100] = true;
        let r = object_ratio(&BinaryMask {
            width: 64,
            height: 64,
            bits: one,
        });
        assert!((r - 0.000244).abs() < 1e-6);
        let h = histogram_of_ratios(&[1.0, r, 0.26, 0.5], 10).unwrap();
        assert_eq!((h.bso_count, h.sso_count), (2, 1));
        assert_eq!(h.bins[9].count, 1);
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<u64>(), 4);
    }
}
