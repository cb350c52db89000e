//! Seeded synthetic datasets on disk, for tests and demonstrations without the real data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::saliency_path;
use super::index::{save_index, DatasetIndex, IndexEntry, Split};
use super::stats::{BSO_RATIO, SSO_RATIO};
use super::tags::ChallengeTag;
use crate::error::{Error, Result};
use crate::metrics::GrayImage;
use crate::pnm::{read_pgm, write_pgm, write_ppm, RgbImage};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub entries: usize,
    pub size: usize,
    /// Every `test_every`-th entry (starting with the first) goes to the test split.
    pub test_every: usize,
    /// Chance that each attribute tag other than BSO/SSO is set.
    pub tag_probability: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            entries: 20,
            size: 32,
            test_every: 2,
            tag_probability: 0.3,
            seed: 0,
        }
    }
}

/// Random attribute tags; BSO and SSO are left to the caller.
fn random_tags(p: f64, rng: &mut Rng) -> BTreeSet<ChallengeTag> {
    ChallengeTag::ALL
        .into_iter()
        .filter(|&t| t != ChallengeTag::Bso && t != ChallengeTag::Sso)
        .filter(|_| rng.next_f64() < p)
        .collect()
}

/// An annotation-only index with random tags; image paths are placeholders.
pub fn tagged_index(entries: usize, tag_probability: f64, seed: u64) -> DatasetIndex {
    let mut rng = Rng::new(seed);
    let entries = (0..entries)
        .map(|i| {
            let mut tags = random_tags(tag_probability, &mut rng);
            for t in [ChallengeTag::Bso, ChallengeTag::Sso] {
                if rng.next_f64() < tag_probability {
                    tags.insert(t);
                }
            }
            let id = format!("e{i:05}");
            IndexEntry {
                rgb: PathBuf::from(format!("rgb/{id}.ppm")),
                thermal: PathBuf::from(format!("thermal/{id}.pgm")),
                gt: PathBuf::from(format!("gt/{id}.pgm")),
                split: if i % 2 == 0 { Split::Test } else { Split::Train },
                tags,
                id,
            }
        })
        .collect();
    DatasetIndex {
        root: PathBuf::new(),
        entries,
    }
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes `rgb/`, `thermal/`, `gt/` and `index.csv` under `dir`. Each entry holds one square
/// object, hot in the thermal image; BSO/SSO tags follow the object's area ratio.
pub fn write_fixture(dir: &Path, cfg: &FixtureConfig) -> Result<DatasetIndex> {
    if cfg.size == 0 || cfg.test_every == 0 {
        return Err(Error::Config("fixture size and test_every must be positive".into()));
    }
    for sub in ["rgb", "thermal", "gt"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let s = cfg.size;
    let mut rng = Rng::new(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.entries);
    for i in 0..cfg.entries {
        let id = format!("img{i:04}");
        let side = ((0.08 + 0.8 * rng.next_f64()) * s as f64).round().clamp(1.0, s as f64) as usize;
        let y0 = rng.below(s - side + 1);
        let x0 = rng.below(s - side + 1);
        let inside = |y: usize, x: usize| y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;
        let bg: [f64; 3] = std::array::from_fn(|_| rng.uniform(0.2, 0.8));
        let fg: [f64; 3] = std::array::from_fn(|c| bg[c] + rng.uniform(-0.1, 0.1));
        let (cold, hot) = (rng.uniform(0.05, 0.3), rng.uniform(0.7, 0.95));

        let mut rgb = Vec::with_capacity(3 * s * s);
        let mut thermal = Vec::with_capacity(s * s);
        let mut gt = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let obj = inside(y, x);
                for c in 0..3 {
                    let base = if obj { fg[c] } else { bg[c] };
                    rgb.push(to_byte(base + rng.uniform(-0.05, 0.05)));
                }
                thermal.push(to_byte(if obj { hot } else { cold } + rng.uniform(-0.05, 0.05)));
                gt.push(if obj { 255 } else { 0 });
            }
        }

        let ratio = (side * side) as f64 / (s * s) as f64;
        let mut tags = random_tags(cfg.tag_probability, &mut rng);
        if ratio > BSO_RATIO {
            tags.insert(ChallengeTag::Bso);
        }
        if ratio < SSO_RATIO {
            tags.insert(ChallengeTag::Sso);
        }

        let entry = IndexEntry {
            rgb: PathBuf::from(format!("rgb/{id}.ppm")),
            thermal: PathBuf::from(format!("thermal/{id}.pgm")),
            gt: PathBuf::from(format!("gt/{id}.pgm")),
            split: if i % cfg.test_every == 0 { Split::Test } else { Split::Train },
            tags,
            id,
        };
        write_ppm(&dir.join(&entry.rgb), &RgbImage::new(s, s, rgb)?)?;
        write_pgm(&dir.join(&entry.thermal), &GrayImage::new(s, s, thermal)?)?;
        write_pgm(&dir.join(&entry.gt), &GrayImage::new(s, s, gt)?)?;
        entries.push(entry);
    }
    let idx = DatasetIndex::new(dir, entries)?;
    save_index(&idx, &dir.join("index.csv"))?;
    Ok(idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SaliencyKind {
    /// The ground truth itself.
    Perfect,
    /// Ground truth shrunk toward mid-grey plus seeded uniform noise of the given half-width.
    Noisy { noise: f64, seed: u64 },
}

/// Writes `<dir>/<id>.pgm` for every test entry of `idx`.
pub fn write_saliency_maps(idx: &DatasetIndex, dir: &Path, kind: SaliencyKind) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = match kind {
        SaliencyKind::Perfect => Rng::new(0),
        SaliencyKind::Noisy { seed, .. } => Rng::new(seed),
    };
    for e in idx.split(Split::Test) {
        let gt = read_pgm(&idx.resolve(&e.gt))?;
        let pixels = match kind {
            SaliencyKind::Perfect => gt.pixels.clone(),
            SaliencyKind::Noisy { noise, .. } => gt
                .pixels
                .iter()
                .map(|&p| to_byte(0.2 + 0.6 * f64::from(p) / 255.0 + rng.uniform(-noise, noise)))
                .collect(),
        };
        write_pgm(&saliency_path(dir, &e.id), &GrayImage::new(gt.width, gt.height, pixels)?)?;
    }
    Ok(())
}
