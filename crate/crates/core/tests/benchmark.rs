use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use salbench::benchmark::fixture::{tagged_index, write_fixture, write_saliency_maps, FixtureConfig, SaliencyKind};
use salbench::benchmark::{
    cooccurrence, emit_index, evaluate_test_split, load_annotations, load_index, parse_index, per_challenge_eval,
    save_index, size_histogram, validate_dataset, ChallengeTag, DatasetIndex, IndexEntry, IssueKind, Split,
};
use salbench::metrics::{binarize_gt, dataset_curve, eval_image, GrayImage};
use salbench::pnm::{read_pgm, write_pgm, write_ppm, RgbImage};
use salbench::Error;
use tempfile::tempdir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn entry(id: &str, split: Split, tags: &[ChallengeTag]) -> IndexEntry {
    IndexEntry {
        id: id.into(),
        rgb: format!("rgb/{id}.ppm").into(),
        thermal: format!("thermal/{id}.pgm").into(),
        gt: format!("gt/{id}.pgm").into(),
        split,
        tags: tags.iter().copied().collect(),
    }
}

/// Writes a consistent image triple for `e` under `root` with the given ground truth.
fn write_entry(root: &Path, e: &IndexEntry, gt: &GrayImage) {
    let (w, h) = gt.dims();
    for sub in ["rgb", "thermal", "gt"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    write_ppm(&root.join(&e.rgb), &RgbImage::new(w, h, vec![90; 3 * w * h]).unwrap()).unwrap();
    write_pgm(&root.join(&e.thermal), &GrayImage::filled(w, h, 40)).unwrap();
    write_pgm(&root.join(&e.gt), gt).unwrap();
}

/// A `size × size` mask with an axis-aligned `side × side` square at the origin.
fn square_mask(size: usize, side: usize) -> GrayImage {
    let pixels = (0..size * size)
        .map(|i| if i / size < side && i % size < side { 255 } else { 0 })
        .collect();
    GrayImage::new(size, size, pixels).unwrap()
}

#[test]
fn duplicated_id_in_shipped_index_is_named() {
    let path = fixtures().join("dup_ids.csv");
    match load_index(&path) {
        Err(Error::Parse { row, message, .. }) => {
            assert_eq!(row, 9);
            assert!(message.contains("duplicate id \"img0003\""), "{message}");
            assert!(message.contains("line 5"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(load_annotations(&path).is_err());
}

#[test]
fn unknown_tag_and_missing_file_are_parse_errors() {
    let dir = tempdir().unwrap();
    let bad_tag = "id,rgb,thermal,gt,split,tags\na,r.ppm,t.pgm,g.pgm,test,BSO;XYZ\n";
    let err = parse_index(bad_tag.as_bytes(), dir.path(), Path::new("idx.csv")).unwrap_err();
    assert!(err.to_string().contains("XYZ"), "{err}");

    let path = dir.path().join("index.csv");
    std::fs::write(&path, "id,rgb,thermal,gt,split,tags\na,r.ppm,t.pgm,g.pgm,test,\n").unwrap();
    let err = load_index(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    assert!(load_annotations(&path).is_ok());
}

#[test]
fn index_round_trips_through_emit() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig::default()).unwrap();
    let loaded = load_index(&dir.path().join("index.csv")).unwrap();
    assert_eq!(loaded, idx);
    let copy = dir.path().join("copy.csv");
    save_index(&loaded, &copy).unwrap();
    assert_eq!(load_index(&copy).unwrap(), loaded);
    let mut a = Vec::new();
    let mut b = Vec::new();
    emit_index(&loaded, &mut a).unwrap();
    emit_index(&load_index(&copy).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn consistent_fixture_validates_cleanly() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig::default()).unwrap();
    let report = validate_dataset(&idx).unwrap();
    assert_eq!(report.entry_count, 20);
    assert!(report.violations.is_empty() && report.warnings.is_empty(), "{report:?}");
}

#[test]
fn dimension_mismatch_and_speckle_are_reported() {
    let dir = tempdir().unwrap();
    let root = dir.path();
    let good = entry("good", Split::Test, &[]);
    let small_gt = entry("small_gt", Split::Test, &[]);
    let speckled = entry("speckled", Split::Train, &[]);
    write_entry(root, &good, &square_mask(32, 8));
    write_entry(root, &small_gt, &square_mask(32, 8));
    write_pgm(&root.join(&small_gt.gt), &square_mask(16, 4)).unwrap();
    let mut speckle = square_mask(32, 8);
    for i in [40, 300, 301, 700, 1000] {
        speckle.pixels[i] = 128;
    }
    write_entry(root, &speckled, &speckle);

    let idx = DatasetIndex::new(root, vec![good, small_gt, speckled]).unwrap();
    let report = validate_dataset(&idx).unwrap();
    assert!(!report.is_valid());
    assert_eq!(report.violations.len(), 1);
    let v = &report.violations[0];
    assert_eq!((v.id.as_str(), v.kind), ("small_gt", IssueKind::DimMismatch));
    assert!(v.message.contains("32x32") && v.message.contains("16x16"), "{}", v.message);
    assert_eq!(report.warnings.len(), 1);
    let w = &report.warnings[0];
    assert_eq!((w.id.as_str(), w.kind, w.pixels), ("speckled", IssueKind::NonBinaryMask, Some(5)));
    assert!(w.message.contains("non-binary mask"));
}

#[test]
fn size_histogram_of_hand_placed_squares() {
    let dir = tempdir().unwrap();
    // Ratios 1/16, 9/64, 25/64, 49/64 and 1 on 8×8 masks.
    let sides = [2, 3, 5, 7, 8];
    let entries: Vec<_> = sides
        .iter()
        .map(|&s| {
            let e = entry(&format!("sq{s}"), Split::Test, &[]);
            write_entry(dir.path(), &e, &square_mask(8, s));
            e
        })
        .collect();
    let idx = DatasetIndex::new(dir.path(), entries).unwrap();
    let hist = size_histogram(&idx, 4).unwrap();
    let counts: Vec<u64> = hist.bins.iter().map(|b| b.count).collect();
    assert_eq!(counts, [2, 1, 0, 2]);
    assert_eq!(hist.bins.iter().map(|b| b.count).sum::<u64>(), 5);
    assert_eq!((hist.bso_count, hist.sso_count, hist.entry_count), (3, 0, 5));
}

#[test]
fn size_rules_at_the_extremes() {
    let dir = tempdir().unwrap();
    let full = entry("full", Split::Test, &[]);
    let dot = entry("dot", Split::Test, &[]);
    write_entry(dir.path(), &full, &GrayImage::filled(64, 64, 255));
    let mut one = GrayImage::filled(64, 64, 0);
    one.pixels[64 * 10 + 20] = 255;
    write_entry(dir.path(), &dot, &one);
    let idx = DatasetIndex::new(dir.path(), vec![full, dot]).unwrap();
    let hist = size_histogram(&idx, 10).unwrap();
    assert_eq!((hist.bso_count, hist.sso_count), (1, 1));
    assert_eq!(hist.bins[0].count, 1);
    assert_eq!(hist.bins[9].count, 1);
}

#[test]
fn cooccurrence_counts_pairs() {
    use ChallengeTag::*;
    let idx = DatasetIndex::new("", vec![entry("a", Split::Test, &[Bso]), entry("b", Split::Train, &[Bso, Cb])]).unwrap();
    let m = cooccurrence(&idx);
    assert_eq!(m.get(Bso, Bso), 2);
    assert_eq!(m.get(Bso, Cb), 1);
    assert_eq!(m.get(Cb, Bso), 1);
    assert_eq!(m.get(Cb, Cb), 1);
    assert_eq!(m.counts.iter().flatten().sum::<u64>(), 5);
}

#[test]
fn cooccurrence_diagonal_counts_tags_and_matrix_is_symmetric() {
    let idx = tagged_index(800, 0.4, 21);
    let m = cooccurrence(&idx);
    assert!(m.is_symmetric());
    for t in ChallengeTag::ALL {
        let count = idx.entries.iter().filter(|e| e.has_tag(t)).count() as u64;
        assert_eq!(m.get(t, t), count, "{t:?}");
    }
}

#[test]
fn perfect_saliency_scores_one_for_every_present_tag() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig::default()).unwrap();
    let sal = dir.path().join("sal");
    write_saliency_maps(&idx, &sal, SaliencyKind::Perfect).unwrap();
    let table = per_challenge_eval(&idx, &sal).unwrap();
    assert!(!table.rows.is_empty());
    for r in &table.rows {
        assert!((r.max_f - 1.0).abs() < 1e-7, "{r:?}");
        assert_eq!(r.mean_mae, 0.0);
    }
    let present: BTreeSet<_> = idx.split(Split::Test).flat_map(|e| e.tags.iter().copied()).collect();
    let listed: BTreeSet<_> = table.rows.iter().map(|r| r.tag).collect();
    assert_eq!(present, listed);
    for t in &table.absent {
        assert!(!present.contains(t));
    }
    assert_eq!(table.rows.len() + table.absent.len(), 13);
}

#[test]
fn per_challenge_rows_match_manual_filtering() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig::default()).unwrap();
    let sal = dir.path().join("sal");
    write_saliency_maps(&idx, &sal, SaliencyKind::Noisy { noise: 0.3, seed: 4 }).unwrap();
    let table = per_challenge_eval(&idx, &sal).unwrap();
    for r in &table.rows {
        let accs: Vec<_> = idx
            .entries
            .iter()
            .filter(|e| e.split == Split::Test && e.tags.contains(&r.tag))
            .map(|e| {
                let s = read_pgm(&sal.join(format!("{}.pgm", e.id))).unwrap();
                let gt = binarize_gt(&read_pgm(&idx.resolve(&e.gt)).unwrap());
                eval_image(&s, &gt).unwrap()
            })
            .collect();
        let expect = dataset_curve(&accs).unwrap();
        assert_eq!(r.count, accs.len() as u64);
        assert_eq!(r.max_f.to_bits(), expect.max_f.to_bits(), "{:?}", r.tag);
        assert_eq!(r.mean_mae.to_bits(), expect.mean_mae.to_bits(), "{:?}", r.tag);
    }
}

#[test]
fn missing_saliency_map_names_the_entry() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig::default()).unwrap();
    let sal = dir.path().join("sal");
    write_saliency_maps(&idx, &sal, SaliencyKind::Perfect).unwrap();
    std::fs::remove_file(sal.join("img0006.pgm")).unwrap();
    let err = evaluate_test_split(&idx, &sal).unwrap_err();
    assert!(matches!(&err, Error::Entry { id, .. } if id == "img0006"), "{err}");
}

#[test]
fn repeated_evaluation_is_identical() {
    let dir = tempdir().unwrap();
    let idx = write_fixture(dir.path(), &FixtureConfig { entries: 30, ..FixtureConfig::default() }).unwrap();
    let sal = dir.path().join("sal");
    write_saliency_maps(&idx, &sal, SaliencyKind::Noisy { noise: 0.25, seed: 1 }).unwrap();
    let run = || {
        let split = evaluate_test_split(&idx, &sal).unwrap();
        split.overall().unwrap().curve.to_csv_string()
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(first.lines().count(), 257);
}
