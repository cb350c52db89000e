mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::{fixture, json, ok, outputs, p, read, salbench};
use salbench::fusion::{adfnet_forward, adfnet_init, save_weights, NetConfig};
use salbench::metrics::{quantize, GrayImage};
use salbench::pnm::{read_pgm, read_ppm, write_pgm};
use salbench::selfcheck::{GRADIENT_SUITES, METRIC_SUITES, ORACLE_SUITES};
use tempfile::tempdir;

const CODES: [&str; 13] = [
    "BSO", "CB", "CIB", "IC", "LI", "MSO", "OF", "SSO", "SA", "TC", "BW", "RGB", "T",
];

fn code(out: &std::process::Output) -> Option<i32> {
    out.status.code()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn matrix_from_csv(path: &Path) -> Vec<Vec<u64>> {
    let mut rd = csv::Reader::from_path(path).expect("cooccurrence csv");
    let header: Vec<String> = rd.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header[0], "tag");
    assert_eq!(&header[1..], &CODES);
    rd.records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.unwrap();
            assert_eq!(&r[0], CODES[i]);
            r.iter().skip(1).map(|v| v.parse().unwrap()).collect()
        })
        .collect()
}

/// Tag sets read straight from the index text.
fn tag_sets(index: &Path) -> Vec<BTreeSet<String>> {
    let mut rd = csv::Reader::from_path(index).expect("index csv");
    rd.records()
        .map(|r| {
            let r = r.unwrap();
            r[5].split(';').filter(|t| !t.is_empty()).map(str::to_string).collect()
        })
        .collect()
}

#[test]
fn eval_of_ground_truth_as_saliency_is_perfect() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let out = dir.path().join("ev");
    ok(&["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&out)]);
    let s = json(&out.join("summary.json"));
    assert!((s["max_f"].as_f64().unwrap() - 1.0).abs() < 1e-7);
    assert_eq!(s["mean_mae"].as_f64().unwrap(), 0.0);
    assert_eq!(s["image_count"].as_u64().unwrap(), 10);
    let curve = String::from_utf8(read(&out.join("pr_curve.csv"))).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("threshold,precision,recall,f_beta"));
    assert_eq!(lines.count(), 256);
    let table = String::from_utf8(read(&out.join("per_challenge.csv"))).unwrap();
    assert!(table.starts_with("tag,max_f,mean_mae,count\n"));
}

#[test]
fn eval_outputs_repeat_byte_for_byte() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "noisy");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&out)]);
        outputs(&out)
    };
    let first = run("a");
    assert_eq!(first.len(), 3);
    assert_eq!(first, run("b"));
}

#[test]
fn eval_without_test_entries_is_a_validation_error() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let text = String::from_utf8(read(&ds.join("index.csv"))).unwrap();
    std::fs::write(ds.join("train_only.csv"), text.replace(",test,", ",train,")).unwrap();
    let out = salbench(
        &["eval", "--index", p(&ds.join("train_only.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&dir.path().join("ev"))],
        None,
    );
    assert_eq!(code(&out), Some(3));
    assert!(stderr(&out).contains("no test entries"), "{}", stderr(&out));
}

#[test]
fn eval_with_missing_inputs_is_an_input_error() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let ev = dir.path().join("ev");
    let missing_index = salbench(
        &["eval", "--index", p(&dir.path().join("absent.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&ev)],
        None,
    );
    assert_eq!(code(&missing_index), Some(2));
    assert!(stderr(&missing_index).contains("absent.csv"));
    let missing_dir = salbench(
        &["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&dir.path().join("nowhere")), "--out", p(&ev)],
        None,
    );
    assert_eq!(code(&missing_dir), Some(2));
    std::fs::remove_file(ds.join("saliency").join("img0004.pgm")).unwrap();
    let missing_map = salbench(
        &["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&ev)],
        None,
    );
    assert_eq!(code(&missing_map), Some(2));
    assert!(stderr(&missing_map).contains("img0004"), "{}", stderr(&missing_map));
}

#[test]
fn eval_with_mismatched_saliency_size_is_a_validation_error() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    write_pgm(&ds.join("saliency").join("img0002.pgm"), &GrayImage::filled(16, 16, 0)).unwrap();
    let out = salbench(
        &["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&dir.path().join("ev"))],
        None,
    );
    assert_eq!(code(&out), Some(3));
    assert!(stderr(&out).contains("img0002"), "{}", stderr(&out));
}

#[test]
fn stats_with_empty_tags_gives_a_zero_matrix() {
    let dir = tempdir().unwrap();
    let index = dir.path().join("index.csv");
    let mut text = String::from("id,rgb,thermal,gt,split,tags\n");
    for i in 0..4 {
        text.push_str(&format!("a{i},rgb/a{i}.ppm,t/a{i}.pgm,gt/a{i}.pgm,test,\n"));
    }
    std::fs::write(&index, text).unwrap();
    let out = dir.path().join("st");
    ok(&["stats", "--index", p(&index), "--out", p(&out), "--annotations-only"]);
    let m = matrix_from_csv(&out.join("cooccurrence.csv"));
    assert_eq!(m.len(), 13);
    assert!(m.iter().flatten().all(|&v| v == 0));
}

#[test]
fn stats_matrix_matches_double_loop_and_is_symmetric() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let out = dir.path().join("st");
    ok(&["stats", "--index", p(&ds.join("index.csv")), "--out", p(&out)]);
    let m = matrix_from_csv(&out.join("cooccurrence.csv"));
    let sets = tag_sets(&ds.join("index.csv"));
    for (i, a) in CODES.iter().enumerate() {
        for (j, b) in CODES.iter().enumerate() {
            let mut expect = 0;
            for s in &sets {
                if s.contains(*a) && s.contains(*b) {
                    expect += 1;
                }
            }
            assert_eq!(m[i][j], expect, "{a}/{b}");
            assert_eq!(m[i][j], m[j][i]);
        }
    }
    let report = json(&out.join("validation_report.json"));
    assert_eq!(report["entry_count"].as_u64(), Some(20));
    assert!(report["violations"].as_array().unwrap().is_empty());
    let hist = String::from_utf8(read(&out.join("size_histogram.csv"))).unwrap();
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(hist.lines().count(), 11);
    assert_eq!(total, 20);
}

#[test]
fn stats_rejects_a_duplicate_id_as_an_input_error() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let text = String::from_utf8(read(&ds.join("index.csv"))).unwrap();
    std::fs::write(ds.join("dup.csv"), text.replace("img0003,", "img0002,")).unwrap();
    let out = salbench(&["stats", "--index", p(&ds.join("dup.csv")), "--out", p(&dir.path().join("st"))], None);
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("duplicate id \"img0002\""), "{}", stderr(&out));
}

#[test]
fn infer_writes_the_library_prediction_as_p5() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let (rgb, thermal) = (ds.join("rgb/img0006.ppm"), ds.join("thermal/img0006.pgm"));
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["infer", "--rgb", p(&rgb), "--thermal", p(&thermal), "--out", p(&out), "--seed", "3"]);
        read(&out.join("img0006.pgm"))
    };
    let bytes = run("a");
    assert_eq!(bytes, run("b"));
    assert!(bytes.starts_with(b"P5"));
    let written = read_pgm(&dir.path().join("a/img0006.pgm")).unwrap();
    assert_eq!(written.dims(), (32, 32));

    let net = adfnet_init(&NetConfig::default(), 3).unwrap();
    let pred = adfnet_forward(&net, &read_ppm(&rgb).unwrap().to_tensor(), &read_pgm(&thermal).unwrap().to_tensor()).unwrap();
    assert_eq!(written, quantize(&pred).unwrap());
}

#[test]
fn infer_with_saved_weights_uses_them() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let weights = dir.path().join("w.salb");
    save_weights(&adfnet_init(&NetConfig::default(), 9).unwrap(), &weights).unwrap();
    let (rgb, thermal) = (ds.join("rgb/img0000.ppm"), ds.join("thermal/img0000.pgm"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["infer", "--weights", p(&weights), "--rgb", p(&rgb), "--thermal", p(&thermal), "--out", p(&a), "--id", "x"]);
    ok(&["infer", "--rgb", p(&rgb), "--thermal", p(&thermal), "--out", p(&b), "--id", "x", "--seed", "9"]);
    assert_eq!(read(&a.join("x.pgm")), read(&b.join("x.pgm")));
}

#[test]
fn infer_with_mismatched_pair_is_an_input_error() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let small = dir.path().join("small.pgm");
    write_pgm(&small, &GrayImage::filled(16, 16, 7)).unwrap();
    let out = salbench(
        &["infer", "--rgb", p(&ds.join("rgb/img0000.ppm")), "--thermal", p(&small), "--out", p(&dir.path().join("inf"))],
        None,
    );
    assert_eq!(code(&out), Some(2));
}

#[test]
fn train_toy_without_steps_keeps_the_initial_weights() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("tt");
    ok(&["train-toy", "--out", p(&out), "--steps", "0", "--seed", "5"]);
    let init = dir.path().join("init.salb");
    save_weights(&adfnet_init(&NetConfig::default(), 5).unwrap(), &init).unwrap();
    assert_eq!(read(&out.join("weights.salb")), read(&init));
    assert_eq!(String::from_utf8(read(&out.join("loss_log.csv"))).unwrap(), "step,total,ce,edge,grad_norm\n");
}

#[test]
fn train_toy_log_is_finite_and_repeatable() {
    let dir = tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["train-toy", "--out", p(&out), "--steps", "6", "--size", "32"]);
        String::from_utf8(read(&out.join("loss_log.csv"))).unwrap()
    };
    let log = run("a");
    assert_eq!(log, run("b"));
    let rows: Vec<&str> = log.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], i.to_string());
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()), "{row}");
    }
    let summary = json(&dir.path().join("a/train_summary.json"));
    assert_eq!(summary["steps"].as_u64(), Some(6));
}

#[test]
fn train_toy_divergence_is_a_numerical_error() {
    let dir = tempdir().unwrap();
    let out = salbench(
        &["train-toy", "--out", p(&dir.path().join("tt")), "--steps", "5", "--size", "32", "--lr", "1e300", "--no-clip"],
        None,
    );
    assert_eq!(code(&out), Some(4), "{}", stderr(&out));
}

#[test]
fn selfcheck_passes_and_reports_each_suite_once() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("sc");
    ok(&["selfcheck", "--out", p(&out)]);
    let report = json(&out.join("selfcheck_report.json"));
    assert_eq!(report["passed"].as_bool(), Some(true));
    let names: Vec<&str> = report["suites"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    let expected: Vec<&str> = ORACLE_SUITES.iter().chain(&GRADIENT_SUITES).chain(&METRIC_SUITES).copied().collect();
    assert_eq!(names, expected);
    assert_eq!(names.iter().collect::<BTreeSet<_>>().len(), names.len());
    for s in report["suites"].as_array().unwrap() {
        assert!(s["max_error"].as_f64().unwrap() < 1e-5, "{s}");
    }
}

#[test]
fn selfcheck_catches_a_corrupted_laplace_kernel() {
    let dir = tempdir().unwrap();
    let out = salbench(&["selfcheck", "--out", p(&dir.path().join("sc")), "--corrupt-laplace"], None);
    assert_eq!(code(&out), Some(1));
    assert!(stderr(&out).contains("laplacian_boundary#"), "{}", stderr(&out));
    let report = json(&dir.path().join("sc/selfcheck_report.json"));
    assert_eq!(report["passed"].as_bool(), Some(false));
    let failed: Vec<&str> = report["suites"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["passed"] == false)
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"laplacian_boundary"), "{failed:?}");
    assert!(!failed.contains(&"conv2d"));
}

#[test]
fn replaying_a_config_echo_reproduces_outputs() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "noisy");
    let ev = dir.path().join("ev");
    ok(&["eval", "--index", p(&ds.join("index.csv")), "--saliency-dir", p(&ds.join("saliency")), "--out", p(&ev)]);
    let again = dir.path().join("again");
    ok(&["replay", "--config", p(&ev.join("config_echo.json")), "--out", p(&again)]);
    assert_eq!(outputs(&ev), outputs(&again));

    let inf = dir.path().join("inf");
    ok(&["infer", "--rgb", p(&ds.join("rgb/img0002.ppm")), "--thermal", p(&ds.join("thermal/img0002.pgm")), "--out", p(&inf)]);
    let inf2 = dir.path().join("inf2");
    ok(&["replay", "--config", p(&inf.join("config_echo.json")), "--out", p(&inf2)]);
    assert_eq!(outputs(&inf), outputs(&inf2));

    let tt = dir.path().join("tt");
    ok(&["train-toy", "--out", p(&tt), "--steps", "3", "--size", "32", "--seed", "2"]);
    std::fs::remove_file(tt.join("weights.salb")).unwrap();
    ok(&["replay", "--config", p(&tt.join("config_echo.json"))]);
    let tt2 = dir.path().join("tt2");
    ok(&["replay", "--config", p(&tt.join("config_echo.json")), "--out", p(&tt2)]);
    assert_eq!(outputs(&tt), outputs(&tt2));
}

#[test]
fn every_command_echoes_its_config() {
    let dir = tempdir().unwrap();
    let ds = fixture(dir.path(), "perfect");
    let echo = json(&ds.join("config_echo.json"));
    assert_eq!(echo["command"].as_str(), Some("fixture"));
    let st = dir.path().join("st");
    ok(&["stats", "--index", p(&ds.join("index.csv")), "--out", p(&st), "--bins", "4"]);
    let echo = json(&st.join("config_echo.json"));
    assert_eq!(echo["command"].as_str(), Some("stats"));
    assert_eq!(echo["stats"]["bins"].as_u64(), Some(4));
}

#[test]
fn malformed_config_echo_is_an_input_error() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"command\": \"eval\"").unwrap();
    let out = salbench(&["replay", "--config", p(&cfg)], None);
    assert_eq!(code(&out), Some(2));
}
