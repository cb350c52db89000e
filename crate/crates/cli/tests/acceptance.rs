//! Acceptance criteria, run in order on one thread so the reported times are not shared with
//! other tests. Each criterion prints one PASS/FAIL line; the test fails if any criterion does.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{json, outputs, p, read, salbench};
use salbench::benchmark::fixture::tagged_index;
use salbench::benchmark::{cooccurrence, load_annotations, ChallengeTag};
use salbench::fusion::{cbam, channel_attention, spatial_attention, CbamParams};
use salbench::losses::{cross_entropy, laplacian_boundary};
use salbench::metrics::{dataset_curve, eval_image, f_measure};
use salbench::selfcheck::{gradient_suites, metric_suites, oracle_suites, random_map, random_mask, SelfcheckConfig, SuiteResult};
use salbench::{reference, Rng, Tensor};
use tempfile::tempdir;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn suites_pass(suites: &[SuiteResult], names: &[&str], min_instances: usize, tolerance: f64) -> Outcome {
    let mut worst = 0.0f64;
    for name in names {
        let s = suites
            .iter()
            .find(|s| s.name == *name)
            .ok_or_else(|| format!("suite {name} missing"))?;
        check(s.instances >= min_instances, || format!("{name}: {} instances", s.instances))?;
        check(s.passed && s.max_error < tolerance, || {
            format!("{name}: max error {:e}, failing {:?}", s.max_error, s.failures)
        })?;
        worst = worst.max(s.max_error);
    }
    Ok(format!("{} suites, worst error {worst:.1e}", names.len()))
}

fn kernel_oracles() -> Outcome {
    let suites = oracle_suites(&SelfcheckConfig::default());
    suites_pass(
        &suites,
        &["conv2d", "avgpool", "adaptive_avgpool", "maxpool2", "upsample_bilinear"],
        100,
        1e-12,
    )
}

fn gradient_checks() -> Outcome {
    let suites = gradient_suites(&SelfcheckConfig::default());
    let names: Vec<&str> = suites.iter().map(|s| s.name.as_str()).collect();
    for required in [
        "grad_channel_attention",
        "grad_spatial_attention",
        "grad_fuse_stage",
        "grad_ppm_forward",
        "grad_fam_forward",
        "grad_total_loss",
    ] {
        check(names.contains(&required), || format!("{required} missing"))?;
    }
    suites_pass(&suites, &names, 50, 1e-5)
}

/// Largest spread of `out / x` within each group of positions, skipping near-zero inputs.
fn ratio_spread(x: &Tensor, out: &Tensor, groups: &[Vec<(usize, usize, usize, usize)>]) -> f64 {
    let mut worst = 0.0f64;
    for g in groups {
        let ratios: Vec<f64> = g
            .iter()
            .filter(|&&(n, c, y, xx)| x.get(n, c, y, xx).abs() > 1e-3)
            .map(|&(n, c, y, xx)| out.get(n, c, y, xx) / x.get(n, c, y, xx))
            .collect();
        if let Some(first) = ratios.first() {
            for r in &ratios {
                worst = worst.max((r - first).abs());
            }
        }
    }
    worst
}

fn attention_invariants() -> Outcome {
    let mut rng = Rng::new(0xA77E);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let reduction = 1 + rng.below(2);
        let c = reduction * (1 + rng.below(4));
        let kernel = [1, 3, 5, 7][rng.below(4)];
        let dims = [1 + rng.below(2), c, 1 + rng.below(8), 1 + rng.below(8)];
        let params = CbamParams::init(c, reduction, kernel, &mut rng).map_err(|e| e.to_string())?;
        let x = Tensor::uniform(dims, -3.0, 3.0, &mut rng);
        let [n, _, h, w] = dims;

        let y = cbam(&x, &params).map_err(|e| e.to_string())?;
        for (a, b) in x.data().iter().zip(y.data()) {
            check(b.abs() <= a.abs(), || format!("case {case}: |cbam| {b} exceeds |x| {a}"))?;
        }

        let ca = channel_attention(&x, &params).map_err(|e| e.to_string())?;
        let per_channel: Vec<Vec<_>> = (0..n)
            .flat_map(|b| (0..c).map(move |ch| (b, ch)))
            .map(|(b, ch)| (0..h).flat_map(|yy| (0..w).map(move |xx| (b, ch, yy, xx))).collect())
            .collect();
        let spread = ratio_spread(&x, &ca, &per_channel);
        check(spread <= 1e-12, || format!("case {case}: channel scale varies by {spread:e}"))?;
        worst = worst.max(spread);

        let sa = spatial_attention(&x, &params).map_err(|e| e.to_string())?;
        let per_pixel: Vec<Vec<_>> = (0..n)
            .flat_map(|b| (0..h).flat_map(move |yy| (0..w).map(move |xx| (b, yy, xx))))
            .map(|(b, yy, xx)| (0..c).map(|ch| (b, ch, yy, xx)).collect())
            .collect();
        let spread = ratio_spread(&x, &sa, &per_pixel);
        check(spread <= 1e-12, || format!("case {case}: spatial scale varies by {spread:e}"))?;
        worst = worst.max(spread);
    }
    Ok(format!("1000 inputs, largest gate spread {worst:.1e}"))
}

fn metric_equivalence() -> Outcome {
    let mut rng = Rng::new(0x3E7);
    let mut accs = Vec::new();
    for case in 0..200 {
        let sal = random_map(32, 32, &mut rng);
        let gt = random_mask(32, 32, &mut rng);
        let fast = eval_image(&sal, &gt).map_err(|e| e.to_string())?;
        let slow = reference::eval_image(&sal, &gt).map_err(|e| e.to_string())?;
        check(fast == slow, || format!("map {case}: histogram counts differ from 256 passes"))?;
        accs.push(fast);
    }
    let csv = |a: &[_]| dataset_curve(a).map(|r| r.curve.to_csv_string()).map_err(|e| e.to_string());
    let base = csv(&accs)?;
    for round in 0..5 {
        let mut shuffled = accs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i + 1));
        }
        check(csv(&shuffled)? == base, || format!("permutation {round} changes the curve CSV"))?;
    }
    let spots = [(1.0, 1.0, 1.0, 1e-7), (0.7, 0.0, 0.0, 0.0), (0.8, 0.5, 0.7027, 1e-4)];
    for (prec, rec, want, tol) in spots {
        let f = f_measure(prec, rec);
        check((f - want).abs() <= tol, || format!("F(P={prec}, R={rec}) = {f}, want {want}"))?;
    }
    let suites = metric_suites(&SelfcheckConfig::default());
    suites_pass(&suites, &["eval_image_threshold_passes", "dataset_curve_permutation", "f_measure_spot_values"], 1, 1e-4)?;
    Ok("200 maps exact, 5 permutations byte-identical, F spot values hold".into())
}

fn loss_spot_checks() -> Outcome {
    let constant = Tensor::full([1, 1, 7, 9], 0.37);
    let b = laplacian_boundary(&constant).map_err(|e| e.to_string())?;
    check(b.data().iter().all(|&v| v == 0.0), || "constant image has a nonzero boundary".into())?;

    let impulse = Tensor::from_fn([1, 1, 5, 5], |_, _, y, x| if (y, x) == (2, 2) { 1.0 } else { 0.0 });
    let centre = laplacian_boundary(&impulse).map_err(|e| e.to_string())?.get(0, 0, 2, 2);
    check((centre - 0.999_329_3).abs() <= 1e-6, || format!("impulse centre {centre}"))?;

    let ce = cross_entropy(&Tensor::full([1, 1, 4, 4], 0.5), &Tensor::full([1, 1, 4, 4], 1.0)).map_err(|e| e.to_string())?;
    check((ce - std::f64::consts::LN_2).abs() <= 1e-9, || format!("cross-entropy {ce}"))?;
    Ok(format!("impulse centre {centre:.7}, cross-entropy {ce:.9}"))
}

fn brute_force_counts(sets: &[Vec<ChallengeTag>]) -> [[u64; 13]; 13] {
    let mut m = [[0u64; 13]; 13];
    for tags in sets {
        for a in ChallengeTag::ALL {
            for b in ChallengeTag::ALL {
                if tags.contains(&a) && tags.contains(&b) {
                    m[a.index()][b.index()] += 1;
                }
            }
        }
    }
    m
}

fn cooccurrence_structure() -> Outcome {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tags.csv");
    let idx = load_annotations(&shipped).map_err(|e| e.to_string())?;
    let m = cooccurrence(&idx);
    use ChallengeTag::*;
    let expected = [
        (Bso, Bso, 3), (Cb, Cb, 3), (Tc, Tc, 2), (Sso, Sso, 2), (Li, Li, 2), (T, T, 1), (Rgb, Rgb, 1),
        (Mso, Mso, 1), (Of, Of, 1), (Bso, Cb, 2), (Bso, Tc, 1), (Cb, Tc, 1), (Sso, Li, 2), (Sso, T, 1),
        (Li, T, 1), (Cb, Rgb, 1), (Mso, Of, 1), (Mso, Tc, 1), (Of, Tc, 1),
    ];
    let mut hand = [[0u64; 13]; 13];
    for (a, b, v) in expected {
        hand[a.index()][b.index()] = v;
        hand[b.index()][a.index()] = v;
    }
    for a in ChallengeTag::ALL {
        for b in ChallengeTag::ALL {
            check(m.get(a, b) == hand[a.index()][b.index()], || {
                format!("shipped fixture M[{}][{}] = {}", a.code(), b.code(), m.get(a, b))
            })?;
        }
    }

    let start = Instant::now();
    let big = tagged_index(5000, 0.3, 6);
    let m = cooccurrence(&big);
    let elapsed = start.elapsed();
    let sets: Vec<Vec<ChallengeTag>> = big.entries.iter().map(|e| e.tags.iter().copied().collect()).collect();
    let brute = brute_force_counts(&sets);
    for a in ChallengeTag::ALL {
        for b in ChallengeTag::ALL {
            check(m.get(a, b) == brute[a.index()][b.index()], || {
                format!("5000 entries: M[{}][{}] differs from brute force", a.code(), b.code())
            })?;
        }
    }
    check(m.is_symmetric(), || "matrix is not symmetric".into())?;
    Ok(format!(
        "shipped fixture exact, 5000 entries match brute force, M[BSO][BSO] = {}, {:.1} ms",
        m.get(Bso, Bso),
        elapsed.as_secs_f64() * 1e3
    ))
}

fn toy_training() -> Outcome {
    let dir = tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<(Duration, std::path::PathBuf), String> {
        let out = dir.path().join(name);
        let start = Instant::now();
        let o = salbench(&["train-toy", "--out", p(&out)], None);
        let elapsed = start.elapsed();
        check(o.status.success(), || format!("train-toy failed: {}", String::from_utf8_lossy(&o.stderr)))?;
        Ok((elapsed, out))
    };
    let (elapsed, first) = run("first")?;
    let summary = json(&first.join("train_summary.json"));
    let max_f = summary["test_max_f"].as_f64().unwrap_or(f64::NAN);
    let initial = summary["initial_loss"].as_f64().unwrap_or(f64::NAN);
    let last = summary["final_loss"].as_f64().unwrap_or(f64::NAN);
    check(summary["test_images"].as_u64() == Some(50), || format!("test images {}", summary["test_images"]))?;
    check(max_f >= 0.90, || format!("held-out max_f {max_f:.4} < 0.90"))?;
    check(last < 0.25 * initial, || format!("final loss {last:.4} not below 25% of {initial:.4}"))?;
    check(elapsed < Duration::from_secs(300), || format!("took {:.0} s", elapsed.as_secs_f64()))?;
    let (_, second) = run("second")?;
    check(read(&first.join("loss_log.csv")) == read(&second.join("loss_log.csv")), || {
        "loss logs differ between runs".into()
    })?;
    Ok(format!(
        "max_f {max_f:.4}, loss {initial:.4} -> {last:.4} ({:.1}%), {:.0} s, logs identical",
        100.0 * last / initial,
        elapsed.as_secs_f64()
    ))
}

fn determinism() -> Outcome {
    let dir = tempdir().map_err(|e| e.to_string())?;
    let ds = dir.path().join("ds");
    let o = salbench(&["fixture", "--out", p(&ds), "--saliency", "noisy"], None);
    check(o.status.success(), || "fixture failed".into())?;
    let index = ds.join("index.csv");
    let sal = ds.join("saliency");
    let mut eval_runs = Vec::new();
    let mut infer_runs = Vec::new();
    for (i, threads) in [1, 4, 1, 4].into_iter().enumerate() {
        let ev = dir.path().join(format!("ev{i}"));
        let o = salbench(&["eval", "--index", p(&index), "--saliency-dir", p(&sal), "--out", p(&ev)], Some(threads));
        check(o.status.success(), || format!("eval with {threads} threads failed"))?;
        eval_runs.push(outputs(&ev));
        let inf = dir.path().join(format!("inf{i}"));
        let o = salbench(
            &["infer", "--rgb", p(&ds.join("rgb/img0004.ppm")), "--thermal", p(&ds.join("thermal/img0004.pgm")), "--out", p(&inf)],
            Some(threads),
        );
        check(o.status.success(), || format!("infer with {threads} threads failed"))?;
        infer_runs.push(outputs(&inf));
    }
    check(eval_runs[0].len() == 3, || "eval wrote an unexpected file set".into())?;
    check(eval_runs.iter().all(|r| *r == eval_runs[0]), || "eval outputs differ".into())?;
    check(infer_runs.iter().all(|r| *r == infer_runs[0]), || "infer outputs differ".into())?;
    Ok("eval and infer byte-identical over 4 runs with 1 and 4 threads".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("1 kernel oracles", Duration::from_secs(10), kernel_oracles),
        ("2 gradient checks", Duration::from_secs(120), gradient_checks),
        ("3 attention invariants", Duration::MAX, attention_invariants),
        ("4 metric equivalence", Duration::from_secs(30), metric_equivalence),
        ("5 loss spot checks", Duration::MAX, loss_spot_checks),
        ("6 challenge co-occurrence", Duration::from_secs(5), cooccurrence_structure),
        ("7 toy training", Duration::MAX, toy_training),
        ("8 determinism", Duration::MAX, determinism),
    ];
    let mut failed = Vec::new();
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed > budget {
                Err(format!("{msg}; {:.1} s exceeds {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64()))
            } else {
                Ok(msg)
            }
        });
        match result {
            Ok(msg) => println!("PASS  {name:<28} {:>8.2} s  {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                println!("FAIL  {name:<28} {:>8.2} s  {msg}", elapsed.as_secs_f64());
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
