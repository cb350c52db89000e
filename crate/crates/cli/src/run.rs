use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use salbench::benchmark::{
    cooccurrence, evaluate_test_split, load_annotations, load_index, size_histogram, validate_dataset,
    ChallengeTable, ValidationReport,
};
use salbench::benchmark::fixture::{write_fixture, write_saliency_maps, SaliencyKind};
use salbench::fusion::{adfnet_forward, adfnet_init, load_weights, save_weights};
use salbench::metrics::{quantize, write_summary_json};
use salbench::pnm::{read_pgm, read_ppm, write_pgm};
use salbench::selfcheck::run_selfcheck;
use salbench::synthetic::{evaluate, hot_square_corpus, train, LogRow};
use salbench::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{CommandKind, RunConfig, CONFIG_ECHO};

pub const SUMMARY: &str = "summary.json";
pub const PR_CURVE: &str = "pr_curve.csv";
pub const PER_CHALLENGE: &str = "per_challenge.csv";
pub const COOCCURRENCE: &str = "cooccurrence.csv";
pub const SIZE_HISTOGRAM: &str = "size_histogram.csv";
pub const VALIDATION_REPORT: &str = "validation_report.json";
pub const LOSS_LOG: &str = "loss_log.csv";
pub const WEIGHTS: &str = "weights.salb";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const SELFCHECK_REPORT: &str = "selfcheck_report.json";

/// How a command finished when it did not fail with an [`Error`].
#[derive(Debug)]
pub enum Outcome {
    Ok,
    /// Selfcheck ran to completion but some cases failed; holds their identifiers.
    SelfcheckFailed(Vec<String>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Creates `path` and hands a buffered writer to `f`.
fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w)?;
    w.flush().map_err(io_err(path))
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required")))
}

/// Writes the config echo, then runs the command.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(&out.join(CONFIG_ECHO), &cfg.to_json())?;
    match cfg.command {
        CommandKind::Eval => eval(cfg),
        CommandKind::Stats => stats(cfg),
        CommandKind::Infer => infer(cfg),
        CommandKind::TrainToy => train_toy(cfg),
        CommandKind::Selfcheck => selfcheck(cfg),
        CommandKind::Fixture => fixture(cfg),
    }
}

fn violations_error(report: &ValidationReport) -> Error {
    let first = &report.violations[0];
    Error::Validation(format!(
        "{} violation(s); first: entry {:?}: {}",
        report.violations.len(),
        first.id,
        first.message
    ))
}

fn eval(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.output_dir;
    let idx = load_index(required(&cfg.index_path, "--index")?)?;
    let sal_dir = required(&cfg.saliency_dir, "--saliency-dir")?;
    if !sal_dir.is_dir() {
        return Err(Error::Config(format!("saliency directory {} does not exist", sal_dir.display())));
    }
    let report = validate_dataset(&idx)?;
    if !report.is_valid() {
        write_json(&out.join(VALIDATION_REPORT), &report)?;
        return Err(violations_error(&report));
    }
    let split = evaluate_test_split(&idx, sal_dir)?;
    let overall = split.overall()?;
    write_summary_json(&overall.summary(), &out.join(SUMMARY))?;
    let curve_path = out.join(PR_CURVE);
    write_with(&curve_path, |w| overall.curve.write_csv(w))?;
    let table = ChallengeTable::from_split(&split)?;
    write_with(&out.join(PER_CHALLENGE), |w| table.write_csv(w))?;
    println!(
        "max_f {:.4}  mean_mae {:.4}  images {}",
        overall.max_f, overall.mean_mae, overall.image_count
    );
    if !table.absent.is_empty() {
        let codes: Vec<&str> = table.absent.iter().map(|t| t.code()).collect();
        println!("no test entries tagged {}", codes.join(", "));
    }
    Ok(Outcome::Ok)
}

fn stats(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.output_dir;
    let index_path = required(&cfg.index_path, "--index")?;
    let idx = if cfg.stats.annotations_only {
        load_annotations(index_path)?
    } else {
        load_index(index_path)?
    };
    let matrix = cooccurrence(&idx);
    if !matrix.is_symmetric() {
        return Err(Error::Numerical("co-occurrence matrix is not symmetric".into()));
    }
    write_with(&out.join(COOCCURRENCE), |w| matrix.write_csv(w))?;
    println!("{} entries", idx.len());
    if cfg.stats.annotations_only {
        return Ok(Outcome::Ok);
    }
    let report = validate_dataset(&idx)?;
    write_json(&out.join(VALIDATION_REPORT), &report)?;
    if !report.is_valid() {
        return Err(violations_error(&report));
    }
    let hist = size_histogram(&idx, cfg.stats.bins)?;
    write_with(&out.join(SIZE_HISTOGRAM), |w| hist.write_csv(w))?;
    Ok(Outcome::Ok)
}

fn infer(cfg: &RunConfig) -> Result<Outcome> {
    let rgb_path = required(&cfg.infer.rgb, "--rgb")?;
    let thermal_path = required(&cfg.infer.thermal, "--thermal")?;
    let net = match &cfg.infer.weights {
        Some(p) => load_weights(p)?,
        None => adfnet_init(&cfg.net, cfg.seed)?,
    };
    let rgb = read_ppm(rgb_path)?;
    let thermal = read_pgm(thermal_path)?;
    if rgb.dims() != thermal.dims() {
        return Err(Error::Shape(format!(
            "rgb image is {}x{} but thermal image is {}x{}",
            rgb.width, rgb.height, thermal.width, thermal.height
        )));
    }
    let pred = adfnet_forward(&net, &rgb.to_tensor(), &thermal.to_tensor())?;
    let id = match &cfg.infer.id {
        Some(id) => id.clone(),
        None => rgb_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config("cannot derive an id from the rgb path; pass --id".into()))?
            .to_string(),
    };
    let path = cfg.output_dir.join(format!("{id}.pgm"));
    write_pgm(&path, &quantize(&pred)?)?;
    println!("{}", path.display());
    Ok(Outcome::Ok)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    /// Loss logged at step 0.
    pub initial_loss: Option<f64>,
    /// Mean of the last ten logged losses.
    pub final_loss: Option<f64>,
    pub test_max_f: f64,
    pub test_mean_mae: f64,
    pub test_images: u64,
}

pub fn final_loss(log: &[f64]) -> Option<f64> {
    let tail = &log[log.len().saturating_sub(10)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

fn train_toy(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.output_dir;
    let corpus = hot_square_corpus(&cfg.corpus, cfg.seed)?;
    let net = adfnet_init(&cfg.net, cfg.seed)?;
    let log_path = out.join(LOSS_LOG);
    let file = File::create(&log_path).map_err(io_err(&log_path))?;
    let mut log = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    let mut totals = Vec::with_capacity(cfg.trainer.steps);
    let csv_err = |e: csv::Error| Error::Format {
        path: log_path.clone(),
        message: e.to_string(),
    };
    log.write_record(["step", "total", "ce", "edge", "grad_norm"]).map_err(csv_err)?;
    let trained = train(net, &corpus.train, &cfg.trainer, |row: &LogRow| {
        log.serialize(row).map_err(csv_err)?;
        totals.push(row.total);
        if row.step.is_multiple_of(50) {
            eprintln!("step {:4}  loss {:.4}  |g| {:.3}", row.step, row.total, row.grad_norm);
        }
        Ok(())
    });
    log.flush().map_err(io_err(&log_path))?;
    let trained = trained?;
    save_weights(&trained, &out.join(WEIGHTS))?;
    let result = evaluate(&trained, &corpus.test)?;
    let summary = TrainSummary {
        steps: cfg.trainer.steps,
        initial_loss: totals.first().copied(),
        final_loss: final_loss(&totals),
        test_max_f: result.max_f,
        test_mean_mae: result.mean_mae,
        test_images: result.image_count,
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    println!(
        "loss {} -> {}  test max_f {:.4}  mae {:.4}",
        summary.initial_loss.map_or("-".into(), |v| format!("{v:.4}")),
        summary.final_loss.map_or("-".into(), |v| format!("{v:.4}")),
        summary.test_max_f,
        summary.test_mean_mae
    );
    Ok(Outcome::Ok)
}

fn selfcheck(cfg: &RunConfig) -> Result<Outcome> {
    let report = run_selfcheck(&cfg.selfcheck);
    report.write_json(&cfg.output_dir.join(SELFCHECK_REPORT))?;
    for s in &report.suites {
        println!(
            "{:<30} {}  instances {:>4}  max error {:.3e}",
            s.name,
            if s.passed { "ok  " } else { "FAIL" },
            s.instances,
            s.max_error
        );
    }
    if report.passed {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::SelfcheckFailed(
            report.failing_cases().into_iter().map(str::to_string).collect(),
        ))
    }
}

fn fixture(cfg: &RunConfig) -> Result<Outcome> {
    let out = &cfg.output_dir;
    let kind = match cfg.fixture_saliency.as_deref() {
        None => None,
        Some("perfect") => Some(SaliencyKind::Perfect),
        Some("noisy") => Some(SaliencyKind::Noisy {
            noise: 0.2,
            seed: cfg.seed,
        }),
        Some(other) => {
            return Err(Error::Config(format!("saliency kind must be perfect or noisy, found {other:?}")));
        }
    };
    let idx = write_fixture(out, &cfg.fixture)?;
    if let Some(kind) = kind {
        write_saliency_maps(&idx, &out.join("saliency"), kind)?;
    }
    println!("{} entries in {}", idx.len(), out.join("index.csv").display());
    Ok(Outcome::Ok)
}
