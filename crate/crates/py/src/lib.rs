//! Python bindings for the RGB-thermal saliency benchmark.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use salbench::benchmark::{cooccurrence as cooccurrence_of, load_annotations, ChallengeTag};
use salbench::fusion::{adfnet_forward, adfnet_init, NetConfig};
use salbench::metrics::{binarize_gt, dataset_curve, eval_image, quantize, GrayImage};
use salbench::pnm::{read_pgm, read_ppm};
use salbench::selfcheck::{run_selfcheck, SelfcheckConfig};
use salbench::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// F-measure with β² = 0.3.
#[pyfunction]
fn f_measure(precision: f64, recall: f64) -> f64 {
    salbench::metrics::f_measure(precision, recall)
}

/// Scores one 8-bit saliency map against a mask; returns `(max_f, mae)`.
#[pyfunction]
fn evaluate(width: usize, height: usize, saliency: Vec<u8>, gt: Vec<u8>) -> PyResult<(f64, f64)> {
    let sal = GrayImage::new(width, height, saliency).map_err(to_py)?;
    let gt = binarize_gt(&GrayImage::new(width, height, gt).map_err(to_py)?);
    let r = dataset_curve(&[eval_image(&sal, &gt).map_err(to_py)?]).map_err(to_py)?;
    Ok((r.max_f, r.mean_mae))
}

/// Tag codes in matrix order.
#[pyfunction]
fn tag_codes() -> Vec<&'static str> {
    ChallengeTag::ALL.iter().map(|t| t.code()).collect()
}

/// Challenge co-occurrence matrix of an index CSV; image files are not read.
#[pyfunction]
fn cooccurrence(index_path: &str) -> PyResult<Vec<Vec<u64>>> {
    let idx = load_annotations(index_path.as_ref()).map_err(to_py)?;
    Ok(cooccurrence_of(&idx).counts.iter().map(|row| row.to_vec()).collect())
}

/// Runs the toy network with seeded weights; returns `(width, height, pixels)`.
#[pyfunction]
#[pyo3(signature = (rgb_path, thermal_path, seed = 0))]
fn infer(rgb_path: &str, thermal_path: &str, seed: u64) -> PyResult<(usize, usize, Vec<u8>)> {
    let rgb = read_ppm(rgb_path.as_ref()).map_err(to_py)?;
    let thermal = read_pgm(thermal_path.as_ref()).map_err(to_py)?;
    let net = adfnet_init(&NetConfig::default(), seed).map_err(to_py)?;
    let pred = adfnet_forward(&net, &rgb.to_tensor(), &thermal.to_tensor()).map_err(to_py)?;
    let img = quantize(&pred).map_err(to_py)?;
    Ok((img.width, img.height, img.pixels))
}

/// Runs every self-check suite and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (seed = 0, oracle_instances = 100, grad_instances = 50, metric_instances = 200))]
fn selfcheck(seed: u64, oracle_instances: usize, grad_instances: usize, metric_instances: usize) -> String {
    let cfg = SelfcheckConfig {
        seed,
        oracle_instances,
        grad_instances,
        metric_instances,
        ..SelfcheckConfig::default()
    };
    run_selfcheck(&cfg).to_json()
}

#[pymodule]
fn salbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(f_measure, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(tag_codes, m)?)?;
    m.add_function(wrap_pyfunction!(cooccurrence, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    Ok(())
}
