//! Protocol conformance probe for external backends.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{BackendError, BackendInfo, ExternalBackend, ModelBackend};
use crate::types::Image;

use super::config::timeout_from_secs;
use super::{CheckArgs, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<String, String>) -> CheckOutcome {
    match result {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn probe_images(info: &BackendInfo, count: usize, seed: u64) -> Result<Vec<Image>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w, d] = info.shape;
    (0..count)
        .map(|_| {
            let values = (0..h * w * d).map(|_| rng.random::<f64>()).collect();
            Image::new(h, w, d, values).map_err(|e| e.to_string())
        })
        .collect()
}

fn expect_rejection(backend: &ExternalBackend, line: &str) -> Result<String, String> {
    match backend.request_raw(line) {
        Err(BackendError::Remote(msg)) => Ok(format!("error object: {msg}")),
        Err(e) => Err(e.to_string()),
        Ok(v) => Err(format!("accepted invalid request, replied {v}")),
    }
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs every check against a freshly launched backend.
pub fn run_checks(command: &[String], timeout: Duration, seed: u64) -> Vec<CheckOutcome> {
    let backend = match ExternalBackend::spawn(command, timeout) {
        Ok(b) => b,
        Err(e) => return vec![outcome("handshake", Err(e.to_string()))],
    };
    let info = backend.info();
    let mut results = vec![outcome(
        "handshake",
        if info.classes == 0 || info.shape.contains(&0) {
            Err(format!("degenerate info {info:?}"))
        } else {
            Ok(format!("classes={} shape={:?}", info.classes, info.shape))
        },
    )];
    results.push(outcome(
        "info is stable",
        match backend.request_info() {
            Ok(again) if again == info => Ok(String::new()),
            Ok(again) => Err(format!("{again:?} differs from {info:?}")),
            Err(e) => Err(e.to_string()),
        },
    ));

    let images = match probe_images(&info, 3, seed) {
        Ok(images) => images,
        Err(e) => {
            results.push(outcome("probe images", Err(e)));
            return results;
        }
    };
    let batch = backend.predict(&images);
    results.push(outcome(
        "predict returns valid probabilities",
        batch
            .as_ref()
            .map(|p| format!("{} vectors", p.len()))
            .map_err(|e| e.to_string()),
    ));
    if let Ok(batch) = &batch {
        let singles: Result<Vec<Vec<f64>>, _> = images
            .iter()
            .map(|img| {
                backend
                    .predict(std::slice::from_ref(img))
                    .map(|mut p| p.remove(0))
            })
            .collect();
        results.push(outcome(
            "batch order matches single predictions",
            match singles {
                Ok(s) if max_abs_diff(&s, batch) <= 1e-9 => Ok(String::new()),
                Ok(s) => Err(format!("max abs difference {}", max_abs_diff(&s, batch))),
                Err(e) => Err(e.to_string()),
            },
        ));
        let reversed: Vec<Image> = images.iter().rev().cloned().collect();
        results.push(outcome(
            "reversed batch gives reversed output",
            match backend.predict(&reversed) {
                Ok(mut r) => {
                    r.reverse();
                    let diff = max_abs_diff(&r, batch);
                    if diff <= 1e-9 {
                        Ok(String::new())
                    } else {
                        Err(format!("max abs difference {diff}"))
                    }
                }
                Err(e) => Err(e.to_string()),
            },
        ));
        results.push(outcome(
            "repeated predict is deterministic",
            match backend.predict(&images) {
                Ok(again) if &again == batch => Ok(String::new()),
                Ok(again) => Err(format!(
                    "max abs difference {}",
                    max_abs_diff(&again, batch)
                )),
                Err(e) => Err(e.to_string()),
            },
        ));
    }

    results.push(outcome(
        "rejects non-JSON line",
        expect_rejection(&backend, "this is not json"),
    ));
    results.push(outcome(
        "rejects unknown op",
        expect_rejection(&backend, r#"{"op":"frobnicate"}"#),
    ));
    let [h, w, d] = info.shape;
    let short = format!(r#"{{"op":"predict","shape":[{h},{w},{d}],"images":[[0.5]]}}"#);
    let short = if h * w * d == 1 {
        r#"{"op":"predict","shape":[1,1,1],"images":[[0.5,0.5]]}"#.to_string()
    } else {
        short
    };
    results.push(outcome(
        "rejects wrong image length",
        expect_rejection(&backend, &short),
    ));
    results.push(outcome(
        "alive after rejections",
        backend
            .request_info()
            .map(|_| String::new())
            .map_err(|e| e.to_string()),
    ));
    results.push(outcome(
        "clean shutdown",
        if backend.shutdown(Duration::from_secs(5)) {
            Ok(String::new())
        } else {
            Err("process did not exit with status 0".into())
        },
    ));
    results
}

pub fn backend_check(args: &CheckArgs) -> Result<(), CliError> {
    let timeout = timeout_from_secs(args.timeout)?;
    let results = run_checks(&args.command, timeout, args.seed);
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        if r.detail.is_empty() {
            println!("{status}  {}", r.name);
        } else {
            println!("{status}  {}: {}", r.name, r.detail);
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Conformance(failed))
    }
}
