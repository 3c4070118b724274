//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::aggregation::AggregationSpec;
use crate::backend::protocol;
use crate::backend::{LinearEvidence, MatchFraction, ModelBackend};
use crate::fidelity::{
    evaluate_batch, explanation_map, BatchConfig, BatchReport, Direction, Explanation, Sample,
};
use crate::normalization::NormalizationKind;
use crate::synthetic::{generate, BenchmarkParams};
use crate::types::{Ensemble, Image};

use super::config::{
    BackendConfig, BaselineConfig, MemberConfig, MetricSection, RunConfig, SampleConfig,
    TieBreakConfig,
};
use super::output::{create_dir, input_digests, sha256_hex, write_file, write_json, Provenance};
use super::{CliError, ServeArgs, SweepArgs, SynthArgs};

#[derive(Serialize)]
struct AggregateRecord<'a> {
    sample: &'a str,
    output: String,
    output_sha256: String,
    normalization: NormalizationKind,
    aggregation: AggregationSpec,
    members: Vec<String>,
    provenance: &'a Provenance,
}

fn member_names(e: &Ensemble) -> Vec<String> {
    e.names()
        .iter()
        .enumerate()
        .map(|(i, n)| n.clone().unwrap_or_else(|| format!("member{i}")))
        .collect()
}

pub fn aggregate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.aggregation_spec()?;
    let samples = cfg.load_samples(false)?;
    let out = cfg.output_dir()?;
    let provenance = Provenance::new(cfg, input_digests(cfg, false, false)?);
    create_dir(out)?;
    for sample in &samples {
        let map = explanation_map(&sample.explanation, cfg.normalization, &spec)
            .map_err(|e| CliError::Config(format!("sample '{}': {e}", sample.id)))?;
        let bytes = map.to_tensor()?.encode();
        let name = format!("{}.tnsr", sample.id);
        write_file(&out.join(&name), &bytes)?;
        let members = match &sample.explanation {
            Explanation::Ensemble(e) => member_names(e),
            Explanation::Map(_) => Vec::new(),
        };
        let record = AggregateRecord {
            sample: &sample.id,
            output: name,
            output_sha256: sha256_hex(&bytes),
            normalization: cfg.normalization,
            aggregation: spec,
            members,
            provenance: &provenance,
        };
        write_json(&out.join(format!("{}.json", sample.id)), &record)?;
        println!(
            "{} -> {}",
            sample.id,
            out.join(format!("{}.tnsr", sample.id)).display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    auc: BTreeMap<Direction, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct MeanSummary {
    /// Mean of the per-sample AUCs.
    mean_auc: f64,
    /// AUC of the pointwise mean curve.
    curve_auc: f64,
    count: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    samples: Vec<SampleSummary<'a>>,
    mean: BTreeMap<Direction, MeanSummary>,
    partial: bool,
    settings: &'a BatchConfig,
    provenance: Provenance,
}

fn check_failures(report: &BatchReport) -> Result<(), CliError> {
    let failed: Vec<_> = report.failures().collect();
    if failed.is_empty() {
        return Ok(());
    }
    for f in &failed {
        eprintln!("sample '{}': {}", f.id, f.error.as_deref().unwrap_or(""));
    }
    Err(CliError::Samples {
        failed: failed.len(),
        ids: failed
            .iter()
            .map(|f| f.id.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        backend: failed.iter().any(|f| f.backend_failure),
    })
}

fn run_batch(
    samples: &[Sample],
    workers: &[&dyn ModelBackend],
    batch: &BatchConfig,
) -> Result<BatchReport, CliError> {
    evaluate_batch(samples, workers, batch).map_err(|e| CliError::Config(e.to_string()))
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.aggregation_spec()?;
    let samples = cfg.load_samples(true)?;
    let out = cfg.output_dir()?;
    let provenance = Provenance::new(cfg, input_digests(cfg, true, true)?);
    let backends = cfg.open_backends()?;
    let batch = cfg.batch_config(spec);
    let report = run_batch(&samples, &backends.workers(), &batch)?;

    let curves_dir = out.join("curves");
    create_dir(&curves_dir)?;
    for result in &report.samples {
        if let Some(curves) = &result.curves {
            for (direction, curve) in &curves.curves {
                write_file(
                    &curves_dir.join(format!("{}_{direction}.csv", result.id)),
                    curve.to_csv(),
                )?;
            }
        }
    }
    for (direction, mean) in &report.means {
        write_file(&out.join(format!("mean_{direction}.csv")), mean.to_csv())?;
    }
    let summary = Summary {
        samples: report
            .samples
            .iter()
            .map(|s| SampleSummary {
                id: &s.id,
                auc: s
                    .curves
                    .iter()
                    .flat_map(|c| c.curves.iter().map(|(d, c)| (*d, c.auc)))
                    .collect(),
                error: s.error.as_deref(),
            })
            .collect(),
        mean: report
            .means
            .iter()
            .map(|(d, m)| {
                (
                    *d,
                    MeanSummary {
                        mean_auc: m.mean_sample_auc,
                        curve_auc: m.auc,
                        count: m.count,
                    },
                )
            })
            .collect(),
        partial: report.partial,
        settings: &batch,
        provenance,
    };
    write_json(&out.join("summary.json"), &summary)?;

    println!("{:<24} {:>12} {:>12}", "sample", "insertion", "deletion");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    for s in &report.samples {
        println!(
            "{:<24} {:>12} {:>12}",
            s.id,
            cell(s.auc(Direction::Insertion)),
            cell(s.auc(Direction::Deletion))
        );
    }
    println!(
        "{:<24} {:>12} {:>12}",
        "mean",
        cell(report.mean_auc(Direction::Insertion)),
        cell(report.mean_auc(Direction::Deletion))
    );
    check_failures(&report)
}

/// Hyperparameters each method accepts.
fn method_params(method: &str) -> &'static [&'static str] {
    match method {
        "percentile" => &["k"],
        "ucb" | "pi" | "ei" => &["epsilon"],
        "api" | "aei" => &["a", "b", "n"],
        "var" => &["epsilon", "delta"],
        "rbm" => &["alpha", "iters", "seed"],
        _ => &[],
    }
}

const INTEGER_PARAMS: [&str; 3] = ["n", "iters", "seed"];

/// Rounds away the accumulated error of `start + i * step`.
fn tidy(v: f64) -> f64 {
    format!("{v:.12}")
        .parse::<f64>()
        .expect("formatted float parses")
        + 0.0
}

fn parse_range(range: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("range '{range}' is not START:STOP:STEP"));
    let parts: Vec<f64> = range
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(CliError::Config(format!(
            "range '{range}' has too many points"
        )));
    }
    Ok((0..count).map(|i| tidy(start + i as f64 * step)).collect())
}

struct GridPoint {
    label: String,
    normalization: NormalizationKind,
    spec: AggregationSpec,
}

fn sweep_grid(cfg: &RunConfig, args: &SweepArgs) -> Result<Vec<GridPoint>, CliError> {
    if args.param == "normalization" {
        let base = cfg.aggregation_spec()?;
        let kinds: Vec<NormalizationKind> = match &args.values {
            Some(values) => values
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|e: crate::Error| CliError::Config(e.to_string()))
                })
                .collect::<Result<_, _>>()?,
            None if args.range.is_some() => {
                return Err(CliError::Config(
                    "normalization sweeps take --values, not --range".into(),
                ))
            }
            None => NormalizationKind::ALL.to_vec(),
        };
        return Ok(kinds
            .into_iter()
            .map(|k| GridPoint {
                label: k.to_string(),
                normalization: k,
                spec: base,
            })
            .collect());
    }

    let template = cfg.aggregation_value();
    let method = template.get("method").and_then(Value::as_str).unwrap_or("");
    let method = if method == "average" { "avg" } else { method };
    if !method_params(method).contains(&args.param.as_str()) {
        return Err(CliError::Config(format!(
            "method '{method}' has no parameter '{}' (accepts: {})",
            args.param,
            method_params(method).join(", ")
        )));
    }
    let values: Vec<f64> = match (&args.values, &args.range) {
        (Some(values), _) => values
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("grid value '{v}' is not a number")))
            })
            .collect::<Result<_, _>>()?,
        (None, Some(range)) => parse_range(range)?,
        (None, None) => return Err(CliError::Config("sweep needs --values or --range".into())),
    };
    if values.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    values
        .into_iter()
        .map(|v| {
            let mut obj = template.clone();
            let json = if INTEGER_PARAMS.contains(&args.param.as_str()) {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(CliError::Config(format!(
                        "{} must be a non-negative integer, got {v}",
                        args.param
                    )));
                }
                Value::from(v as u64)
            } else {
                Value::from(v)
            };
            obj[args.param.as_str()] = json;
            let spec: AggregationSpec = serde_json::from_value(obj)
                .map_err(|e| CliError::Config(format!("grid value {v}: {e}")))?;
            spec.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(GridPoint {
                label: v.to_string(),
                normalization: cfg.normalization,
                spec,
            })
        })
        .collect()
}

fn auc_cell(report: &BatchReport, direction: Direction) -> String {
    report
        .mean_auc(direction)
        .map(|v| v.to_string())
        .unwrap_or_default()
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<(), CliError> {
    let grid = sweep_grid(cfg, args)?;
    let samples = cfg.load_samples(true)?;
    let out = cfg.output_dir()?;
    let provenance = Provenance::new(cfg, input_digests(cfg, true, true)?);
    let backends = cfg.open_backends()?;
    let workers = backends.workers();

    let mut csv = String::from("method,parameter,value,insertion_auc,deletion_auc\n");
    let mut evaluate_point = |label: &str, param: &str, normalization, spec: AggregationSpec| {
        let mut batch = cfg.batch_config(spec);
        batch.normalization = normalization;
        let report = run_batch(&samples, &workers, &batch)?;
        check_failures(&report)?;
        let (ins, del) = (
            auc_cell(&report, Direction::Insertion),
            auc_cell(&report, Direction::Deletion),
        );
        println!(
            "{:<12} {param}={label:<10} insertion={ins:<22} deletion={del}",
            spec.name()
        );
        writeln!(csv, "{},{param},{label},{ins},{del}", spec.name()).expect("string write");
        Ok::<(), CliError>(())
    };
    for point in &grid {
        evaluate_point(&point.label, &args.param, point.normalization, point.spec)?;
    }
    // reference line: plain averaging under the configured normalization
    evaluate_point("", "reference", cfg.normalization, AggregationSpec::Average)?;

    create_dir(out)?;
    write_file(&out.join("sweep.csv"), csv)?;
    write_json(&out.join("provenance.json"), &provenance)
}

fn read_scores(path: &Path, names: &[String]) -> Result<Vec<BTreeMap<Direction, f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .collect();
    let column = |name: &str| header.iter().position(|h| *h == name);
    let member_col = column("member")
        .ok_or_else(|| CliError::Config(format!("{}: no 'member' column", path.display())))?;
    let dir_cols: Vec<(Direction, usize)> = Direction::BOTH
        .iter()
        .filter_map(|&d| column(&format!("{d}_auc")).map(|c| (d, c)))
        .collect();
    let mut table: BTreeMap<String, BTreeMap<Direction, f64>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::Config(format!("{}:{}: malformed row", path.display(), lineno + 2));
        let member = fields.get(member_col).ok_or_else(bad)?.to_string();
        let mut scores = BTreeMap::new();
        for &(d, c) in &dir_cols {
            let cell = fields.get(c).ok_or_else(bad)?;
            if !cell.is_empty() {
                scores.insert(d, cell.parse::<f64>().map_err(|_| bad())?);
            }
        }
        table.insert(member, scores);
    }
    names
        .iter()
        .map(|n| {
            table.remove(n).ok_or_else(|| {
                CliError::Config(format!("{}: no score for member '{n}'", path.display()))
            })
        })
        .collect()
}

fn member_count(samples: &[Sample]) -> Result<(usize, Vec<String>), CliError> {
    let mut count = None;
    let mut names = Vec::new();
    for s in samples {
        let Explanation::Ensemble(e) = &s.explanation else {
            return Err(CliError::Config(format!(
                "sample '{}' has no ensemble to ablate",
                s.id
            )));
        };
        match count {
            None => {
                count = Some(e.len());
                names = member_names(e);
            }
            Some(c) if c != e.len() => {
                return Err(CliError::Config(format!(
                    "sample '{}' has {} members, expected {c}",
                    s.id,
                    e.len()
                )))
            }
            _ => {}
        }
    }
    Ok((count.unwrap_or(0), names))
}

/// Samples whose explanation is the given member subset, in that order.
fn with_members(samples: &[Sample], indices: &[usize]) -> Result<Vec<Sample>, CliError> {
    samples
        .iter()
        .map(|s| {
            let Explanation::Ensemble(e) = &s.explanation else {
                unreachable!("checked")
            };
            // a lone member is scored as its normalized map
            let explanation = if indices.len() == 1 {
                Explanation::Map(e.members()[indices[0]].clone())
            } else {
                Explanation::Ensemble(e.select(indices)?)
            };
            Ok(Sample {
                explanation,
                ..s.clone()
            })
        })
        .collect()
}

pub fn ablate(cfg: &RunConfig, scores_path: Option<&Path>) -> Result<(), CliError> {
    let spec = cfg.aggregation_spec()?;
    let samples = cfg.load_samples(true)?;
    let (count, names) = member_count(&samples)?;
    let out = cfg.output_dir()?;
    let provenance = Provenance::new(cfg, input_digests(cfg, true, true)?);
    let backends = cfg.open_backends()?;
    let workers = backends.workers();
    let directions = cfg.metric.directions.clone();

    let scores: Vec<BTreeMap<Direction, f64>> = match scores_path {
        Some(path) => read_scores(path, &names)?,
        None => (0..count)
            .map(|i| {
                let singles = with_members(&samples, &[i])?;
                let report = run_batch(
                    &singles,
                    &workers,
                    &cfg.batch_config(AggregationSpec::Average),
                )?;
                check_failures(&report)?;
                Ok(directions
                    .iter()
                    .filter_map(|&d| report.mean_auc(d).map(|v| (d, v)))
                    .collect())
            })
            .collect::<Result<_, CliError>>()?,
    };

    let mut member_csv = String::from("member,insertion_auc,deletion_auc\n");
    for (name, s) in names.iter().zip(&scores) {
        let cell = |d| s.get(&d).map(|v: &f64| v.to_string()).unwrap_or_default();
        writeln!(
            member_csv,
            "{name},{},{}",
            cell(Direction::Insertion),
            cell(Direction::Deletion)
        )
        .expect("string write");
    }

    let mut csv = String::from("metric,k,members,mean_auc\n");
    for &direction in &directions {
        let score = |i: usize| {
            scores[i].get(&direction).copied().ok_or_else(|| {
                CliError::Config(format!(
                    "missing {direction} score for member '{}'",
                    names[i]
                ))
            })
        };
        let keyed = (0..count)
            .map(|i| Ok((i, score(i)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        // best first: high insertion, low deletion
        let mut order = keyed;
        order.sort_by(|a, b| {
            let ord = a.1.total_cmp(&b.1);
            let ord = if direction == Direction::Insertion {
                ord.reverse()
            } else {
                ord
            };
            ord.then(a.0.cmp(&b.0))
        });
        let order: Vec<usize> = order.into_iter().map(|(i, _)| i).collect();
        let mut batch = cfg.batch_config(spec);
        batch.directions = vec![direction];
        for k in 1..=count {
            let subset = with_members(&samples, &order[..k])?;
            let report = run_batch(&subset, &workers, &batch)?;
            check_failures(&report)?;
            let auc = report.mean_auc(direction).expect("direction evaluated");
            let members: Vec<&str> = order[..k].iter().map(|&i| names[i].as_str()).collect();
            println!(
                "{direction:<10} k={k:<3} auc={auc:<22} {}",
                members.join("+")
            );
            writeln!(csv, "{direction},{k},{},{auc}", members.join("+")).expect("string write");
        }
    }

    create_dir(out)?;
    write_file(&out.join("member_scores.csv"), member_csv)?;
    write_file(&out.join("ablation.csv"), csv)?;
    write_json(&out.join("provenance.json"), &provenance)
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let backend: Box<dyn ModelBackend> = match (&args.weights, &args.reference) {
        (Some(path), _) => {
            let t =
                crate::tensor::read_tensor(path).map_err(|e| CliError::input(path, e.into()))?;
            Box::new(
                LinearEvidence::from_tensor(&t, args.temperature, args.channels)
                    .map_err(|e| CliError::input(path, e))?,
            )
        }
        (None, Some(path)) => Box::new(MatchFraction::new(
            Image::read(path).map_err(|e| CliError::input(path, e))?,
        )),
        (None, None) => {
            return Err(CliError::Config(
                "serve needs --weights or --reference".into(),
            ))
        }
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    protocol::serve(backend.as_ref(), stdin.lock(), stdout.lock()).map_err(|source| CliError::Io {
        path: "<stdio>".into(),
        source,
    })
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let params = BenchmarkParams {
        height: args.height,
        width: args.width,
        members: args.members,
        samples: args.samples,
        noise: args.noise,
        artifact_rate: args.artifact_rate,
        artifact_scale: args.artifact_scale,
        temperature: args.temperature,
        seed: args.seed,
    };
    let bench = generate(&params).map_err(|e| CliError::Config(e.to_string()))?;
    let out = &args.output;
    create_dir(&out.join("samples"))?;
    let write_tensor = |name: &str, t: crate::Tensor| write_file(&out.join(name), t.encode());
    write_tensor("weights.tnsr", bench.model.to_tensor()?)?;
    write_tensor("truth.tnsr", bench.true_weights.to_tensor()?)?;

    let mut samples = Vec::new();
    for s in &bench.samples {
        let Explanation::Ensemble(e) = &s.explanation else {
            unreachable!("benchmark yields ensembles")
        };
        let dir = format!("samples/{}", s.id);
        create_dir(&out.join(&dir))?;
        let image = format!("{dir}/image.tnsr");
        write_tensor(&image, s.image.to_tensor()?)?;
        let mut members = Vec::new();
        for (m, name) in e.members().iter().zip(member_names(e)) {
            let path = format!("{dir}/{name}.tnsr");
            write_tensor(&path, m.to_tensor()?)?;
            members.push(MemberConfig {
                path: path.into(),
                name: Some(name),
            });
        }
        samples.push(SampleConfig {
            id: s.id.clone(),
            members,
            map: None,
            image: Some(image.into()),
            class: s.class,
        });
    }
    let config = RunConfig {
        samples,
        normalization: NormalizationKind::ZScore,
        aggregation: serde_json::json!({ "method": "avg" }),
        metric: MetricSection {
            increments: args.height * args.width,
            baseline: BaselineConfig::Constant { value: 0.0 },
            tie_break: TieBreakConfig::Index,
            ..MetricSection::default()
        },
        backend: Some(BackendConfig::Linear {
            weights: "weights.tnsr".into(),
            temperature: args.temperature,
            channels: 1,
        }),
        output: Some("out".into()),
        seed: args.seed,
        jobs: 1,
    };
    write_json(&out.join("config.json"), &config)?;
    println!("wrote {} samples to {}", bench.samples.len(), out.display());
    Ok(())
}
