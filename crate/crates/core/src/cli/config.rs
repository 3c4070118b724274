//! Run configuration: a JSON file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::aggregation::AggregationSpec;
use crate::backend::{
    ExternalBackend, LinearEvidence, MatchFraction, ModelBackend, DEFAULT_TIMEOUT,
};
use crate::fidelity::{
    derive_seed, BaselineSpec, BatchConfig, Direction, Explanation, Sample, TieBreak,
    DEFAULT_BATCH_SIZE, DEFAULT_INCREMENTS,
};
use crate::normalization::NormalizationKind;
use crate::tensor::read_tensor;
use crate::types::{AttributionMap, Ensemble, Image};

use super::{CliError, CommonArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// One explanation to aggregate or evaluate. Either `members` (an
/// ensemble) or `map` (a single precomputed map) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<MemberConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaselineConfig {
    #[default]
    Normal,
    Constant {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TieBreakConfig {
    #[default]
    Index,
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    #[serde(default = "default_increments")]
    pub increments: usize,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub tie_break: TieBreakConfig,
    #[serde(default = "default_directions")]
    pub directions: Vec<Direction>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_increments() -> usize {
    DEFAULT_INCREMENTS
}

fn default_directions() -> Vec<Direction> {
    Direction::BOTH.to_vec()
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl Default for MetricSection {
    fn default() -> Self {
        Self {
            increments: DEFAULT_INCREMENTS,
            baseline: BaselineConfig::default(),
            tie_break: TieBreakConfig::default(),
            directions: default_directions(),
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

fn default_temperature() -> f64 {
    1.0
}

fn default_channels() -> usize {
    1
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Weights tensor of shape (m, n, classes).
    Linear {
        weights: PathBuf,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_channels")]
        channels: usize,
    },
    Match {
        reference: PathBuf,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub samples: Vec<SampleConfig>,
    #[serde(default)]
    pub normalization: NormalizationKind,
    #[serde(default = "default_aggregation")]
    pub aggregation: Value,
    #[serde(default)]
    pub metric: MetricSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_aggregation() -> Value {
    serde_json::json!({ "method": "avg" })
}

fn default_jobs() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            samples: Vec::new(),
            normalization: NormalizationKind::default(),
            aggregation: default_aggregation(),
            metric: MetricSection::default(),
            backend: None,
            output: None,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Seed stream used for tie shuffling, kept apart from baseline draws.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

impl RunConfig {
    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Loads the file named by `--config` if any, then applies the flags.
    pub fn from_args(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(args)?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.samples {
            s.members.iter_mut().for_each(|m| join(&mut m.path));
            s.map.as_mut().map(join);
            s.image.as_mut().map(join);
        }
        match &mut self.backend {
            Some(BackendConfig::Linear { weights, .. }) => join(weights),
            Some(BackendConfig::Match { reference }) => join(reference),
            _ => {}
        }
        if let Some(out) = &mut self.output {
            join(out);
        }
    }

    fn apply(&mut self, args: &CommonArgs) -> Result<(), CliError> {
        if !args.member.is_empty() {
            self.samples = vec![SampleConfig {
                id: args.id.clone().unwrap_or_else(|| "sample".into()),
                members: args
                    .member
                    .iter()
                    .map(|p| MemberConfig {
                        path: p.clone(),
                        name: None,
                    })
                    .collect(),
                map: None,
                image: args.image.clone(),
                class: args.class.unwrap_or(0),
            }];
        } else {
            for s in &mut self.samples {
                if let Some(image) = &args.image {
                    s.image = Some(image.clone());
                }
                if let Some(class) = args.class {
                    s.class = class;
                }
            }
        }
        if let Some(n) = args.normalization {
            self.normalization = n;
        }
        self.aggregation = merged_aggregation(&self.aggregation, args)?;
        if let Some(v) = args.increments {
            self.metric.increments = v;
        }
        if let Some(v) = args.batch_size {
            self.metric.batch_size = v;
        }
        if let Some(value) = args.baseline_value {
            self.metric.baseline = BaselineConfig::Constant { value };
        }
        if args.normal_baseline {
            self.metric.baseline = BaselineConfig::Normal;
        }
        if let Some(t) = args.tie_break {
            self.metric.tie_break = t;
        }
        if let Some(d) = &args.directions {
            self.metric.directions = d.clone();
        }
        if let Some(cmd) = &args.backend_cmd {
            let command: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            self.backend = Some(BackendConfig::External {
                command,
                timeout_secs: args.timeout.unwrap_or_else(default_timeout),
            });
        } else if let (Some(t), Some(BackendConfig::External { timeout_secs, .. })) =
            (args.timeout, &mut self.backend)
        {
            *timeout_secs = t;
        }
        if let Some(out) = &args.output {
            self.output = Some(out.clone());
        }
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(jobs) = args.jobs {
            self.jobs = jobs;
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// The aggregation object; an RBM without an explicit seed uses the run seed.
    pub fn aggregation_value(&self) -> Value {
        let mut value = self.aggregation.clone();
        if let Value::Object(obj) = &mut value {
            if obj.get("method").and_then(Value::as_str) == Some("rbm") && !obj.contains_key("seed")
            {
                obj.insert("seed".into(), self.seed.into());
            }
        }
        value
    }

    pub fn aggregation_spec(&self) -> Result<AggregationSpec, CliError> {
        let spec: AggregationSpec = serde_json::from_value(self.aggregation_value())
            .map_err(|e| CliError::Config(format!("aggregation: {e}")))?;
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.output.as_deref().ok_or_else(|| {
            CliError::Config("no output directory (set \"output\" or --output)".into())
        })
    }

    pub fn batch_config(&self, aggregation: AggregationSpec) -> BatchConfig {
        let baseline = match self.metric.baseline {
            BaselineConfig::Normal => BaselineSpec::Normal { seed: self.seed },
            BaselineConfig::Constant { value } => BaselineSpec::Constant { value },
        };
        let tie_break = match self.metric.tie_break {
            TieBreakConfig::Index => TieBreak::Index,
            TieBreakConfig::Shuffle => TieBreak::Shuffle {
                seed: derive_seed(self.seed, SHUFFLE_STREAM),
            },
        };
        BatchConfig {
            normalization: self.normalization,
            aggregation,
            increments: self.metric.increments,
            baseline,
            tie_break,
            batch_size: self.metric.batch_size,
            directions: self.metric.directions.clone(),
        }
    }

    /// Canonical JSON of the settings that determine results; the output
    /// location and worker count are left out.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(obj) = &mut value {
            obj.remove("output");
            obj.remove("jobs");
        }
        serde_json::to_string(&value).expect("config serializes")
    }

    /// Loads every sample's explanation and image.
    pub fn load_samples(&self, need_image: bool) -> Result<Vec<Sample>, CliError> {
        if self.samples.is_empty() {
            return Err(CliError::Config("no samples configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            let valid = !s.id.is_empty()
                && s.id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                && !s.id.starts_with('.');
            if !valid {
                return Err(CliError::Config(format!(
                    "sample id '{}' must be non-empty and use only letters, digits, '-', '_', '.'",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CliError::Config(format!("duplicate sample id '{}'", s.id)));
            }
        }
        self.samples
            .iter()
            .map(|s| load_sample(s, need_image))
            .collect()
    }

    pub fn open_backends(&self) -> Result<Backends, CliError> {
        let cfg = self.backend.as_ref().ok_or_else(|| {
            CliError::Config("no backend configured (set \"backend\" or --backend-cmd)".into())
        })?;
        match cfg {
            BackendConfig::Linear {
                weights,
                temperature,
                channels,
            } => {
                let t = read_tensor(weights).map_err(|e| CliError::input(weights, e.into()))?;
                let model = LinearEvidence::from_tensor(&t, *temperature, *channels)
                    .map_err(|e| CliError::input(weights, e))?;
                Ok(Backends::Shared(Box::new(model), self.jobs))
            }
            BackendConfig::Match { reference } => {
                let image = Image::read(reference).map_err(|e| CliError::input(reference, e))?;
                Ok(Backends::Shared(
                    Box::new(MatchFraction::new(image)),
                    self.jobs,
                ))
            }
            BackendConfig::External {
                command,
                timeout_secs,
            } => {
                let timeout = timeout_from_secs(*timeout_secs)?;
                let procs = (0..self.jobs)
                    .map(|_| ExternalBackend::spawn(command, timeout))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Backends::External(procs))
            }
        }
    }
}

pub fn timeout_from_secs(secs: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::Config(format!("invalid timeout {secs}")))
}

/// Backends for the worker pool: one shared built-in model or one external
/// process per worker.
pub enum Backends {
    Shared(Box<dyn ModelBackend>, usize),
    External(Vec<ExternalBackend>),
}

impl Backends {
    pub fn workers(&self) -> Vec<&dyn ModelBackend> {
        match self {
            Backends::Shared(model, jobs) => vec![model.as_ref(); *jobs],
            Backends::External(procs) => procs.iter().map(|p| p as &dyn ModelBackend).collect(),
        }
    }
}

/// Sets method parameters given on the command line. `--method` replaces
/// the configured method; parameters alone adjust it.
fn merged_aggregation(base: &Value, args: &CommonArgs) -> Result<Value, CliError> {
    let mut obj: Map<String, Value> = match (&args.method, base) {
        (Some(m), _) => Map::from_iter([("method".to_string(), Value::from(m.clone()))]),
        (None, Value::Object(o)) => o.clone(),
        (None, Value::String(m)) => {
            Map::from_iter([("method".to_string(), Value::from(m.clone()))])
        }
        (None, other) => {
            return Err(CliError::Config(format!(
                "aggregation must be an object, got {other}"
            )))
        }
    };
    let params: [(&str, Option<Value>); 9] = [
        ("epsilon", args.epsilon.map(Value::from)),
        ("k", args.k.map(Value::from)),
        ("a", args.a.map(Value::from)),
        ("b", args.b.map(Value::from)),
        ("n", args.n.map(Value::from)),
        ("delta", args.delta.map(Value::from)),
        ("alpha", args.alpha.map(Value::from)),
        ("iters", args.iters.map(Value::from)),
        (
            "zero_fallback",
            args.zero_fallback.then_some(Value::from(true)),
        ),
    ];
    for (key, value) in params {
        if let Some(v) = value {
            obj.insert(key.to_string(), v);
        }
    }
    Ok(Value::Object(obj))
}

fn load_map(path: &Path) -> Result<AttributionMap, CliError> {
    AttributionMap::read(path).map_err(|e| CliError::input(path, e))
}

fn load_sample(cfg: &SampleConfig, need_image: bool) -> Result<Sample, CliError> {
    let explanation = match (&cfg.map, cfg.members.as_slice()) {
        (Some(path), []) => Explanation::Map(load_map(path)?),
        (None, members) if !members.is_empty() => {
            let maps = members
                .iter()
                .map(|m| load_map(&m.path))
                .collect::<Result<Vec<_>, _>>()?;
            let names = members.iter().map(|m| m.name.clone()).collect();
            Explanation::Ensemble(
                Ensemble::with_names(maps, names)
                    .map_err(|e| CliError::Config(format!("sample '{}': {e}", cfg.id)))?,
            )
        }
        _ => {
            return Err(CliError::Config(format!(
                "sample '{}' needs exactly one of \"members\" or \"map\"",
                cfg.id
            )))
        }
    };
    let image = match &cfg.image {
        Some(path) => Image::read(path).map_err(|e| CliError::input(path, e))?,
        None if need_image => {
            return Err(CliError::Config(format!(
                "sample '{}' has no image",
                cfg.id
            )))
        }
        // placeholder; aggregation never looks at the image
        None => Image::filled(1, 1, 1, 0.0)?,
    };
    Ok(Sample {
        id: cfg.id.clone(),
        explanation,
        image,
        class: cfg.class,
    })
}
