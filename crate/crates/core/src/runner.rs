//! Run directories: persisting and reloading every intermediate artifact,
//! stage-by-stage execution, evaluation from disk, and parameter sweeps.
//!
//! A run directory holds
//!
//! ```text
//! config.json        configuration snapshot
//! dataset.jsonl      canonical copy of the input
//! mock_script.json   script driving the mock backend, when used
//! generation.json    stage 1 labels per batch and the pooled set
//! labels.json        merged label set with surface forms
//! assignments.jsonl  {"id", "text", "label"} per document; null = unmatched
//! stats.json         call counts and timings-free run statistics
//! report.json        evaluation against gold labels
//! cache/             response cache, unless the config points elsewhere
//! ```

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_dataset, sample_example_labels, save_canonical, DatasetFormat};
use crate::error::{
    ArtifactError, BackendError, DatasetError, MetricsError, ModelError, PipelineError,
    TemplateError,
};
use crate::exec::Execution;
use crate::llm::{build_backend, open_cache, LlmClient, MockScript};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Assigned, Assignment, BackendKind, Dataset, LabelSet, RunConfig};
use crate::pipeline::{aggregate_unique, ClusteringResult, GenerationState, Pipeline, RunStats};
use crate::prompt::PromptTemplates;

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MOCK_SCRIPT_FILE: &str = "mock_script.json";
pub const GENERATION_FILE: &str = "generation.json";
pub const LABELS_FILE: &str = "labels.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl RunError {
    /// 2 for usage and configuration problems, 3 for bad data or artifacts,
    /// 4 when the model backend failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) | RunError::Template(_) => 2,
            RunError::Model(ModelError::InvalidConfig(_)) => 2,
            RunError::Backend(BackendError::Config(_)) => 2,
            RunError::Backend(_) => 4,
            RunError::Pipeline(p) => match p {
                PipelineError::Model(ModelError::InvalidConfig(_)) => 2,
                PipelineError::Dataset(DatasetError::MissingGoldLabels) => 2,
                _ if p.backend().is_some() => 4,
                _ => 3,
            },
            _ => 3,
        }
    }
}

/// Everything besides the config that a run needs.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub templates: PromptTemplates,
    /// Mock script; defaults to the one stored in the run directory, then to
    /// the gold-label oracle of the dataset.
    pub mock_script: Option<MockScript>,
    /// Allow reusing a directory that already holds artifacts.
    pub resume: bool,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Creates the directory. An existing non-empty directory is refused
    /// unless `resume` is set.
    pub fn prepare(&self, resume: bool) -> Result<(), RunError> {
        if !resume {
            if let Ok(mut entries) = fs::read_dir(&self.root) {
                if entries.next().is_some() {
                    return Err(RunError::Usage(format!(
                        "{} is not empty; pass --resume to continue the run there",
                        self.root.display()
                    )));
                }
            }
        }
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        Ok(())
    }

    /// Writes `bytes` to `name` through a temporary file and a rename.
    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), ArtifactError> {
        let path = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io_err(&path))?;
        tmp.write_all(bytes).map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), ArtifactError> {
        let mut text =
            serde_json::to_string_pretty(value).expect("artifact types always serialize");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, ArtifactError> {
        let path = self.path(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ArtifactError::Missing(path))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text).map_err(|e| ArtifactError::Corrupt {
            line: e.line(),
            message: e.to_string(),
            path,
        })
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<(), ArtifactError> {
        self.write_json(CONFIG_FILE, config)
    }

    pub fn read_config(&self) -> Result<RunConfig, RunError> {
        let config: RunConfig = self.read_json(CONFIG_FILE)?;
        config.validate()?;
        Ok(config)
    }

    pub fn write_dataset(&self, dataset: &Dataset) -> Result<(), ArtifactError> {
        let path = self.path(DATASET_FILE);
        save_canonical(dataset, &path).map_err(io_err(&path))
    }

    pub fn read_dataset(&self) -> Result<Dataset, RunError> {
        let path = self.path(DATASET_FILE);
        match load_dataset(&path, DatasetFormat::Jsonl) {
            Err(DatasetError::FileNotFound(p)) => Err(ArtifactError::Missing(p).into()),
            other => Ok(other?),
        }
    }

    pub fn write_labels(&self, labels: &LabelSet) -> Result<(), ArtifactError> {
        self.write_json(LABELS_FILE, labels)
    }

    pub fn read_labels(&self) -> Result<LabelSet, ArtifactError> {
        let raw: LabelSet = self.read_json(LABELS_FILE)?;
        // rebuild to re-check keys and uniqueness
        Ok(LabelSet::from_labels(
            raw.labels().to_vec(),
            raw.provenance(),
        )?)
    }

    pub fn write_assignments(
        &self,
        dataset: &Dataset,
        assignment: &Assignment,
    ) -> Result<(), ArtifactError> {
        let mut out = Vec::new();
        for doc in dataset.documents() {
            let row = AssignmentRow {
                id: doc.id,
                text: doc.text.clone(),
                label: assignment.label_of(doc.id).map(|l| l.surface.clone()),
            };
            serde_json::to_writer(&mut out, &row).expect("rows always serialize");
            out.push(b'\n');
        }
        self.write_bytes(ASSIGNMENTS_FILE, &out)
    }

    /// Reads assignments back against `labels`, checking that every document
    /// of the dataset appears exactly once.
    pub fn read_assignments(
        &self,
        labels: &LabelSet,
        n_documents: usize,
    ) -> Result<Assignment, ArtifactError> {
        let path = self.path(ASSIGNMENTS_FILE);
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ArtifactError::Missing(path.clone()),
            _ => io_err(&path)(e),
        })?;
        let corrupt = |line: usize, message: String| ArtifactError::Corrupt {
            path: path.clone(),
            line,
            message,
        };
        let mut slots: Vec<Option<Assigned>> = vec![None; n_documents];
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: AssignmentRow =
                serde_json::from_str(&line).map_err(|e| corrupt(line_no, e.to_string()))?;
            let assigned = match &row.label {
                None => Assigned::Unmatched,
                Some(l) => Assigned::Label(labels.position(l).ok_or_else(|| {
                    corrupt(line_no, format!("label {l:?} is not in {LABELS_FILE}"))
                })?),
            };
            let slot = slots
                .get_mut(row.id)
                .ok_or_else(|| corrupt(line_no, format!("document id {} out of range", row.id)))?;
            if slot.replace(assigned).is_some() {
                return Err(corrupt(
                    line_no,
                    format!("document id {} assigned twice", row.id),
                ));
            }
        }
        let missing = slots.iter().filter(|s| s.is_none()).count();
        if missing > 0 {
            return Err(corrupt(
                0,
                format!("{missing} documents have no assignment"),
            ));
        }
        Ok(Assignment::new(
            slots.into_iter().flatten().collect(),
            labels.clone(),
        )?)
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<(), ArtifactError> {
        self.write_json(
            REPORT_FILE,
            &ReportFile {
                report: report.clone(),
                config: CONFIG_FILE.to_string(),
            },
        )
    }

    pub fn read_report(&self) -> Result<EvalReport, ArtifactError> {
        self.read_json::<ReportFile>(REPORT_FILE).map(|r| r.report)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRow {
    id: usize,
    text: String,
    label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    #[serde(flatten)]
    report: EvalReport,
    config: String,
}

/// Builds a pipeline whose cache lives in the config's cache dir or under
/// `run_dir/cache`.
pub fn open_pipeline(
    config: &RunConfig,
    dataset: &Dataset,
    run_dir: &RunDir,
    options: &RunOptions,
) -> Result<Pipeline, RunError> {
    config.validate()?;
    let script = if config.backend == BackendKind::Mock {
        let script = match &options.mock_script {
            Some(s) => s.clone(),
            None if run_dir.exists(MOCK_SCRIPT_FILE) => run_dir.read_json(MOCK_SCRIPT_FILE)?,
            None => MockScript::oracle(dataset),
        };
        run_dir.write_json(MOCK_SCRIPT_FILE, &script)?;
        Some(script)
    } else {
        None
    };
    let backend = build_backend(config, &options.templates, script)?;
    let cache_dir = config
        .cache_dir
        .clone()
        .unwrap_or_else(|| run_dir.path("cache"));
    let client = LlmClient::new(backend, config).with_cache(open_cache(&cache_dir)?);
    Ok(
        Pipeline::new(config.clone(), Arc::new(client), options.templates.clone())
            .with_execution(options.execution),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub result: ClusteringResult,
    /// Present when the dataset carries gold labels.
    pub report: Option<EvalReport>,
}

fn report_if_labeled(
    dataset: &Dataset,
    assignment: &Assignment,
) -> Result<Option<EvalReport>, RunError> {
    if !dataset.fully_labeled() {
        return Ok(None);
    }
    Ok(Some(evaluate(dataset, assignment)?))
}

/// Runs both stages end to end and writes every artifact.
pub fn run_full(
    dataset: &Dataset,
    config: &RunConfig,
    run_dir: &RunDir,
    options: &RunOptions,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    run_dir.prepare(options.resume)?;
    run_dir.write_config(config)?;
    run_dir.write_dataset(dataset)?;
    let pipeline = open_pipeline(config, dataset, run_dir, options)?;
    let result = pipeline.run(dataset)?;
    run_dir.write_json(GENERATION_FILE, &result.generation)?;
    run_dir.write_labels(&result.label_set)?;
    run_dir.write_assignments(dataset, &result.assignment)?;
    run_dir.write_json(STATS_FILE, &result.stats)?;
    let report = report_if_labeled(dataset, &result.assignment)?;
    if let Some(r) = &report {
        run_dir.write_report(r)?;
    }
    Ok(RunOutcome { result, report })
}

/// Stage 1 label generation only; writes `generation.json`.
pub fn run_generate(
    dataset: &Dataset,
    config: &RunConfig,
    run_dir: &RunDir,
    options: &RunOptions,
) -> Result<GenerationState, RunError> {
    config.validate()?;
    run_dir.prepare(options.resume)?;
    run_dir.write_config(config)?;
    run_dir.write_dataset(dataset)?;
    let pipeline = open_pipeline(config, dataset, run_dir, options)?;
    let examples = sample_example_labels(dataset, config.example_fraction, config.seed)?;
    let state = pipeline.generate_labels(dataset, &examples)?;
    run_dir.write_json(GENERATION_FILE, &state)?;
    Ok(state)
}

/// Merges the labels of an earlier `run_generate`; writes `labels.json`.
pub fn run_merge(run_dir: &RunDir, options: &RunOptions) -> Result<LabelSet, RunError> {
    let config = run_dir.read_config()?;
    let dataset = run_dir.read_dataset()?;
    let state: GenerationState = run_dir.read_json(GENERATION_FILE)?;
    let pipeline = open_pipeline(&config, &dataset, run_dir, options)?;
    let merged = pipeline.merge_labels(&aggregate_unique(&state)?)?;
    run_dir.write_labels(&merged.label_set)?;
    Ok(merged.label_set)
}

/// Classifies the stored dataset against `labels.json`; writes the
/// assignments and, with gold labels, the report.
pub fn run_classify(run_dir: &RunDir, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let config = run_dir.read_config()?;
    let dataset = run_dir.read_dataset()?;
    let labels = run_dir.read_labels()?;
    let pipeline = open_pipeline(&config, &dataset, run_dir, options)?;
    let before = pipeline.client().stats();
    let assignment = pipeline.classify_all(&dataset, &labels)?;
    let after = pipeline.client().stats();
    run_dir.write_assignments(&dataset, &assignment)?;
    let report = report_if_labeled(&dataset, &assignment)?;
    if let Some(r) = &report {
        run_dir.write_report(r)?;
    }
    let generation = run_dir
        .read_json(GENERATION_FILE)
        .unwrap_or(GenerationState {
            examples: Vec::new(),
            raw_labels_per_batch: Vec::new(),
            running_pool: Vec::new(),
            unique_labels: Vec::new(),
        });
    let stats = RunStats {
        documents: dataset.len(),
        classification_calls: pipeline.call_counts().2,
        merged_label_count: labels.len(),
        unmatched: assignment.unmatched_count(),
        backend_calls: after.backend_calls - before.backend_calls,
        cache_hits: after.cache_hits - before.cache_hits,
        corrupt_cache_entries: after.corrupt_cache_entries - before.corrupt_cache_entries,
        peak_in_flight: after.peak_in_flight,
        ..RunStats::default()
    };
    Ok(RunOutcome {
        result: ClusteringResult {
            examples: LabelSet::from_labels(
                generation.examples.clone(),
                crate::model::Provenance::Seeded,
            )?,
            generation,
            label_set: labels,
            assignment,
            stats,
            config_snapshot: config,
        },
        report,
    })
}

/// Recomputes the report from the stored dataset, labels and assignments.
pub fn evaluate_run_dir(run_dir: &RunDir) -> Result<EvalReport, RunError> {
    evaluate_against(run_dir, &run_dir.read_dataset()?)
}

/// Like [`evaluate_run_dir`], scoring against `dataset` instead of the
/// stored copy, e.g. one with corrected gold labels.
pub fn evaluate_against(run_dir: &RunDir, dataset: &Dataset) -> Result<EvalReport, RunError> {
    let labels = run_dir.read_labels()?;
    let assignment = run_dir.read_assignments(&labels, dataset.len())?;
    let report = evaluate(dataset, &assignment)?;
    run_dir.write_report(&report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    ExampleFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::ExampleFraction => "example_fraction",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) -> Result<String, RunError> {
        match self {
            SweepAxis::BatchSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(RunError::Usage(format!(
                        "batch size {value} is not a positive integer"
                    )));
                }
                config.batch_size = value as usize;
                Ok(config.batch_size.to_string())
            }
            SweepAxis::ExampleFraction => {
                config.example_fraction = value;
                Ok(value.to_string())
            }
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "batch_size" | "b" => Ok(SweepAxis::BatchSize),
            "example_fraction" | "fraction" => Ok(SweepAxis::ExampleFraction),
            other => Err(format!(
                "unknown sweep axis {other:?} (batch_size, example_fraction)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub k_pred: Option<usize>,
    pub unmatched: Option<usize>,
    pub backend_calls: Option<u64>,
    pub error: Option<String>,
}

/// Runs one full clustering per value, each in `sweep_dir/<axis>-<value>`,
/// sharing one response cache, and writes `sweep_dir/sweep.csv`. A failing
/// point is recorded in its row and the sweep moves on.
pub fn run_sweep(
    dataset: &Dataset,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    sweep_dir: &RunDir,
    options: &RunOptions,
) -> Result<Vec<SweepRow>, RunError> {
    if values.is_empty() {
        return Err(RunError::Usage(
            "sweep needs at least one value".to_string(),
        ));
    }
    sweep_dir.prepare(options.resume)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        let shown = axis.apply(&mut config, value)?;
        if config.cache_dir.is_none() {
            config.cache_dir = Some(sweep_dir.path("cache"));
        }
        let point = RunDir::new(sweep_dir.path(&format!("{axis}-{shown}")));
        let mut row = SweepRow {
            axis: axis.to_string(),
            value: shown,
            acc: None,
            nmi: None,
            ari: None,
            k_pred: None,
            unmatched: None,
            backend_calls: None,
            error: None,
        };
        match run_full(dataset, &config, &point, options) {
            Ok(outcome) => {
                row.unmatched = Some(outcome.result.stats.unmatched);
                row.backend_calls = Some(outcome.result.stats.backend_calls);
                row.k_pred = Some(outcome.result.label_set.len());
                if let Some(r) = outcome.report {
                    (row.acc, row.nmi, row.ari, row.k_pred) =
                        (Some(r.acc), Some(r.nmi), Some(r.ari), Some(r.k_pred));
                }
            }
            Err(e @ RunError::Usage(_)) => return Err(e),
            Err(e) => {
                log::warn!("{axis}={value}: {e}");
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| RunError::Usage(format!("cannot encode sweep row: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| RunError::Usage(format!("cannot encode sweep table: {e}")))?;
    sweep_dir.write_bytes(SWEEP_FILE, &bytes)?;
    Ok(rows)
}
