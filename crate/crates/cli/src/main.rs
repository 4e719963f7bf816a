mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelclust_core::dataset::{load_dataset, load_dataset_auto, DatasetFormat};
use labelclust_core::exec::Execution;
use labelclust_core::llm::MockScript;
use labelclust_core::metrics::EvalReport;
use labelclust_core::pipeline::RunStats;
use labelclust_core::prompt::PromptTemplates;
use labelclust_core::runner::{self, RunDir, RunError, RunOptions, SweepAxis};
use labelclust_core::{BackendKind, Dataset, DatasetError, RunConfig};

use crate::config::{Failure, FileConfig};

#[derive(Parser, Debug)]
#[command(
    name = "labelclust",
    version,
    about = "Cluster short texts with a language model"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run label generation, merging and classification end to end.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Stage 1 label generation only.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Merge the labels produced by `generate` in the same run directory.
    Merge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Classify the run's dataset against its merged labels.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute the report from a finished run directory.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Score against this dataset instead of the run's stored copy.
        #[command(flatten)]
        input: InputArgs,
    },
    /// One full run per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        overrides: Overrides,
        /// batch_size or example_fraction.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. 10,15,20.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML file with configuration keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Continue in a run directory that already has artifacts.
    #[arg(long)]
    resume: bool,
    /// Directory with generate.txt, merge.txt and assign.txt.
    #[arg(long)]
    prompt_dir: Option<PathBuf>,
    /// JSON script for the mock backend; defaults to the gold-label oracle.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Classify documents one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// JSONL, CSV or TSV file with a `text` and an optional `label` field.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides the format inferred from the file extension.
    #[arg(long)]
    format: Option<DatasetFormat>,
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    example_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Only show the seeded examples to the model, not labels it generated.
    #[arg(long)]
    no_feedback: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

/// Flags layered over the config file, layered over defaults.
struct Context {
    common: CommonArgs,
    file: FileConfig,
}

impl Context {
    fn new(common: CommonArgs) -> Result<Self, Failure> {
        let file = match &common.config {
            Some(path) => FileConfig::read(path)?,
            None => FileConfig::default(),
        };
        Ok(Self { common, file })
    }

    fn run_dir(&self) -> Result<RunDir, Failure> {
        self.common
            .run_dir
            .as_ref()
            .or(self.file.run_dir.as_ref())
            .map(RunDir::new)
            .ok_or_else(|| Failure::usage("no run directory: pass --run-dir or set `run_dir`"))
    }

    fn config(&self, o: &Overrides) -> Result<RunConfig, Failure> {
        let mut config = self.file.run.clone();
        if let Some(b) = o.backend {
            config.backend = match b {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Http => BackendKind::Http,
            };
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &o.$flag { config.$field = v.clone(); })*
            };
        }
        set!(batch_size => batch_size, example_fraction => example_fraction, seed => seed,
             model => model_name, temperature => temperature, max_in_flight => max_in_flight,
             base_url => base_url);
        if let Some(dir) = &o.cache_dir {
            config.cache_dir = Some(dir.clone());
        }
        if o.no_feedback {
            config.feed_back_generated_labels = false;
        }
        config.validate().map_err(Failure::usage)?;
        Ok(config)
    }

    fn options(&self) -> Result<RunOptions, Failure> {
        let templates = match self
            .common
            .prompt_dir
            .as_ref()
            .or(self.file.prompt_dir.as_ref())
        {
            Some(dir) => PromptTemplates::load_dir(dir).map_err(Failure::usage)?,
            None => PromptTemplates::default(),
        };
        let mock_script = match self
            .common
            .mock_script
            .as_ref()
            .or(self.file.mock_script.as_ref())
        {
            Some(path) => Some(read_mock_script(path)?),
            None => None,
        };
        Ok(RunOptions {
            templates,
            mock_script,
            resume: self.common.resume,
            execution: if self.common.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
        })
    }

    fn dataset_path(&self, input: &InputArgs) -> Option<PathBuf> {
        input.dataset.clone().or_else(|| self.file.dataset.clone())
    }

    /// A path that does not exist is a usage error; an unreadable file is a
    /// data error.
    fn load(&self, input: &InputArgs) -> Result<Dataset, Failure> {
        let path = self
            .dataset_path(input)
            .ok_or_else(|| Failure::usage("no dataset: pass --dataset or set `dataset`"))?;
        let loaded = match input.format.or(self.file.format) {
            Some(f) => load_dataset(&path, f),
            None => load_dataset_auto(&path),
        };
        loaded.map_err(|e| match e {
            DatasetError::FileNotFound(_) | DatasetError::UnknownFormat(_) => Failure::usage(e),
            other => Failure::data(format!("{}: {other}", path.display())),
        })
    }
}

fn read_mock_script(path: &Path) -> Result<MockScript, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let script: MockScript = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    script
        .validate()
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(script)
}

fn print_report(report: &EvalReport) {
    println!(
        "ACC {:.4}  NMI {:.4}  ARI {:.4}  K'={} (K={}, diff {:+})  unmatched {}",
        report.acc,
        report.nmi,
        report.ari,
        report.k_pred,
        report.k_true,
        report.granularity_diff,
        report.unmatched_count
    );
}

fn print_stats(stats: &RunStats) {
    println!(
        "requests: {} generate, {} merge, {} classify ({} re-asks); backend calls {}, cache hits {}",
        stats.generation_calls,
        stats.merge_calls,
        stats.classification_calls,
        stats.reasks,
        stats.backend_calls,
        stats.cache_hits
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            common,
            input,
            overrides,
        } => {
            let ctx = Context::new(common)?;
            let dataset = ctx.load(&input)?;
            let config = ctx.config(&overrides)?;
            let dir = ctx.run_dir()?;
            let outcome = runner::run_full(&dataset, &config, &dir, &ctx.options()?)?;
            let stats = &outcome.result.stats;
            println!(
                "{} documents in {} batches; {} labels merged into {}{}",
                stats.documents,
                stats.batches,
                stats.raw_label_count,
                stats.merged_label_count,
                if stats.merge_fallback {
                    " (merge fell back)"
                } else {
                    ""
                }
            );
            match &outcome.report {
                Some(r) => print_report(r),
                None => println!(
                    "K'={}  unmatched {} (no gold labels to score against)",
                    stats.merged_label_count, stats.unmatched
                ),
            }
            print_stats(stats);
            println!("artifacts in {}", dir.root().display());
        }
        Command::Generate {
            common,
            input,
            overrides,
        } => {
            let ctx = Context::new(common)?;
            let dataset = ctx.load(&input)?;
            let config = ctx.config(&overrides)?;
            let state = runner::run_generate(&dataset, &config, &ctx.run_dir()?, &ctx.options()?)?;
            println!(
                "{} batches; {} unique labels ({} seeded)",
                state.raw_labels_per_batch.len(),
                state.unique_labels.len(),
                state.examples.len()
            );
        }
        Command::Merge { common } => {
            let ctx = Context::new(common)?;
            let labels = runner::run_merge(&ctx.run_dir()?, &ctx.options()?)?;
            println!("{} merged labels", labels.len());
            for l in labels.labels() {
                println!("  {}", l.surface);
            }
        }
        Command::Classify { common } => {
            let ctx = Context::new(common)?;
            let outcome = runner::run_classify(&ctx.run_dir()?, &ctx.options()?)?;
            match &outcome.report {
                Some(r) => print_report(r),
                None => println!("unmatched {}", outcome.result.stats.unmatched),
            }
            print_stats(&outcome.result.stats);
        }
        Command::Evaluate { common, input } => {
            let ctx = Context::new(common)?;
            let dir = ctx.run_dir()?;
            let report = match ctx.dataset_path(&input) {
                Some(_) => runner::evaluate_against(&dir, &ctx.load(&input)?)?,
                None => runner::evaluate_run_dir(&dir)?,
            };
            print_report(&report);
        }
        Command::Sweep {
            common,
            input,
            overrides,
            axis,
            values,
        } => {
            let ctx = Context::new(common)?;
            let dataset = ctx.load(&input)?;
            let config = ctx.config(&overrides)?;
            let dir = ctx.run_dir()?;
            let rows = runner::run_sweep(&dataset, &config, axis, &values, &dir, &ctx.options()?)?;
            let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            println!(
                "{axis:>16}  {:>6}  {:>6}  {:>6}  {:>3}",
                "ACC", "NMI", "ARI", "K'"
            );
            for r in &rows {
                println!(
                    "{:>16}  {:>6}  {:>6}  {:>6}  {:>3}{}",
                    r.value,
                    show(r.acc),
                    show(r.nmi),
                    show(r.ari),
                    r.k_pred.map_or("-".to_string(), |k| k.to_string()),
                    r.error
                        .as_ref()
                        .map_or(String::new(), |e| format!("  error: {e}"))
                );
            }
            println!("table in {}", dir.path(runner::SWEEP_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
