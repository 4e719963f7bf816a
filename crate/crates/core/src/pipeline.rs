//! The two-stage clustering run.
//!
//! Stage 1 walks the mini-batches in order, asking the model for labels that
//! the current label context does not already cover, pools them, and asks the
//! model once more to merge near-duplicates. Stage 2 classifies every
//! document against the merged set, fanning requests out up to the client's
//! in-flight cap.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_example_labels, split_batches};
use crate::error::{BackendError, PipelineError};
use crate::exec::{try_map_indexed, with_threads, Execution};
use crate::llm::{ClientStats, LlmClient};
use crate::model::{Assigned, Assignment, Dataset, Label, LabelSet, Provenance, RunConfig};
use crate::prompt::{extract_label_values, reask_prompt, PromptTemplates, ResponseKey};

/// Labels collected during Stage 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationState {
    pub examples: Vec<Label>,
    /// Labels parsed from each batch's response, surface forms, in order.
    pub raw_labels_per_batch: Vec<Vec<String>>,
    /// Examples plus every distinct label generated so far.
    pub running_pool: Vec<Label>,
    pub unique_labels: Vec<Label>,
}

/// First occurrence of each normalized key wins; order is preserved.
pub fn dedup_labels<I: IntoIterator<Item = Label>>(labels: I) -> Vec<Label> {
    let mut seen = HashSet::new();
    labels
        .into_iter()
        .filter(|l| !l.key.is_empty() && seen.insert(l.key.clone()))
        .collect()
}

/// Seeded examples followed by all generated labels, deduplicated.
pub fn aggregate_unique(state: &GenerationState) -> Result<Vec<Label>, PipelineError> {
    let generated = state
        .raw_labels_per_batch
        .iter()
        .flatten()
        .map(|s| Label::new(s.as_str()));
    let unique = dedup_labels(state.examples.iter().cloned().chain(generated));
    if unique.is_empty() {
        return Err(PipelineError::EmptyLabelPool);
    }
    Ok(unique)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub documents: usize,
    pub batches: usize,
    pub examples: usize,
    pub generation_calls: u64,
    pub merge_calls: u64,
    pub classification_calls: u64,
    pub reasks: u64,
    pub generation_parse_failures: u64,
    pub raw_label_count: usize,
    pub merged_label_count: usize,
    pub merge_fallback: bool,
    pub unmatched: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub corrupt_cache_entries: u64,
    pub peak_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub examples: LabelSet,
    pub generation: GenerationState,
    pub label_set: LabelSet,
    pub assignment: Assignment,
    pub stats: RunStats,
    pub config_snapshot: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeOutcome {
    pub label_set: LabelSet,
    pub fell_back: bool,
}

#[derive(Default)]
struct Counters {
    generation_calls: AtomicU64,
    merge_calls: AtomicU64,
    classification_calls: AtomicU64,
    reasks: AtomicU64,
    generation_parse_failures: AtomicU64,
}

pub struct Pipeline {
    config: RunConfig,
    client: Arc<LlmClient>,
    templates: PromptTemplates,
    execution: Execution,
    counters: Counters,
}

impl Pipeline {
    pub fn new(config: RunConfig, client: Arc<LlmClient>, templates: PromptTemplates) -> Self {
        Self {
            config,
            client,
            templates,
            execution: Execution::default(),
            counters: Counters::default(),
        }
    }

    /// Stage 2 fan-out mode; Stage 1 is always sequential.
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn ask(&self, prompt: &str) -> Result<String, BackendError> {
        let request = self.client.request(prompt);
        self.client.cached_complete(&request).map(|(text, _)| text)
    }

    pub fn generate_labels(
        &self,
        dataset: &Dataset,
        examples: &LabelSet,
    ) -> Result<GenerationState, PipelineError> {
        let batches = split_batches(dataset, self.config.batch_size);
        let mut pool: Vec<Label> = examples.labels().to_vec();
        let mut keys: HashSet<String> = pool.iter().map(|l| l.key.clone()).collect();
        let mut raw_per_batch = Vec::with_capacity(batches.len());

        for batch in &batches {
            let context: Vec<String> = if self.config.feed_back_generated_labels {
                pool.iter().map(|l| l.surface.clone()).collect()
            } else {
                examples.surfaces()
            };
            let sentences: Vec<&str> = batch.documents.iter().map(|d| d.text.as_str()).collect();
            let prompt = self
                .templates
                .render_generation_prompt(&context, &sentences)
                .rendered_text;
            let wrap = |source| PipelineError::Generation {
                batch: batch.batch_index,
                source,
            };

            self.counters
                .generation_calls
                .fetch_add(1, Ordering::Relaxed);
            let mut parsed =
                extract_label_values(&self.ask(&prompt).map_err(wrap)?, ResponseKey::Labels);
            if parsed.is_err() {
                self.counters.reasks.fetch_add(1, Ordering::Relaxed);
                self.counters
                    .generation_calls
                    .fetch_add(1, Ordering::Relaxed);
                let text = self.ask(&reask_prompt(&prompt)).map_err(wrap)?;
                parsed = extract_label_values(&text, ResponseKey::Labels);
            }
            let labels = parsed.unwrap_or_else(|e| {
                log::warn!(
                    "batch {}: unusable label response ({e}); no labels taken",
                    batch.batch_index
                );
                self.counters
                    .generation_parse_failures
                    .fetch_add(1, Ordering::Relaxed);
                Vec::new()
            });
            for raw in &labels {
                let label = Label::new(raw.as_str());
                if keys.insert(label.key.clone()) {
                    pool.push(label);
                }
            }
            raw_per_batch.push(labels);
        }

        let mut state = GenerationState {
            examples: examples.labels().to_vec(),
            raw_labels_per_batch: raw_per_batch,
            running_pool: pool,
            unique_labels: Vec::new(),
        };
        state.unique_labels = aggregate_unique(&state).unwrap_or_default();
        Ok(state)
    }

    /// One merge request over `labels`; `None` when the response is unusable.
    fn merge_once(&self, labels: &[Label]) -> Result<Option<Vec<Label>>, PipelineError> {
        let surfaces: Vec<String> = labels.iter().map(|l| l.surface.clone()).collect();
        let prompt = self.templates.render_merge_prompt(&surfaces).rendered_text;
        self.counters.merge_calls.fetch_add(1, Ordering::Relaxed);
        let text = self.ask(&prompt).map_err(PipelineError::Merge)?;
        let values = match extract_label_values(&text, ResponseKey::MergedLabels) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("merge response unusable ({e}); keeping the unmerged labels");
                return Ok(None);
            }
        };
        // an answer that echoes an input label keeps the input's surface form
        let merged = dedup_labels(values.into_iter().map(|v| {
            let fresh = Label::new(v);
            labels
                .iter()
                .find(|l| l.key == fresh.key)
                .cloned()
                .unwrap_or(fresh)
        }));
        if merged.is_empty() || merged.len() > labels.len() {
            log::warn!(
                "merge returned {} labels for {} inputs; keeping the unmerged labels",
                merged.len(),
                labels.len()
            );
            return Ok(None);
        }
        Ok(Some(merged))
    }

    pub fn merge_labels(&self, unique_labels: &[Label]) -> Result<MergeOutcome, PipelineError> {
        let input = dedup_labels(unique_labels.iter().cloned());
        if input.is_empty() {
            return Err(PipelineError::EmptyLabelPool);
        }
        let surfaces: Vec<String> = input.iter().map(|l| l.surface.clone()).collect();
        let too_long = self
            .templates
            .render_merge_prompt(&surfaces)
            .rendered_text
            .chars()
            .count()
            > self.config.merge_char_budget;

        let merged = if too_long && input.len() > self.config.merge_chunk_size {
            let mut combined = Vec::new();
            for chunk in input.chunks(self.config.merge_chunk_size) {
                combined.extend(self.merge_once(chunk)?.unwrap_or_else(|| chunk.to_vec()));
            }
            let combined = dedup_labels(combined);
            Some(self.merge_once(&combined)?.unwrap_or(combined))
        } else {
            self.merge_once(&input)?
        };

        let (labels, fell_back) = match merged {
            Some(m) if m.len() <= input.len() => (m, false),
            _ => (input, true),
        };
        Ok(MergeOutcome {
            label_set: LabelSet::from_labels(labels, Provenance::Merged)?,
            fell_back,
        })
    }

    fn classify_one(
        &self,
        labels: &LabelSet,
        surfaces: &[String],
        text: &str,
    ) -> Result<Assigned, BackendError> {
        let prompt = self
            .templates
            .render_assign_prompt(surfaces, text)
            .rendered_text;
        let resolve = |response: &str| {
            extract_label_values(response, ResponseKey::LabelName)
                .ok()
                .and_then(|v| v.first().and_then(|name| labels.position(name)))
        };
        self.counters
            .classification_calls
            .fetch_add(1, Ordering::Relaxed);
        if let Some(i) = resolve(&self.ask(&prompt)?) {
            return Ok(Assigned::Label(i));
        }
        self.counters.reasks.fetch_add(1, Ordering::Relaxed);
        self.counters
            .classification_calls
            .fetch_add(1, Ordering::Relaxed);
        Ok(
            resolve(&self.ask(&reask_prompt(&prompt))?)
                .map_or(Assigned::Unmatched, Assigned::Label),
        )
    }

    pub fn classify_all(
        &self,
        dataset: &Dataset,
        labels: &LabelSet,
    ) -> Result<Assignment, PipelineError> {
        if labels.is_empty() {
            return Err(PipelineError::EmptyLabelPool);
        }
        let surfaces = labels.surfaces();
        let docs = dataset.documents();
        let slots = with_threads(self.execution, self.client.max_in_flight(), || {
            try_map_indexed(self.execution, docs.len(), |i| {
                self.classify_one(labels, &surfaces, &docs[i].text)
                    .map_err(|source| PipelineError::Classification {
                        id: docs[i].id,
                        source,
                    })
            })
        })?;
        Ok(Assignment::new(slots, labels.clone())?)
    }

    /// Samples examples, runs both stages and collects statistics.
    pub fn run(&self, dataset: &Dataset) -> Result<ClusteringResult, PipelineError> {
        self.config.validate()?;
        let before = self.client.stats();
        let examples =
            sample_example_labels(dataset, self.config.example_fraction, self.config.seed)?;
        let generation = self.generate_labels(dataset, &examples)?;
        let unique = aggregate_unique(&generation)?;
        let merge = self.merge_labels(&unique)?;
        let assignment = self.classify_all(dataset, &merge.label_set)?;
        let after = self.client.stats();

        let stats = self.stats(
            dataset,
            &examples,
            &unique,
            &merge,
            &assignment,
            before,
            after,
        );
        Ok(ClusteringResult {
            examples,
            generation,
            label_set: merge.label_set,
            assignment,
            stats,
            config_snapshot: self.config.clone(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stats(
        &self,
        dataset: &Dataset,
        examples: &LabelSet,
        unique: &[Label],
        merge: &MergeOutcome,
        assignment: &Assignment,
        before: ClientStats,
        after: ClientStats,
    ) -> RunStats {
        let c = &self.counters;
        RunStats {
            documents: dataset.len(),
            batches: dataset.len().div_ceil(self.config.batch_size),
            examples: examples.len(),
            generation_calls: c.generation_calls.load(Ordering::Relaxed),
            merge_calls: c.merge_calls.load(Ordering::Relaxed),
            classification_calls: c.classification_calls.load(Ordering::Relaxed),
            reasks: c.reasks.load(Ordering::Relaxed),
            generation_parse_failures: c.generation_parse_failures.load(Ordering::Relaxed),
            raw_label_count: unique.len(),
            merged_label_count: merge.label_set.len(),
            merge_fallback: merge.fell_back,
            unmatched: assignment.unmatched_count(),
            backend_calls: after.backend_calls - before.backend_calls,
            cache_hits: after.cache_hits - before.cache_hits,
            corrupt_cache_entries: after.corrupt_cache_entries - before.corrupt_cache_entries,
            peak_in_flight: after.peak_in_flight,
        }
    }

    /// Logical request counts so far, for the stage subcommands.
    pub fn call_counts(&self) -> (u64, u64, u64) {
        let c = &self.counters;
        (
            c.generation_calls.load(Ordering::Relaxed),
            c.merge_calls.load(Ordering::Relaxed),
            c.classification_calls.load(Ordering::Relaxed),
        )
    }
}

/// Samples examples, runs both stages over `client` and returns the result;
/// persisting it is the caller's job (see `runner::run_full`).
pub fn run_pipeline(
    dataset: &Dataset,
    config: &RunConfig,
    client: Arc<LlmClient>,
    templates: &PromptTemplates,
) -> Result<ClusteringResult, PipelineError> {
    Pipeline::new(config.clone(), client, templates.clone()).run(dataset)
}
