//! Deterministic scripted backend.
//!
//! The mock parses each prompt back into its structured inputs using the same
//! templates the pipeline renders with, then answers from a [`MockScript`]:
//!
//! * generation: scripted labels of the batch's sentences that are not already
//!   among the given labels, in sentence order, deduplicated;
//! * merge: every label mapped through `merge_map` to a fixpoint, deduplicated;
//! * assign: the scripted label (after merging) if it is offered, otherwise
//!   `default_label`.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionBackend, CompletionRequest};
use crate::error::BackendError;
use crate::model::{normalize_label, BackendKind, Dataset};
use crate::prompt::{InspectedPrompt, PromptTemplates};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    /// Document text to the label the mock "sees" in it. Other documents are
    /// seen as `default_label`, when that is set.
    pub generation_rules: BTreeMap<String, String>,
    /// Label to its canonical replacement; keys compare normalized.
    pub merge_map: BTreeMap<String, String>,
    pub default_label: String,
    /// Raw label answers for specific documents, bypassing the offered list.
    pub assign_overrides: BTreeMap<String, String>,
    /// Raw text returned verbatim for every merge prompt.
    pub merge_response: Option<String>,
}

impl MockScript {
    /// Script that labels every document with its gold label.
    pub fn oracle(dataset: &Dataset) -> Self {
        let generation_rules = dataset
            .documents()
            .iter()
            .filter_map(|d| Some((d.text.clone(), d.gold_label.clone()?)))
            .collect();
        Self {
            generation_rules,
            default_label: "other".to_string(),
            ..Self::default()
        }
    }

    /// Rejects merge maps whose iteration would never settle.
    pub fn validate(&self) -> Result<(), String> {
        let map = self.normalized_merge_map();
        for start in map.keys() {
            let mut seen = HashSet::new();
            let mut cur = start.as_str();
            while let Some(next) = map.get(cur) {
                if !seen.insert(cur) {
                    return Err(format!("merge_map has a cycle through {start:?}"));
                }
                if normalize_label(next) == cur {
                    break;
                }
                cur = next;
            }
        }
        Ok(())
    }

    fn normalized_merge_map(&self) -> BTreeMap<String, String> {
        self.merge_map
            .iter()
            .map(|(k, v)| (normalize_label(k), v.clone()))
            .collect()
    }

    /// Follows `merge_map` until the label no longer changes.
    pub fn canonical(&self, label: &str) -> String {
        let map = self.normalized_merge_map();
        let mut cur = label.to_string();
        for _ in 0..=map.len() {
            match map.get(&normalize_label(&cur)) {
                Some(next) if normalize_label(next) != normalize_label(&cur) => cur = next.clone(),
                _ => break,
            }
        }
        cur
    }
}

pub struct MockBackend {
    script: MockScript,
    templates: PromptTemplates,
    latency: Duration,
}

impl MockBackend {
    pub fn new(script: MockScript, templates: PromptTemplates) -> Result<Self, BackendError> {
        script.validate().map_err(BackendError::Config)?;
        Ok(Self {
            script,
            templates,
            latency: Duration::ZERO,
        })
    }

    /// Sleeps this long per call, to stand in for network latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn respond(&self, inspected: InspectedPrompt) -> String {
        let script = &self.script;
        match inspected {
            InspectedPrompt::Generate {
                given_labels,
                sentences,
            } => {
                let mut known: HashSet<String> =
                    given_labels.iter().map(|l| normalize_label(l)).collect();
                let fallback = Some(&script.default_label).filter(|l| !l.trim().is_empty());
                let fresh: Vec<&String> = sentences
                    .iter()
                    .filter_map(|s| script.generation_rules.get(s).or(fallback))
                    .filter(|l| known.insert(normalize_label(l)))
                    .collect();
                json!({ "labels": fresh }).to_string()
            }
            InspectedPrompt::Merge { labels } => {
                if let Some(raw) = &script.merge_response {
                    return raw.clone();
                }
                let mut seen = HashSet::new();
                let merged: Vec<String> = labels
                    .iter()
                    .map(|l| script.canonical(l))
                    .filter(|l| seen.insert(normalize_label(l)))
                    .collect();
                json!({ "merged_labels": merged }).to_string()
            }
            InspectedPrompt::Assign { labels, sentence } => {
                if let Some(raw) = script.assign_overrides.get(&sentence) {
                    return json!({ "label_name": raw }).to_string();
                }
                let offered: HashSet<String> = labels.iter().map(|l| normalize_label(l)).collect();
                let answer = script
                    .generation_rules
                    .get(&sentence)
                    .map(|l| script.canonical(l))
                    .filter(|l| offered.contains(&normalize_label(l)))
                    .unwrap_or_else(|| script.default_label.clone());
                json!({ "label_name": answer }).to_string()
            }
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        Ok(match self.templates.inspect(&request.prompt) {
            Some(inspected) => self.respond(inspected),
            None => "I am not sure what you are asking for.".to_string(),
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}
