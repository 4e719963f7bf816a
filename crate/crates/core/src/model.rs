//! Domain types shared across the pipeline: documents, datasets, label sets,
//! assignments and the run configuration.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Canonical key for label comparison.
///
/// Trims, collapses internal whitespace runs to one space and lower-cases.
/// The result may be empty; callers decide whether that is acceptable.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    pub text: String,
    pub gold_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    documents: Vec<Document>,
    gold_label_set: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from `(text, gold_label)` rows, assigning contiguous ids
    /// in row order. The gold label set is ordered by first occurrence.
    pub fn from_rows<I>(name: impl Into<String>, rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (String, Option<String>)>,
    {
        let mut documents = Vec::new();
        let mut gold: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for (id, (text, label)) in rows.into_iter().enumerate() {
            if text.trim().is_empty() {
                return Err(ModelError::EmptyText { id });
            }
            if let Some(label) = &label {
                if seen.insert(label.clone()) {
                    gold.push(label.clone());
                }
            }
            documents.push(Document {
                id,
                text,
                gold_label: label,
            });
        }
        if documents.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Self {
            name: name.into(),
            documents,
            gold_label_set: (!gold.is_empty()).then_some(gold),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn gold_label_set(&self) -> Option<&[String]> {
        self.gold_label_set.as_deref()
    }

    /// Number of gold classes, when gold labels are present.
    pub fn k(&self) -> Option<usize> {
        self.gold_label_set.as_ref().map(Vec::len)
    }

    pub fn fully_labeled(&self) -> bool {
        self.documents.iter().all(|d| d.gold_label.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seeded,
    Generated,
    Merged,
    Gold,
}

/// One cluster label: the surface form shown to the model and in reports, and
/// the normalized key used for equality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub surface: String,
    pub key: String,
}

impl Label {
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into().trim().to_string();
        let key = normalize_label(&surface);
        Self { surface, key }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<Label>,
    provenance: Provenance,
}

impl LabelSet {
    /// Rejects empty labels and any two labels that normalize to the same key.
    pub fn new<I, S>(labels: I, provenance: Provenance) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_labels(labels.into_iter().map(Label::new), provenance)
    }

    pub fn from_labels<I>(labels: I, provenance: Provenance) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = Label>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for label in labels {
            if label.key.is_empty() {
                return Err(ModelError::EmptyLabel);
            }
            if !seen.insert(label.key.clone()) {
                return Err(ModelError::DuplicateLabel(label.surface));
            }
            out.push(label);
        }
        Ok(Self {
            labels: out,
            provenance,
        })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self {
            labels: Vec::new(),
            provenance,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.surface.clone()).collect()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of the label whose key equals `normalize_label(raw)`.
    pub fn position(&self, raw: &str) -> Option<usize> {
        let key = normalize_label(raw);
        self.labels.iter().position(|l| l.key == key)
    }
}

/// Outcome of classifying one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assigned {
    Label(usize),
    Unmatched,
}

impl Assigned {
    pub fn index(self) -> Option<usize> {
        match self {
            Assigned::Label(i) => Some(i),
            Assigned::Unmatched => None,
        }
    }
}

/// Total map from document id to assigned label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    slots: Vec<Assigned>,
    label_set: LabelSet,
}

impl Assignment {
    /// `slots[i]` is the assignment for document id `i`.
    pub fn new(slots: Vec<Assigned>, label_set: LabelSet) -> Result<Self, ModelError> {
        if let Some((id, bad)) = slots
            .iter()
            .enumerate()
            .find_map(|(id, s)| s.index().filter(|&i| i >= label_set.len()).map(|i| (id, i)))
        {
            return Err(ModelError::LabelIndexOutOfRange {
                id,
                index: bad,
                len: label_set.len(),
            });
        }
        Ok(Self { slots, label_set })
    }

    pub fn get(&self, id: usize) -> Option<Assigned> {
        self.slots.get(id).copied()
    }

    pub fn slots(&self) -> &[Assigned] {
        &self.slots
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn unmatched_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, Assigned::Unmatched))
            .count()
    }

    pub fn label_of(&self, id: usize) -> Option<&Label> {
        self.get(id)?.index().map(|i| &self.label_set.labels()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

/// All pipeline hyperparameters plus backend settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_size: usize,
    pub example_fraction: f64,
    pub seed: u64,
    pub backend: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    pub base_url: String,
    pub api_key_env: String,
    pub cache_dir: Option<PathBuf>,
    pub feed_back_generated_labels: bool,
    /// Character budget for a single merge prompt before chunking kicks in.
    pub merge_char_budget: usize,
    pub merge_chunk_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 15,
            example_fraction: 0.20,
            seed: 0,
            backend: BackendKind::Mock,
            model_name: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_tokens: None,
            max_retries: 3,
            max_in_flight: 4,
            requests_per_minute: None,
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            cache_dir: None,
            feed_back_generated_labels: true,
            merge_char_budget: 12_000,
            merge_chunk_size: 200,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.example_fraction) {
            return bad("example_fraction must lie in [0, 1]");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.merge_chunk_size < 2 {
            return bad("merge_chunk_size must be at least 2");
        }
        if self.requests_per_minute == Some(0) {
            return bad("requests_per_minute must be positive when set");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("  Get Weather "), "get weather");
        assert_eq!(normalize_label("get weather"), "get weather");
        assert_eq!(normalize_label("GET\t\tWEATHER"), "get weather");
        assert_eq!(normalize_label(" \n "), "");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once);
        }
    }

    #[test]
    fn label_set_rejects_normalized_duplicates() {
        let err = LabelSet::new(["Get Weather", "get  weather"], Provenance::Generated);
        assert!(matches!(err, Err(ModelError::DuplicateLabel(_))));
        assert!(matches!(
            LabelSet::new(["ok", "  "], Provenance::Generated),
            Err(ModelError::EmptyLabel)
        ));
    }

    #[test]
    fn label_set_keeps_surface_forms() {
        let set = LabelSet::new(["Get Weather", "update_call"], Provenance::Gold).unwrap();
        assert_eq!(set.labels()[0].surface, "Get Weather");
        assert_eq!(set.labels()[0].key, "get weather");
        assert_eq!(set.position("GET weather"), Some(0));
        assert_eq!(set.position("weather"), None);
    }

    #[test]
    fn dataset_gold_set_first_occurrence() {
        let ds = Dataset::from_rows(
            "t",
            [
                ("x".to_string(), Some("a".to_string())),
                ("y".to_string(), Some("a".to_string())),
                ("z".to_string(), Some("b".to_string())),
            ],
        )
        .unwrap();
        assert_eq!(ds.gold_label_set().unwrap(), ["a", "b"]);
        assert_eq!(ds.k(), Some(2));
        assert!(ds.documents().iter().enumerate().all(|(i, d)| d.id == i));
    }

    #[test]
    fn dataset_rejects_blank_text_and_empty() {
        assert!(matches!(
            Dataset::from_rows("t", [("  ".to_string(), None)]),
            Err(ModelError::EmptyText { id: 0 })
        ));
        assert!(matches!(
            Dataset::from_rows("t", Vec::new()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn assignment_checks_indices() {
        let set = LabelSet::new(["a"], Provenance::Merged).unwrap();
        assert!(
            Assignment::new(vec![Assigned::Label(0), Assigned::Unmatched], set.clone()).is_ok()
        );
        assert!(Assignment::new(vec![Assigned::Label(1)], set).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let cfg = RunConfig {
            batch_size: 0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            example_fraction: 1.5,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
