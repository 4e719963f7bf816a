//! Mock scenarios over the 60-utterance, 6-intent fixture.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use labelclust_core::dataset::load_dataset_auto;
use labelclust_core::llm::MockScript;
use labelclust_core::{Dataset, RunConfig};

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/intents60.jsonl")
}

pub fn fixture() -> Dataset {
    load_dataset_auto(&fixture_path()).expect("fixture loads")
}

pub fn config() -> RunConfig {
    RunConfig {
        batch_size: 15,
        ..RunConfig::default()
    }
}

/// The first utterance of every intent is scripted as the next intent, so
/// six of sixty documents end up in the wrong cluster.
pub fn noisy_script(ds: &Dataset) -> MockScript {
    let gold = ds.gold_label_set().unwrap().to_vec();
    let mut script = MockScript::oracle(ds);
    for (i, label) in gold.iter().enumerate() {
        let doc = ds
            .documents()
            .iter()
            .find(|d| d.gold_label.as_deref() == Some(label))
            .unwrap();
        script
            .generation_rules
            .insert(doc.text.clone(), gold[(i + 1) % gold.len()].clone());
    }
    script
}

/// Two intents also surface under a synonym, giving eight raw labels that
/// the merge folds back into six.
pub fn synonym_script(ds: &Dataset) -> MockScript {
    let mut script = MockScript::oracle(ds);
    let synonyms = [
        ("get weather", "weather forecast"),
        ("play music", "music playback"),
    ];
    for (gold, alias) in synonyms {
        for d in ds
            .documents()
            .iter()
            .filter(|d| d.gold_label.as_deref() == Some(gold))
            .skip(5)
        {
            script
                .generation_rules
                .insert(d.text.clone(), alias.to_string());
        }
        script.merge_map.insert(alias.to_string(), gold.to_string());
    }
    script
}

pub fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
