//! Prompts rendered by the library next to hand-typed expectations.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use labelclust_core::prompt::PromptTemplates;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// `(golden file name, freshly rendered prompt)` pairs.
pub fn rendered_cases() -> Vec<(&'static str, String)> {
    let t = PromptTemplates::default();
    vec![
        (
            "generate_two_labels.txt",
            t.render_generation_prompt(
                &strings(&["get weather", "set alarm"]),
                &[
                    "what's the forecast for tomorrow morning",
                    "play some jazz in the living room",
                ],
            )
            .rendered_text,
        ),
        (
            "generate_no_labels.txt",
            t.render_generation_prompt(&[], &["remind me to call the dentist on monday"])
                .rendered_text,
        ),
        (
            "merge_three_labels.txt",
            t.render_merge_prompt(&strings(&["update call", "call update", "get weather"]))
                .rendered_text,
        ),
        (
            "assign_sentence.txt",
            t.render_assign_prompt(
                &strings(&["get weather", "set alarm", "children's music"]),
                "wake me up at six thirty tomorrow",
            )
            .rendered_text,
        ),
    ]
}

/// Names of the cases whose rendering differs from the golden file.
pub fn mismatches() -> Vec<String> {
    rendered_cases()
        .into_iter()
        .filter(|(name, rendered)| {
            std::fs::read_to_string(golden_dir().join(name)).map_or(true, |g| g != *rendered)
        })
        .map(|(name, _)| name.to_string())
        .collect()
}
