//! Prompt templates for the three model tasks and extraction of JSON payloads
//! from model responses.
//!
//! Templates are plain UTF-8 text with named placeholders in braces. The
//! default set is compiled in from `assets/prompts/`; an alternative set can be
//! loaded from any directory holding `generate.txt`, `merge.txt` and
//! `assign.txt`.
//!
//! Lists are rendered as bracketed, comma-separated quoted strings
//! (`['get weather', 'update call']`). A string is single-quoted unless it
//! contains a single quote and no double quote; backslashes and the chosen
//! quote character are backslash-escaped. [`PromptTemplate::extract`] inverts
//! rendering so a scripted backend can recover the structured inputs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ResponseParseError, TemplateError};
use crate::model::normalize_label;

const DEFAULT_GENERATE: &str = include_str!("../assets/prompts/generate.txt");
const DEFAULT_MERGE: &str = include_str!("../assets/prompts/merge.txt");
const DEFAULT_ASSIGN: &str = include_str!("../assets/prompts/assign.txt");

/// Appended to a prompt when its first answer could not be used.
pub const REASK_POSTFIX: &str = "\nPlease response in JSON format.";

/// The follow-up prompt sent after an unusable answer to `prompt`.
pub fn reask_prompt(prompt: &str) -> String {
    format!("{prompt}{REASK_POSTFIX}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Generate,
    Merge,
    Assign,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Generate, PromptKind::Merge, PromptKind::Assign];

    /// Key the response JSON is expected to carry.
    pub fn response_key(self) -> ResponseKey {
        match self {
            PromptKind::Generate => ResponseKey::Labels,
            PromptKind::Merge => ResponseKey::MergedLabels,
            PromptKind::Assign => ResponseKey::LabelName,
        }
    }

    pub fn json_example(self) -> &'static str {
        match self {
            PromptKind::Generate => r#"{"labels": ["label name", "label name"]}"#,
            PromptKind::Merge => r#"{"merged_labels": ["label name", "label name"]}"#,
            PromptKind::Assign => r#"{"label_name": "label"}"#,
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            PromptKind::Generate => "generate.txt",
            PromptKind::Merge => "merge.txt",
            PromptKind::Assign => "assign.txt",
        }
    }

    fn placeholders(self) -> &'static [Placeholder] {
        match self {
            PromptKind::Generate => &[
                Placeholder::GivenLabels,
                Placeholder::SentenceList,
                Placeholder::JsonExample,
            ],
            PromptKind::Merge => &[Placeholder::LabelList, Placeholder::JsonExample],
            PromptKind::Assign => &[
                Placeholder::LabelList,
                Placeholder::Sentence,
                Placeholder::JsonExample,
            ],
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Generate => "generate",
            PromptKind::Merge => "merge",
            PromptKind::Assign => "assign",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponseKey {
    Labels,
    MergedLabels,
    LabelName,
}

impl ResponseKey {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKey::Labels => "labels",
            ResponseKey::MergedLabels => "merged_labels",
            ResponseKey::LabelName => "label_name",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    GivenLabels,
    SentenceList,
    LabelList,
    Sentence,
    JsonExample,
}

impl Placeholder {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "given_labels" => Self::GivenLabels,
            "sentence_list" => Self::SentenceList,
            "label_list" => Self::LabelList,
            "sentence" => Self::Sentence,
            "json_example" => Self::JsonExample,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GivenLabels => "given_labels",
            Self::SentenceList => "sentence_list",
            Self::LabelList => "label_list",
            Self::Sentence => "sentence",
            Self::JsonExample => "json_example",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// Value bound to a placeholder when rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotValue {
    List(Vec<String>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: PromptKind,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses template text. A single trailing newline is dropped so assets
    /// saved by ordinary editors render identically.
    pub fn parse(kind: PromptKind, text: &str) -> Result<Self, TemplateError> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let text = text.strip_suffix('\r').unwrap_or(text);
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let name = &after[..ident_len];
                let slot = Placeholder::from_name(name)
                    .filter(|p| kind.placeholders().contains(p))
                    .ok_or_else(|| TemplateError::UnknownPlaceholder {
                        name: kind.to_string(),
                        placeholder: name.to_string(),
                    })?;
                literal.push_str(&rest[..open]);
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(slot));
                rest = &after[ident_len + 1..];
            } else {
                literal.push_str(&rest[..=open]);
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        for p in kind.placeholders() {
            if !segments.contains(&Segment::Slot(*p)) {
                return Err(TemplateError::MissingPlaceholder {
                    name: kind.to_string(),
                    placeholder: p.name().to_string(),
                });
            }
        }
        Ok(Self { kind, segments })
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    fn render(&self, value_of: impl Fn(Placeholder) -> String) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(p) => out.push_str(&value_of(*p)),
            }
        }
        out
    }

    /// Recovers the placeholder values from a prompt rendered by this
    /// template. Returns `None` when the text was not produced by it.
    pub fn extract(&self, rendered: &str) -> Option<Vec<(Placeholder, SlotValue)>> {
        let mut rest = rendered;
        let mut values = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => rest = rest.strip_prefix(s.as_str())?,
                Segment::Slot(Placeholder::JsonExample) => {
                    rest = rest.strip_prefix(self.kind.json_example())?;
                }
                Segment::Slot(p @ Placeholder::Sentence) => {
                    let (text, used) = scan_quoted(rest)?;
                    values.push((*p, SlotValue::Text(text)));
                    rest = &rest[used..];
                }
                Segment::Slot(p) => {
                    let (items, used) = scan_list(rest)?;
                    values.push((*p, SlotValue::List(items)));
                    rest = &rest[used..];
                }
            }
        }
        rest.is_empty().then_some(values)
    }
}

/// A rendered prompt plus the context used to fill it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub rendered_text: String,
    pub json_example: String,
    pub label_context: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    generate: PromptTemplate,
    merge: PromptTemplate,
    assign: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            generate: PromptTemplate::parse(PromptKind::Generate, DEFAULT_GENERATE)
                .expect("bundled generate template"),
            merge: PromptTemplate::parse(PromptKind::Merge, DEFAULT_MERGE)
                .expect("bundled merge template"),
            assign: PromptTemplate::parse(PromptKind::Assign, DEFAULT_ASSIGN)
                .expect("bundled assign template"),
        }
    }
}

impl PromptTemplates {
    /// Loads templates from `dir`; any file that is absent keeps the default.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = Self::default();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { path, source })?;
            *templates.get_mut(kind) = PromptTemplate::parse(kind, &text)?;
        }
        Ok(templates)
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        match kind {
            PromptKind::Generate => &self.generate,
            PromptKind::Merge => &self.merge,
            PromptKind::Assign => &self.assign,
        }
    }

    fn get_mut(&mut self, kind: PromptKind) -> &mut PromptTemplate {
        match kind {
            PromptKind::Generate => &mut self.generate,
            PromptKind::Merge => &mut self.merge,
            PromptKind::Assign => &mut self.assign,
        }
    }

    pub fn render_generation_prompt<S: AsRef<str>>(
        &self,
        given_labels: &[String],
        sentences: &[S],
    ) -> PromptBundle {
        assert!(
            !sentences.is_empty(),
            "generation prompt needs at least one sentence"
        );
        let kind = PromptKind::Generate;
        let rendered_text = self.generate.render(|p| match p {
            Placeholder::GivenLabels => quote_list(given_labels),
            Placeholder::SentenceList => quote_list(sentences),
            _ => kind.json_example().to_string(),
        });
        PromptBundle {
            kind,
            rendered_text,
            json_example: kind.json_example().to_string(),
            label_context: given_labels.to_vec(),
        }
    }

    pub fn render_merge_prompt(&self, labels: &[String]) -> PromptBundle {
        assert!(!labels.is_empty(), "merge prompt needs at least one label");
        let kind = PromptKind::Merge;
        let rendered_text = self.merge.render(|p| match p {
            Placeholder::LabelList => quote_list(labels),
            _ => kind.json_example().to_string(),
        });
        PromptBundle {
            kind,
            rendered_text,
            json_example: kind.json_example().to_string(),
            label_context: labels.to_vec(),
        }
    }

    pub fn render_assign_prompt(&self, labels: &[String], sentence: &str) -> PromptBundle {
        assert!(!labels.is_empty(), "assign prompt needs at least one label");
        assert!(!sentence.is_empty(), "assign prompt needs a sentence");
        let kind = PromptKind::Assign;
        let rendered_text = self.assign.render(|p| match p {
            Placeholder::LabelList => quote_list(labels),
            Placeholder::Sentence => quote_str(sentence, '"'),
            _ => kind.json_example().to_string(),
        });
        PromptBundle {
            kind,
            rendered_text,
            json_example: kind.json_example().to_string(),
            label_context: labels.to_vec(),
        }
    }

    /// Identifies which template produced `rendered` and recovers its inputs.
    /// A trailing [`REASK_POSTFIX`] is ignored.
    pub fn inspect(&self, rendered: &str) -> Option<InspectedPrompt> {
        let rendered = rendered.strip_suffix(REASK_POSTFIX).unwrap_or(rendered);
        PromptKind::ALL.into_iter().find_map(|kind| {
            let values = self.get(kind).extract(rendered)?;
            let list = |want: Placeholder| {
                values.iter().find_map(|(p, v)| match v {
                    SlotValue::List(items) if *p == want => Some(items.clone()),
                    _ => None,
                })
            };
            Some(match kind {
                PromptKind::Generate => InspectedPrompt::Generate {
                    given_labels: list(Placeholder::GivenLabels)?,
                    sentences: list(Placeholder::SentenceList)?,
                },
                PromptKind::Merge => InspectedPrompt::Merge {
                    labels: list(Placeholder::LabelList)?,
                },
                PromptKind::Assign => InspectedPrompt::Assign {
                    labels: list(Placeholder::LabelList)?,
                    sentence: values.iter().find_map(|(_, v)| match v {
                        SlotValue::Text(t) => Some(t.clone()),
                        _ => None,
                    })?,
                },
            })
        })
    }
}

/// Structured inputs recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InspectedPrompt {
    Generate {
        given_labels: Vec<String>,
        sentences: Vec<String>,
    },
    Merge {
        labels: Vec<String>,
    },
    Assign {
        labels: Vec<String>,
        sentence: String,
    },
}

fn quote_str(s: &str, preferred: char) -> String {
    let other = if preferred == '\'' { '"' } else { '\'' };
    let quote = if s.contains(preferred) && !s.contains(other) {
        other
    } else {
        preferred
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        if c == '\\' || c == quote {
            out.push('\\');
        }
        out.push(c);
    }
    out.push(quote);
    out
}

fn quote_list<S: AsRef<str>>(items: &[S]) -> String {
    let body: Vec<String> = items.iter().map(|s| quote_str(s.as_ref(), '\'')).collect();
    format!("[{}]", body.join(", "))
}

/// Reads one quoted string from the start of `s`; returns it and the bytes used.
fn scan_quoted(s: &str) -> Option<(String, usize)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let mut out = String::new();
    let mut chars = s.char_indices().skip(1);
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => out.push(chars.next()?.1),
            c if c == quote => return Some((out, i + 1)),
            c => out.push(c),
        }
    }
    None
}

/// Reads a `[...]` list of quoted strings from the start of `s`.
fn scan_list(s: &str) -> Option<(Vec<String>, usize)> {
    let mut pos = s.strip_prefix('[').map(|_| 1)?;
    let mut items = Vec::new();
    if s[pos..].starts_with(']') {
        return Some((items, pos + 1));
    }
    loop {
        let (item, used) = scan_quoted(&s[pos..])?;
        items.push(item);
        pos += used;
        if s[pos..].starts_with(", ") {
            pos += 2;
        } else if s[pos..].starts_with(']') {
            return Some((items, pos + 1));
        } else {
            return None;
        }
    }
}

/// Finds the first JSON object embedded in `text`, skipping prose and code
/// fences around it.
fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Extracts the raw (trimmed, un-normalized) string values at `key`.
pub fn extract_label_values(
    text: &str,
    key: ResponseKey,
) -> Result<Vec<String>, ResponseParseError> {
    let object = first_json_object(text).ok_or(ResponseParseError::NoJsonFound)?;
    let wrong_shape = || ResponseParseError::WrongShape(key.as_str().to_string());
    let values = match object.get(key.as_str()) {
        None => return Err(ResponseParseError::KeyMissing(key.as_str().to_string())),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(wrong_shape))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(wrong_shape()),
    };
    Ok(values
        .into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !normalize_label(v).is_empty())
        .collect())
}

/// Extracts the labels at `key`, normalized, with empty entries dropped.
pub fn parse_labels_response(
    text: &str,
    key: ResponseKey,
) -> Result<Vec<String>, ResponseParseError> {
    Ok(extract_label_values(text, key)?
        .iter()
        .map(|v| normalize_label(v))
        .collect())
}
