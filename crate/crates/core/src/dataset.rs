//! Dataset loading, few-shot label sampling and mini-batching.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, ModelError};
use crate::model::{Dataset, Document, LabelSet, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
    Tsv,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" | "json" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            "tsv" | "tab" => Some(Self::Tsv),
            _ => None,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            "tsv" => Ok(Self::Tsv),
            other => Err(format!(
                "unknown dataset format {other:?} (expected jsonl, csv or tsv)"
            )),
        }
    }
}

#[derive(Deserialize)]
struct JsonRow {
    text: String,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct CanonicalRow<'a> {
    id: usize,
    text: &'a str,
    label: Option<&'a str>,
}

/// Loads a dataset. The dataset name is the file stem.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::FileNotFound(path.to_path_buf()),
        _ => DatasetError::Io(e),
    })?;
    let rows = match format {
        DatasetFormat::Jsonl => read_jsonl(BufReader::new(file))?,
        DatasetFormat::Csv => read_delimited(file, b',')?,
        DatasetFormat::Tsv => read_delimited(file, b'\t')?,
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    Dataset::from_rows(name, rows).map_err(|e| match e {
        ModelError::EmptyDataset => DatasetError::EmptyDataset,
        other => DatasetError::ParseError {
            line: 0,
            message: other.to_string(),
        },
    })
}

/// Like [`load_dataset`], inferring the format from the file extension.
pub fn load_dataset_auto(path: &Path) -> Result<Dataset, DatasetError> {
    let format = DatasetFormat::from_path(path)
        .ok_or_else(|| DatasetError::UnknownFormat(path.to_path_buf()))?;
    load_dataset(path, format)
}

fn clean_label(label: Option<String>) -> Option<String> {
    label
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<(String, Option<String>)>, DatasetError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| DatasetError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
        if row.text.trim().is_empty() {
            return Err(DatasetError::ParseError {
                line: line_no,
                message: "empty text".to_string(),
            });
        }
        rows.push((row.text, clean_label(row.label)));
    }
    Ok(rows)
}

fn read_delimited(
    file: File,
    delimiter: u8,
) -> Result<Vec<(String, Option<String>)>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .quoting(delimiter == b',')
        .from_reader(file);
    let header_err = |message: String| DatasetError::ParseError { line: 1, message };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let text_col =
        column("text").ok_or_else(|| header_err("header has no `text` column".into()))?;
    let label_col = column("label");

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::ParseError {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let text = record
            .get(text_col)
            .ok_or_else(|| DatasetError::ParseError {
                line,
                message: "missing text field".to_string(),
            })?;
        if text.trim().is_empty() {
            return Err(DatasetError::ParseError {
                line,
                message: "empty text".to_string(),
            });
        }
        let label = label_col.and_then(|c| record.get(c)).map(str::to_string);
        rows.push((text.to_string(), clean_label(label)));
    }
    Ok(rows)
}

/// Writes the canonical `{"id", "text", "label"}` JSONL form.
pub fn save_canonical(dataset: &Dataset, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in dataset.documents() {
        let row = CanonicalRow {
            id: doc.id,
            text: &doc.text,
            label: doc.gold_label.as_deref(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Number of example labels drawn for a fraction of `k` gold labels.
///
/// Floors the product; the small epsilon keeps values such as `0.29 * 100`
/// from landing one below the intended integer.
pub fn example_label_count(fraction: f64, k: usize) -> usize {
    ((fraction * k as f64) + 1e-9).floor() as usize
}

/// Draws `floor(fraction * K)` gold labels uniformly without replacement.
///
/// The draw is seeded, and the chosen labels are returned in gold-set order.
pub fn sample_example_labels(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<LabelSet, DatasetError> {
    if fraction == 0.0 {
        return Ok(LabelSet::empty(Provenance::Seeded));
    }
    let gold = dataset
        .gold_label_set()
        .ok_or(DatasetError::MissingGoldLabels)?;
    let count = example_label_count(fraction.clamp(0.0, 1.0), gold.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, gold.len(), count).into_vec();
    picked.sort_unstable();
    LabelSet::new(
        picked.into_iter().map(|i| gold[i].clone()),
        Provenance::Seeded,
    )
    .map_err(|e| DatasetError::ParseError {
        line: 0,
        message: format!("gold labels collide after normalization: {e}"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch<'a> {
    pub batch_index: usize,
    pub documents: &'a [Document],
}

/// Splits into `ceil(N / batch_size)` contiguous batches in document order.
pub fn split_batches(dataset: &Dataset, batch_size: usize) -> Vec<MiniBatch<'_>> {
    assert!(batch_size >= 1, "batch size must be positive");
    dataset
        .documents()
        .chunks(batch_size)
        .enumerate()
        .map(|(batch_index, documents)| MiniBatch {
            batch_index,
            documents,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(suffix: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn synthetic(n: usize, k: usize) -> Dataset {
        Dataset::from_rows(
            "syn",
            (0..n).map(|i| (format!("doc {i}"), Some(format!("label {}", i % k)))),
        )
        .unwrap()
    }

    #[test]
    fn jsonl_minimal_and_gold_order() {
        let f = write_tmp(".jsonl", "{\"text\":\"hi\"}\n");
        let ds = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.gold_label_set().is_none());

        let f = write_tmp(
            ".jsonl",
            "{\"text\":\"x\",\"label\":\"a\"}\n\n{\"text\":\"y\",\"label\":\"a\"}\n{\"text\":\"z\",\"label\":\"b\"}\n",
        );
        let ds = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.gold_label_set().unwrap(), ["a", "b"]);
    }

    #[test]
    fn jsonl_errors() {
        let f = write_tmp(".jsonl", "{\"text\":\"ok\"}\n{not json\n");
        match load_dataset(f.path(), DatasetFormat::Jsonl) {
            Err(DatasetError::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp(".jsonl", "\n\n");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Jsonl),
            Err(DatasetError::EmptyDataset)
        ));
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.jsonl"), DatasetFormat::Jsonl),
            Err(DatasetError::FileNotFound(_))
        ));
    }

    #[test]
    fn csv_and_tsv() {
        let f = write_tmp(
            ".csv",
            "label,text\nalarm,\"wake me up, at 7\"\nmusic,play jazz\n",
        );
        let ds = load_dataset_auto(f.path()).unwrap();
        assert_eq!(ds.documents()[0].text, "wake me up, at 7");
        assert_eq!(ds.gold_label_set().unwrap(), ["alarm", "music"]);

        let f = write_tmp(".tsv", "text\n\"quoted\" text\nplain\n");
        let ds = load_dataset(f.path(), DatasetFormat::Tsv).unwrap();
        assert_eq!(ds.documents()[0].text, "\"quoted\" text");
        assert!(ds.gold_label_set().is_none());

        let f = write_tmp(".csv", "body,label\nx,y\n");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Csv),
            Err(DatasetError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let ds = Dataset::from_rows(
            "rt",
            [
                ("héllo \"there\"".to_string(), Some("a".to_string())),
                ("second\tline".to_string(), None),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        save_canonical(&ds, &path).unwrap();
        let back = load_dataset(&path, DatasetFormat::Jsonl).unwrap();
        assert_eq!(back.documents(), ds.documents());
    }

    #[test]
    fn example_counts() {
        // 0.20 * 102 = 20.4
        assert_eq!(example_label_count(0.20, 102), 20);
        assert_eq!(example_label_count(0.29, 100), 29);
        assert_eq!(example_label_count(0.0, 102), 0);
        assert_eq!(example_label_count(1.0, 102), 102);
        let ds = synthetic(204, 102);
        assert_eq!(sample_example_labels(&ds, 0.20, 1).unwrap().len(), 20);
        assert!(sample_example_labels(&ds, 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn sampling_is_seeded() {
        let ds = synthetic(10, 10);
        let a = sample_example_labels(&ds, 0.20, 7).unwrap();
        let b = sample_example_labels(&ds, 0.20, 7).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert_eq!(a.provenance(), Provenance::Seeded);
    }

    #[test]
    fn sampling_requires_gold() {
        let ds = Dataset::from_rows("u", [("x".to_string(), None)]).unwrap();
        assert!(matches!(
            sample_example_labels(&ds, 0.2, 0),
            Err(DatasetError::MissingGoldLabels)
        ));
        assert!(sample_example_labels(&ds, 0.0, 0).unwrap().is_empty());
    }

    #[test]
    fn batch_examples() {
        let big = synthetic(4386, 102);
        let batches = split_batches(&big, 15);
        assert_eq!(batches.len(), 293);
        assert_eq!(batches.last().unwrap().documents.len(), 6);
        assert_eq!(split_batches(&synthetic(15, 3), 15).len(), 1);
        let single = synthetic(1, 1);
        let one = split_batches(&single, 15);
        assert_eq!((one.len(), one[0].documents.len()), (1, 1));
    }

    proptest! {
        #[test]
        fn batches_partition_in_order(n in 1usize..200, b in 1usize..40) {
            let ds = synthetic(n, 3);
            let batches = split_batches(&ds, b);
            prop_assert_eq!(batches.len(), n.div_ceil(b));
            let ids: Vec<usize> = batches.iter().flat_map(|m| m.documents.iter().map(|d| d.id)).collect();
            prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
            for (i, m) in batches.iter().enumerate() {
                prop_assert_eq!(m.batch_index, i);
                prop_assert!(!m.documents.is_empty() && m.documents.len() <= b);
                if i + 1 < batches.len() {
                    prop_assert_eq!(m.documents.len(), b);
                }
            }
        }

        #[test]
        fn samples_are_gold_subsets(k in 1usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let ds = synthetic(k * 2, k);
            let set = sample_example_labels(&ds, frac, seed).unwrap();
            prop_assert_eq!(set.len(), example_label_count(frac, k));
            let gold = ds.gold_label_set().unwrap();
            for l in set.labels() {
                prop_assert!(gold.contains(&l.surface));
            }
        }
    }
}
