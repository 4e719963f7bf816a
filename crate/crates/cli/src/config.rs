//! Configuration file handling.
//!
//! The TOML file carries every `RunConfig` key plus `dataset`, `format`,
//! `run_dir`, `prompt_dir` and `mock_script`; anything
//! else is rejected. Relative paths resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use labelclust_core::dataset::DatasetFormat;
use labelclust_core::RunConfig;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self {
            code: 3,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Default)]
pub struct FileConfig {
    pub run: RunConfig,
    pub dataset: Option<PathBuf>,
    pub format: Option<DatasetFormat>,
    pub run_dir: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut take = |key: &str| -> Result<Option<String>, String> {
            match table.remove(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s)),
                Some(other) => Err(format!(
                    "`{key}` must be a string, found {}",
                    other.type_str()
                )),
            }
        };
        let path = |s: Option<String>| s.map(|s| base.join(s));
        let dataset = path(take("dataset")?);
        let format = take("format")?.map(|f| f.parse()).transpose()?;
        let run_dir = path(take("run_dir")?);
        let prompt_dir = path(take("prompt_dir")?);
        let mock_script = path(take("mock_script")?);
        let mut run: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        run.cache_dir = run.cache_dir.map(|d| base.join(d));
        Ok(Self {
            run,
            dataset,
            format,
            run_dir,
            prompt_dir,
            mock_script,
        })
    }
}
