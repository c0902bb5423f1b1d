//! Dataset manifest: one CSV row per scan.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult, Context};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseEntry {
    pub case_id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub split: String,
}

#[derive(Debug, Deserialize)]
struct Row {
    case_id: String,
    image: String,
    #[serde(default)]
    mask: String,
    split: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub cases: Vec<CaseEntry>,
}

impl Manifest {
    /// Reads the manifest; relative file paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .config(format!("cannot open manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cases = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.config(format!("manifest {} row {}", path.display(), i + 1))?;
            cases.push(CaseEntry {
                image: base.join(&row.image),
                mask: (!row.mask.is_empty()).then(|| base.join(&row.mask)),
                case_id: row.case_id,
                split: row.split.to_ascii_lowercase(),
            });
        }
        let m = Manifest { cases };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> CliResult<()> {
        let mut ids = HashSet::new();
        let mut image_split: HashMap<&Path, &str> = HashMap::new();
        for c in &self.cases {
            if c.case_id.is_empty() || c.case_id.contains(['/', '\\']) {
                return Err(CliError::Config(format!("invalid case id `{}`", c.case_id)));
            }
            if !SPLITS.contains(&c.split.as_str()) {
                return Err(CliError::Config(format!("case {}: unknown split `{}`", c.case_id, c.split)));
            }
            if !ids.insert(c.case_id.as_str()) {
                return Err(CliError::Config(format!("case id {} listed twice", c.case_id)));
            }
            if let Some(prev) = image_split.insert(&c.image, &c.split) {
                if prev != c.split {
                    return Err(CliError::Config(format!(
                        "image {} appears in both the {prev} and {} splits",
                        c.image.display(),
                        c.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Vec<&CaseEntry> {
        self.cases.iter().filter(|c| c.split == name).collect()
    }

    pub fn in_splits(&self, names: &[String]) -> Vec<&CaseEntry> {
        self.cases.iter().filter(|c| names.contains(&c.split)).collect()
    }
}

/// Fails with an ingestion error unless every listed file exists.
pub fn require_files<'a>(entries: impl IntoIterator<Item = &'a CaseEntry>, need_mask: bool) -> CliResult<()> {
    for c in entries {
        if !c.image.is_file() {
            return Err(CliError::Ingestion(format!("case {}: image {} not found", c.case_id, c.image.display())));
        }
        match &c.mask {
            Some(m) if !m.is_file() => {
                return Err(CliError::Ingestion(format!("case {}: mask {} not found", c.case_id, m.display())));
            }
            None if need_mask => {
                return Err(CliError::Ingestion(format!("case {} has no ground-truth mask", c.case_id)));
            }
            _ => {}
        }
    }
    Ok(())
}
