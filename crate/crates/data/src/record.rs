//! Task records and the on-disk dataset layout.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use molmm_chem::MolImage;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::format::PropertyValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Img2Caption,
    Img2Property,
    Img2Smiles,
    Property2Img,
    Img2Img,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Img2Caption, Task::Img2Property, Task::Img2Smiles, Task::Property2Img, Task::Img2Img];

    pub fn name(self) -> &'static str {
        match self {
            Task::Img2Caption => "img2caption",
            Task::Img2Property => "img2property",
            Task::Img2Smiles => "img2smiles",
            Task::Property2Img => "property2img",
            Task::Img2Img => "img2img",
        }
    }

    /// Whether (input, output) carry an image.
    pub fn image_slots(self) -> (bool, bool) {
        match self {
            Task::Img2Caption | Task::Img2Property | Task::Img2Smiles => (true, false),
            Task::Property2Img => (false, true),
            Task::Img2Img => (true, true),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| DataError::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { image_path: String },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Part {
        Part::Text { text: s.into() }
    }

    pub fn image(path: impl Into<String>) -> Part {
        Part::Image { image_path: path.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Canonical SMILES of the source molecule.
    pub smiles: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties: Option<PropertyValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_smiles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_properties: Option<PropertyValues>,
}

impl Provenance {
    /// Every molecule the record mentions.
    pub fn molecules(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.smiles.as_str()).chain(self.target_smiles.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub task: Task,
    pub input: Vec<Part>,
    pub output: Vec<Part>,
    pub provenance: Provenance,
}

impl TaskRecord {
    pub fn image_paths(&self) -> impl Iterator<Item = &str> {
        self.input.iter().chain(&self.output).filter_map(|p| match p {
            Part::Image { image_path } => Some(image_path.as_str()),
            Part::Text { .. } => None,
        })
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.input.iter().chain(&self.output).filter_map(|p| match p {
            Part::Text { text } => Some(text.as_str()),
            Part::Image { .. } => None,
        })
    }

    /// Concatenated output text.
    pub fn answer_text(&self) -> String {
        self.output
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Both splits and every image they reference, keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<TaskRecord>,
    pub test: Vec<TaskRecord>,
    pub images: BTreeMap<String, MolImage>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

impl Dataset {
    pub fn records(&self) -> impl Iterator<Item = &TaskRecord> {
        self.train.iter().chain(&self.test)
    }

    pub fn image(&self, path: &str) -> Result<&MolImage, DataError> {
        self.images.get(path).ok_or_else(|| DataError::MissingImage(path.to_string()))
    }

    /// Writes `train.jsonl`, `test.jsonl` and the images under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        for (rel, img) in &self.images {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, img.to_ppm())?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write`], loading every
    /// referenced image.
    pub fn read(dir: &Path) -> Result<Dataset, DataError> {
        let train = read_jsonl(&dir.join(TRAIN_FILE))?;
        let test = read_jsonl(&dir.join(TEST_FILE))?;
        let mut images = BTreeMap::new();
        for r in train.iter().chain(&test) {
            for rel in r.image_paths() {
                if !images.contains_key(rel) {
                    let bytes = fs::read(dir.join(rel))?;
                    let img = MolImage::from_ppm(&bytes).map_err(|e| DataError::Render(format!("{rel}: {e}")))?;
                    images.insert(rel.to_string(), img);
                }
            }
        }
        Ok(Dataset { train, test, images })
    }
}

pub fn write_jsonl(path: &Path, records: &[TaskRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TaskRecord>, DataError> {
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
