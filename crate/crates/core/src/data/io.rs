//! Dataset files and the dataset manifest.
//!
//! Classification files are header-less CSV rows `label,title,body` with a
//! 1-based local label. QA files are JSON lines
//! `{"context", "question", "answers": [{"text", "answer_start"}]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::example::{Answer, RawExample};
use super::labels::{DatasetSpec, LabelSpace};
use super::stream::Dataset;
use crate::error::{Error, Result};
use crate::model::TaskMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: TaskMode,
    #[serde(default)]
    pub seed: Option<u64>,
    pub datasets: Vec<DatasetSpec>,
    /// Parameters of the generator, when the files are synthetic.
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if m.datasets.iter().any(|d| d.task != m.task) {
            return Err(Error::Config("manifest mixes task modes".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct QaLine {
    context: String,
    question: String,
    answers: Vec<Answer>,
}

pub fn read_classification_csv(path: &Path, dataset: &str, labels: &LabelSpace) -> Result<Vec<RawExample>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label: usize = record
            .get(0)
            .and_then(|l| l.trim().parse().ok())
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::Data(format!("{}:{}: bad label", path.display(), row + 1)))?;
        let text = record.iter().skip(1).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
        out.push(RawExample::Classification { text, label: labels.global(dataset, label - 1)? });
    }
    Ok(out)
}

/// Writes `(local 1-based label, text)` rows with an empty title column.
pub fn write_classification_csv(path: &Path, rows: &[(usize, String)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (label, text) in rows {
        w.write_record([label.to_string().as_str(), "", text.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qa_jsonl(path: &Path) -> Result<Vec<RawExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QaLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), row + 1)))?;
        if q.answers.is_empty() {
            return Err(Error::Data(format!("{}:{}: no answers", path.display(), row + 1)));
        }
        out.push(RawExample::Qa { context: q.context, question: q.question, answers: q.answers });
    }
    Ok(out)
}

pub fn write_qa_jsonl(path: &Path, rows: &[RawExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        if let RawExample::Qa { context, question, answers } = r {
            let line = QaLine { context: context.clone(), question: question.clone(), answers: answers.clone() };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Reads both splits of every dataset in the manifest.
pub fn load_datasets(manifest: &Manifest, base: &Path, labels: &LabelSpace) -> Result<Vec<Dataset<RawExample>>> {
    manifest
        .datasets
        .iter()
        .map(|spec| {
            let read = |p: &str| match spec.task {
                TaskMode::Classification => read_classification_csv(&resolve(base, p), &spec.name, labels),
                TaskMode::Span => read_qa_jsonl(&resolve(base, p)),
            };
            Ok(Dataset { name: spec.name.clone(), train: read(&spec.train_path)?, test: read(&spec.test_path)? })
        })
        .collect()
}
