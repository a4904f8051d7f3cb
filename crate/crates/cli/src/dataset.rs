//! JSONL dataset records.
//!
//! One JSON object per line: `{id, image, question, answer, choices?,
//! meta}` with the image as a nested `[height][width][channel]` array of
//! 0..255 integers. `meta` carries the full scene description, so answers
//! are recomputable without touching pixels.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use mcout_core::data::{oracle_answer, AnswerMode, DatasetSpec, SampleMeta, SyntheticSample, TaskKind};
use mcout_core::model::Image;
use mcout_core::{contract_error, Error};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub image: Vec<Vec<Vec<u8>>>,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub meta: SampleMeta,
}

impl Record {
    pub fn from_sample(sample: &SyntheticSample) -> Self {
        let img = &sample.image;
        let image = (0..img.height)
            .map(|y| {
                (0..img.width)
                    .map(|x| {
                        let at = (y * img.width + x) * img.channels;
                        img.pixels[at..at + img.channels].to_vec()
                    })
                    .collect()
            })
            .collect();
        Record {
            id: sample.id.clone(),
            image,
            question: sample.question.clone(),
            answer: sample.answer.clone(),
            choices: sample.choices.clone(),
            meta: sample.meta.clone(),
        }
    }

    pub fn to_image(&self) -> Result<Image, Error> {
        let height = self.image.len();
        let width = self.image.first().map_or(0, Vec::len);
        let channels = self
            .image
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        let mut pixels = Vec::with_capacity(height * width * channels);
        for row in &self.image {
            if row.len() != width {
                return Err(contract_error!("record {}: ragged image rows", self.id));
            }
            for px in row {
                if px.len() != channels {
                    return Err(contract_error!("record {}: ragged image pixels", self.id));
                }
                pixels.extend_from_slice(px);
            }
        }
        Image::new(height, width, channels, pixels)
    }

    /// Recomputes the ground truth from `meta` and checks it matches the
    /// stored answer.
    pub fn verify(&self) -> Result<(), Error> {
        let want = oracle_answer(&self.meta)?;
        if want != self.answer {
            return Err(contract_error!(
                "record {}: stored answer {:?} but scene says {:?}",
                self.id,
                self.answer,
                want
            ));
        }
        Ok(())
    }
}

pub fn write_jsonl(path: &Path, records: &[Record]) -> CliResult<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| CliError::io(&format!("serializing record {}", r.id), e))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

pub fn read_jsonl(path: &Path) -> CliResult<Vec<Record>> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::io(&format!("opening {}", path.display()), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| {
            CliError::io(
                &format!("{}:{}: malformed record", path.display(), lineno + 1),
                e,
            )
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::Contract(Error::Config(format!(
            "{} holds no records",
            path.display()
        ))));
    }
    Ok(records)
}

/// Streams records to an open writer (used for stdout listings).
pub fn write_jsonl_to(w: &mut dyn Write, records: &[Record]) -> CliResult<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| CliError::io("serializing record", e))?;
        writeln!(w).map_err(|e| CliError::io("writing record", e))?;
    }
    Ok(())
}

/// Parses a dataset spec file: flat `key = value` lines. `task` and
/// `samples` are required; `seed`, `grid`, `cell_pixels`, `mode`
/// (open|choice), `min_objects`, and `max_objects` override the task's
/// defaults.
pub fn parse_spec(text: &str) -> Result<DatasetSpec, Error> {
    let mut task: Option<TaskKind> = None;
    let mut samples: Option<usize> = None;
    let mut seed: u64 = 0;
    let mut rest: Vec<(String, String)> = Vec::new();
    let num = |key: &str, value: &str| -> Result<usize, Error> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("bad value {value:?} for spec key {key:?}")))
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("spec line {}: expected key = value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "task" => task = Some(TaskKind::parse(value)?),
            "samples" => samples = Some(num(key, value)?),
            "seed" => {
                seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value {value:?} for spec key \"seed\"")))?
            }
            "grid" | "cell_pixels" | "mode" | "min_objects" | "max_objects" => {
                rest.push((key.to_string(), value.to_string()))
            }
            other => return Err(Error::Config(format!("unknown spec key {other:?}"))),
        }
    }
    let task = task.ok_or_else(|| Error::Config("spec is missing \"task\"".into()))?;
    let samples = samples.ok_or_else(|| Error::Config("spec is missing \"samples\"".into()))?;
    let mut spec = DatasetSpec::toy(task, samples, seed);
    for (key, value) in &rest {
        match key.as_str() {
            "grid" => spec.grid = num(key, value)?,
            "cell_pixels" => spec.cell_pixels = num(key, value)?,
            "min_objects" => spec.min_objects = num(key, value)?,
            "max_objects" => spec.max_objects = num(key, value)?,
            "mode" => {
                spec.mode = match value.as_str() {
                    "open" => AnswerMode::Open,
                    "choice" => AnswerMode::MultipleChoice,
                    other => {
                        return Err(Error::Config(format!(
                            "bad mode {other:?} (expected open or choice)"
                        )))
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    spec.validate()?;
    Ok(spec)
}
