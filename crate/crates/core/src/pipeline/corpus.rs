//! Corpus and rating ingestion.
//!
//! JSONL records look like `{"id": "s1", "text": "...", "label": "natural", "rating": 4}`
//! where `label` and `rating` are optional. Plain-text corpora hold one
//! sample per line with ids taken from 1-based line numbers; blank lines are
//! skipped but still counted.

use std::collections::HashSet;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {0:?} has empty text")]
    EmptyText(String),
    #[error("corpus is empty")]
    Empty,
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("reading ratings: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Natural,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

impl Sample {
    pub fn new(sample_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            text: text.into(),
            label: None,
            rating: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_rating(mut self, rating: f64) -> Self {
        self.rating = Some(rating);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CorpusFormat {
    Jsonl,
    Plain,
}

impl CorpusFormat {
    /// `.jsonl`, `.ndjson` and `.json` are read as JSONL; anything else as plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Plain,
        }
    }
}

pub fn validate_corpus(samples: &[Sample]) -> Result<(), CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if s.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(s.sample_id.clone()));
        }
        if !seen.insert(s.sample_id.as_str()) {
            return Err(CorpusError::DuplicateId(s.sample_id.clone()));
        }
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    validate_corpus(&samples)?;
    Ok(samples)
}

pub fn read_plain<R: BufRead>(reader: R) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(Sample::new((i + 1).to_string(), line));
    }
    validate_corpus(&samples)?;
    Ok(samples)
}

pub fn load_corpus(path: &Path, format: Option<CorpusFormat>) -> Result<Vec<Sample>, CorpusError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    match format.unwrap_or_else(|| CorpusFormat::from_path(path)) {
        CorpusFormat::Jsonl => read_jsonl(reader),
        CorpusFormat::Plain => read_plain(reader),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub sample_id: String,
    pub rating: f64,
}

/// Ratings CSV with header `sample_id,rating`.
pub fn read_ratings_csv<R: Read>(reader: R) -> Result<Vec<Rating>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut ratings = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize() {
        let r: Rating = row?;
        if !seen.insert(r.sample_id.clone()) {
            return Err(CorpusError::DuplicateId(r.sample_id));
        }
        ratings.push(r);
    }
    Ok(ratings)
}

pub fn load_ratings_csv(path: &Path) -> Result<Vec<Rating>, CorpusError> {
    read_ratings_csv(std::fs::File::open(path)?)
}

/// Ratings carried inline by corpus records.
pub fn ratings_from_corpus(samples: &[Sample]) -> Vec<Rating> {
    samples
        .iter()
        .filter_map(|s| {
            s.rating.map(|rating| Rating {
                sample_id: s.sample_id.clone(),
                rating,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_with_optional_fields() {
        let input = r#"{"id": "a", "text": "Hello there."}

{"id": "b", "text": "Generated text", "label": "synthetic", "rating": 2}
"#;
        let s = read_jsonl(input.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, None);
        assert_eq!(s[1].label, Some(Label::Synthetic));
        assert_eq!(s[1].rating, Some(2.0));
    }

    #[test]
    fn jsonl_errors() {
        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(
            read_jsonl(dup.as_bytes()),
            Err(CorpusError::DuplicateId(_))
        ));
        let blank = "{\"id\":\"a\",\"text\":\"   \"}\n";
        assert!(matches!(
            read_jsonl(blank.as_bytes()),
            Err(CorpusError::EmptyText(_))
        ));
        let broken = "{\"id\":\"a\"}\n";
        assert!(matches!(
            read_jsonl(broken.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
        let bad_label = "{\"id\":\"a\",\"text\":\"x\",\"label\":\"robot\"}\n";
        assert!(read_jsonl(bad_label.as_bytes()).is_err());
        assert!(matches!(read_jsonl("".as_bytes()), Err(CorpusError::Empty)));
    }

    #[test]
    fn plain_ids_follow_lines() {
        let s = read_plain("first line\n\nthird line\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].sample_id, "1");
        assert_eq!(s[1].sample_id, "3");
    }

    #[test]
    fn ratings_csv() {
        let r = read_ratings_csv("sample_id,rating\na,4\nb,1.5\n".as_bytes()).unwrap();
        assert_eq!(
            r[1],
            Rating {
                sample_id: "b".into(),
                rating: 1.5
            }
        );
        assert!(read_ratings_csv("sample_id,rating\na,4\na,2\n".as_bytes()).is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            CorpusFormat::from_path(Path::new("x.jsonl")),
            CorpusFormat::Jsonl
        );
        assert_eq!(
            CorpusFormat::from_path(Path::new("x.txt")),
            CorpusFormat::Plain
        );
    }
}
