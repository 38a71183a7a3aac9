use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("text contains no tokens")]
    EmptySample,
    #[error("unknown tokenizer {0:?} (expected \"lower-punct\" or \"whitespace\")")]
    UnknownTokenizer(String),
}

/// Word-level tokenizers. The name of the tokenizer travels with every score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tokenizer {
    /// Lowercase, split on whitespace, and emit every character that is
    /// neither alphanumeric nor whitespace as its own token.
    #[default]
    #[serde(rename = "lower-punct")]
    LowerPunct,
    /// Split on whitespace only; case and punctuation are kept.
    #[serde(rename = "whitespace")]
    Whitespace,
}

impl Tokenizer {
    pub fn from_name(name: &str) -> Result<Self, TokenizeError> {
        match name {
            "lower-punct" | "default" => Ok(Tokenizer::LowerPunct),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(TokenizeError::UnknownTokenizer(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Tokenizer::LowerPunct => "lower-punct",
            Tokenizer::Whitespace => "whitespace",
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>, TokenizeError> {
        let tokens = match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            Tokenizer::LowerPunct => lower_punct(text),
        };
        if tokens.is_empty() {
            Err(TokenizeError::EmptySample)
        } else {
            Ok(tokens)
        }
    }
}

impl std::str::FromStr for Tokenizer {
    type Err = TokenizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_name(s)
    }
}

impl std::fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn lower_punct(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in lowered.chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}
